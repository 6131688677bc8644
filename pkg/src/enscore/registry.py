"""Named targets and their parameter schemas, as used by experiment configs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import targets as T
from .baselines import ChainConfig
from .diffusion import ForwardKind
from .estimator import NodeMode
from .sampler import EstimatorKind, Integrator


@dataclass(eq=False)
class Problem:
    target: T.TargetDensity
    prior_cov: np.ndarray | None = None
    posterior: T.RegressionPosterior | None = None


def _blr20(data_seed: int = 0) -> Problem:
    tgt, post = T.make_blr20(int(data_seed))
    return Problem(tgt, post.Sigma_prior, post)


def _surrogate100(data_seed: int = 0) -> Problem:
    tgt, post = T.make_regression_surrogate(int(data_seed))
    return Problem(tgt, post.Sigma_prior, post)


def _gaussian(dim: int = 5, rho: float = 0.5) -> Problem:
    return Problem(T.make_gaussian(int(dim), cov=T.ar1_covariance(int(dim), float(rho))))


@dataclass(frozen=True)
class TargetEntry:
    factory: Callable[..., Problem]
    params: dict[str, Any]
    description: str


TARGETS: dict[str, TargetEntry] = {
    "banana": TargetEntry(
        lambda c=T.BANANA_SHIFT, s=T.BANANA_WIDTH: Problem(T.make_banana(c, s)),
        {"c": T.BANANA_SHIFT, "s": T.BANANA_WIDTH},
        "2-d banana: x1 ~ N(0,1), x2 ~ N(x1^2 + c, s^2)",
    ),
    "ridged": TargetEntry(
        lambda a=T.RIDGE_AMPLITUDE, k=T.RIDGE_FREQUENCY: Problem(T.make_ridged(a, k)),
        {"a": T.RIDGE_AMPLITUDE, "k": T.RIDGE_FREQUENCY},
        "2-d parallel ridges: N(0, 4I) times exp(-a sin^2(k x1))",
    ),
    "mixture3": TargetEntry(
        lambda std=T.MIXTURE_STD: Problem(T.make_mixture3(std=std)),
        {"std": T.MIXTURE_STD},
        "2-d equal-weight mixture of three separated Gaussians",
    ),
    "gaussian": TargetEntry(
        _gaussian, {"dim": 5, "rho": 0.5}, "zero-mean Gaussian with AR(1) correlations rho^|i-j|"
    ),
    "blr20": TargetEntry(
        _blr20, {"data_seed": 0}, "20-d B-spline Bayesian linear regression (analytic posterior)"
    ),
    "regression100_surrogate": TargetEntry(
        _surrogate100,
        {"data_seed": 0},
        "100-d synthetic Gaussian-prior regression (stand-in, not a PDE model)",
    ),
}

FORWARD_PARAMS = {
    ForwardKind.ZERO_DRIFT.value: {"sigma_min": 0.01, "sigma_max": 10.0, "p": 5.0},
    ForwardKind.ORNSTEIN_UHLENBECK.value: {"theta": 0.1, "alpha": 16.0, "mu": 0.0},
}

BASELINES = {
    "mala": {k: v for k, v in ChainConfig().__dict__.items() if k != "seed"},
    "rwmh": {k: v for k, v in ChainConfig().__dict__.items() if k != "seed"},
}


def build_problem(name: str, params: dict | None = None) -> Problem:
    return TARGETS[name].factory(**(params or {}))


def listing() -> str:
    lines = ["targets:"]
    for name in sorted(TARGETS):
        e = TARGETS[name]
        lines.append(f"  {name}  {_fmt(e.params)}  -- {e.description}")
    lines.append("forward kinds:")
    for name in sorted(FORWARD_PARAMS):
        lines.append(f"  {name}  {_fmt(FORWARD_PARAMS[name])}")
    lines.append("estimator kinds:")
    lines += [f"  {k.value}" for k in sorted(EstimatorKind, key=lambda k: k.value)]
    lines.append("node modes:")
    lines += [f"  {k.value}" for k in sorted(NodeMode, key=lambda k: k.value)]
    lines.append("integrators:")
    lines += [f"  {k.value}" for k in sorted(Integrator, key=lambda k: k.value)]
    lines.append("baselines:")
    for name in sorted(BASELINES):
        lines.append(f"  {name}  {_fmt(BASELINES[name])}")
    return "\n".join(lines)


def _fmt(params: dict) -> str:
    return "{" + ", ".join(f"{k}={params[k]!r}" for k in sorted(params)) + "}"
