"""Ensemble reverse-diffusion sampler with periodic estimator refreezing.

The unit interval is split into ``n_resample`` equal windows. At the start of
each window the importance distribution and score estimator are rebuilt from
the current ensemble (the only place the target is evaluated); then every
member is integrated backwards across the window with the frozen estimator.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .diffusion import DomainError, ForwardSpec, probability_flow_drift, reverse_drift
from .estimator import (
    NodeMode,
    ScoreEstimator,
    build_gaussian_is,
    build_mis,
    freeze_estimator,
)

log = logging.getLogger(__name__)

# members are integrated in fixed-size blocks so results do not depend on thread count
CHUNK = 256


class Integrator(str, enum.Enum):
    REVERSE_SDE = "ReverseSDE_EulerMaruyama"
    PROBABILITY_FLOW = "ProbabilityFlow_Heun"


class EstimatorKind(str, enum.Enum):
    GAUSSIAN = "Gaussian"
    MIS = "MIS"


class NonFiniteStateError(RuntimeError):
    def __init__(self, member: int, t: float):
        super().__init__(f"non-finite state for member {member} at t = {t:.6g}")
        self.member = member
        self.t = t


@dataclass(frozen=True)
class SamplerConfig:
    n_ens: int = 1000
    n_resample: int = 10
    dt_init: float = 0.005
    integrator: Integrator = Integrator.REVERSE_SDE
    estimator_kind: EstimatorKind = EstimatorKind.GAUSSIAN
    antithetic: bool = False
    node_mode: NodeMode = NodeMode.REUSE_ENSEMBLE
    seed: int = 0
    threads: int = 1
    keep_snapshots: bool = False

    def __post_init__(self):
        for name, enum_cls in (
            ("integrator", Integrator),
            ("estimator_kind", EstimatorKind),
            ("node_mode", NodeMode),
        ):
            object.__setattr__(self, name, enum_cls(getattr(self, name)))
        if self.n_ens < 2:
            raise DomainError("n_ens must be >= 2")
        if self.n_resample < 1:
            raise DomainError("n_resample must be >= 1")
        if not 0 < self.dt_init <= 1.0 / self.n_resample + 1e-12:
            raise DomainError("dt_init must lie in (0, 1/n_resample]")
        if self.threads < 1:
            raise DomainError("threads must be >= 1")

    @property
    def t_floor(self) -> float:
        return self.dt_init / 10.0


@dataclass
class RunRecord:
    final_ensemble: np.ndarray
    initial_ensemble: np.ndarray
    p0_eval_count: int
    resample_times: list[float]
    snapshots: list[np.ndarray] = field(default_factory=list)


def window_times(t_start: float, t_end: float, dt: float) -> np.ndarray:
    """Decreasing grid from ``t_start`` to ``t_end`` with step ``dt``; the last step is shortened."""
    n = max(1, math.ceil((t_start - t_end) / dt - 1e-9))
    ts = t_start - dt * np.arange(n + 1)
    ts[-1] = t_end
    return ts


def initial_ensemble(spec: ForwardSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Zero drift: ``N(mu, Sigma_1)``. OU: ``N(mu, G G^T)``, the inflated prior."""
    xi = rng.standard_normal((n, spec.dim))
    if spec.is_ou:
        return spec.mu + xi @ spec.scale_matrix.T
    return spec.mu + np.sqrt(spec.variance_factor(1.0)) * xi


def _member_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, i))) for i in range(n)]


def integrate_window(
    spec: ForwardSpec,
    est: ScoreEstimator,
    X: np.ndarray,
    ts: np.ndarray,
    integrator: Integrator,
    noise: np.ndarray | None = None,
    member_offset: int = 0,
) -> np.ndarray:
    """Integrate a block of members backwards along the decreasing grid ``ts``.

    ``noise`` has shape ``(len(ts) - 1, M, D)`` and is required for the SDE.
    """
    X = np.array(X, dtype=float)
    for k in range(len(ts) - 1):
        t, t_next = ts[k], ts[k + 1]
        h = t - t_next
        if integrator is Integrator.REVERSE_SDE:
            F = reverse_drift(spec, t, X, est.score(t, X))
            X = X - h * F + np.sqrt(h) * spec.apply_g(t, noise[k])
        else:
            F1 = probability_flow_drift(spec, t, X, est.score(t, X))
            Xp = X - h * F1
            F2 = probability_flow_drift(spec, t_next, Xp, est.score(t_next, Xp))
            X = X - 0.5 * h * (F1 + F2)
        bad = ~np.isfinite(X).all(axis=1)
        if bad.any():
            raise NonFiniteStateError(member_offset + int(np.argmax(bad)), t_next)
    return X


def _freeze(spec, target, X, cfg: SamplerConfig, t_r: float, seed_seq) -> ScoreEstimator:
    if cfg.estimator_kind is EstimatorKind.MIS:
        return build_mis(X, t_r, spec, target, seed=seed_seq, antithetic=cfg.antithetic)
    return freeze_estimator(
        target, build_gaussian_is(X), X, spec, cfg.node_mode, cfg.antithetic, seed=seed_seq
    )


def run(spec: ForwardSpec, target, cfg: SamplerConfig, x_init: np.ndarray | None = None) -> RunRecord:
    """Draw ``cfg.n_ens`` approximate samples from ``target``.

    Args:
        spec: Forward process; its dimension must match the target's.
        target: Object with ``dim`` and a vectorized ``log_density``.
        cfg: Sampler settings.
        x_init: Optional initial ensemble; defaults to :func:`initial_ensemble`.

    Raises:
        EstimatorDegenerateError: All nodes of a refreeze have zero density.
        NonFiniteStateError: A member overflowed during integration.
    """
    if spec.dim != target.dim:
        raise DomainError(f"forward spec dim {spec.dim} != target dim {target.dim}")
    root = np.random.SeedSequence(cfg.seed)
    if x_init is None:
        X = initial_ensemble(spec, cfg.n_ens, np.random.default_rng(root.spawn(1)[0]))
    else:
        X = np.array(x_init, dtype=float)
        if X.shape != (cfg.n_ens, spec.dim):
            raise DomainError(f"x_init shape {X.shape} != ({cfg.n_ens}, {spec.dim})")
    X0 = X.copy()
    rngs = _member_rngs(cfg.seed, cfg.n_ens) if cfg.integrator is Integrator.REVERSE_SDE else None
    dt_r = 1.0 / cfg.n_resample
    evals = 0
    resample_times, snapshots = [], []
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for r in range(1, cfg.n_resample + 1):
            t_start = 1.0 - (r - 1) * dt_r
            t_end = cfg.t_floor if r == cfg.n_resample else 1.0 - r * dt_r
            est = _freeze(
                spec, target, X, cfg, t_start, np.random.SeedSequence(cfg.seed, spawn_key=(2, r))
            )
            evals += est.n_evals
            resample_times.append(t_start)
            ts = window_times(t_start, t_end, cfg.dt_init)
            noise = None
            if rngs is not None:
                shape = (len(ts) - 1, spec.dim)
                noise = np.stack([g.standard_normal(shape) for g in rngs], axis=1)

            def block(lo, est=est, ts=ts, noise=noise, X=X):
                hi = min(lo + CHUNK, len(X))
                nz = None if noise is None else noise[:, lo:hi]
                return integrate_window(spec, est, X[lo:hi], ts, cfg.integrator, nz, lo)

            starts = range(0, len(X), CHUNK)
            parts = list(pool.map(block, starts)) if pool else [block(lo) for lo in starts]
            X = np.concatenate(parts)
            if cfg.keep_snapshots:
                snapshots.append(X.copy())
            log.debug("window %d/%d done at t=%.4g (%d p0 evals so far)", r, cfg.n_resample, t_end, evals)
    finally:
        if pool:
            pool.shutdown()
    return RunRecord(X, X0, evals, resample_times, snapshots)


def run_pooled(spec: ForwardSpec, target, cfg: SamplerConfig, n_total: int) -> tuple[np.ndarray, int]:
    """Repeat independent runs until ``n_total`` samples are collected.

    Run ``k`` uses seed ``SeedSequence([cfg.seed, k])``. Returns the pooled
    samples (truncated to ``n_total``) and the total ``p_0`` evaluation count.
    """
    parts, evals, k = [], 0, 0
    while sum(len(p) for p in parts) < n_total:
        seed_k = int(np.random.SeedSequence([cfg.seed, k]).generate_state(1)[0])
        rec = run(spec, target, replace(cfg, seed=seed_k))
        parts.append(rec.final_ensemble)
        evals += rec.p0_eval_count
        k += 1
    return np.concatenate(parts)[:n_total], evals
