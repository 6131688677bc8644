"""MCMC baselines: MALA (gradient-based) and random-walk Metropolis-Hastings.

Chains are vectorized: all ``n_chains`` advance together, each with its own
seed-derived stream so results do not depend on how chains are grouped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class UnsupportedTargetError(TypeError):
    pass


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 4
    n_steps: int = 10_000
    burn_in: int = 1_000
    step_size: float = 0.5
    seed: int = 0
    n_samples: int | None = None

    def __post_init__(self):
        if not self.n_steps > self.burn_in >= 0:
            raise ValueError("need n_steps > burn_in >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")


@dataclass
class ChainResult:
    samples: np.ndarray
    acceptance_rate: float
    n_density_evals: int


def _streams(seed, n):
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,))) for i in range(n)]


def _draw(rngs, fn):
    return np.stack([fn(g) for g in rngs])


def _thin(trace: np.ndarray, n_samples: int | None) -> np.ndarray:
    # trace: (steps, chains, D); interleave chains so thinning keeps all of them
    flat = trace.transpose(1, 0, 2).reshape(-1, trace.shape[-1])
    if n_samples is None or n_samples >= len(flat):
        return flat
    idx = np.linspace(0, len(flat) - 1, n_samples).round().astype(int)
    return flat[idx]


def _run_chain(target, cfg: ChainConfig, x0, propose):
    rngs = _streams(cfg.seed, cfg.n_chains)
    if x0 is None:
        x = _draw(rngs, lambda g: g.standard_normal(target.dim))
    else:
        x = np.array(np.broadcast_to(x0, (cfg.n_chains, target.dim)), dtype=float)
    state = propose.init(x)
    kept = cfg.n_steps - cfg.burn_in
    trace = np.empty((kept, cfg.n_chains, target.dim))
    accepted = 0
    for k in range(cfg.n_steps):
        xi = _draw(rngs, lambda g: g.standard_normal(target.dim))
        u = _draw(rngs, lambda g: g.random())
        prop, log_alpha, prop_state = propose.step(x, state, xi)
        acc = np.log(u) < log_alpha
        x = np.where(acc[:, None], prop, x)
        state = propose.select(acc, prop_state, state)
        if k >= cfg.burn_in:
            trace[k - cfg.burn_in] = x
            accepted += int(acc.sum())
    rate = accepted / (kept * cfg.n_chains)
    return trace, rate


class _RW:
    def __init__(self, target, eps):
        self.target, self.eps = target, eps

    def init(self, x):
        return self.target.log_density(x)

    def step(self, x, lp, xi):
        prop = x + self.eps * xi
        lp_prop = self.target.log_density(prop)
        with np.errstate(invalid="ignore"):
            log_alpha = np.where(np.isfinite(lp_prop), lp_prop - lp, -np.inf)
        return prop, log_alpha, lp_prop

    @staticmethod
    def select(acc, new, old):
        return np.where(acc, new, old)


class _Langevin:
    def __init__(self, target, eps):
        self.target, self.eps = target, eps

    def init(self, x):
        return self.target.log_density(x), self.target.grad_log_density(x)

    def _log_q(self, to, frm, grad_frm):
        # log density (up to a constant) of proposing `to` from `frm`
        mean = frm + 0.5 * self.eps**2 * grad_frm
        return -((to - mean) ** 2).sum(1) / (2.0 * self.eps**2)

    def step(self, x, state, xi):
        lp, gr = state
        prop = x + 0.5 * self.eps**2 * gr + self.eps * xi
        lp_prop = self.target.log_density(prop)
        gr_prop = self.target.grad_log_density(prop)
        with np.errstate(invalid="ignore"):
            log_alpha = lp_prop - lp + self._log_q(x, prop, gr_prop) - self._log_q(prop, x, gr)
        log_alpha = np.where(np.isfinite(log_alpha), log_alpha, -np.inf)
        return prop, log_alpha, (lp_prop, gr_prop)

    @staticmethod
    def select(acc, new, old):
        return np.where(acc, new[0], old[0]), np.where(acc[:, None], new[1], old[1])


def mala(target, cfg: ChainConfig, x0=None) -> ChainResult:
    """Metropolis-adjusted Langevin algorithm with step size ``cfg.step_size``."""
    if target.grad_log_density is None:
        raise UnsupportedTargetError(f"target {getattr(target, 'name', '?')!r} has no gradient")
    trace, rate = _run_chain(target, cfg, x0, _Langevin(target, cfg.step_size))
    log.info("MALA acceptance rate %.3f", rate)
    return ChainResult(_thin(trace, cfg.n_samples), rate, cfg.n_chains * (cfg.n_steps + 1))


def rwmh(target, cfg: ChainConfig, x0=None) -> ChainResult:
    """Random-walk Metropolis-Hastings with isotropic Gaussian proposals of std ``cfg.step_size``."""
    trace, rate = _run_chain(target, cfg, x0, _RW(target, cfg.step_size))
    log.info("RWMH acceptance rate %.3f", rate)
    return ChainResult(_thin(trace, cfg.n_samples), rate, cfg.n_chains * (cfg.n_steps + 1))
