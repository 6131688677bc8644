"""Importance-sampling Monte Carlo estimates of the diffused density and its score.

The forward-diffused density ``p_t(x) = int kappa_t(x | x') p_0(x') dx'`` is
approximated by

    p_hat_t(x) = 1/N sum_i kappa_t(x | x'_i) p_0(x'_i) / p_is(x'_i)

and its score by the exact gradient of ``log p_hat_t``, computed as softmax
weights times the analytic Gaussian-kernel gradients. Everything is carried in
log space.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .diffusion import DomainError, ForwardSpec

LOG_2PI = np.log(2.0 * np.pi)


class EstimatorDegenerateError(RuntimeError):
    """All importance weights vanished (every node has ``p_0 = 0``)."""


class NodeMode(str, enum.Enum):
    REUSE_ENSEMBLE = "ReuseEnsemble"
    DRAW_FRESH = "DrawFresh"


class ISKind(str, enum.Enum):
    ENSEMBLE_GAUSSIAN = "EnsembleGaussian"
    MIXTURE_MIS = "MixtureMIS"


def regularization_floor(cov: np.ndarray) -> float:
    D = cov.shape[0]
    return 1e-8 * float(np.trace(cov)) / D + 1e-12


def ensemble_moments(ensemble) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble mean and biased (1/N) covariance, floored by ``regularization_floor``."""
    X = np.asarray(ensemble, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DomainError(f"need an (N >= 2, D) ensemble, got shape {X.shape}")
    mean = X.mean(axis=0)
    R = X - mean
    cov = R.T @ R / X.shape[0]
    cov = 0.5 * (cov + cov.T)
    return mean, cov + regularization_floor(cov) * np.eye(X.shape[1])


class _Kernel:
    """Evaluates ``log kappa_t(x | node_i)`` terms in whitened coordinates.

    With ``Sigma_t = s G G^T`` and kernel mean ``a node + c``, the quadratic form
    is ``|u(x) - u_i|^2`` where ``u = G^{-1}(.) / sqrt(s)``.
    """

    def __init__(self, spec: ForwardSpec, nodes: np.ndarray):
        self.spec = spec
        self.nodes_w = spec.whiten(nodes)
        self.mu_w = spec.whiten(spec.mu[None, :])[0]
        # shifting both sides by a common point reduces cancellation in |u|^2 expansions
        self.ref_w = self.nodes_w.mean(axis=0)

    def terms(self, t: float, X: np.ndarray):
        spec = self.spec
        t = float(t)
        if not 0.0 < t <= 1.0:
            raise DomainError(f"kernel is singular or undefined at t = {t}")
        a = spec.shrink(t)
        s = spec.variance_factor(t)
        if s <= 0.0:
            raise DomainError(f"kernel is singular at t = {t}")
        rs = np.sqrt(s)
        shift = a * self.ref_w + (1.0 - a) * self.mu_w
        un = a * (self.nodes_w - self.ref_w) / rs
        ux = (spec.whiten(X) - shift) / rs
        d2 = (ux * ux).sum(1)[:, None] + (un * un).sum(1)[None, :] - 2.0 * (ux @ un.T)
        np.maximum(d2, 0.0, out=d2)
        log_norm = -0.5 * spec.dim * (LOG_2PI + np.log(s)) - spec.log_det_scale()
        return d2, un, ux, rs, log_norm


def _as_batch(x, dim):
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != dim:
        raise DomainError(f"point dimension {X.shape[1]} != {dim}")
    return X, single


@dataclass(frozen=True, eq=False)
class ImportanceDistribution:
    """Either a Gaussian fitted to the ensemble or an equal-weight kernel mixture.

    Construct with :func:`build_gaussian_is` or :func:`build_mixture_is`.
    """

    kind: ISKind
    dim: int
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    centers: np.ndarray | None = None
    kernel_time: float | None = None
    spec: ForwardSpec | None = None

    def log_density(self, x) -> np.ndarray:
        X, single = _as_batch(x, self.dim)
        if self.kind is ISKind.ENSEMBLE_GAUSSIAN:
            L = np.linalg.cholesky(self.cov)
            z = np.linalg.solve(L, (X - self.mean).T)
            out = -0.5 * (z * z).sum(0) - 0.5 * self.dim * LOG_2PI - np.log(np.diag(L)).sum()
        else:
            d2, *_, log_norm = _Kernel(self.spec, self.centers).terms(self.kernel_time, X)
            out = logsumexp(-0.5 * d2, axis=1) - np.log(len(self.centers)) + log_norm
        return out[0] if single else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Gaussian: ``n`` IID draws. Mixture: one draw per component (``n`` must match)."""
        if self.kind is ISKind.ENSEMBLE_GAUSSIAN:
            L = np.linalg.cholesky(self.cov)
            return self.mean + rng.standard_normal((n, self.dim)) @ L.T
        if n != len(self.centers):
            raise DomainError("mixture sampling draws exactly one node per component")
        spec, t = self.spec, self.kernel_time
        mean = spec.shrink(t) * self.centers + spec.offset(t)
        xi = rng.standard_normal(self.centers.shape) * np.sqrt(spec.variance_factor(t))
        return mean + spec.apply_g(0.0, xi) if spec.is_ou else mean + xi


def build_gaussian_is(ensemble) -> ImportanceDistribution:
    mean, cov = ensemble_moments(ensemble)
    return ImportanceDistribution(ISKind.ENSEMBLE_GAUSSIAN, len(mean), mean=mean, cov=cov)


def build_mixture_is(ensemble, t: float, spec: ForwardSpec) -> ImportanceDistribution:
    """Equal-weight mixture of the kernels ``kappa_t(. | x_j)`` centered on the members."""
    X = np.asarray(ensemble, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.dim:
        raise DomainError(f"ensemble shape {X.shape} incompatible with dim {spec.dim}")
    if not 0.0 < t <= 1.0:
        raise DomainError(f"mixture kernel time {t} outside (0, 1]")
    return ImportanceDistribution(
        ISKind.MIXTURE_MIS, spec.dim, centers=X.copy(), kernel_time=float(t), spec=spec
    )


@dataclass(frozen=True, eq=False)
class ScoreEstimator:
    """Frozen nodes and log importance ratios; evaluates ``log p_hat_t`` and its score.

    Attributes:
        spec: Forward process providing the kernel.
        nodes: ``(N, D)`` nodes at which ``p_0`` was evaluated (mirrored halves
            included when ``antithetic``).
        log_ratios: ``log p_0 - log p_is`` at each node; may contain ``-inf``.
        antithetic: Whether the second half of ``nodes`` mirrors the first.
        n_evals: Number of ``p_0`` evaluations spent building this estimator.
    """

    spec: ForwardSpec
    nodes: np.ndarray
    log_ratios: np.ndarray
    antithetic: bool = False
    n_evals: int = 0

    def __post_init__(self):
        if self.nodes.ndim != 2 or self.nodes.shape[1] != self.spec.dim:
            raise DomainError(f"nodes shape {self.nodes.shape} incompatible with dim {self.spec.dim}")
        if self.log_ratios.shape != (len(self.nodes),):
            raise DomainError("one log-ratio per node required")
        if not np.any(np.isfinite(self.log_ratios)):
            raise EstimatorDegenerateError("every node has zero target density")
        object.__setattr__(self, "_kernel", _Kernel(self.spec, self.nodes))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def _logits(self, t, X):
        d2, un, ux, rs, log_norm = self._kernel.terms(t, X)
        return -0.5 * d2 + self.log_ratios[None, :], un, ux, rs, log_norm

    def evaluate(self, t: float, x) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(log p_hat_t(x), score(x))`` for a point or a batch."""
        X, single = _as_batch(x, self.spec.dim)
        logits, un, ux, rs, log_norm = self._logits(t, X)
        lse = logsumexp(logits, axis=1)
        w = np.exp(logits - lse[:, None])
        grad_u = (w @ un - ux) / rs
        sc = self.spec.unwhiten_transpose(grad_u)
        logp = lse - np.log(self.n_nodes) + log_norm
        return (logp[0], sc[0]) if single else (logp, sc)

    def log_p_hat(self, t: float, x):
        return self.evaluate(t, x)[0]

    def score(self, t: float, x):
        X, single = _as_batch(x, self.spec.dim)
        logits, un, ux, rs, _ = self._logits(t, X)
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        sc = self.spec.unwhiten_transpose((w @ un - ux) / rs)
        return sc[0] if single else sc

    def weights(self, t: float, x) -> np.ndarray:
        """Softmax weights over nodes, shape ``(M, N)``."""
        X, _ = _as_batch(x, self.spec.dim)
        logits = self._logits(t, X)[0]
        return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))


def log_p_hat(est: ScoreEstimator, t: float, x):
    return est.log_p_hat(t, x)


def score(est: ScoreEstimator, t: float, x):
    return est.score(t, x)


def _log_ratio(target, p_is, nodes):
    lp0 = np.asarray(target.log_density(nodes), dtype=float)
    lr = lp0 - p_is.log_density(nodes)
    lr[np.isnan(lr)] = -np.inf
    return lr


def freeze_estimator(
    target,
    p_is: ImportanceDistribution,
    ensemble,
    spec: ForwardSpec,
    mode: NodeMode = NodeMode.REUSE_ENSEMBLE,
    antithetic: bool = False,
    seed=None,
) -> ScoreEstimator:
    """Evaluate ``p_0`` at the nodes and freeze the estimator.

    ``ReuseEnsemble`` takes the members themselves as nodes; ``DrawFresh`` draws
    one node per member from ``p_is``. With ``antithetic`` each node ``x'`` is
    paired with its mirror ``-x'``, doubling the ``p_0`` evaluations.
    """
    X = np.asarray(ensemble, dtype=float)
    mode = NodeMode(mode)
    if mode is NodeMode.REUSE_ENSEMBLE:
        nodes = X.copy()
    else:
        nodes = p_is.sample(len(X), np.random.default_rng(seed))
    if antithetic:
        nodes = np.concatenate([nodes, -nodes])
    lr = _log_ratio(target, p_is, nodes)
    if not np.any(np.isfinite(lr)):
        raise EstimatorDegenerateError(
            f"all {len(nodes)} nodes have zero target density; cannot build estimator"
        )
    return ScoreEstimator(spec, nodes, lr, antithetic=antithetic, n_evals=len(nodes))


def build_mis(
    ensemble, t: float, spec: ForwardSpec, target, seed=None, antithetic: bool = False
) -> ScoreEstimator:
    """Multiple-importance-sampling estimator with one node per mixture component.

    Node ``i`` is drawn from ``kappa_t(. | x_i)``; its ratio uses the full
    equal-weight mixture in the denominator (the balance heuristic with one
    draw per component).
    """
    p_is = build_mixture_is(ensemble, t, spec)
    return freeze_estimator(target, p_is, ensemble, spec, NodeMode.DRAW_FRESH, antithetic, seed)
