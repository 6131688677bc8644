"""Forward diffusion processes and their closed-form transition kernels.

Two forward processes are supported:

* ``ZERO_DRIFT``: ``dx = g(t) dW`` with a scalar, polynomially increasing
  noise magnitude ``g`` (see :class:`NoiseSchedule`).
* ``ORNSTEIN_UHLENBECK``: ``dx = -theta (x - mu) dt + G dW`` with a constant
  lower-triangular scale matrix ``G``, typically the Cholesky factor of an
  inflated prior covariance.

Both have Gaussian transition kernels ``N(a(t) x' + c(t), s(t) G G^T)`` with a
scalar shrink ``a(t)`` and scalar variance factor ``s(t)`` (``G = I`` for the
zero-drift case). The estimator relies on that structure for cheap whitening.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Raised when a time or shape argument is outside an operation's domain."""


class ForwardKind(str, enum.Enum):
    ZERO_DRIFT = "ZeroDrift"
    ORNSTEIN_UHLENBECK = "OrnsteinUhlenbeck"


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise magnitude ``g(t) = (smin^(1/p) + t (smax^(1/p) - smin^(1/p)))^p``.

    ``sigma_min == sigma_max`` gives a constant magnitude.
    """

    sigma_min: float
    sigma_max: float
    p: float = 5.0

    def __post_init__(self):
        if not (self.sigma_min >= 0 and self.sigma_max >= self.sigma_min):
            raise DomainError(
                f"need 0 <= sigma_min <= sigma_max, got ({self.sigma_min}, {self.sigma_max})"
            )
        if self.p <= 0:
            raise DomainError(f"exponent p must be positive, got {self.p}")

    @property
    def _ab(self) -> tuple[float, float]:
        a = self.sigma_min ** (1.0 / self.p)
        return a, self.sigma_max ** (1.0 / self.p) - a

    def g(self, t):
        a, b = self._ab
        return (a + b * np.asarray(t, dtype=float)) ** self.p

    def integrated_variance(self, t):
        """Exact ``v(t) = int_0^t g(t')^2 dt'``."""
        a, b = self._ab
        t = np.asarray(t, dtype=float)
        q = 2.0 * self.p
        if b == 0.0:
            return a**q * t
        return ((a + b * t) ** (q + 1) - a ** (q + 1)) / (b * (q + 1))


@dataclass(frozen=True)
class KernelMoments:
    """Moments of the Gaussian kernel ``kappa_t(x | x') = N(shrink x' + offset, cov)``."""

    mean_shrink: np.ndarray
    mean_offset: np.ndarray
    cov: np.ndarray
    cov_chol: np.ndarray | None

    def mean(self, x0: np.ndarray) -> np.ndarray:
        return x0 @ self.mean_shrink.T + self.mean_offset


@dataclass(frozen=True, eq=False)
class ForwardSpec:
    """Forward diffusion process of Ornstein-Uhlenbeck form.

    Use :meth:`zero_drift` or :meth:`ornstein_uhlenbeck` to construct.
    """

    kind: ForwardKind
    dim: int
    mu: np.ndarray
    schedule: NoiseSchedule | None = None
    theta: float = 0.0
    scale_matrix: np.ndarray | None = None
    alpha: float = 1.0
    _scale_inv: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def zero_drift(cls, dim: int, schedule: NoiseSchedule) -> "ForwardSpec":
        return cls(ForwardKind.ZERO_DRIFT, int(dim), np.zeros(dim), schedule=schedule)

    @classmethod
    def ornstein_uhlenbeck(
        cls,
        theta: float,
        prior_cov: np.ndarray,
        alpha: float = 1.0,
        mu: np.ndarray | None = None,
    ) -> "ForwardSpec":
        """OU process whose scale matrix is ``cholesky(alpha * prior_cov)``."""
        prior_cov = np.asarray(prior_cov, dtype=float)
        dim = prior_cov.shape[0]
        if theta <= 0:
            raise DomainError(f"theta must be positive, got {theta}")
        if alpha <= 0:
            raise DomainError(f"alpha must be positive, got {alpha}")
        try:
            G = np.linalg.cholesky(alpha * prior_cov)
        except np.linalg.LinAlgError as exc:
            raise DomainError("alpha * prior_cov is not positive definite") from exc
        mu = np.zeros(dim) if mu is None else np.asarray(mu, dtype=float)
        return cls.from_scale_matrix(theta, G, mu, alpha=alpha)

    @classmethod
    def from_scale_matrix(cls, theta, scale_matrix, mu, alpha: float = 1.0) -> "ForwardSpec":
        G = np.asarray(scale_matrix, dtype=float)
        mu = np.asarray(mu, dtype=float)
        if theta <= 0:
            raise DomainError(f"theta must be positive, got {theta}")
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise DomainError("scale_matrix must be square")
        if not np.allclose(G, np.tril(G)) or np.any(np.diag(G) <= 0):
            raise DomainError("scale_matrix must be lower-triangular with positive diagonal")
        if mu.shape != (G.shape[0],):
            raise DomainError(f"mu has shape {mu.shape}, expected ({G.shape[0]},)")
        G_inv = np.linalg.solve(G, np.eye(G.shape[0]))
        return cls(
            ForwardKind.ORNSTEIN_UHLENBECK,
            G.shape[0],
            mu,
            theta=float(theta),
            scale_matrix=G,
            alpha=float(alpha),
            _scale_inv=G_inv,
        )

    @property
    def is_ou(self) -> bool:
        return self.kind is ForwardKind.ORNSTEIN_UHLENBECK

    # -- scalar kernel factors ------------------------------------------------

    def shrink(self, t: float) -> float:
        return float(np.exp(-self.theta * t)) if self.is_ou else 1.0

    def variance_factor(self, t: float) -> float:
        """``s(t)`` with ``Sigma_t = s(t) * G G^T`` (``G = I`` for zero drift)."""
        if self.is_ou:
            return float(-np.expm1(-2.0 * self.theta * t) / (2.0 * self.theta))
        return float(self.schedule.integrated_variance(t))

    def offset(self, t: float) -> np.ndarray:
        if self.is_ou:
            return -np.expm1(-self.theta * t) * self.mu
        return np.zeros(self.dim)

    def log_det_scale(self) -> float:
        """``log det G``; zero for the zero-drift kind."""
        if self.is_ou:
            return float(np.sum(np.log(np.diag(self.scale_matrix))))
        return 0.0

    def diffusion_matrix(self, t: float) -> np.ndarray:
        if self.is_ou:
            return self.scale_matrix
        return float(self.schedule.g(t)) * np.eye(self.dim)

    def apply_ggt(self, t: float, v: np.ndarray) -> np.ndarray:
        """Return ``g_t g_t^T v`` for row vectors ``v``."""
        if self.is_ou:
            G = self.scale_matrix
            return (v @ G) @ G.T
        return float(self.schedule.g(t)) ** 2 * v

    def apply_g(self, t: float, v: np.ndarray) -> np.ndarray:
        """Return ``g_t v`` for row vectors ``v``."""
        if self.is_ou:
            return v @ self.scale_matrix.T
        return float(self.schedule.g(t)) * v

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """Return ``G^{-1} v`` for row vectors ``v``."""
        if self.is_ou:
            return v @ self._scale_inv.T
        return v

    def unwhiten_transpose(self, v: np.ndarray) -> np.ndarray:
        """Return ``G^{-T} v`` for row vectors ``v``."""
        if self.is_ou:
            return v @ self._scale_inv
        return v


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"time {t} outside [0, 1]")
    return t


def kernel_moments(spec: ForwardSpec, t: float) -> KernelMoments:
    t = _check_time(t)
    D = spec.dim
    a = spec.shrink(t)
    s = spec.variance_factor(t)
    if spec.is_ou:
        G = spec.scale_matrix
        cov = s * (G @ G.T)
        chol = np.sqrt(s) * G if s > 0 else None
    else:
        cov = s * np.eye(D)
        chol = np.sqrt(s) * np.eye(D) if s > 0 else None
    return KernelMoments(a * np.eye(D), spec.offset(t), cov, chol)


def _check_pair(spec: ForwardSpec, x, s_hat):
    x = np.asarray(x, dtype=float)
    s_hat = np.asarray(s_hat, dtype=float)
    if x.shape != s_hat.shape or x.shape[-1] != spec.dim:
        raise DomainError(
            f"shape mismatch: x {x.shape}, s_hat {s_hat.shape}, dim {spec.dim}"
        )
    return x, s_hat


def reverse_drift(spec: ForwardSpec, t: float, x, s_hat) -> np.ndarray:
    """Drift ``-(b (x - mu) + g g^T s_hat)`` of the reverse-time SDE.

    Works on a single vector or a batch of row vectors.
    """
    x, s_hat = _check_pair(spec, x, s_hat)
    out = -spec.apply_ggt(t, s_hat)
    if spec.is_ou:
        out -= spec.theta * (x - spec.mu)
    return out


def probability_flow_drift(spec: ForwardSpec, t: float, x, s_hat) -> np.ndarray:
    """Drift ``-(b (x - mu) + 0.5 g g^T s_hat)`` of the probability-flow ODE."""
    x, s_hat = _check_pair(spec, x, s_hat)
    out = -0.5 * spec.apply_ggt(t, s_hat)
    if spec.is_ou:
        out -= spec.theta * (x - spec.mu)
    return out


def forward_simulate(
    spec: ForwardSpec,
    x0_batch,
    n_steps: int,
    seed: int,
    n_snapshots: int | None = None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Euler-Maruyama simulation of the forward SDE from t=0 to t=1.

    Returns ``(times, snapshots)``; by default every step is recorded, otherwise
    ``n_snapshots`` evenly spaced ones (always including both ends).
    """
    if n_steps < 1:
        raise DomainError("n_steps must be >= 1")
    x = np.array(x0_batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != spec.dim:
        raise DomainError(f"x0_batch must have shape (N, {spec.dim}), got {x.shape}")
    rng = np.random.default_rng(seed)
    h = 1.0 / n_steps
    if n_snapshots is None:
        keep = set(range(n_steps + 1))
    else:
        keep = set(np.linspace(0, n_steps, max(n_snapshots, 2)).round().astype(int).tolist())
    times, snaps = [0.0], [x.copy()]
    for k in range(n_steps):
        t = k * h
        dW = rng.standard_normal(x.shape) * np.sqrt(h)
        drift = -spec.theta * (x - spec.mu) if spec.is_ou else 0.0
        x = x + drift * h + spec.apply_g(t, dW)
        if k + 1 in keep:
            times.append((k + 1) * h)
            snaps.append(x.copy())
    return np.array(times), snaps
