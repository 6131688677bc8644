"""Reference target densities.

All log-densities are vectorized: they take an ``(N, D)`` array and return
``(N,)``. A single vector is accepted too and gives a scalar back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline
from scipy.ndimage import gaussian_filter1d
from scipy.special import logsumexp

LOG_2PI = np.log(2.0 * np.pi)


class TargetError(ValueError):
    pass


def _batched(fn):
    def wrapper(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return fn(x[None, :])[0]
        return fn(x)

    return wrapper


@dataclass(frozen=True, eq=False)
class TargetDensity:
    """Unnormalized log-density ``log p_0`` plus optional extras.

    Attributes:
        name: Registry name.
        dim: Dimension ``D``.
        log_density: Vectorized unnormalized log-density; ``-inf`` off support.
        grad_log_density: Vectorized gradient, used only by gradient-based
            baselines.
        reference_sampler: ``(n, seed) -> (n, D)`` exact sampler, if one exists.
        concurrency_safe: Whether ``log_density`` may be called from several
            threads at once.
    """

    name: str
    dim: int
    log_density: Callable[[np.ndarray], np.ndarray]
    grad_log_density: Callable[[np.ndarray], np.ndarray] | None = None
    reference_sampler: Callable[[int, int], np.ndarray] | None = None
    concurrency_safe: bool = True

    def sample_reference(self, n: int, seed: int) -> np.ndarray:
        if self.reference_sampler is None:
            raise TargetError(f"target {self.name!r} has no reference sampler")
        return self.reference_sampler(int(n), seed)


# -- 2-d toys -------------------------------------------------------------------

BANANA_SHIFT = 1.0
BANANA_WIDTH = 0.5


def make_banana(c: float = BANANA_SHIFT, s: float = BANANA_WIDTH) -> TargetDensity:
    """``x1 ~ N(0, 1)``, ``x2 | x1 ~ N(x1^2 + c, s^2)``."""

    @_batched
    def logp(x):
        x1, x2 = x[:, 0], x[:, 1]
        return -0.5 * x1**2 - 0.5 * ((x2 - x1**2 - c) / s) ** 2

    @_batched
    def grad(x):
        x1, x2 = x[:, 0], x[:, 1]
        r = (x2 - x1**2 - c) / s**2
        return np.stack([-x1 + 2.0 * x1 * r, -r], axis=1)

    def sampler(n, seed):
        rng = np.random.default_rng(seed)
        x1 = rng.standard_normal(n)
        x2 = x1**2 + c + s * rng.standard_normal(n)
        return np.stack([x1, x2], axis=1)

    return TargetDensity("banana", 2, logp, grad, sampler)


RIDGE_AMPLITUDE = 3.0
RIDGE_FREQUENCY = 3.0


def make_ridged(a: float = RIDGE_AMPLITUDE, k: float = RIDGE_FREQUENCY) -> TargetDensity:
    """Broad Gaussian ``N(0, 4 I)`` modulated by parallel ridges in ``x1``."""

    @_batched
    def logp(x):
        return -(x[:, 0] ** 2 + x[:, 1] ** 2) / 8.0 - a * np.sin(k * x[:, 0]) ** 2

    @_batched
    def grad(x):
        g1 = -x[:, 0] / 4.0 - a * k * np.sin(2.0 * k * x[:, 0])
        return np.stack([g1, -x[:, 1] / 4.0], axis=1)

    def sampler(n, seed):
        # rejection from the N(0, 4I) envelope, acceptance exp(-a sin^2(k x1))
        rng = np.random.default_rng(seed)
        out = np.empty((0, 2))
        while len(out) < n:
            m = 2 * (n - len(out)) + 64
            prop = 2.0 * rng.standard_normal((m, 2))
            keep = rng.random(m) < np.exp(-a * np.sin(k * prop[:, 0]) ** 2)
            out = np.concatenate([out, prop[keep]])
        return out[:n]

    return TargetDensity("ridged", 2, logp, grad, sampler)


MIXTURE_MEANS = np.array([[-2.5, -1.5], [2.5, -1.5], [0.0, 2.5]])
MIXTURE_STD = 0.3


def make_mixture3(means=MIXTURE_MEANS, std: float = MIXTURE_STD) -> TargetDensity:
    """Equal-weight mixture of isotropic Gaussians (normalized)."""
    means = np.asarray(means, dtype=float)
    K, D = means.shape
    const = -np.log(K) - 0.5 * D * LOG_2PI - D * np.log(std)

    def _comp(x):
        d2 = ((x[:, None, :] - means[None]) ** 2).sum(-1)
        return -0.5 * d2 / std**2 + const

    @_batched
    def logp(x):
        return logsumexp(_comp(x), axis=1)

    @_batched
    def grad(x):
        lc = _comp(x)
        w = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
        return (w[:, :, None] * (means[None] - x[:, None, :])).sum(1) / std**2

    def sampler(n, seed):
        rng = np.random.default_rng(seed)
        comp = rng.integers(K, size=n)
        return means[comp] + std * rng.standard_normal((n, D))

    return TargetDensity("mixture3", D, logp, grad, sampler)


def mixture_assignments(samples, means=MIXTURE_MEANS) -> np.ndarray:
    """Index of the nearest mixture mean for each sample."""
    d2 = ((np.asarray(samples)[:, None, :] - np.asarray(means)[None]) ** 2).sum(-1)
    return d2.argmin(axis=1)


# -- Gaussians ------------------------------------------------------------------


def ar1_covariance(dim: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(dim)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def make_gaussian(dim: int, mean=None, cov=None, name: str = "gaussian") -> TargetDensity:
    """Exact (normalized) multivariate Gaussian; defaults to ``N(0, I)``."""
    mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=float)
    cov = np.eye(dim) if cov is None else np.asarray(cov, dtype=float)
    if mean.shape != (dim,) or cov.shape != (dim, dim):
        raise TargetError(f"mean/cov shapes {mean.shape}/{cov.shape} do not match dim {dim}")
    if not np.allclose(cov, cov.T):
        raise TargetError("covariance is not symmetric")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise TargetError("covariance is not positive definite") from exc
    prec = linalg.cho_solve((L, True), np.eye(dim))
    const = -0.5 * dim * LOG_2PI - np.sum(np.log(np.diag(L)))

    @_batched
    def logp(x):
        z = linalg.solve_triangular(L, (x - mean).T, lower=True)
        return -0.5 * (z**2).sum(0) + const

    @_batched
    def grad(x):
        return -(x - mean) @ prec

    def sampler(n, seed):
        rng = np.random.default_rng(seed)
        return mean + rng.standard_normal((n, dim)) @ L.T

    return TargetDensity(name, dim, logp, grad, sampler)


def make_gaussian5() -> TargetDensity:
    """The 5-d study target: zero mean, AR(1) correlations with rho = 0.5."""
    return make_gaussian(5, cov=ar1_covariance(5, 0.5), name="gaussian")


# -- B-spline Bayesian linear regression ----------------------------------------


@dataclass(frozen=True, eq=False)
class SplineBasis:
    knots: np.ndarray
    degree: int
    centers: np.ndarray
    points: np.ndarray
    design_matrix: np.ndarray

    @property
    def n_splines(self) -> int:
        return self.design_matrix.shape[1]


def make_spline_basis(
    n_splines: int = 20, n_points: int = 500, domain=(-1.0, 1.0), degree: int = 3
) -> SplineBasis:
    """Clamped B-splines on uniform knots, evaluated on a uniform grid.

    ``centers`` are the Greville abscissae.
    """
    lo, hi = domain
    k = degree
    inner = np.linspace(lo, hi, n_splines - k + 1)
    knots = np.r_[[lo] * k, inner, [hi] * k]
    x = np.linspace(lo, hi, n_points)
    G = BSpline.design_matrix(x, knots, k).toarray()
    centers = np.array([knots[i + 1 : i + k + 1].mean() for i in range(n_splines)])
    return SplineBasis(knots, k, centers, x, G)


def squared_exponential(points, length_scale: float, jitter: float = 0.0) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    K = np.exp(-((p[:, None] - p[None, :]) ** 2) / (2.0 * length_scale**2))
    return K + jitter * np.eye(len(p))


def posterior_moments(G, d, sigma_d, prior_cov) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Gaussian-linear posterior ``(x_hat, Sigma_hat)``."""
    Lp = np.linalg.cholesky(prior_cov)
    prior_prec = linalg.cho_solve((Lp, True), np.eye(len(prior_cov)))
    A = G.T @ G + sigma_d**2 * prior_prec
    A = 0.5 * (A + A.T)
    cA = linalg.cho_factor(A, lower=True)
    x_hat = linalg.cho_solve(cA, G.T @ d)
    Sigma_hat = sigma_d**2 * linalg.cho_solve(cA, np.eye(len(A)))
    return x_hat, 0.5 * (Sigma_hat + Sigma_hat.T)


@dataclass(frozen=True, eq=False)
class RegressionPosterior:
    G: np.ndarray
    d: np.ndarray
    sigma_d: float
    Sigma_prior: np.ndarray
    x_hat: np.ndarray
    Sigma_hat: np.ndarray
    x_true: np.ndarray | None = None

    @classmethod
    def from_data(cls, G, d, sigma_d, Sigma_prior, x_true=None) -> "RegressionPosterior":
        x_hat, Sigma_hat = posterior_moments(G, d, sigma_d, Sigma_prior)
        return cls(G, d, float(sigma_d), Sigma_prior, x_hat, Sigma_hat, x_true)

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        L = np.linalg.cholesky(self.Sigma_hat)
        return self.x_hat + rng.standard_normal((n, len(self.x_hat))) @ L.T

    def to_json(self) -> str:
        return json.dumps(
            {
                "sigma_d": self.sigma_d,
                "x_hat": self.x_hat.tolist(),
                "Sigma_hat": self.Sigma_hat.tolist(),
                "G": self.G.tolist(),
                "d": self.d.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str, Sigma_prior=None) -> "RegressionPosterior":
        raw = json.loads(text)
        return cls(
            np.array(raw["G"]),
            np.array(raw["d"]),
            raw["sigma_d"],
            Sigma_prior,
            np.array(raw["x_hat"]),
            np.array(raw["Sigma_hat"]),
        )


def make_regression_target(post: RegressionPosterior, name: str) -> TargetDensity:
    """Unnormalized posterior: Gaussian likelihood times Gaussian prior."""
    G, d, s2 = post.G, post.d, post.sigma_d**2
    Lp = np.linalg.cholesky(post.Sigma_prior)
    prior_prec = linalg.cho_solve((Lp, True), np.eye(len(Lp)))

    @_batched
    def logp(x):
        r = x @ G.T - d
        z = linalg.solve_triangular(Lp, x.T, lower=True)
        return -0.5 * (r**2).sum(1) / s2 - 0.5 * (z**2).sum(0)

    @_batched
    def grad(x):
        return -(x @ G.T - d) @ G / s2 - x @ prior_prec

    return TargetDensity(name, G.shape[1], logp, grad, post.sample)


BLR_LENGTH_SCALE = 0.5
BLR_NOISE_STD = 2.0
BLR_NOISE_LENGTH = 0.05
BLR_PRIOR_JITTER = 1e-4


def correlated_noise(rng, points, length_scale: float, std: float) -> np.ndarray:
    """White noise smoothed by a Gaussian of the given length scale, rescaled to ``std``."""
    spacing = points[1] - points[0]
    eps = gaussian_filter1d(rng.standard_normal(len(points)), length_scale / spacing)
    return eps * (std / eps.std())


def make_blr(
    seed: int,
    n_splines: int = 20,
    n_points: int = 500,
    length_scale: float = BLR_LENGTH_SCALE,
    sigma_d: float = BLR_NOISE_STD,
    noise_length: float = BLR_NOISE_LENGTH,
    jitter: float = BLR_PRIOR_JITTER,
) -> tuple[TargetDensity, RegressionPosterior]:
    basis = make_spline_basis(n_splines, n_points)
    Sigma_prior = squared_exponential(basis.centers, length_scale, jitter)
    rng = np.random.default_rng(seed)
    x_true = rng.standard_normal(n_splines)
    d = basis.design_matrix @ x_true + correlated_noise(rng, basis.points, noise_length, sigma_d)
    post = RegressionPosterior.from_data(basis.design_matrix, d, sigma_d, Sigma_prior, x_true)
    return make_regression_target(post, f"blr{n_splines}"), post


def make_blr20(seed: int = 0):
    return make_blr(seed)


def make_regression_surrogate(seed: int, dim: int = 100, n_obs: int = 1000, sigma_d: float = 1.0):
    """Synthetic Gaussian-prior linear regression standing in for the 100-d problem.

    Random Gaussian design, SE prior over uniform coordinates. Not a PDE model.
    """
    rng = np.random.default_rng(seed)
    coords = np.linspace(0.0, 1.0, dim)
    Sigma_prior = squared_exponential(coords, 0.1, BLR_PRIOR_JITTER)
    G = rng.standard_normal((n_obs, dim)) / np.sqrt(dim)
    x_true = np.linalg.cholesky(Sigma_prior) @ rng.standard_normal(dim)
    d = G @ x_true + sigma_d * rng.standard_normal(n_obs)
    post = RegressionPosterior.from_data(G, d, sigma_d, Sigma_prior, x_true)
    return make_regression_target(post, f"regression{dim}_surrogate"), post
