import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from enscore.diffusion import (
    DomainError,
    ForwardSpec,
    NoiseSchedule,
    forward_simulate,
    kernel_moments,
    probability_flow_drift,
    reverse_drift,
)

KARRAS = NoiseSchedule(0.01, 1.0, 5.0)


def _frob_rel(A, B):
    return np.linalg.norm(A - B) / np.linalg.norm(B)


def _ou(theta=0.1, D=3, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((D, D))
    return ForwardSpec.ornstein_uhlenbeck(theta, A @ A.T + D * np.eye(D), alpha=2.0, mu=rng.standard_normal(D))


class TestNoiseSchedule:
    def test_endpoints_exact(self):
        s = NoiseSchedule(0.005, 1.0, 5.0)
        assert s.g(0.0) == pytest.approx(0.005, rel=1e-14)
        assert s.g(1.0) == pytest.approx(1.0, rel=1e-14)

    def test_strictly_increasing(self):
        g = KARRAS.g(np.linspace(0, 1, 200))
        assert np.all(np.diff(g) > 0)

    def test_variance_matches_quadrature_on_grid(self):
        for t in np.linspace(0.0, 1.0, 50):
            ref, _ = quad(lambda u: float(KARRAS.g(u)) ** 2, 0.0, t, epsabs=0, epsrel=1e-13, limit=200)
            got = float(KARRAS.integrated_variance(t))
            if t == 0:
                assert got == 0.0
            else:
                assert got == pytest.approx(ref, rel=1e-10)

    def test_constant_schedule(self):
        s = NoiseSchedule(1.5, 1.5)
        assert float(s.integrated_variance(0.4)) == pytest.approx(2.25 * 0.4, rel=1e-14)

    def test_rejects_bad_bounds(self):
        with pytest.raises(DomainError):
            NoiseSchedule(1.0, 0.5)


class TestKernelMoments:
    @pytest.mark.parametrize("spec", [ForwardSpec.zero_drift(2, KARRAS), _ou()])
    def test_delta_at_zero(self, spec):
        km = kernel_moments(spec, 0.0)
        np.testing.assert_array_equal(km.mean_shrink, np.eye(spec.dim))
        np.testing.assert_array_equal(km.mean_offset, 0.0)
        np.testing.assert_array_equal(km.cov, 0.0)
        assert km.cov_chol is None

    def test_constant_sigma(self):
        spec = ForwardSpec.zero_drift(3, NoiseSchedule(0.7, 0.7))
        km = kernel_moments(spec, 0.6)
        np.testing.assert_allclose(km.cov, 0.49 * 0.6 * np.eye(3), rtol=1e-14)

    def test_karras_v1_against_quadrature(self):
        km = kernel_moments(ForwardSpec.zero_drift(1, KARRAS), 1.0)
        ref, _ = quad(lambda u: float(KARRAS.g(u)) ** 2, 0, 1, epsabs=0, epsrel=1e-13)
        assert km.cov[0, 0] == pytest.approx(ref, rel=1e-10)

    def test_ou_against_moment_odes(self):
        spec = ForwardSpec.from_scale_matrix(0.1, np.eye(2), np.zeros(2))
        km = kernel_moments(spec, 1.0)

        # dm/dt = -theta m, dV/dt = -2 theta V + G G^T
        def rhs(t, y):
            return [-0.1 * y[0], -0.2 * y[1] + 1.0]

        sol = solve_ivp(rhs, (0, 1), [1.0, 0.0], rtol=1e-12, atol=1e-14)
        m1, v1 = sol.y[:, -1]
        np.testing.assert_allclose(km.mean_shrink, m1 * np.eye(2), rtol=1e-9)
        np.testing.assert_allclose(km.cov, v1 * np.eye(2), rtol=1e-9)
        assert m1 == pytest.approx(np.exp(-0.1), rel=1e-9)
        assert v1 == pytest.approx((1 - np.exp(-0.2)) / 0.2, rel=1e-9)

    def test_ou_offset_and_general_cov(self):
        spec = _ou(theta=0.3)
        t = 0.7
        km = kernel_moments(spec, t)
        G = spec.scale_matrix
        np.testing.assert_allclose(km.mean_offset, (1 - np.exp(-0.3 * t)) * spec.mu)
        np.testing.assert_allclose(km.cov, (1 - np.exp(-0.6 * t)) / 0.6 * G @ G.T, rtol=1e-12)
        np.testing.assert_allclose(km.cov_chol @ km.cov_chol.T, km.cov, rtol=1e-12)

    @pytest.mark.parametrize("spec", [ForwardSpec.zero_drift(2, KARRAS), _ou()])
    def test_cov_symmetric_psd(self, spec):
        for t in np.linspace(0, 1, 11):
            C = kernel_moments(spec, t).cov
            np.testing.assert_array_equal(C, C.T)
            assert np.linalg.eigvalsh(C).min() >= -1e-14

    def test_loewner_monotone_zero_drift(self):
        spec = ForwardSpec.zero_drift(3, KARRAS)
        ts = np.linspace(0, 1, 21)
        for t1, t2 in zip(ts[:-1], ts[1:]):
            diff = kernel_moments(spec, t2).cov - kernel_moments(spec, t1).cov
            assert np.linalg.eigvalsh(diff).min() >= 0

    def test_table2_shrink(self):
        spec = ForwardSpec.from_scale_matrix(0.1, np.eye(4), np.zeros(4))
        np.testing.assert_allclose(kernel_moments(spec, 1.0).mean_shrink, np.exp(-0.1) * np.eye(4))

    @pytest.mark.parametrize("t", [-0.01, 1.01])
    def test_time_domain(self, t):
        with pytest.raises(DomainError):
            kernel_moments(ForwardSpec.zero_drift(1, KARRAS), t)


class TestOUConstruction:
    def test_rejects_nonpositive_theta(self):
        with pytest.raises(DomainError):
            ForwardSpec.from_scale_matrix(0.0, np.eye(2), np.zeros(2))

    def test_rejects_upper_triangular(self):
        with pytest.raises(DomainError):
            ForwardSpec.from_scale_matrix(0.1, np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))

    def test_rejects_mu_dimension(self):
        with pytest.raises(DomainError):
            ForwardSpec.from_scale_matrix(0.1, np.eye(2), np.zeros(3))

    def test_cholesky_of_inflated_prior(self):
        P = np.array([[0.5, -0.4], [-0.4, 0.5]])
        spec = ForwardSpec.ornstein_uhlenbeck(1.0, P, alpha=16.0)
        np.testing.assert_allclose(spec.scale_matrix @ spec.scale_matrix.T, 16 * P, rtol=1e-12)


class TestDrifts:
    def test_reverse_zero_score_zero_drift(self):
        spec = ForwardSpec.zero_drift(3, KARRAS)
        np.testing.assert_array_equal(reverse_drift(spec, 0.4, np.ones(3), np.zeros(3)), 0.0)
        np.testing.assert_array_equal(probability_flow_drift(spec, 0.4, np.ones(3), np.zeros(3)), 0.0)

    def test_reverse_ou_unit(self):
        spec = ForwardSpec.from_scale_matrix(1.0, np.eye(2), np.zeros(2))
        x = np.array([0.3, -2.0])
        np.testing.assert_allclose(reverse_drift(spec, 0.5, x, np.zeros(2)), -x)

    def test_g_equals_two(self):
        spec = ForwardSpec.zero_drift(2, NoiseSchedule(2.0, 2.0))
        u = np.array([0.5, -1.5])
        np.testing.assert_allclose(reverse_drift(spec, 0.3, np.ones(2), u), -4 * u)
        np.testing.assert_allclose(probability_flow_drift(spec, 0.3, np.ones(2), u), -2 * u)

    def test_flow_identity_ou(self):
        spec = _ou()
        rng = np.random.default_rng(3)
        x, s = rng.standard_normal((2, 5, spec.dim))
        G = spec.scale_matrix
        expected = reverse_drift(spec, 0.2, x, s) + 0.5 * s @ (G @ G.T).T
        np.testing.assert_allclose(probability_flow_drift(spec, 0.2, x, s), expected, rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch(self):
        spec = ForwardSpec.zero_drift(2, KARRAS)
        with pytest.raises(DomainError):
            reverse_drift(spec, 0.5, np.ones(2), np.ones(3))


class TestForwardSimulate:
    def test_no_noise_is_static(self):
        spec = ForwardSpec.zero_drift(2, NoiseSchedule(0.0, 0.0))
        x0 = np.random.default_rng(0).standard_normal((10, 2))
        _, snaps = forward_simulate(spec, x0, 20, seed=1)
        for s in snaps:
            np.testing.assert_array_equal(s, x0)

    def test_deterministic(self):
        spec = _ou()
        x0 = np.zeros((50, spec.dim))
        a = forward_simulate(spec, x0, 30, seed=5)[1][-1]
        b = forward_simulate(spec, x0, 30, seed=5)[1][-1]
        np.testing.assert_array_equal(a, b)

    def test_ou_fast_reversion(self):
        theta, N = 10.0, 10_000
        spec = ForwardSpec.from_scale_matrix(theta, np.eye(2), np.zeros(2))
        x0 = np.random.default_rng(0).multivariate_normal([0.8, 0.8], [[0.4, -0.39], [-0.39, 0.4]], N)
        _, snaps = forward_simulate(spec, x0, 200, seed=2)
        X = snaps[-1]
        km = kernel_moments(spec, 1.0)
        se = np.sqrt(np.diag(km.cov) / N)
        assert np.all(np.abs(X.mean(0)) < 3 * se + np.abs(km.mean(x0.mean(0)[None])[0]))
        assert _frob_rel(np.cov(X.T), (1 - np.exp(-2 * theta)) / (2 * theta) * np.eye(2)) < 0.1

    def test_brownian_sigma_15(self):
        mu0, S0 = np.array([0.8, 0.8]), np.array([[0.4, -0.39], [-0.39, 0.4]])
        x0 = np.random.default_rng(1).multivariate_normal(mu0, S0, 10_000)
        spec = ForwardSpec.zero_drift(2, NoiseSchedule(1.5, 1.5))
        X = forward_simulate(spec, x0, 200, seed=3)[1][-1]
        assert _frob_rel(np.cov(X.T), S0 + 2.25 * np.eye(2)) < 0.1

    @pytest.mark.parametrize("spec", [ForwardSpec.zero_drift(2, NoiseSchedule(0.1, 2.0)), _ou(theta=0.5, D=2)])
    def test_kernel_moment_consistency(self, spec):
        rng = np.random.default_rng(4)
        x0 = rng.multivariate_normal([0.8, -0.3], [[0.4, -0.2], [-0.2, 0.3]], 10_000)
        times, snaps = forward_simulate(spec, x0, 200, seed=6)
        for t, X in zip(times[[50, 200]], [snaps[50], snaps[200]]):
            km = kernel_moments(spec, t)
            A = km.mean_shrink
            mean_pred = A @ x0.mean(0) + km.mean_offset
            cov_pred = A @ np.cov(x0.T) @ A.T + km.cov
            assert np.linalg.norm(X.mean(0) - mean_pred) < 0.1 * max(1.0, np.linalg.norm(mean_pred))
            assert _frob_rel(np.cov(X.T), cov_pred) < 0.1
