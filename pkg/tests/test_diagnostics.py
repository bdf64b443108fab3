import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hola.constants import derive_constants
from hola.diagnostics import (
    QuadratureReference,
    adaptive_simpson,
    fit_rate,
    gaussian_w2,
    jackknife_se,
    moment_envelope,
    stationary_covariance_oracle,
    stationary_variance_oracle,
    tv_1d,
    w2_1d,
)
from hola.potentials import double_well_model, gaussian_model, logcosh_model
from hola.rng import RandomStream
from hola.samplers import SamplerConfig, run_chains


def _random_spd(rng, d):
    A = rng.normal(size=(d, d))
    return A @ A.T + 0.1 * np.eye(d)


class TestGaussianW2:
    def test_identical(self):
        S = np.array([[2.0, 0.3], [0.3, 1.0]])
        assert gaussian_w2([1, 2], S, [1, 2], S) == pytest.approx(0.0, abs=1e-7)

    @pytest.mark.parametrize("s1, s2", [(1.0, 2.0), (0.3, 0.1), (5.0, 5.0)])
    def test_1d(self, s1, s2):
        assert gaussian_w2([0], [[s1**2]], [0], [[s2**2]]) == pytest.approx(abs(s1 - s2), abs=1e-12)

    def test_mean_shift(self):
        m = np.array([3.0, 4.0])
        assert gaussian_w2(m, np.eye(2), [0, 0], np.eye(2)) == pytest.approx(5.0, rel=1e-12)

    @pytest.mark.parametrize("S", [[[1.0, 0.0], [0.0, -1.0]], [[1.0, 2.0], [0.0, 1.0]]])
    def test_rejects(self, S):
        with pytest.raises(ValueError):
            gaussian_w2([0, 0], S, [0, 0], np.eye(2))

    def test_metric_properties(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            g = [(rng.normal(size=3), _random_spd(rng, 3)) for _ in range(3)]
            ab = gaussian_w2(*g[0], *g[1])
            ba = gaussian_w2(*g[1], *g[0])
            assert abs(ab - ba) <= 1e-12 * max(1.0, ab) * 100
            assert ab <= gaussian_w2(*g[0], *g[2]) + gaussian_w2(*g[2], *g[1]) + 1e-10


class TestW21d:
    def test_exact_quantiles(self):
        n = 1000
        x = stats.norm.ppf((np.arange(n) + 0.5) / n)
        assert w2_1d(x, stats.norm.ppf) == 0.0

    def test_shift(self):
        n = 1000
        x = stats.norm.ppf((np.arange(n) + 0.5) / n)
        assert w2_1d(x + 0.3, stats.norm.ppf) == pytest.approx(0.3, rel=1e-12)

    def test_unsorted_input(self):
        x = stats.norm.ppf((np.arange(100) + 0.5) / 100)
        assert w2_1d(x[::-1], stats.norm.ppf) == 0.0

    def test_monte_carlo_floor(self):
        z = RandomStream(seed=5).standard_normal(10**6)
        assert w2_1d(z, stats.norm.ppf) < 0.01

    def test_agrees_with_gaussian_formula(self):
        # 1e6 draws of N(0.5, 1.5^2) against N(0, 1), through both routes
        z = 0.5 + 1.5 * RandomStream(seed=6).standard_normal(10**6)
        emp = w2_1d(z, stats.norm.ppf)
        closed = gaussian_w2([z.mean()], [[z.var()]], [0.0], [[1.0]])
        assert abs(emp - closed) <= 0.02 * closed


class TestTv1d:
    def test_exact_proportions(self):
        edges = np.linspace(-1, 1, 11)
        x = np.repeat(0.5 * (edges[:-1] + edges[1:]), 100)
        cdf = lambda t: np.clip((np.asarray(t) + 1) / 2, 0, 1)
        assert tv_1d(x, cdf, 10, (-1, 1)) == pytest.approx(0.0, abs=1e-15)

    def test_disjoint(self):
        x = np.full(1000, 5.0)
        cdf = lambda t: np.clip((np.asarray(t) + 1) / 2, 0, 1)
        assert tv_1d(x, cdf, 10, (-1, 1)) == pytest.approx(1.0)
        assert tv_1d(x, cdf, 10, (-1, 6)) == pytest.approx(1.0)

    def test_monte_carlo(self):
        z = RandomStream(seed=7).standard_normal(10**6)
        assert tv_1d(z, stats.norm.cdf, 50, (-4, 4)) < 0.02

    def test_needs_bins(self):
        with pytest.raises(ValueError):
            tv_1d(np.zeros(3), stats.norm.cdf, 5, (-1, 1))


class TestOracle:
    @pytest.mark.parametrize("scheme", ["ula", "hola_lipschitz"])
    def test_small_step_limit(self, scheme):
        for a in (0.5, 1.0, 3.0):
            assert stationary_variance_oracle(a, 1e-6, scheme) == pytest.approx(1 / a, rel=1e-5)

    def test_ula_value(self):
        assert stationary_variance_oracle(1.0, 0.1, "ula") == pytest.approx(1 / 0.95, rel=1e-14)

    def test_hola_value(self):
        expected = 0.2 * (1 - 0.1 + 0.01 / 3) / (1 - 0.905**2)
        assert stationary_variance_oracle(1.0, 0.1, "hola_lipschitz") == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("scheme, gamma", [("ula", 2.0), ("ula", 2.5), ("hola_lipschitz", 2.5)])
    def test_unstable(self, scheme, gamma):
        with pytest.raises(ValueError):
            stationary_variance_oracle(1.0, gamma, scheme)

    def test_tamed_has_no_oracle(self):
        with pytest.raises(ValueError):
            stationary_variance_oracle(1.0, 0.1, "hola")

    @pytest.mark.parametrize("scheme", ["ula", "hola_lipschitz"])
    def test_matrix_oracle_matches_scalar(self, scheme):
        A = np.diag([0.5, 2.0])
        S = stationary_covariance_oracle(A, 0.1, scheme)
        expected = [stationary_variance_oracle(a, 0.1, scheme) for a in (0.5, 2.0)]
        np.testing.assert_allclose(np.diag(S), expected, rtol=1e-12)
        assert abs(S[0, 1]) < 1e-14

    def test_matrix_oracle_fixed_point(self):
        rng = np.random.default_rng(3)
        A = _random_spd(rng, 3)
        A /= np.linalg.eigvalsh(A)[-1]
        g = 0.2
        S = stationary_covariance_oracle(A, g, "hola_lipschitz")
        B = np.eye(3) - g * A + 0.5 * g**2 * A @ A
        Q = 2 * g * (np.eye(3) - g * A + g**2 / 3 * A @ A)
        np.testing.assert_allclose(B @ S @ B.T + Q, S, atol=1e-12)

    @pytest.mark.parametrize("scheme, order, tol", [("ula", 1.0, 0.02), ("hola_lipschitz", 2.0, 0.05)])
    def test_bias_orders(self, scheme, order, tol):
        pts = [(g, abs(stationary_variance_oracle(1.0, g, scheme) - 1.0)) for g in (1e-3, 2e-3, 4e-3, 8e-3)]
        assert abs(fit_rate(pts).slope - order) <= tol

    def test_against_simulation(self):
        g, n_chains, steps = 0.1, 1000, 2000
        cfg = SamplerConfig(scheme="hola_lipschitz", gamma=g, n_steps=steps + 200, burn_in=200, seed=1)
        starts = stats.norm.ppf((np.arange(n_chains) + 0.5) / n_chains)[:, None]
        x = run_chains(cfg, gaussian_model([0.0], [[1.0]]), n_chains, initial_points=starts).samples[..., 0]
        labels = np.repeat(np.arange(20), n_chains // 20)
        est = np.mean(x**2)
        se = jackknife_se([np.mean(x[labels != k] ** 2) for k in range(20)])
        assert abs(est - stationary_variance_oracle(1.0, g, "hola_lipschitz")) <= 4 * se


class TestFitRate:
    def test_square(self):
        g = np.array([0.01, 0.02, 0.04, 0.08])
        f = fit_rate(list(zip(g, g**2)))
        assert f.slope == pytest.approx(2.0, abs=1e-12) and f.r2 == pytest.approx(1.0)

    def test_intercept(self):
        g = np.array([0.01, 0.03, 0.1])
        f = fit_rate(list(zip(g, 3 * g**1.5)))
        assert f.slope == pytest.approx(1.5, abs=1e-12)
        assert f.intercept == pytest.approx(math.log(3), abs=1e-12)

    @pytest.mark.parametrize(
        "pts",
        [[(0.1, 1.0), (0.2, 2.0)], [(0.1, 1.0), (0.2, 0.0), (0.3, 1.0)], [(0.1, 1.0), (0.1, 2.0), (0.3, 1.0)],
         [(0.1, -1.0), (0.2, 1.0), (0.3, 1.0)]],
    )
    def test_rejects(self, pts):
        with pytest.raises(ValueError):
            fit_rate(pts)

    @settings(max_examples=100, deadline=None)
    @given(p=st.floats(0.1, 4.0), c=st.floats(1e-3, 1e3))
    def test_recovers_power(self, p, c):
        g = np.geomspace(1e-3, 0.5, 5)
        assert fit_rate(list(zip(g, c * g**p))).slope == pytest.approx(p, abs=1e-9)


class TestQuadrature:
    def test_simpson_polynomial(self):
        assert adaptive_simpson(lambda t: t**3 - t, 0.0, 2.0) == pytest.approx(2.0, rel=1e-14)

    def test_gaussian_reference(self):
        ref = QuadratureReference(gaussian_model([0.0], [[1.0]]).energy)
        u = np.linspace(1e-9, 1 - 1e-9, 1001)
        np.testing.assert_allclose(ref.quantile(u), stats.norm.ppf(u), atol=1e-12)
        t = np.linspace(-5, 5, 101)
        np.testing.assert_allclose(ref.cdf(t), stats.norm.cdf(t), atol=1e-14)
        assert ref.norm * math.exp(-ref._shift) == pytest.approx(math.sqrt(2 * math.pi), rel=1e-10)

    def test_logcosh_normaliser(self):
        from scipy import integrate

        ref = QuadratureReference(logcosh_model().energy)
        Z = integrate.quad(lambda t: math.exp(-0.5 * t * t) / math.cosh(t), -40, 40, epsabs=0, epsrel=1e-13)[0]
        assert ref.norm * math.exp(-ref._shift) == pytest.approx(Z, rel=1e-10)
        assert ref.moment(1) == pytest.approx(0.0, abs=1e-12)

    def test_quantile_inverts_cdf(self):
        ref = QuadratureReference(double_well_model(1).energy)
        u = np.linspace(1e-6, 1 - 1e-6, 2001)
        q = ref.quantile(u)
        assert np.all(np.diff(q) > 0)
        np.testing.assert_allclose(ref.cdf(q), u, atol=1e-13)


class TestMomentEnvelope:
    def _consts(self):
        c = logcosh_model().constants
        return derive_constants(c.m, c.L1, c.L2, c.L, 1)

    def test_log_cosh_substitution(self):
        k = self._consts()
        L2 = 4 / (3 * math.sqrt(3))
        assert k.m_tilde == pytest.approx(2 / 3, rel=1e-15)
        assert k.q1 == pytest.approx((L2**2 / (4 / 3) + 1.5 * L2**2) + 20.0, rel=1e-14)

    def test_refuses_outside_range(self):
        k = self._consts()
        with pytest.raises(ValueError, match="admissible"):
            moment_envelope(np.zeros((1, 3, 1)), np.arange(3), k, k.gamma_max * 1.01, [0.0], [1.0])

    def test_plateau(self):
        k = self._consts()
        env = moment_envelope(np.zeros((20, 2, 1)), np.array([1, 10**7]), k, k.gamma_max / 2, [0.0], [5.0])
        assert env.bound_m2[-1] == pytest.approx(k.q1 / k.m_tilde, rel=1e-12)
        assert env.bound_m4[-1] == pytest.approx(8 * k.q2 / k.m_tilde, rel=1e-12)
        assert env.violations == 0

    def test_running_mean(self):
        k = self._consts()
        x = np.array([[[1.0], [3.0]]])
        env = moment_envelope(x, np.array([1, 2]), k, 0.1, [0.0], [0.0], running=True)
        np.testing.assert_allclose(env.empirical_m2, [1.0, 5.0])
        assert np.isnan(env.se_m2).all()


def test_jackknife_of_mean_is_classical_se():
    rng = np.random.default_rng(0)
    x = rng.normal(size=20)
    loo = [(x.sum() - v) / 19 for v in x]
    assert jackknife_se(loo) == pytest.approx(x.std(ddof=1) / math.sqrt(20), rel=1e-12)
