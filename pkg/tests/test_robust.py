import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsefunc.bounds import recursion_envelope
from sparsefunc.core import ValidationError
from sparsefunc.robust import (
    WARN_ENVELOPE,
    WARN_GUARD,
    WARN_NO_OUTLIERS,
    RobustInstanceView,
    coordinatewise_median,
    group_lasso_bounds,
    group_lasso_fit,
    group_lasso_lambda,
    group_lasso_mu_deviation_check,
    ist_a,
    ist_epsilon_a,
    ist_estimate,
    ist_gamma,
    ist_gamma_condition,
    kkt_residual,
    robust_shrink,
    sample_mean,
)

seeds = st.integers(0, 2**32 - 1)


def contaminated(seed, p=6, n=40, s=2, norm=60.0, mu=None):
    g = np.random.default_rng(seed)
    mu = np.zeros(p) if mu is None else mu
    Theta = np.zeros((p, n))
    d = g.standard_normal((p, s))
    Theta[:, :s] = d / np.linalg.norm(d, axis=0) * norm
    return mu[:, None] + Theta + g.standard_normal((p, n)), Theta


class TestBaselines:
    def test_sample_mean(self):
        v = np.array([1.0, -2.0, 3.5])
        np.testing.assert_allclose(sample_mean(np.tile(v[:, None], 4)), v)
        u = np.array([2.0, 7.0])
        np.testing.assert_array_equal(sample_mean(np.column_stack([u, -u])), [0, 0])

    def test_median(self):
        v = np.array([1.0, 4.0])
        np.testing.assert_array_equal(coordinatewise_median(np.tile(v[:, None], 3)), v)
        assert coordinatewise_median([[1.0, 100.0, 2.0]])[0] == 2.0
        assert coordinatewise_median([[1.0, 2.0, 3.0, 100.0]])[0] == 2.5

    def test_sample_mean_risk(self):
        p, n = 10, 50
        errs = [np.sum(sample_mean(np.random.default_rng(t).standard_normal((p, n))) ** 2)
                for t in range(2000)]
        assert np.mean(errs) == pytest.approx(p / n, rel=0.05)


class TestGroupLasso:
    def test_lambda(self):
        assert group_lasso_lambda(1.0, 10, 100, 0.1) ** 2 == pytest.approx(2088.4, abs=0.05)
        assert group_lasso_lambda(3.0, 10, 100, 0.1) ** 2 == pytest.approx(9 * 2088.4, abs=0.5)
        for p, n, d in [(1, 2, 0.5), (50, 400, 0.01), (7, 33, 0.9)]:
            assert group_lasso_lambda(1.0, p, n, d) ** 2 == pytest.approx(32 * (p + 8 * math.log(n / d)))

    def test_huge_lambda_gives_mean(self, rng):
        Y = rng.standard_normal((3, 8)) * 5
        lam = 1e6 * np.linalg.norm(Y, axis=0).max()
        r = group_lasso_fit(RobustInstanceView(Y, 1.0, 1), lam)
        assert np.all(r.theta_hat == 0) and r.converged
        np.testing.assert_allclose(r.mu_hat, Y.mean(axis=1))

    def test_grid_oracle(self):
        Y = np.array([[0.0, 0.0, 10.0]])
        lam = 4.0
        r = group_lasso_fit(RobustInstanceView(Y, 1.0, 1), lam, tol=1e-12)

        def soft(x):
            return np.sign(x) * np.maximum(np.abs(x) - lam / 2, 0)

        m = np.linspace(-2, 4, 1201)[:, None]
        t3 = np.linspace(0, 12, 2401)[None, :]
        t12 = soft(0.0 - m)
        f = (2 * ((0.0 - m - t12) ** 2 + lam * np.abs(t12))
             + (10.0 - m - t3) ** 2 + lam * np.abs(t3))
        i, j = np.unravel_index(np.argmin(f), f.shape)
        m_grid, t3_grid = m[i, 0], t3[0, j]
        assert (m_grid, t3_grid) == (pytest.approx(1.0, abs=1e-4), pytest.approx(7.0, abs=1e-4))
        assert r.mu_hat[0] == pytest.approx(m_grid, abs=1e-4)
        assert r.theta_hat[0, 2] == pytest.approx(t3_grid, abs=1e-4)
        assert r.theta_hat[0, 0] == r.theta_hat[0, 1] == 0.0

    @settings(max_examples=25, deadline=None)
    @given(seeds, st.floats(5.0, 80.0))
    def test_solver_invariants(self, seed, lam):
        Y, _ = contaminated(seed, norm=40.0)
        r = group_lasso_fit(RobustInstanceView(Y, 1.0, 2), lam, tol=1e-9)
        assert r.converged and r.kkt_residual <= 1e-9
        assert r.kkt_residual == pytest.approx(kkt_residual(Y, r.mu_hat, r.theta_hat, lam))
        trace = np.array(r.objective_trace)
        assert np.all(np.diff(trace) <= 1e-9 * trace[0])
        np.testing.assert_allclose(r.mu_hat, Y.mean(axis=1) - r.theta_hat.mean(axis=1), atol=1e-12)

    def test_not_converged_is_reported(self):
        Y, _ = contaminated(3, norm=200.0)
        r = group_lasso_fit(RobustInstanceView(Y, 1.0, 2), 20.0, tol=1e-14, max_iter=1)
        assert r.iterations == 1 and not r.converged and r.kkt_residual > 1e-14

    def test_rejects_single_column(self):
        with pytest.raises(ValidationError):
            group_lasso_fit(RobustInstanceView(np.ones((2, 1)), 1.0, 0), 1.0)

    def test_deviation_check_trivial(self):
        p, n = 4, 64
        mu = np.zeros(p)
        Theta = np.zeros((p, n))
        from sparsefunc.robust import GroupLassoResult
        res = GroupLassoResult(mu.copy(), Theta.copy(), 0.0, 0.0, 0, True)
        lam = group_lasso_lambda(1.0, p, n, 0.1)
        assert group_lasso_mu_deviation_check(res, mu, Theta, lam, 1.0, 0.1, 2) == (True, True, True, True)
        chk = group_lasso_mu_deviation_check(res, mu, Theta, lam, 1.0, 0.1, 3)
        assert chk.guard_ok is False and chk.mean

    def test_bounds_formula(self):
        b = group_lasso_bounds(10.0, 1.0, 5, 100, 2, 0.1)
        assert b == pytest.approx((1800.0, 288 * 4 * 100 / 1e4,
                                   288 * 4 * 100 / 1e4 + 0.2 + 0.08 * math.log(20)))

    def test_guard_warning(self):
        assert RobustInstanceView(np.zeros((2, 64)), 1.0, 2).warnings == []
        assert RobustInstanceView(np.zeros((2, 64)), 1.0, 3).warnings == [WARN_GUARD]


class TestShrink:
    def test_examples(self):
        assert np.array_equal(robust_shrink(np.zeros(3), 1.0, 2.0, 10, 3), np.zeros(3))
        z = np.array([2.0, 1.0, 0.5])
        np.testing.assert_array_equal(robust_shrink(z, 1.0, 0.0, 10, 3), z)
        z = np.array([2.0, 1.0])  # ||z||^2 = 5, (n-1)/n sigma^2 p = 1
        np.testing.assert_allclose(robust_shrink(z, 1.0, 1.0, 2, 2), 0.5 * z)

    def test_kill_region(self):
        n, p, sigma, gamma = 5, 3, 1.0, 1.5
        edge = (n - 1) / n * sigma**2 * p + sigma**2 * gamma**2
        z = np.array([1.0, 0, 0]) * math.sqrt(edge) * 0.999
        assert np.all(robust_shrink(z, sigma, gamma, n, p) == 0)
        assert np.any(robust_shrink(z * 1.01, sigma, gamma, n, p) != 0)

    @given(seeds, st.floats(0.0, 5.0))
    def test_matches_prox_form(self, seed, gamma):
        # theta = Z (1 - lam_i / (2||Z||))_+ with lam_i = 2 sigma gamma ||Z|| / sqrt(||Z||^2 - s2)
        g = np.random.default_rng(seed)
        n, p, sigma = 20, 4, 0.7
        Z = g.standard_normal((p, 8)) * g.uniform(0.2, 3, size=8)
        s2 = (n - 1) / n * sigma**2 * p
        out = robust_shrink(Z, sigma, gamma, n, p)
        for i in range(8):
            z2 = Z[:, i] @ Z[:, i]
            if z2 > s2:
                lam_i = 2 * sigma * gamma * math.sqrt(z2) / math.sqrt(z2 - s2)
                ref = Z[:, i] * max(1 - lam_i / (2 * math.sqrt(z2)), 0)
                np.testing.assert_allclose(out[:, i], ref, atol=1e-12)
            else:
                assert np.all(out[:, i] == 0)


class TestIstFormulas:
    def test_gamma(self):
        assert ist_gamma(0.0, 7) == 0.0
        for p in (1, 10, 100):
            assert ist_gamma(math.sqrt(p), p) ** 2 == pytest.approx(8 * p + 4 * p * math.sqrt(5))
        assert ist_gamma(math.sqrt(100), 100) ** 2 == pytest.approx(16.944 * 100, rel=1e-4)
        vals = [ist_gamma(e, 30) for e in np.linspace(0, 20, 50)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_epsilon(self):
        assert ist_epsilon_a(0, 100, 10, 3.0, 0.1) == 0.0
        assert ist_epsilon_a(5, 100, 10, 0.0, 0.1) == ist_a(5, 100, 10, 0.1)
        val = ist_epsilon_a(20, 400, 100, 10.0, 0.1)
        assert val == pytest.approx(0.01 * (200 + 20 + math.sqrt(2000) + math.sqrt(40 * math.log(40))))
        assert val == pytest.approx(2.769, abs=5e-4)

    def test_gamma_condition(self):
        t = math.log(4 * 400 / 0.1)
        assert ist_gamma_condition(100, 400, 0.1) == pytest.approx(4 * t + 4 * math.sqrt(100 * t))


class TestIst:
    def test_no_outliers_short_circuit(self, rng):
        Y = rng.standard_normal((4, 30))
        L, mu, trace = ist_estimate(RobustInstanceView(Y, 1.0, 0), 3)
        np.testing.assert_allclose(mu.estimate, Y.mean(axis=1), atol=1e-15)
        assert WARN_NO_OUTLIERS in mu.warnings and trace == []

    def test_tracks_mean_without_outliers(self):
        p, n = 10, 100
        ratios = []
        for t in range(500):
            g = np.random.default_rng(t)
            mu = g.standard_normal(p)
            Y = mu[:, None] + g.standard_normal((p, n))
            _, res, _ = ist_estimate(RobustInstanceView(Y, 1.0, 1), 4)
            ratios.append(np.linalg.norm(res.estimate - mu) / np.linalg.norm(Y.mean(axis=1) - mu))
        assert 0.8 <= np.median(ratios) <= 1.2

    def test_trace_shape_and_gamma_rule(self):
        Y, _ = contaminated(1, p=20, n=200, s=3, norm=50.0)
        L, mu, trace = ist_estimate(RobustInstanceView(Y, 1.0, 3), 5)
        assert [st.iteration for st in trace] == list(range(6))
        for prev, cur in zip(trace, trace[1:]):
            assert cur.gamma == pytest.approx(ist_gamma(prev.epsilon, 20))
            assert cur.epsilon == pytest.approx(ist_epsilon_a(3, 200, 20, cur.gamma, 0.1))
        np.testing.assert_allclose(mu.estimate, Y.mean(axis=1) - L.estimate, atol=1e-12)
        np.testing.assert_allclose(L.estimate, trace[-1].L_hat)

    def test_one_step_recursion_bound(self):
        p, n, s, delta = 100, 200, 1, 0.1
        Y, _ = contaminated(5, p=p, n=n, s=s, norm=100.0)
        _, _, trace = ist_estimate(RobustInstanceView(Y, 1.0, s, delta), 8)
        a = ist_a(s, n, p, delta)
        for prev, cur in zip(trace, trace[1:]):
            e = prev.epsilon
            bound = 8 * s / n * math.sqrt(2 * e * e + math.sqrt(4 * e**4 + p * e * e)) + a
            assert cur.epsilon <= bound * (1 + 1e-12)

    def test_envelope_when_applicable(self):
        p, n, s, delta = 100, 200, 1, 0.1
        for seed in range(5):
            Y, _ = contaminated(seed, p=p, n=n, s=s, norm=100.0)
            L, _, trace = ist_estimate(RobustInstanceView(Y, 1.0, s, delta), 8)
            assert WARN_ENVELOPE not in L.warnings
            a = ist_a(s, n, p, delta)
            for st in trace:
                env = recursion_envelope(trace[0].epsilon, s, n, p, a, st.iteration)
                assert env.applicable and st.epsilon <= env.value * (1 + 1e-12)

    def test_envelope_flag_outside_regime(self):
        Y, _ = contaminated(0, p=10, n=60, s=4, norm=30.0)
        L, _, trace = ist_estimate(RobustInstanceView(Y, 1.0, 4), 2)
        assert WARN_ENVELOPE in L.warnings and WARN_ENVELOPE in trace[0].flags

    @settings(max_examples=15, deadline=None)
    @given(seeds, st.lists(st.floats(-50, 50), min_size=6, max_size=6))
    def test_translation_equivariance(self, seed, shift):
        c = np.array(shift)
        Y, _ = contaminated(seed)
        Yc = Y + c[:, None]
        view, view_c = RobustInstanceView(Y, 1.0, 2), RobustInstanceView(Yc, 1.0, 2)
        tol = 1e-9 * (1 + np.abs(c).max())
        np.testing.assert_allclose(sample_mean(Yc), sample_mean(Y) + c, atol=tol)
        np.testing.assert_allclose(coordinatewise_median(Yc), coordinatewise_median(Y) + c, atol=tol)
        lam = group_lasso_lambda(1.0, 6, 40, 0.1) / 4
        a, b = group_lasso_fit(view, lam, 1e-11), group_lasso_fit(view_c, lam, 1e-11)
        np.testing.assert_allclose(b.mu_hat, a.mu_hat + c, atol=1e-6)
        np.testing.assert_allclose(b.theta_hat, a.theta_hat, atol=1e-6)
        La, mua, _ = ist_estimate(view, 3)
        Lb, mub, _ = ist_estimate(view_c, 3)
        np.testing.assert_allclose(mub.estimate, mua.estimate + c, atol=1e-6)
        np.testing.assert_allclose(Lb.estimate, La.estimate, atol=1e-6)


def test_ist_longer_run_beats_group_lasso():
    # The operating point of the 4-step comparison (n=400, s=20, p=100,
    # outliers at norm 100): after 4 steps gamma is still above the outlier
    # norm, but by 20 steps the recursion has contracted far enough to
    # separate outliers from inliers.
    p, n, s, delta = 100, 400, 20, 0.1
    lam = group_lasso_lambda(1.0, p, n, delta)
    wins = 0
    for t in range(40):
        g = np.random.default_rng(1000 + t)
        Theta = np.zeros((p, n))
        d = g.standard_normal((p, s))
        Theta[:, g.choice(n, s, replace=False)] = d / np.linalg.norm(d, axis=0) * 100.0
        Y = Theta + g.standard_normal((p, n))
        view = RobustInstanceView(Y, 1.0, s, delta)
        gl = group_lasso_fit(view, lam)
        _, mu, trace = ist_estimate(view, 20)
        assert trace[4].gamma > 100 > trace[-1].gamma
        wins += np.linalg.norm(mu.estimate) <= np.linalg.norm(gl.mu_hat)
    assert wins / 40 >= 0.8
