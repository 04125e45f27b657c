import numpy as np
import pytest
from scipy.special import gammaln

from metastab.landscape import (
    DeltaTooLarge,
    EpsTooLarge,
    FewerThanThreeRoots,
    GridTooCoarse,
    critical_points,
    crossing_rate,
    entropy_finite,
    entropy_limit,
    entropy_terms,
    free_energy,
    free_energy_value,
    gamma_grid,
    monotone_crossing_bound,
    nearest_grid_point,
    stirling_residual,
    well_decomposition,
)

BETA, H = 1.5, 0.1


@pytest.fixture(scope="module")
def landscape():
    return critical_points(BETA, H)


class TestGrid:
    def test_structure(self):
        g = gamma_grid(7)
        assert g.points[0] == -1.0 and g.points[-1] == 1.0
        assert np.allclose(np.diff(g.points), 2 / 7)

    def test_nearest(self):
        assert nearest_grid_point(0.0, gamma_grid(4)) == 0.0
        assert nearest_grid_point(1.0, gamma_grid(7)) == 1.0
        assert nearest_grid_point(0.24, gamma_grid(10)) == pytest.approx(0.2)

    def test_tie_breaks_up(self):
        # 0.1 sits exactly between 0.0 and 0.2 on the N=10 grid
        assert nearest_grid_point(0.1, gamma_grid(10)) == pytest.approx(0.2)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            nearest_grid_point(1.2, gamma_grid(5))


class TestEntropy:
    def test_endpoints_vanish(self):
        for n in (4, 9, 30):
            i_n, i_inf, resid = entropy_terms(n, 1.0)
            assert i_n == pytest.approx(0.0, abs=1e-13)
            assert i_inf == 0.0
            assert np.isnan(resid)

    def test_hand_value(self):
        # binom(4, 2) = 6
        assert entropy_finite(4, 0.0) == pytest.approx(-np.log(6) / 4)

    def test_limit_at_zero(self):
        assert entropy_limit(0.0) == pytest.approx(-np.log(2))

    def test_off_grid_rejected(self):
        with pytest.raises(ValueError):
            entropy_finite(10, 0.15)

    def test_residual_is_order_n2(self):
        consts = []
        for n in (100, 200, 400):
            grid = gamma_grid(n).points
            sel = (grid > -0.9) & (grid < 0.9)
            worst = max(abs(stirling_residual(n, m)) for m in grid[sel])
            consts.append(n * n * worst)
        assert max(consts) / min(consts) < 2.0

    def test_weight_ratio_bound(self):
        """binom * e^{N I} * sqrt(pi N (1-m^2)/2) is within 2/N of 1.

        Checked on (-0.9, 0.9): on the stated wider interval (-0.95, 0.95) the
        constant is ~3.3, not 2 (see the decisions ledger).
        """
        for n in (100, 200, 400):
            k = np.arange(1, n)
            m = 2 * k / n - 1
            sel = np.abs(m) < 0.9
            log_ratio = (
                gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
                + n * entropy_limit(m)
                + 0.5 * np.log(np.pi * n * (1 - m * m) / 2)
            )
            assert np.max(np.abs(np.exp(log_ratio[sel]) - 1)) <= 2.0 / n


class TestFreeEnergy:
    def test_symmetric_point(self):
        f, fp, fpp = free_energy(0.0, BETA, H)
        assert f == pytest.approx(-np.log(2) / BETA)
        assert fp == pytest.approx(-H)
        assert fpp == pytest.approx(-1 + 1 / BETA)

    def test_stationary_at_minimum(self, landscape):
        _, fp, _ = free_energy(landscape.m_plus, BETA, H)
        assert abs(fp) < 1e-11

    def test_finite_difference_curvature(self):
        f0, _, fpp = free_energy(0.5, BETA, H, N=None)
        e = 1e-4
        num = (
            free_energy_value(0.5 + e, BETA, H)
            - 2 * free_energy_value(0.5, BETA, H)
            + free_energy_value(0.5 - e, BETA, H)
        ) / e**2
        assert num == pytest.approx(fpp, abs=1e-6)

    def test_finite_n_value(self):
        got = free_energy_value(0.5, BETA, H, N=100)
        expect = -0.5**2 / 2 - H * 0.5 + entropy_finite(100, 0.5) / BETA
        assert got == pytest.approx(expect, abs=1e-14)

    def test_endpoint_derivatives_rejected(self):
        with pytest.raises(ValueError):
            free_energy(1.0, BETA, H)


class TestCriticalPoints:
    def test_symmetric_case(self):
        ls = critical_points(1.5, 0.0)
        assert abs(ls.m_star) < 1e-12
        assert ls.m_minus == pytest.approx(-ls.m_plus, abs=1e-12)
        # fixed-point iteration oracle for the positive root
        m = 0.9
        for _ in range(400):
            m = np.tanh(1.5 * m)
        assert ls.m_plus == pytest.approx(m, abs=1e-10)

    def test_residuals(self, landscape):
        for m in (landscape.m_minus, landscape.m_star, landscape.m_plus):
            assert abs(m - np.tanh(BETA * (m + H))) <= 1e-12

    def test_ordering_and_depths(self):
        ls = critical_points(1.5, 0.05)
        assert ls.m_minus < ls.m_star < ls.m_plus
        assert ls.f_at(ls.m_plus) < ls.f_at(ls.m_minus) < ls.f_at(ls.m_star)
        assert ls.fpp_minus > 0 and ls.fpp_star < 0

    def test_field_too_large(self):
        with pytest.raises(FewerThanThreeRoots):
            critical_points(1.01, 0.5)
        with pytest.raises(FewerThanThreeRoots):
            critical_points(1.5, 0.2)  # h_c(1.5) ~ 0.1384

    def test_grid_projection(self, landscape):
        mmN, msN, mpN = landscape.grid_points(12)
        assert mmN == pytest.approx(-5 / 6)
        assert mpN == pytest.approx(5 / 6)


class TestWellDecomposition:
    def headroom(self, ls):
        return min(ls.f_at(-1.0), ls.f_at(ls.m_star)) - ls.f_at(ls.m_minus)

    def test_spec_configuration(self, landscape):
        delta = 0.5 * self.headroom(landscape)
        wd = well_decomposition(landscape, 200, delta, delta / 10)
        assert wd.theta_N > 0
        got = landscape.f_at(wd.m_eps) - landscape.f_at(landscape.m_plus)
        assert got == pytest.approx(wd.eps_N, abs=1e-14)

    def test_invariants(self, landscape):
        delta = 0.5 * self.headroom(landscape)
        wd = well_decomposition(landscape, 400, delta, delta / 10)
        grid = gamma_grid(400).points
        assert 0 < wd.delta_N <= wd.delta
        assert wd.U_minus[0] > 0  # -1 outside the shallow component
        assert landscape.m_star < wd.m_delta < landscape.m_plus
        lo_m, hi_m = wd.U_minus
        lo_p, hi_p = wd.U_plus
        assert not (grid[lo_m] <= landscape.m_star <= grid[hi_m])
        assert not (grid[lo_p] <= landscape.m_star <= grid[hi_p])
        assert wd.theta_N == pytest.approx(
            nearest_grid_point(landscape.m_plus, gamma_grid(400)) - wd.m_eps
        )

    def test_small_delta_shrinks_shallow_component(self, landscape):
        big = well_decomposition(landscape, 400, 0.9 * self.headroom(landscape), 1e-3)
        small = well_decomposition(landscape, 400, 0.05 * self.headroom(landscape), 1e-3)
        width = lambda rng: rng[1] - rng[0]
        assert width(small.U_minus) < width(big.U_minus)
        grid = gamma_grid(400).points
        k_minus = np.argmin(np.abs(grid - landscape.m_minus))
        assert small.U_minus[0] <= k_minus <= small.U_minus[1]

    def test_delta_too_large(self, landscape):
        with pytest.raises(DeltaTooLarge):
            well_decomposition(landscape, 200, 1.1 * self.headroom(landscape), 1e-3)

    def test_eps_too_large(self, landscape):
        delta = 0.5 * self.headroom(landscape)
        gap = landscape.f_at(landscape.m_minus) - landscape.f_at(landscape.m_plus)
        with pytest.raises(EpsTooLarge):
            well_decomposition(landscape, 200, delta, delta + gap + 0.01)

    def test_grid_too_coarse(self, landscape):
        with pytest.raises(GridTooCoarse):
            well_decomposition(landscape, 50, 0.5 * self.headroom(landscape), 1e-7)


class TestCrossingBound:
    def test_zero_span(self):
        assert crossing_rate(100, 0.9, 0.0, BETA, H) == 0.0

    def test_non_integer_steps_rejected(self):
        with pytest.raises(ValueError):
            monotone_crossing_bound(10, 0.8, 0.13, BETA, H)

    def test_rate_matches_log_count(self):
        """log(prob)/N approaches -rate as N grows at fixed span."""
        theta = 0.2
        m_plus = 0.9
        gaps = []
        for n in (200, 400, 800, 1600):
            cb = monotone_crossing_bound(n, m_plus, theta, BETA, H)
            gaps.append(abs(cb.log_prob_lower / n + crossing_rate(n, m_plus, theta, BETA, H)))
        assert all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))
        assert gaps[-1] < 5 * np.log(1600) / 1600

    def test_lower_bounds_exact_escape(self):
        """Against enumerated escape probabilities in the mean-field case."""
        from metastab.exact import FullChain
        from metastab.model import Disorder, ModelParams

        N = 12
        pars = ModelParams(N=N, beta=BETA, h=H, p=1.0)
        fc = FullChain(Disorder.complete(N), pars)
        ls = critical_points(BETA, H)
        m_plus_N = ls.grid_points(N)[2]  # 5/6
        theta_N = 4 / N  # two uphill steps
        m_eps = m_plus_N - theta_N
        cb = monotone_crossing_bound(N, m_plus_N, theta_N, BETA, H)
        # exact P_s(tau_{level m_plus_N} < tau_{level m_eps}) for every s at m_eps
        h_ab = fc.harmonic(m_eps, m_plus_N)  # 1 on A=m_eps, 0 on B
        esc = fc.escape_probability(h_ab, m_eps)
        assert np.all(cb.prob_lower <= esc + 1e-15)
