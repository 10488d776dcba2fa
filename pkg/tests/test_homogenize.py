import math

import numpy as np
import pytest

from perturbhom.corrector import periodic_corrector
from perturbhom.environment import DistributionSpec, force_edge, realize, sample_coupled
from perturbhom.homogenize import (
    MonteCarloEstimate,
    a1_cross_check,
    a1_mc,
    a1_regularized_mc,
    a1_series,
    a1_spatial_average,
    a1_total_energy,
    ahom_periodic_mc,
    dilute_bond_coefficient,
    expansion_fit,
    linearization_error_scaling,
    periodic_energy,
    torus_neighbor_resistance,
    validate_grid,
    voigt_bound,
)
from perturbhom.lattice import TorusGeometry

D = DistributionSpec
UNI = D.uniform_interval(0.5, 2.0)


def harmonic_mean_expectation(L, a, b, prob_a):
    # expectation of L / sum(1/w) over the binomial count of a-valued edges
    return sum(math.comb(L, k) * prob_a**k * (1 - prob_a) ** (L - k) * L / (k / a + (L - k) / b)
               for k in range(L + 1))


class TestMonteCarloEstimate:
    def test_from_values(self):
        est = MonteCarloEstimate.from_values([1.0, 2.0, 3.0, 4.0], 7, "x")
        assert est.mean == 2.5
        assert est.std_error == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
        assert (est.n_samples, est.seed, est.label) == (4, 7, "x")

    def test_single_sample_has_no_error(self):
        assert math.isnan(MonteCarloEstimate.from_values([1.0], 0).std_error)

    def test_within(self):
        est = MonteCarloEstimate(1.0, 0.1, 10, 0)
        assert est.within(1.29) and not est.within(1.31)
        assert est.within(1.4, other_se=0.1)


class TestAhom:
    def test_constant_medium(self):
        g = TorusGeometry(2, 3)
        est = ahom_periodic_mc(D.point_mass(1.5), D.point_mass(1.5), 0.4, g, [1.0, 2.0], samples=5)
        assert est.mean == pytest.approx(1.5 * 5, abs=1e-12)
        assert est.std_error == pytest.approx(0.0, abs=1e-12)

    def test_one_dimensional_harmonic_mean(self):
        g = TorusGeometry(1, 4)
        s = D.two_point(1.0, 4.0, 0.5)
        for seed in range(3):
            env = sample_coupled(g, s, s, seed)
            A = env.base
            assert periodic_energy(A) == pytest.approx(9 / np.sum(1 / A), rel=1e-10)
        est = ahom_periodic_mc(s, s, 0.0, g, samples=200, seed=1)
        assert est.within(harmonic_mean_expectation(9, 1.0, 4.0, 0.5))

    def test_voigt_bound_every_sample(self):
        g = TorusGeometry(2, 4)
        xi = np.array([0.6, 0.8])
        for seed in range(10):
            A, _ = realize(sample_coupled(g, UNI, D.point_mass(3.0), seed), 0.3)
            assert periodic_energy(A, xi) <= voigt_bound(A, xi) + 1e-12

    def test_isotropy(self):
        g = TorusGeometry(2, 4)
        e1 = ahom_periodic_mc(UNI, D.point_mass(1), 0.0, g, [1.0, 0.0], samples=100, seed=3)
        e2 = ahom_periodic_mc(UNI, D.point_mass(1), 0.0, g, [0.0, 1.0], samples=100, seed=3)
        assert e1.within(e2.mean, other_se=e2.std_error)

    def test_energy_nondecreasing_in_p_for_ordered_laws(self):
        g = TorusGeometry(2, 4)
        for seed in range(5):
            env = sample_coupled(g, D.uniform_interval(0.5, 1.0), D.uniform_interval(1.0, 3.0), seed)
            energies = [periodic_energy(realize(env, p)[0]) for p in np.linspace(0, 1, 6)]
            assert all(b >= a - 1e-12 for a, b in zip(energies, energies[1:]))

    def test_thread_count_does_not_change_result(self):
        g = TorusGeometry(2, 3)
        a = ahom_periodic_mc(UNI, D.point_mass(2), 0.5, g, samples=12, seed=9, threads=1)
        b = ahom_periodic_mc(UNI, D.point_mass(2), 0.5, g, samples=12, seed=9, threads=3)
        assert a.mean == b.mean and a.std_error == b.std_error

    def test_cache_gives_same_result(self, tmp_path):
        g = TorusGeometry(2, 3)
        a = ahom_periodic_mc(UNI, D.point_mass(2), 0.5, g, samples=4, seed=2)
        b = ahom_periodic_mc(UNI, D.point_mass(2), 0.5, g, samples=4, seed=2, cache_dir=tmp_path)
        c = ahom_periodic_mc(UNI, D.point_mass(2), 0.5, g, samples=4, seed=2, cache_dir=tmp_path)
        assert a.mean == b.mean == c.mean
        assert len(list(tmp_path.iterdir())) == 4

    def test_requires_a_sample(self):
        with pytest.raises(ValueError):
            ahom_periodic_mc(UNI, UNI, 0.0, TorusGeometry(1, 2), samples=0)


class TestFirstOrderCoefficient:
    def test_null_defects_give_zero(self):
        g = TorusGeometry(2, 3)
        env = sample_coupled(g, UNI, UNI, 5, share_streams=True)
        assert a1_spatial_average(env, 0.4) == 0.0
        assert a1_series(env, 0.4) == 0.0

    def test_routes_agree_per_environment(self):
        g = TorusGeometry(2, 4)
        for seed, p_bar in ((0, 0.0), (1, 0.3), (2, 0.8)):
            env = sample_coupled(g, UNI, D.two_point(0.3, 3.0, 0.5), seed)
            s = a1_spatial_average(env, p_bar)
            t = a1_total_energy(env, p_bar)
            assert abs(s - t) <= 1e-8 * max(1.0, abs(s))

    def test_rank_one_closed_form(self):
        g = TorusGeometry(2, 4)
        env = sample_coupled(g, D.point_mass(1.0), D.point_mass(2.0), 0)
        closed, h = dilute_bond_coefficient(1.0, 2.0, g)
        assert h == pytest.approx(torus_neighbor_resistance(g), abs=1e-10)
        assert a1_spatial_average(env, 0.0) == pytest.approx(closed, abs=1e-9)
        # the forced-edge corrector itself carries the factor 1 / (1 + delta h)
        plus = periodic_corrector(force_edge(env, 0.0, g.edge(g.origin, 0), "plus"))
        assert 1 + plus.grad_phi[0, 0, 0] == pytest.approx(1 / (1 + h), abs=1e-9)

    def test_perpendicular_edge_contributes_nothing(self):
        g = TorusGeometry(2, 3)
        env = sample_coupled(g, D.point_mass(1.0), D.point_mass(3.0), 0)
        perp = periodic_corrector(force_edge(env, 0.0, g.edge(g.origin, 1), "plus"))
        np.testing.assert_allclose(perp.grad_phi, 0, atol=1e-12)
        aligned = periodic_corrector(force_edge(env, 0.0, g.edge(g.origin, 0), "plus"))
        term = 1.0 * 2.0 * (1 + aligned.grad_phi[0, 0, 0])
        assert a1_spatial_average(env, 0.0) == pytest.approx(term, abs=1e-12)

    def test_series_matches_spatial_average_for_point_masses(self):
        g = TorusGeometry(2, 4)
        env = sample_coupled(g, D.point_mass(1.0), D.point_mass(2.0), 0)
        assert abs(a1_series(env, 0.0, radius=4) - a1_spatial_average(env, 0.0)) <= 1e-6

    def test_regularized_series_increments_decay(self):
        g = TorusGeometry(2, 6)
        env = sample_coupled(g, D.point_mass(1.0), D.point_mass(2.0), 0)
        inc = np.abs(np.diff(a1_series(env, 0.0, mu=1.0, partial_sums=True)))
        assert np.all(np.diff(inc) < 0)

    def test_series_radius_checked(self):
        env = sample_coupled(TorusGeometry(2, 2), UNI, UNI, 0)
        with pytest.raises(ValueError):
            a1_series(env, 0.0, radius=3)

    def test_mc_null_resample_consistent_with_zero(self):
        g = TorusGeometry(2, 3)
        est = a1_mc(UNI, UNI, 0.0, g, samples=60, seed=4)
        assert est.std_error > 0
        assert est.within(0.0)

    def test_mc_point_masses_deterministic(self):
        g = TorusGeometry(2, 3)
        est = a1_mc(D.point_mass(1), D.point_mass(2), 0.0, g, samples=5)
        assert est.std_error == pytest.approx(0.0, abs=1e-12)
        assert est.mean == pytest.approx(dilute_bond_coefficient(1, 2, g)[0], abs=1e-9)

    def test_mc_needs_two_samples(self):
        with pytest.raises(ValueError):
            a1_mc(UNI, UNI, 0.0, TorusGeometry(1, 2), samples=1)

    def test_cross_check_small(self):
        g = TorusGeometry(2, 3)
        assert a1_cross_check(UNI, D.point_mass(3), 0.2, g, samples=3) <= 1e-8

    def test_regularized_mc(self):
        g = TorusGeometry(2, 2)
        est = a1_regularized_mc(D.point_mass(1), D.point_mass(2), 0.0, g, 1.0, samples=2)
        assert est.std_error == pytest.approx(0.0, abs=1e-12) and est.mean > 0
        with pytest.raises(ValueError):
            a1_regularized_mc(UNI, UNI, 0.0, g, 0.0)


class TestExpansion:
    def test_null_perturbation(self):
        g = TorusGeometry(2, 3)
        r = expansion_fit(UNI, UNI, 0.0, [0.1, 0.2, 0.4], g, samples=6, seed=1, share_streams=True)
        assert r.slope == 0.0 and all(d.mean == 0.0 for d in r.differences)
        assert r.noise_dominated and r.error_exponent_fit is None
        assert r.to_dict()["error_exponent_status"] == "noise"

    def test_report_contents(self):
        g = TorusGeometry(2, 3)
        r = expansion_fit(D.point_mass(1), D.point_mass(2), 0.1, [0.05, 0.1, 0.2], g, samples=8, seed=2)
        assert r.p_grid == [0.05, 0.1, 0.2]
        assert len(r.ahom_estimates) == len(r.differences) == len(r.residuals) == 3
        for est, diff in zip(r.ahom_estimates, r.differences):
            assert est.mean - r.baseline.mean == pytest.approx(diff.mean, abs=1e-12)
        # monotone coupling with b > a: every difference is positive
        assert all(d.mean > 0 for d in r.differences)

    @pytest.mark.parametrize("grid,p_bar", [([0.1, 0.2], 0.0), ([0.2, 0.1, 0.3], 0.0),
                                            ([0.0, 0.1, 0.2], 0.0), ([0.1, 0.2, 0.6], 0.5)])
    def test_grid_validation(self, grid, p_bar):
        with pytest.raises(ValueError):
            validate_grid(grid, p_bar)

    def test_p_bar_range(self):
        with pytest.raises(ValueError):
            expansion_fit(UNI, UNI, 1.0, [0.1, 0.2, 0.3], TorusGeometry(1, 2))


class TestLinearization:
    def test_zero_p_and_null_defects(self):
        g = TorusGeometry(2, 3)
        r = linearization_error_scaling(UNI, D.point_mass(2), g, 0.5, [0.0, 0.2], samples=3)
        assert r[0][1].mean == 0.0 and r[1][1].mean > 0
        r = linearization_error_scaling(UNI, UNI, g, 0.5, [0.1, 0.5], samples=3, share_streams=True)
        assert all(est.mean == 0.0 for _, est in r)

    def test_errors(self):
        g = TorusGeometry(2, 2)
        with pytest.raises(ValueError):
            linearization_error_scaling(UNI, UNI, g, 0.0, [0.1])
        with pytest.raises(ValueError):
            linearization_error_scaling(UNI, UNI, g, 0.1, [1.5])


def test_dilute_coefficient_foster_identity():
    for d, n in ((2, 3), (2, 8), (3, 2)):
        g = TorusGeometry(d, n)
        _, h = dilute_bond_coefficient(1.0, 2.0, g)
        assert h == pytest.approx((g.site_count - 1) / (d * g.site_count), abs=1e-9)
    g = TorusGeometry(2, 3)
    _, h2 = dilute_bond_coefficient(2.0, 5.0, g)
    assert h2 == pytest.approx(torus_neighbor_resistance(g, 2.0), abs=1e-9)
