import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perturbhom.corrector import (
    corrector_residual,
    dipole_response,
    linear_approximation,
    multi_edge_residual,
    periodic_corrector,
    periodic_single_edge_delta,
    regularized_corrector,
    single_edge_delta,
)
from perturbhom.environment import DefectSet, apply_defects
from perturbhom.lattice import EdgeId, TorusGeometry, backward_divergence, energy_density, translate
from perturbhom.solver import DEFAULT_CONFIG, green_column

from conftest import random_conductances

TOL = DEFAULT_CONFIG.rel_tolerance


def direct_single(A, edge, delta, mu, xi=None):
    g = TorusGeometry(A.ndim - 1, (A.shape[0] - 1) // 2)
    Ae = apply_defects(g, A, DefectSet([(edge, delta)]))
    return regularized_corrector(Ae, xi, mu) if mu else periodic_corrector(Ae, xi)


class TestPeriodic:
    def test_constant_medium(self):
        g = TorusGeometry(2, 3)
        sol = periodic_corrector(np.full(g.edge_shape, 2.5))
        assert np.max(np.abs(sol.phi)) == 0

    def test_one_dimensional_harmonic_mean(self, rng):
        g = TorusGeometry(1, 2)
        a = rng.uniform(0.5, 2.0, 5)
        sol = periodic_corrector(a.reshape(g.edge_shape), [1.0])
        H = 5 / np.sum(1 / a)
        np.testing.assert_allclose(1 + sol.grad_phi[:, 0], H / a, atol=1e-10)

    def test_residual_and_mean_zero(self, rng):
        g = TorusGeometry(2, 4)
        A = random_conductances(rng, g)
        sol = periodic_corrector(A)
        assert np.max(np.abs(corrector_residual(A, sol))) <= 1e-9
        assert abs(sol.phi.sum()) <= 1e-9 * np.abs(sol.phi).sum()
        # flux A (xi + grad phi) is divergence free
        assert np.max(np.abs(backward_divergence(g, A * sol.flux_gradient()))) <= 1e-9

    def test_energy_identity(self, rng):
        g = TorusGeometry(2, 4)
        A = random_conductances(rng, g)
        sol = periodic_corrector(A)
        lhs = energy_density(g, A, sol.xi, sol.grad_phi).sum()
        rhs = np.sum(A * sol.flux_gradient() ** 2)
        assert abs(lhs - rhs) <= 1e-8 * abs(lhs)

    def test_translation_equivariance(self, rng):
        g = TorusGeometry(2, 3)
        A = random_conductances(rng, g)
        shift = (2, -3)
        a = periodic_corrector(A)
        b = periodic_corrector(translate(g, A, shift))
        np.testing.assert_allclose(b.phi, translate(g, a.phi, shift), atol=1e-9)

    def test_xi_linearity(self, rng):
        g = TorusGeometry(2, 3)
        A = random_conductances(rng, g)
        x1, x2 = np.array([1.0, 0.0]), np.array([0.3, -2.0])
        s = periodic_corrector(A, x1 + x2).phi
        np.testing.assert_allclose(s, periodic_corrector(A, x1).phi + periodic_corrector(A, x2).phi,
                                   atol=10 * TOL * max(1, np.abs(s).max()))

    def test_bad_xi(self):
        g = TorusGeometry(2, 1)
        with pytest.raises(ValueError):
            periodic_corrector(np.ones(g.edge_shape), [1.0, 0.0, 0.0])


class TestRegularized:
    def test_constant_medium(self):
        g = TorusGeometry(2, 3)
        for mu in (1.0, 0.01):
            assert np.max(np.abs(regularized_corrector(np.ones(g.edge_shape), None, mu).phi)) == 0

    def test_residual(self, rng):
        g = TorusGeometry(2, 4)
        A = random_conductances(rng, g)
        sol = regularized_corrector(A, None, 0.3)
        assert np.max(np.abs(corrector_residual(A, sol))) <= 1e-9

    def test_approaches_periodic_as_mu_shrinks(self, rng):
        g = TorusGeometry(2, 8)
        A = random_conductances(rng, g)
        ref = periodic_corrector(A).grad_phi
        gaps = [np.linalg.norm(regularized_corrector(A, None, mu).grad_phi - ref)
                for mu in (1.0, 0.1, 0.01, 0.001)]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))

    def test_rejects_zero_mu(self):
        g = TorusGeometry(1, 2)
        with pytest.raises(ValueError):
            regularized_corrector(np.ones(g.edge_shape), None, 0.0)


class TestSingleEdge:
    def test_zero_delta(self, rng):
        g = TorusGeometry(2, 3)
        A = random_conductances(rng, g)
        phi0 = regularized_corrector(A, None, 0.1)
        assert np.all(single_edge_delta(A, phi0, g.edge((1, 1), 0), 0.0, 0.1) == 0)

    def test_doubling_xi_doubles_update(self, rng):
        g = TorusGeometry(2, 4)
        A = random_conductances(rng, g)
        e = g.edge((3, 1), 1)
        xi = np.array([0.6, -0.8])
        one = single_edge_delta(A, regularized_corrector(A, xi, 0.2), e, 0.7, 0.2)
        two = single_edge_delta(A, regularized_corrector(A, 2 * xi, 0.2), e, 0.7, 0.2)
        np.testing.assert_allclose(two, 2 * one, atol=1e-12, rtol=1e-9)

    def test_identity_against_direct_solve(self, rng):
        g = TorusGeometry(2, 6)
        mu = 0.1
        for _ in range(5):
            A = random_conductances(rng, g)
            e = g.edge(rng.integers(0, g.L, 2), int(rng.integers(0, 2)))
            delta = float(rng.uniform(-0.4, 1.5))
            phi0 = regularized_corrector(A, None, mu)
            approx = phi0.phi + single_edge_delta(A, phi0, e, delta, mu)
            assert np.max(np.abs(approx - direct_single(A, e, delta, mu).phi)) <= 10 * TOL

    def test_periodic_variant(self, rng):
        g = TorusGeometry(2, 4)
        A = random_conductances(rng, g)
        e = g.edge((0, 0), 0)
        phi0 = periodic_corrector(A)
        approx = phi0.phi + periodic_single_edge_delta(A, phi0, e, 0.9)
        np.testing.assert_allclose(approx, direct_single(A, e, 0.9, 0.0).phi, atol=1e-9)

    def test_dipole_equals_green_column_difference(self, rng):
        g = TorusGeometry(2, 3)
        A = random_conductances(rng, g)
        e = g.edge((2, 4), 1)
        G_plus = green_column(A, 0.4, g.shift(e.site, 1))
        G_base = green_column(A, 0.4, e.site)
        np.testing.assert_allclose(dipole_response(A, 0.4, e), G_plus - G_base, atol=1e-9)

    def test_errors(self, rng):
        g = TorusGeometry(2, 2)
        A = random_conductances(rng, g)
        phi0 = regularized_corrector(A, None, 0.5)
        with pytest.raises(ValueError):
            single_edge_delta(A, phi0, g.edge((0, 0), 0), 0.1, 0.0)
        with pytest.raises(ValueError):
            single_edge_delta(A, phi0, EdgeId((9, 0), 0), 0.1, 0.5)


class TestLinearApproximation:
    def test_empty_and_single(self, rng):
        g = TorusGeometry(2, 3)
        A = random_conductances(rng, g)
        phi0 = regularized_corrector(A, None, 0.2)
        np.testing.assert_array_equal(linear_approximation(phi0, []), phi0.phi)
        f = single_edge_delta(A, phi0, g.edge((1, 0), 0), 0.5, 0.2)
        np.testing.assert_array_equal(linear_approximation(phi0, [f]), phi0.phi + f)

    def test_shape_mismatch(self, rng):
        g = TorusGeometry(2, 3)
        phi0 = regularized_corrector(random_conductances(rng, g), None, 0.2)
        with pytest.raises(ValueError):
            linear_approximation(phi0, [np.zeros((5, 5))])

    def test_interaction_decays_with_separation(self):
        g = TorusGeometry(2, 12)
        mu = 0.2
        A = np.ones(g.edge_shape)
        phi0 = regularized_corrector(A, None, mu)

        def gap(e1, e2):
            E = DefectSet([(e1, 1.0), (e2, 1.0)])
            approx = linear_approximation(phi0, [single_edge_delta(A, phi0, e, 1.0, mu) for e in E.edges])
            return np.max(np.abs(regularized_corrector(apply_defects(g, A, E), None, mu).phi - approx))

        near = gap(g.edge((0, 0), 0), g.edge((1, 0), 0))
        far = gap(g.edge((0, 0), 0), g.edge((8, 8), 0))
        assert far < near


class TestMultiEdge:
    def test_null_defect(self, rng):
        g = TorusGeometry(2, 4)
        A = random_conductances(rng, g)
        E = DefectSet([(g.edge((0, 0), 0), 0.8), (g.edge((1, 0), 1), 0.0)])
        r = multi_edge_residual(A, E, 0.2)
        assert r.max_dev <= 10 * TOL
        assert np.max(np.abs(r.lhs)) <= 10 * TOL and np.max(np.abs(r.rhs)) <= 10 * TOL

    def test_identity(self, rng):
        g = TorusGeometry(2, 6)
        for _ in range(3):
            A = random_conductances(rng, g)
            idx = rng.choice(g.edge_count, 3, replace=False)
            E = DefectSet((g.edge_from_index(int(k)), float(rng.uniform(-0.4, 1.0))) for k in idx)
            r = multi_edge_residual(A, E, 0.2)
            assert r.max_dev <= 100 * TOL
            assert np.max(np.abs(r.lhs)) > 1e3 * r.max_dev  # the identity is not vacuous

    def test_shared_base_site(self, rng):
        g = TorusGeometry(2, 4)
        A = random_conductances(rng, g)
        E = DefectSet([(g.edge((2, 2), 0), 0.6), (g.edge((2, 2), 1), -0.3), (g.edge((1, 2), 0), 0.4)])
        assert multi_edge_residual(A, E, 0.3).max_dev <= 100 * TOL

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(7)
        g = TorusGeometry(2, 6)
        A = random_conductances(rng, g)
        idx = rng.choice(g.edge_count, 3, replace=False)
        # moderate defects: the ratio is only asymptotically 4
        deltas = rng.uniform(0.1, 0.5, 3) * rng.choice([-1, 1], 3)
        E = DefectSet((g.edge_from_index(int(k)), float(v)) for k, v in zip(idx, deltas))
        full = np.max(np.abs(multi_edge_residual(A, E, 0.2).lhs))
        half = np.max(np.abs(multi_edge_residual(A, E.scaled(0.5), 0.2).lhs))
        assert 3.5 <= full / half <= 4.5

    def test_needs_two_edges(self, rng):
        g = TorusGeometry(2, 2)
        with pytest.raises(ValueError):
            multi_edge_residual(np.ones(g.edge_shape), DefectSet([(g.edge((0, 0), 0), 0.1)]), 0.2)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-0.45, 2.0))
def test_single_edge_identity_property(seed, delta):
    rng = np.random.default_rng(seed)
    g = TorusGeometry(2, 3)
    A = random_conductances(rng, g)
    e = g.edge_from_index(int(rng.integers(0, g.edge_count)))
    phi0 = regularized_corrector(A, None, 0.5)
    approx = phi0.phi + single_edge_delta(A, phi0, e, delta, 0.5)
    assert np.max(np.abs(approx - direct_single(A, e, delta, 0.5).phi)) <= 10 * TOL
