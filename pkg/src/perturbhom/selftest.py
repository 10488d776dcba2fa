"""Fixed-seed invariant checks run by ``perturbhom selftest``.

Thresholds are absolute and tied to the default solver tolerance, so a
loosened tolerance shows up as a failure rather than a relaxed check.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .corrector import multi_edge_residual, regularized_corrector, single_edge_delta
from .enumeration import exact_a1, exact_ahom
from .environment import DefectSet, DistributionSpec, apply_defects, force_edge, sample_coupled
from .homogenize import a1_mc, a1_spatial_average, a1_total_energy, dilute_bond_coefficient, periodic_energy
from .lattice import TorusGeometry, apply_operator, backward_divergence, forward_gradient, inner
from .solver import DEFAULT_CONFIG, SolverConfig, dense_solve, solve_mean_zero, solve_regularized

REFERENCE_TOLERANCE = DEFAULT_CONFIG.rel_tolerance


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    seconds: float


def _random_conductances(rng, geom, lo=0.5, hi=2.0):
    return rng.uniform(lo, hi, geom.edge_shape)


def check_lattice(cfg):
    rng = np.random.default_rng(101)
    worst = 0.0
    for d, n in ((1, 3), (2, 2), (3, 1)):
        g = TorusGeometry(d, n)
        f = rng.standard_normal(g.site_shape)
        h = rng.standard_normal(g.site_shape)
        F = rng.standard_normal(g.edge_shape)
        A = _random_conductances(rng, g)
        worst = max(worst,
                    abs(inner(forward_gradient(g, f), F) + inner(f, backward_divergence(g, F))),
                    abs(inner(apply_operator(g, A, 0.0, f), h) - inner(f, apply_operator(g, A, 0.0, h))),
                    float(np.max(np.abs(apply_operator(g, A, 0.0, np.ones(g.site_shape))))))
    return worst, 1e-10


def check_solver(cfg):
    rng = np.random.default_rng(202)
    worst = 0.0
    for d, n, mu in ((2, 4, 0.0), (2, 4, 0.3), (3, 2, 0.0), (3, 2, 1.0)):
        g = TorusGeometry(d, n)
        A = _random_conductances(rng, g)
        b = rng.standard_normal(g.site_shape)
        if mu == 0:
            b -= b.mean()
            u, _ = solve_mean_zero(A, b, cfg)
        else:
            u, _ = solve_regularized(A, mu, b, cfg)
        worst = max(worst, float(np.max(np.abs(u - dense_solve(A, mu, b)))))
    return worst, 10 * REFERENCE_TOLERANCE


def check_single_edge(cfg):
    rng = np.random.default_rng(303)
    g = TorusGeometry(2, 6)
    mu = 0.1
    worst = 0.0
    for _ in range(5):
        A = _random_conductances(rng, g)
        edge = g.edge(rng.integers(0, g.L, g.d), int(rng.integers(0, g.d)))
        delta = float(rng.uniform(-0.4, 1.0))
        phi0 = regularized_corrector(A, None, mu, cfg)
        approx = phi0.phi + single_edge_delta(A, phi0, edge, delta, mu, cfg)
        direct = regularized_corrector(apply_defects(g, A, DefectSet([(edge, delta)])), None, mu, cfg)
        worst = max(worst, float(np.max(np.abs(approx - direct.phi))))
    return worst, 10 * REFERENCE_TOLERANCE


def check_several_edges(cfg):
    rng = np.random.default_rng(404)
    g = TorusGeometry(2, 6)
    worst = 0.0
    for _ in range(3):
        A = _random_conductances(rng, g)
        idx = rng.choice(g.edge_count, size=3, replace=False)
        defects = DefectSet((g.edge_from_index(int(k)), float(rng.uniform(-0.4, 0.8))) for k in idx)
        worst = max(worst, multi_edge_residual(A, defects, 0.2, None, cfg).max_dev)
    return worst, 100 * REFERENCE_TOLERANCE


def check_spatial_average(cfg):
    g = TorusGeometry(2, 4)
    s0, s1 = DistributionSpec.uniform_interval(0.5, 2.0), DistributionSpec.two_point(0.3, 3.0, 0.5)
    worst = 0.0
    for seed in range(5):
        env = sample_coupled(g, s0, s1, 500 + seed)
        a = a1_spatial_average(env, 0.0, None, cfg)
        b = a1_total_energy(env, 0.0, None, cfg)
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return worst, 1e-8


def check_dilute(cfg):
    g = TorusGeometry(2, 4)
    closed, _ = dilute_bond_coefficient(1.0, 2.0, g, cfg)
    env = sample_coupled(g, DistributionSpec.point_mass(1.0), DistributionSpec.point_mass(2.0), 0)
    direct = a1_spatial_average(env, 0.0, None, cfg)
    plus = periodic_energy(force_edge(env, 0.0, g.edge(g.origin, 0), "plus"), None, cfg)
    foster = 1.0 / (1.0 + (g.site_count - 1) / (g.d * g.site_count))
    return max(abs(closed - direct), abs(direct - g.site_count * (plus - 1.0)), abs(closed - foster)), 1e-8


def check_enumeration(cfg):
    g1 = TorusGeometry(1, 4)
    s = DistributionSpec.two_point(1.0, 4.0, 0.5)
    harmonic = sum(math.comb(9, k) / 2**9 * 9 / (k + (9 - k) / 4) for k in range(10))
    err_h = abs(exact_ahom(s, s, 0.0, g1) - harmonic)
    g = TorusGeometry(2, 1)
    s0, s1 = DistributionSpec.two_point(1.0, 3.0, 0.5), DistributionSpec.point_mass(2.0)
    est = a1_mc(s0, s1, 0.0, g, None, 1000, 7, cfg)
    z = abs(est.mean - exact_a1(s0, s1, 0.0, g)) / est.std_error
    # combine an exact comparison and a 3-sigma comparison into one ratio
    return max(err_h / 1e-12, z / 3.0), 1.0


CHECKS = (
    ("lattice identities", check_lattice),
    ("solver vs dense oracle", check_solver),
    ("single-edge identity", check_single_edge),
    ("several-edge identity", check_several_edges),
    ("spatial-average identity", check_spatial_average),
    ("dilute bond closed form", check_dilute),
    ("enumeration agreement", check_enumeration),
)


def run_selftest(cfg: SolverConfig = DEFAULT_CONFIG) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        t = time.perf_counter()
        try:
            value, threshold = fn(cfg)
            passed = bool(value <= threshold)
        except Exception:  # a solver failure counts as a failed check
            value, threshold, passed = math.inf, math.nan, False
        results.append(CheckResult(name, passed, float(value), float(threshold), time.perf_counter() - t))
    return results


def format_table(results) -> str:
    lines = [f"{'check':<28} {'status':<6} {'value':>12} {'threshold':>12}"]
    for r in results:
        lines.append(f"{r.name:<28} {'PASS' if r.passed else 'FAIL':<6} {r.value:>12.3e} {r.threshold:>12.3e}")
    return "\n".join(lines)
