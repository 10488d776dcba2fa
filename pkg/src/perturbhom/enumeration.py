"""Exact expectations on tiny tori by weighted enumeration of edge configurations.

An oracle for the Monte Carlo estimators: every configuration of atom
values is visited once, its periodic corrector is obtained by a dense
solve, and contributions are summed with their product weights.
"""

from __future__ import annotations

import numpy as np

from .environment import DistributionSpec
from .lattice import TorusGeometry

MAX_SITES = 16
DEFAULT_MAX_CONFIGS = 2**30
_BATCH = 1 << 14


def mixture_atoms(spec0: DistributionSpec, spec1: DistributionSpec, p: float) -> list[tuple[float, float]]:
    """Atoms of ``(1 - p) spec0 + p spec1``; zero weights dropped, equal values merged."""
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    merged: dict[float, float] = {}
    for spec, w in ((spec0, 1.0 - p), (spec1, p)):
        if w == 0:
            continue
        for v, q in spec.atoms():
            merged[v] = merged.get(v, 0.0) + w * q
    return sorted((v, q) for v, q in merged.items() if q > 0)


def _gradient_matrix(geom: TorusGeometry) -> np.ndarray:
    """Rows are edge slots (site-major), columns sites: ``(D f)_{x,i} = f(x+e_i) - f(x)``."""
    Dg = np.zeros((geom.edge_count, geom.site_count))
    for k in range(geom.edge_count):
        site, axis = geom.edge_from_index(k)
        Dg[k, geom.site_index(site)] -= 1.0
        Dg[k, geom.site_index(geom.shift(site, axis))] += 1.0
    return Dg


def _slot_xi(geom, xi):
    return np.tile(np.asarray(xi, dtype=float), geom.site_count)


def _batched_gradients(Dg, W, xi_slot):
    """``xi + grad phi`` on every slot for a batch of conductance vectors ``W``."""
    N = Dg.shape[1]
    K = np.einsum("ka,bk,kc->bac", Dg, W, Dg, optimize=True) + 1.0 / N
    rhs = -(W * xi_slot) @ Dg
    phi = np.linalg.solve(K, rhs[..., None])[..., 0]
    return xi_slot + phi @ Dg.T


def _configurations(atoms, count, start, stop):
    """Atom values and weights of configurations ``start..stop`` (mixed-radix digits)."""
    vals = np.array([v for v, _ in atoms])
    probs = np.array([q for _, q in atoms])
    K = len(atoms)
    idx = np.arange(start, stop, dtype=np.int64)
    digits = (idx[:, None] // (K ** np.arange(count, dtype=np.int64))) % K
    return vals[digits], np.prod(probs[digits], axis=1)


def _check(geom, count, max_configs):
    if geom.site_count > MAX_SITES:
        raise ValueError(f"enumeration needs at most {MAX_SITES} sites, got {geom.site_count}")
    if count > max_configs:
        raise ValueError(f"{count} configurations exceed the cap of {max_configs}")


def _xi(geom, xi):
    if xi is None:
        xi = np.zeros(geom.d)
        xi[0] = 1.0
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (geom.d,):
        raise ValueError(f"xi must have {geom.d} components")
    return xi


def exact_ahom(spec0: DistributionSpec, spec1: DistributionSpec, p: float, geom: TorusGeometry,
               xi=None, max_configs: int = DEFAULT_MAX_CONFIGS) -> float:
    """``E_n[|B_n|^-1 sum_x xi . A (xi + grad phi_n)]`` at parameter ``p``."""
    xi = _xi(geom, xi)
    atoms = mixture_atoms(spec0, spec1, p)
    m = geom.edge_count
    total_count = len(atoms) ** m
    _check(geom, total_count, max_configs)
    Dg = _gradient_matrix(geom)
    xs = _slot_xi(geom, xi)
    total = 0.0
    for start in range(0, total_count, _BATCH):
        W, w = _configurations(atoms, m, start, min(start + _BATCH, total_count))
        flux = _batched_gradients(Dg, W, xs)
        energy = np.sum(W * xs * flux, axis=1) / geom.site_count
        total += float(w @ energy)
    return total


def exact_a1(spec0: DistributionSpec, spec1: DistributionSpec, p_bar: float, geom: TorusGeometry,
             xi=None, max_configs: int = DEFAULT_MAX_CONFIGS) -> float:
    """Exact expectation of the forced-edge integrand at the origin.

    For each origin edge the pair ``(base, replacement)`` is enumerated from
    ``spec0 x spec1`` and all other edges from the mixture at ``p_bar``.
    """
    xi = _xi(geom, xi)
    mix = mixture_atoms(spec0, spec1, p_bar)
    pairs = [(a, b, qa * qb) for a, qa in spec0.atoms() for b, qb in spec1.atoms() if a != b]
    m = geom.edge_count
    rest = len(mix) ** (m - 1)
    _check(geom, geom.d * len(pairs) * rest, max_configs)
    Dg = _gradient_matrix(geom)
    xs = _slot_xi(geom, xi)
    total = 0.0
    for axis in range(geom.d):
        slot = axis  # origin is site 0, so its slots are 0..d-1
        for start in range(0, rest, _BATCH):
            others, w = _configurations(mix, m - 1, start, min(start + _BATCH, rest))
            for a, b, q in pairs:
                Wm = np.insert(others, slot, a, axis=1)
                Wp = np.insert(others, slot, b, axis=1)
                fm = _batched_gradients(Dg, Wm, xs)[:, slot]
                fp = _batched_gradients(Dg, Wp, xs)[:, slot]
                total += q * float(w @ (fm * (b - a) * fp))
    return total


def exact_enumeration(spec0: DistributionSpec, spec1: DistributionSpec, p: float,
                      geom: TorusGeometry, xi=None,
                      max_configs: int = DEFAULT_MAX_CONFIGS) -> tuple[float, float]:
    """``(ahom_exact, a1_exact)`` at ``p``; the first-order coefficient is taken around ``p``."""
    return (exact_ahom(spec0, spec1, p, geom, xi, max_configs),
            exact_a1(spec0, spec1, p, geom, xi, max_configs))
