"""Correctors on the torus and their response to edge perturbations.

A corrector in direction ``xi`` solves ``mu phi - div A (xi + grad phi) = 0``.
With ``mu = 0`` it is the periodic (cell-problem) corrector normalised to
zero average; with ``mu > 0`` it is the regularized one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import DefectSet, apply_defects
from .lattice import EdgeId, TorusGeometry, backward_divergence, forward_gradient
from .solver import DEFAULT_CONFIG, SolveReport, SolverConfig, _geom_of, solve_mean_zero, solve_regularized


@dataclass(frozen=True, eq=False)
class CorrectorSolution:
    phi: np.ndarray
    grad_phi: np.ndarray
    xi: np.ndarray
    mu: float
    report: SolveReport

    @property
    def geom(self) -> TorusGeometry:
        return _geom_of(self.grad_phi)

    def flux_gradient(self) -> np.ndarray:
        """``xi + grad phi`` as an edge field."""
        return self.xi + self.grad_phi


def default_xi(d: int) -> np.ndarray:
    xi = np.zeros(d)
    xi[0] = 1.0
    return xi


def _xi(geom, xi):
    if xi is None:
        return default_xi(geom.d)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (geom.d,):
        raise ValueError(f"xi must have {geom.d} components, got shape {xi.shape}")
    return xi


def _solve(A, mu, rhs, cfg):
    if mu == 0:
        return solve_mean_zero(A, rhs, cfg)
    return solve_regularized(A, mu, rhs, cfg)


def corrector(A, xi=None, mu: float = 0.0, cfg: SolverConfig = DEFAULT_CONFIG) -> CorrectorSolution:
    """Periodic corrector for ``mu == 0``, regularized corrector otherwise."""
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    geom = _geom_of(A)
    xi = _xi(geom, xi)
    rhs = backward_divergence(geom, np.asarray(A) * xi)
    phi, report = _solve(A, mu, rhs, cfg)
    return CorrectorSolution(phi, forward_gradient(geom, phi), xi, float(mu), report)


def periodic_corrector(A, xi=None, cfg: SolverConfig = DEFAULT_CONFIG) -> CorrectorSolution:
    """Mean-zero ``phi`` with ``-div A (xi + grad phi) = 0`` on the torus."""
    return corrector(A, xi, 0.0, cfg)


def regularized_corrector(A, xi=None, mu: float = 1.0, cfg: SolverConfig = DEFAULT_CONFIG) -> CorrectorSolution:
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    return corrector(A, xi, mu, cfg)


def corrector_residual(A, sol: CorrectorSolution) -> np.ndarray:
    """Pointwise residual ``mu phi - div A (xi + grad phi)``."""
    geom = sol.geom
    out = -backward_divergence(geom, np.asarray(A) * sol.flux_gradient())
    if sol.mu:
        out += sol.mu * sol.phi
    return out


def dipole_response(A, mu: float, edge: EdgeId, cfg: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """``x -> G(x, e + e_i) - G(x, e)``, i.e. ``grad_2 G(x, e)`` along the edge axis.

    One solve with a dipole source; symmetry of the Green function turns the
    column combination into this right-hand side.  ``mu = 0`` uses the
    mean-zero periodic Green function.
    """
    geom = _geom_of(A)
    site, axis = geom.check_edge(edge)
    rhs = geom.scalar_zeros()
    rhs[geom.shift(site, axis)] += 1.0
    rhs[site] -= 1.0
    u, _ = _solve(A, mu, rhs, cfg)
    return u


def _single_edge_delta(A, phi0, edge, delta, mu, cfg):
    geom = _geom_of(A)
    site, axis = geom.check_edge(edge)
    if delta == 0:
        return geom.scalar_zeros()
    Ae = apply_defects(geom, A, DefectSet([(edge, delta)]))
    source = delta * (phi0.xi[axis] + phi0.grad_phi[site + (axis,)])
    return -source * dipole_response(Ae, mu, edge, cfg)


def single_edge_delta(A, phi0: CorrectorSolution, edge: EdgeId, delta: float, mu: float,
                      cfg: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Change of the regularized corrector when one edge gets ``+delta``.

    Uses the Green function of the *perturbed* conductances:
    ``-(G^e(x, e+e_i) - G^e(x, e)) * delta * (xi_i + grad_i phi0(e))``.
    ``phi0`` must be the unperturbed corrector at the same ``mu``.
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    return _single_edge_delta(A, phi0, edge, delta, mu, cfg)


def periodic_single_edge_delta(A, phi0: CorrectorSolution, edge: EdgeId, delta: float,
                               cfg: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """The ``mu = 0`` analogue of ``single_edge_delta``, mean-zero on the torus."""
    return _single_edge_delta(A, phi0, edge, delta, 0.0, cfg)


def linear_approximation(phi0: CorrectorSolution, deltas) -> np.ndarray:
    """``phi0 + sum of single-edge changes``."""
    out = np.array(phi0.phi, dtype=float)
    for f in deltas:
        f = np.asarray(f)
        if f.shape != out.shape:
            raise ValueError(f"field of shape {f.shape} does not match corrector shape {out.shape}")
        out += f
    return out


@dataclass(frozen=True)
class MultiEdgeResidual:
    lhs: np.ndarray
    rhs: np.ndarray
    max_dev: float


def multi_edge_residual(A, defects: DefectSet, mu: float, xi=None,
                        cfg: SolverConfig = DEFAULT_CONFIG) -> MultiEdgeResidual:
    """Both sides of the several-edge perturbation identity.

    ``lhs`` is ``phi^E - phi~^E`` from direct solves.  ``rhs`` assembles
    ``-sum_{e != e'} grad_2 G^E(x, e') . C^{E \\ e}(e') grad phibar^e(e')``
    from one dipole solve per edge of ``E`` on the conductances ``A^E``.
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if len(defects) < 2:
        raise ValueError("the several-edge identity needs at least two edges")
    geom = _geom_of(A)
    phi0 = regularized_corrector(A, xi, mu, cfg)
    AE = apply_defects(geom, A, defects)
    phiE = regularized_corrector(AE, phi0.xi, mu, cfg)
    singles = {e: single_edge_delta(A, phi0, e, v, mu, cfg) for e, v in defects}
    lhs = phiE.phi - linear_approximation(phi0, singles.values())

    grads = {e: forward_gradient(geom, f) for e, f in singles.items()}
    rhs = geom.scalar_zeros()
    for e_prime, delta_prime in defects:
        if delta_prime == 0:
            continue
        site, axis = e_prime
        weight = sum(grads[e][site + (axis,)] for e in defects.edges if e != e_prime)
        if weight == 0:
            continue
        rhs -= delta_prime * weight * dipole_response(AE, mu, e_prime, cfg)
    return MultiEdgeResidual(lhs, rhs, float(np.max(np.abs(lhs - rhs))))
