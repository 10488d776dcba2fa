"""Linear solves for ``mu - div(A grad)`` on the torus.

The iterative path is a matrix-free conjugate gradient with a Jacobi
preconditioner.  ``dense_solve`` assembles the operator explicitly and is
kept as an independent oracle for small boxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .lattice import TorusGeometry, apply_operator, as_edge_field, as_scalar_field, incident_conductance

DENSE_SITE_CAP = 4096
MEAN_ZERO_TOL = 1e-9


class SolverError(RuntimeError):
    """CG did not reach the requested tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SolverConfig:
    """CG stopping rule.

    ``max_iterations=None`` means ten times the number of sites.
    """

    rel_tolerance: float = 1e-10
    max_iterations: int | None = None
    recenter_every: int = 50

    def __post_init__(self):
        # the stricter (0, 1e-4] range is enforced where configs are parsed
        if not 0 < self.rel_tolerance < 1:
            raise ValueError(f"rel_tolerance must lie in (0, 1), got {self.rel_tolerance}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.recenter_every < 1:
            raise ValueError("recenter_every must be >= 1")

    def iterations_for(self, geom: TorusGeometry) -> int:
        return self.max_iterations if self.max_iterations is not None else 10 * geom.site_count


DEFAULT_CONFIG = SolverConfig()


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    converged: bool


def _geom_of(A) -> TorusGeometry:
    A = np.asarray(A)
    d = A.shape[-1]
    if A.ndim != d + 1 or len(set(A.shape[:-1])) != 1 or A.shape[0] % 2 == 0:
        raise ValueError(f"array of shape {A.shape} is not an edge field on an odd torus")
    return TorusGeometry(d, (A.shape[0] - 1) // 2)


def _cg(geom, A, mu, rhs, cfg, mean_zero):
    A = as_edge_field(geom, A)
    b = as_scalar_field(geom, rhs)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(geom.site_shape), SolveReport(0, 0.0, True)
    if mean_zero:
        b = b - b.mean()
    tol = cfg.rel_tolerance * bnorm
    maxit = cfg.iterations_for(geom)
    inv_diag = 1.0 / (mu + incident_conductance(geom, A))

    def precondition(r):
        z = inv_diag * r
        if mean_zero:
            z -= z.mean()
        return z

    x = np.zeros(geom.site_shape)
    r = b.copy()
    z = precondition(r)
    s = z.copy()
    rz = np.vdot(r, z)
    it = 0
    while it < maxit:
        q = apply_operator(geom, A, mu, s)
        alpha = rz / np.vdot(s, q)
        x += alpha * s
        r -= alpha * q
        it += 1
        if mean_zero and it % cfg.recenter_every == 0:
            x -= x.mean()
            r = b - apply_operator(geom, A, mu, x)
        if np.linalg.norm(r) <= tol:
            # accept only on the true residual
            if mean_zero:
                x -= x.mean()
            r = b - apply_operator(geom, A, mu, x)
            if np.linalg.norm(r) <= tol:
                break
        z = precondition(r)
        rz_new = np.vdot(r, z)
        s = z + (rz_new / rz) * s
        rz = rz_new
    if mean_zero:
        x -= x.mean()
    res = float(np.linalg.norm(b - apply_operator(geom, A, mu, x))) / bnorm
    report = SolveReport(it, res, res <= cfg.rel_tolerance)
    if not report.converged:
        raise SolverError(
            f"CG stopped after {it} iterations at relative residual {res:.3e} "
            f"(tolerance {cfg.rel_tolerance:.1e})", report)
    return x, report


def solve_regularized(A, mu: float, rhs, cfg: SolverConfig = DEFAULT_CONFIG):
    """Solve ``(mu - div(A grad)) u = rhs`` for ``mu > 0``; returns ``(u, report)``."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    geom = _geom_of(A)
    return _cg(geom, A, float(mu), rhs, cfg, mean_zero=False)


def solve_mean_zero(A, rhs, cfg: SolverConfig = DEFAULT_CONFIG):
    """The unique mean-zero ``u`` with ``-div(A grad u) = rhs``.

    ``rhs`` must sum to zero up to ``1e-9 * ||rhs||_1``.
    """
    geom = _geom_of(A)
    rhs = as_scalar_field(geom, rhs)
    l1 = float(np.abs(rhs).sum())
    if abs(float(rhs.sum())) > MEAN_ZERO_TOL * l1:
        raise ValueError(f"right-hand side is not mean-zero (sum {rhs.sum():.3e}, l1 {l1:.3e})")
    return _cg(geom, A, 0.0, rhs, cfg, mean_zero=True)


def green_column(A, mu: float, y, cfg: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """``G_mu(., y)``: the response to a unit source at site ``y``."""
    geom = _geom_of(A)
    u, _ = solve_regularized(A, mu, geom.indicator(y), cfg)
    return u


def mean_zero_green_column(A, y, cfg: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Mean-zero response to a unit source at ``y`` balanced by a uniform sink."""
    geom = _geom_of(A)
    rhs = geom.indicator(y) - 1.0 / geom.site_count
    u, _ = solve_mean_zero(A, rhs, cfg)
    return u


def assemble_operator(A, mu: float = 0.0) -> scipy.sparse.csr_matrix:
    """Sparse matrix of ``mu - div(A grad)`` in lexicographic site order."""
    geom = _geom_of(A)
    A = np.asarray(A, dtype=float)
    N = geom.site_count
    idx = np.arange(N).reshape(geom.site_shape)
    rows, cols, vals = [], [], []
    for i in range(geom.d):
        src = idx.ravel()
        dst = np.roll(idx, -1, axis=i).ravel()
        w = A[..., i].ravel()
        rows += [src, dst, src, dst]
        cols += [dst, src, src, dst]
        vals += [-w, -w, w, w]
    M = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    ).tocsr()
    if mu:
        M = M + mu * scipy.sparse.identity(N, format="csr")
    return M


def dense_solve(A, mu: float, rhs) -> np.ndarray:
    """Direct elimination on the assembled operator (oracle; at most 4096 sites).

    For ``mu = 0`` the solution is the mean-zero one, obtained from the
    nonsingular system ``(K + 11^T / N) u = rhs``.
    """
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    geom = _geom_of(A)
    if geom.site_count > DENSE_SITE_CAP:
        raise ValueError(f"dense_solve is capped at {DENSE_SITE_CAP} sites, got {geom.site_count}")
    b = as_scalar_field(geom, rhs).ravel()
    if not np.any(b):
        return np.zeros(geom.site_shape)
    M = assemble_operator(A, mu).toarray()
    if mu == 0:
        l1 = float(np.abs(b).sum())
        if abs(float(b.sum())) > MEAN_ZERO_TOL * l1:
            raise ValueError("right-hand side is not mean-zero")
        M += 1.0 / geom.site_count
    try:
        u = scipy.linalg.solve(M, b, assume_a="pos")
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise RuntimeError(f"assembled operator is singular: {exc}") from exc
    return u.reshape(geom.site_shape)
