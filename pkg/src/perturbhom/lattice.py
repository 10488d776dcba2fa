"""Periodic lattice geometry and the discrete differential operators.

Scalar fields are arrays of shape ``geom.site_shape == (L,) * d``.  Edge
fields carry one value per (site, direction) slot and have shape
``geom.edge_shape == (L,) * d + (d,)``; slot ``(x, i)`` stands for the edge
between ``x`` and ``x + e_i``.  C-order flattening of an edge field is
therefore site-major, direction-minor, with sites in lexicographic order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np


class EdgeId(NamedTuple):
    """Edge ``(site, site + e_axis)``; ``axis`` is zero-based."""

    site: tuple[int, ...]
    axis: int


@dataclass(frozen=True)
class TorusGeometry:
    """The box ``{-n, ..., n}^d`` with periodic wraparound.

    Coordinates are stored as canonical representatives in ``[0, L)``, so
    the origin is site index 0 and ``-1`` maps to ``L - 1``.
    """

    d: int
    n: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be an integer >= 1, got {self.d!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"half-width must be an integer >= 1, got {self.n!r}")

    @property
    def L(self) -> int:
        return 2 * self.n + 1

    @property
    def site_count(self) -> int:
        return self.L**self.d

    @property
    def edge_count(self) -> int:
        return self.d * self.site_count

    @property
    def site_shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    @property
    def edge_shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d + (self.d,)

    @cached_property
    def origin(self) -> tuple[int, ...]:
        return (0,) * self.d

    def site(self, coords) -> tuple[int, ...]:
        """Canonical representative of ``coords`` modulo ``L``."""
        coords = tuple(int(c) % self.L for c in coords)
        if len(coords) != self.d:
            raise ValueError(f"expected {self.d} coordinates, got {len(coords)}")
        return coords

    def site_index(self, coords) -> int:
        return int(np.ravel_multi_index(self.site(coords), self.site_shape))

    def site_coords(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.site_count:
            raise IndexError(f"site index {index} out of range")
        return tuple(int(c) for c in np.unravel_index(index, self.site_shape))

    def edge(self, coords, axis: int) -> EdgeId:
        if not 0 <= axis < self.d:
            raise ValueError(f"axis must lie in [0, {self.d}), got {axis}")
        return EdgeId(self.site(coords), int(axis))

    def edge_index(self, edge: EdgeId) -> int:
        return self.site_index(edge.site) * self.d + self.check_edge(edge).axis

    def edge_from_index(self, index: int) -> EdgeId:
        if not 0 <= index < self.edge_count:
            raise IndexError(f"edge index {index} out of range")
        site, axis = divmod(index, self.d)
        return EdgeId(self.site_coords(site), axis)

    def check_edge(self, edge: EdgeId) -> EdgeId:
        site, axis = edge
        if len(site) != self.d or not all(0 <= c < self.L for c in site):
            raise ValueError(f"edge {edge} is not a canonical edge of {self}")
        if not 0 <= axis < self.d:
            raise ValueError(f"edge {edge} has invalid axis")
        return EdgeId(tuple(int(c) for c in site), int(axis))

    def shift(self, site, axis: int, step: int = 1) -> tuple[int, ...]:
        coords = list(self.site(site))
        coords[axis] = (coords[axis] + step) % self.L
        return tuple(coords)

    def box_sites(self, radius: int):
        """Canonical sites of ``{-radius, ..., radius}^d``, lexicographic."""
        if radius > self.n:
            raise ValueError(f"radius {radius} exceeds half-width {self.n}")
        grids = np.meshgrid(*([np.arange(-radius, radius + 1)] * self.d), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        return [self.site(p) for p in pts]

    def indicator(self, site) -> np.ndarray:
        f = np.zeros(self.site_shape)
        f[self.site(site)] = 1.0
        return f

    def scalar_zeros(self) -> np.ndarray:
        return np.zeros(self.site_shape)

    def edge_zeros(self) -> np.ndarray:
        return np.zeros(self.edge_shape)


def _check(geom: TorusGeometry, arr, shape, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.shape != shape:
        if arr.size == int(np.prod(shape)):
            return arr.reshape(shape)
        raise ValueError(f"{what} of shape {arr.shape} does not match {geom} ({shape})")
    return arr


def as_scalar_field(geom: TorusGeometry, f) -> np.ndarray:
    """Validate ``f`` as a scalar field (flat arrays are reshaped)."""
    return _check(geom, f, geom.site_shape, "scalar field")


def as_edge_field(geom: TorusGeometry, F) -> np.ndarray:
    """Validate ``F`` as an edge field (flat arrays are reshaped)."""
    return _check(geom, F, geom.edge_shape, "edge field")


def forward_gradient(geom: TorusGeometry, f) -> np.ndarray:
    """Slot ``(x, i)`` of the result is ``f(x + e_i) - f(x)``."""
    f = as_scalar_field(geom, f)
    out = np.empty(geom.edge_shape)
    for i in range(geom.d):
        out[..., i] = np.roll(f, -1, axis=i) - f
    return out


def backward_divergence(geom: TorusGeometry, F) -> np.ndarray:
    """``sum_i F_i(x) - F_i(x - e_i)``; minus the adjoint of the gradient."""
    F = as_edge_field(geom, F)
    out = np.zeros(geom.site_shape)
    for i in range(geom.d):
        Fi = F[..., i]
        out += Fi - np.roll(Fi, 1, axis=i)
    return out


def apply_operator(geom: TorusGeometry, A, mu: float, f) -> np.ndarray:
    """Return ``mu f - div(A grad f)``.

    With ``div(A grad f)(x) = sum_{y ~ x} w_xy (f(y) - f(x))`` the operator is
    symmetric positive semi-definite, and definite once ``mu > 0``.
    """
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    A = as_edge_field(geom, A)
    f = as_scalar_field(geom, f)
    out = backward_divergence(geom, A * forward_gradient(geom, f))
    out *= -1.0
    if mu:
        out += mu * f
    return out


def incident_conductance(geom: TorusGeometry, A) -> np.ndarray:
    """Sum of the conductances of the ``2d`` edges touching each site."""
    A = as_edge_field(geom, A)
    out = np.zeros(geom.site_shape)
    for i in range(geom.d):
        out += A[..., i] + np.roll(A[..., i], 1, axis=i)
    return out


def inner(f, g) -> float:
    return float(np.vdot(np.ravel(f), np.ravel(g)))


def energy_density(geom: TorusGeometry, A, xi, grad_phi) -> np.ndarray:
    """``xi . A (xi + grad phi)`` at every site."""
    A = as_edge_field(geom, A)
    xi = np.asarray(xi, dtype=float)
    return np.sum(A * xi * (xi + grad_phi), axis=-1)


def translate(geom: TorusGeometry, field, shift) -> np.ndarray:
    """Shift a scalar or edge field by the lattice vector ``shift``."""
    field = np.asarray(field)
    return np.roll(field, tuple(int(s) for s in shift), axis=tuple(range(geom.d)))
