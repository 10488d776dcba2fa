"""Conductance laws, coupled Bernoulli environments and edge defects.

Every edge carries a triple ``(base, replacement, u)``.  The environment at
parameter ``p`` uses the replacement conductance exactly on the edges with
``u < p``, so the perturbed sets are nested in ``p`` and the whole path
``p -> omega^(p)`` comes from a single sample.

Random numbers come from the counter-based Philox generator keyed by
``(seed, stream)``; the uniform of edge ``k`` in a stream is the ``k``-th
output, so values depend only on ``(seed, stream, k)``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import EdgeId, TorusGeometry, as_edge_field

STREAM_BASE = 0
STREAM_REPLACEMENT = 1
STREAM_COUPLING = 2

CACHE_MAGIC = b"PHOM"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class DistributionSpec:
    """Law of a single conductance.

    ``kind`` is one of ``point_mass``, ``two_point``, ``uniform_interval`` or
    ``discrete_list``; use the constructors below rather than filling
    ``values``/``probs`` by hand.  For ``uniform_interval`` the two entries
    of ``values`` are the interval ends and ``probs`` is empty.
    """

    kind: str
    values: tuple[float, ...]
    probs: tuple[float, ...] = ()

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(q) for q in self.probs)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        if not all(np.isfinite(values)) or min(values, default=0.0) <= 0:
            raise ValueError(f"{self.kind}: conductances must be finite and positive, got {values}")
        if self.kind == "uniform_interval":
            if len(values) != 2 or values[0] > values[1] or probs:
                raise ValueError(f"uniform_interval needs lo <= hi, got {values}")
            return
        if self.kind not in ("point_mass", "two_point", "discrete_list"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if len(values) != len(probs) or not values:
            raise ValueError(f"{self.kind}: values and probs must have equal nonzero length")
        if min(probs) < 0 or abs(sum(probs) - 1.0) > _PROB_TOL:
            raise ValueError(f"{self.kind}: probabilities must be >= 0 and sum to 1, got {probs}")
        if self.kind == "point_mass" and len(values) != 1:
            raise ValueError("point_mass takes exactly one value")
        if self.kind == "two_point" and len(values) != 2:
            raise ValueError("two_point takes exactly two values")

    @classmethod
    def point_mass(cls, value):
        return cls("point_mass", (value,), (1.0,))

    @classmethod
    def two_point(cls, value_a, value_b, prob_a):
        if not 0 <= prob_a <= 1:
            raise ValueError(f"prob_a must lie in [0, 1], got {prob_a}")
        return cls("two_point", (value_a, value_b), (prob_a, 1.0 - prob_a))

    @classmethod
    def uniform_interval(cls, lo, hi):
        return cls("uniform_interval", (lo, hi))

    @classmethod
    def discrete_list(cls, values, probs):
        return cls("discrete_list", tuple(values), tuple(probs))

    @classmethod
    def from_dict(cls, data: dict) -> "DistributionSpec":
        """Build from the JSON form used in experiment configs."""
        kind = data.get("kind")
        try:
            if kind == "point_mass":
                return cls.point_mass(data["value"])
            if kind == "two_point":
                return cls.two_point(data["value_a"], data["value_b"], data["prob_a"])
            if kind == "uniform_interval":
                return cls.uniform_interval(data["lo"], data["hi"])
            if kind == "discrete_list":
                return cls.discrete_list(data["values"], data["probs"])
        except KeyError as exc:
            raise ValueError(f"{kind}: missing field {exc.args[0]!r}") from None
        raise ValueError(f"unknown distribution kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "point_mass":
            return {"kind": self.kind, "value": self.values[0]}
        if self.kind == "two_point":
            return {"kind": self.kind, "value_a": self.values[0],
                    "value_b": self.values[1], "prob_a": self.probs[0]}
        if self.kind == "uniform_interval":
            return {"kind": self.kind, "lo": self.values[0], "hi": self.values[1]}
        return {"kind": self.kind, "values": list(self.values), "probs": list(self.probs)}

    @property
    def bounds(self) -> tuple[float, float]:
        return min(self.values), max(self.values)

    @property
    def is_discrete(self) -> bool:
        return self.kind != "uniform_interval"

    def atoms(self) -> list[tuple[float, float]]:
        """``(value, probability)`` pairs with zero-weight atoms dropped."""
        if not self.is_discrete:
            raise ValueError("uniform_interval has no atoms")
        merged: dict[float, float] = {}
        for v, q in zip(self.values, self.probs):
            if q > 0:
                merged[v] = merged.get(v, 0.0) + q
        return sorted(merged.items())

    def mean(self) -> float:
        if not self.is_discrete:
            return 0.5 * (self.values[0] + self.values[1])
        return float(sum(v * q for v, q in zip(self.values, self.probs)))

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in ``[0, 1)`` to samples of this law."""
        if self.kind == "point_mass":
            return np.full(u.shape, self.values[0])
        if self.kind == "uniform_interval":
            lo, hi = self.values
            return lo + (hi - lo) * u
        cdf = np.cumsum(self.probs)
        cdf[-1] = np.inf
        idx = np.searchsorted(cdf, u, side="right")
        return np.asarray(self.values)[idx]


def uniform_stream(seed: int, stream: int, count: int) -> np.ndarray:
    """The first ``count`` uniforms of the Philox stream keyed by ``(seed, stream)``."""
    bitgen = np.random.Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, stream], dtype=np.uint64))
    return np.random.Generator(bitgen).random(count)


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit seed derived from ``seed`` and integer keys (e.g. sample index)."""
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class CoupledEnvironment:
    """Per-edge ``(base, replacement, u)`` on a torus; arrays are read-only."""

    geom: TorusGeometry
    base: np.ndarray
    replacement: np.ndarray
    coupling: np.ndarray
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("base", "replacement", "coupling"):
            arr = np.array(as_edge_field(self.geom, getattr(self, name)), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.base <= 0) or np.any(self.replacement <= 0):
            raise ValueError("conductances must be positive")

    @property
    def defect(self) -> np.ndarray:
        """``replacement - base`` per edge."""
        return self.replacement - self.base

    def defect_at(self, edge: EdgeId) -> float:
        site, axis = self.geom.check_edge(edge)
        return float(self.replacement[site + (axis,)] - self.base[site + (axis,)])


def sample_coupled(geom: TorusGeometry, spec0: DistributionSpec, spec1: DistributionSpec,
                   seed: int, share_streams: bool = False) -> CoupledEnvironment:
    """Sample i.i.d. edge triples deterministically from ``seed``.

    With ``share_streams`` the replacement law is driven by the same uniforms
    as the base law, so ``spec1 == spec0`` gives a pointwise-identical
    (null) perturbation instead of an independent resample.
    """
    m = geom.edge_count
    u0 = uniform_stream(seed, STREAM_BASE, m)
    u1 = u0 if share_streams else uniform_stream(seed, STREAM_REPLACEMENT, m)
    uc = uniform_stream(seed, STREAM_COUPLING, m)
    return CoupledEnvironment(
        geom,
        spec0.transform(u0).reshape(geom.edge_shape),
        spec1.transform(u1).reshape(geom.edge_shape),
        uc.reshape(geom.edge_shape),
        seed=int(seed),
    )


def perturbed_mask(env: CoupledEnvironment, p: float) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 1.0:
        return np.ones(env.geom.edge_shape, dtype=bool)
    return env.coupling < p


def realize(env: CoupledEnvironment, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Conductances at parameter ``p`` and the mask of perturbed edges.

    The mask, rather than a set of ``EdgeId``, is the returned perturbed set;
    ``perturbed_edges`` lists it as edge ids when needed.
    """
    mask = perturbed_mask(env, p)
    return np.where(mask, env.replacement, env.base), mask


def perturbed_edges(geom: TorusGeometry, mask: np.ndarray) -> list[EdgeId]:
    out = []
    for idx in np.flatnonzero(np.asarray(mask).ravel()):
        out.append(geom.edge_from_index(int(idx)))
    return out


def force_edge(env: CoupledEnvironment, p: float, edge: EdgeId, state: str) -> np.ndarray:
    """``realize(env, p)`` with ``edge`` pinned to its replacement (``plus``) or base (``minus``) value."""
    site, axis = env.geom.check_edge(edge)
    A, _ = realize(env, p)
    if state == "plus":
        A[site + (axis,)] = env.replacement[site + (axis,)]
    elif state == "minus":
        A[site + (axis,)] = env.base[site + (axis,)]
    else:
        raise ValueError(f"state must be 'plus' or 'minus', got {state!r}")
    return A


class DefectSet:
    """Edges with defect magnitudes ``delta_e``; the matrix ``C^E`` as an edge field."""

    def __init__(self, entries=()):
        self._entries: dict[EdgeId, float] = {}
        for edge, delta in entries:
            edge = EdgeId(tuple(edge[0]), int(edge[1]))
            if edge in self._entries:
                raise ValueError(f"duplicate edge {edge} in defect set")
            self._entries[edge] = float(delta)

    def __iter__(self):
        return iter(self._entries.items())

    def __len__(self):
        return len(self._entries)

    def __contains__(self, edge):
        return edge in self._entries

    def __neg__(self) -> "DefectSet":
        return DefectSet((e, -v) for e, v in self._entries.items())

    @property
    def edges(self) -> list[EdgeId]:
        return list(self._entries)

    def delta(self, edge: EdgeId) -> float:
        return self._entries[edge]

    def without(self, edge: EdgeId) -> "DefectSet":
        return DefectSet((e, v) for e, v in self._entries.items() if e != edge)

    def scaled(self, s: float) -> "DefectSet":
        return DefectSet((e, s * v) for e, v in self._entries.items())

    def matrix(self, geom: TorusGeometry) -> np.ndarray:
        """``C^E``: the defect magnitudes placed in their edge slots."""
        C = geom.edge_zeros()
        for (site, axis), v in self._entries.items():
            geom.check_edge(EdgeId(site, axis))
            C[site + (axis,)] = v
        return C

    @classmethod
    def from_environment(cls, env: CoupledEnvironment, edges) -> "DefectSet":
        return cls((e, env.defect_at(e)) for e in edges)


def apply_defects(geom: TorusGeometry, base, defects: DefectSet, bounds=None) -> np.ndarray:
    """Return ``base + C^E``; raise if a result leaves ``bounds`` (default: positivity)."""
    out = np.array(as_edge_field(geom, base), dtype=float)
    for (site, axis), v in defects:
        geom.check_edge(EdgeId(site, axis))
        out[site + (axis,)] += v
    if bounds is None:
        if np.any(out <= 0):
            raise ValueError("defects make a conductance nonpositive")
    else:
        lo, hi = bounds
        if np.any(out < lo) or np.any(out > hi):
            raise ValueError(f"defects push a conductance outside [{lo}, {hi}]")
    return out


def spec_hash(*specs: DistributionSpec, share_streams: bool = False) -> str:
    payload = json.dumps([s.to_dict() for s in specs] + [share_streams], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def save_environment(env: CoupledEnvironment, path) -> None:
    """Binary cache: header ``PHOM``/version/d/n/seed, then float64 triples per edge."""
    geom = env.geom
    triples = np.stack([env.base.ravel(), env.replacement.ravel(), env.coupling.ravel()], axis=1)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, geom.d, geom.n, env.seed & 0xFFFFFFFFFFFFFFFF))
        fh.write(np.ascontiguousarray(triples, dtype="<f8").tobytes())


def load_environment(path) -> CoupledEnvironment:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated environment file")
    magic, version, d, n, seed = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    geom = TorusGeometry(d, n)
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != 3 * geom.edge_count:
        raise ValueError(f"{path}: expected {3 * geom.edge_count} floats, found {body.size}")
    triples = body.reshape(geom.edge_count, 3)
    return CoupledEnvironment(geom, triples[:, 0], triples[:, 1], triples[:, 2], seed=int(seed))


def sample_coupled_cached(geom, spec0, spec1, seed, cache_dir=None, share_streams=False):
    """``sample_coupled`` backed by an on-disk cache of environment files."""
    if cache_dir is None:
        return sample_coupled(geom, spec0, spec1, seed, share_streams)
    cache_dir = Path(cache_dir)
    tag = spec_hash(spec0, spec1, share_streams=share_streams)
    path = cache_dir / f"env_d{geom.d}_n{geom.n}_{seed:016x}_{tag}.phom"
    if path.exists():
        return load_environment(path)
    env = sample_coupled(geom, spec0, spec1, seed, share_streams)
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    save_environment(env, tmp)
    tmp.replace(path)
    return env
