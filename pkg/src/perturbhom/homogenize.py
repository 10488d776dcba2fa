"""Monte Carlo estimation of homogenized energies and of the first-order coefficient.

All estimators draw sample ``i`` from the seed ``derive_seed(seed, purpose, i)``
and reduce per-sample values in sample order, so results do not depend on
the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corrector import corrector, default_xi, regularized_corrector, single_edge_delta
from .environment import (
    CoupledEnvironment,
    DistributionSpec,
    derive_seed,
    force_edge,
    realize,
    sample_coupled_cached,
)
from .lattice import EdgeId, TorusGeometry, energy_density, forward_gradient
from .solver import DEFAULT_CONFIG, SolverConfig, SolverError, mean_zero_green_column

PURPOSE_AHOM = 0
PURPOSE_A1 = 1
PURPOSE_LINEARIZATION = 2


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    std_error: float
    n_samples: int
    seed: int
    label: str = ""
    values: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_values(cls, values, seed: int, label: str = "") -> "MonteCarloEstimate":
        values = np.asarray(values, dtype=float)
        n = values.size
        mean = float(np.mean(values)) if n else math.nan
        se = float(np.std(values, ddof=1) / math.sqrt(n)) if n >= 2 else math.nan
        return cls(mean, se, n, int(seed), label, values)

    def within(self, target: float, k: float = 3.0, other_se: float = 0.0) -> bool:
        """``|mean - target| <= k * combined standard error``."""
        return abs(self.mean - target) <= k * math.hypot(self.std_error, other_se)


def _map(fn, count: int, threads: int | None):
    if not threads or threads <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def _guarded(fn, label):
    def run(i):
        try:
            return fn(i)
        except SolverError as exc:
            raise SolverError(f"{label}: sample {i}: {exc}", exc.report) from exc
    return run


def _xi_for(geom, xi):
    return default_xi(geom.d) if xi is None else np.asarray(xi, dtype=float)


def periodic_energy(A, xi=None, cfg: SolverConfig = DEFAULT_CONFIG) -> float:
    """``|B_n|^-1 sum_x xi . A (xi + grad phi_n)`` for one environment."""
    sol = corrector(A, xi, 0.0, cfg)
    return float(np.mean(energy_density(sol.geom, A, sol.xi, sol.grad_phi)))


def voigt_bound(A, xi) -> float:
    """Arithmetic-mean bound, the energy of the zero corrector."""
    xi = np.asarray(xi, dtype=float)
    return float(np.mean(np.sum(np.asarray(A) * xi * xi, axis=-1)))


def _env_sampler(geom, spec0, spec1, seed, purpose, share_streams, cache_dir):
    def sample(i) -> CoupledEnvironment:
        return sample_coupled_cached(geom, spec0, spec1, derive_seed(seed, purpose, i),
                                     cache_dir=cache_dir, share_streams=share_streams)
    return sample


def ahom_periodic_mc(spec0: DistributionSpec, spec1: DistributionSpec, p: float,
                     geom: TorusGeometry, xi=None, samples: int = 100, seed: int = 0,
                     cfg: SolverConfig = DEFAULT_CONFIG, threads: int | None = None,
                     share_streams: bool = False, cache_dir=None) -> MonteCarloEstimate:
    """Estimate ``xi . A_hom^(p) xi`` by periodic cell problems on independent samples."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    xi = _xi_for(geom, xi)
    sample = _env_sampler(geom, spec0, spec1, seed, PURPOSE_AHOM, share_streams, cache_dir)

    def one(i):
        A, _ = realize(sample(i), p)
        return periodic_energy(A, xi, cfg)

    values = _map(_guarded(one, "ahom"), samples, threads)
    return MonteCarloEstimate.from_values(values, seed, f"ahom p={p:g}")


@dataclass(frozen=True)
class _ForcedPair:
    edge: EdgeId
    delta: float
    A_minus: np.ndarray
    A_plus: np.ndarray
    minus: object
    plus: object


def _forced_pairs(env: CoupledEnvironment, p_bar: float, edges, xi, cfg, mu=0.0):
    """Correctors for ``A^(p_bar, e-)`` and ``A^(p_bar, e+)``, reusing the realized solve."""
    A, mask = realize(env, p_bar)
    realized = corrector(A, xi, mu, cfg)
    out = []
    for edge in edges:
        site, axis = env.geom.check_edge(edge)
        slot = site + (axis,)
        delta = float(env.replacement[slot] - env.base[slot])
        A_minus = force_edge(env, p_bar, edge, "minus")
        A_plus = force_edge(env, p_bar, edge, "plus")
        if delta == 0:
            out.append(_ForcedPair(edge, 0.0, A_minus, A_plus, realized, realized))
            continue
        if mask[slot]:
            plus, minus = realized, corrector(A_minus, xi, mu, cfg)
        else:
            minus, plus = realized, corrector(A_plus, xi, mu, cfg)
        out.append(_ForcedPair(edge, delta, A_minus, A_plus, minus, plus))
    return out


def _origin_edges(geom):
    return [geom.edge(geom.origin, i) for i in range(geom.d)]


def a1_spatial_average(env: CoupledEnvironment, p_bar: float, xi=None,
                       cfg: SolverConfig = DEFAULT_CONFIG) -> float:
    """Per-sample integrand ``sum_{e at 0} (xi + grad phi^-) . C^e (xi + grad phi^+)(0)``.

    ``phi^-``/``phi^+`` are periodic correctors with the edge forced to its
    base/replacement value on top of the environment realized at ``p_bar``.
    Its expectation is the derivative of ``xi . A_hom xi`` at ``p_bar``
    (the ``1 - p_bar`` reparametrization is absorbed by the forcing).
    """
    geom = env.geom
    xi = _xi_for(geom, xi)
    total = 0.0
    for pair in _forced_pairs(env, p_bar, _origin_edges(geom), xi, cfg):
        if pair.delta == 0:
            continue
        site, axis = pair.edge
        slot = site + (axis,)
        total += ((xi[axis] + pair.minus.grad_phi[slot]) * pair.delta
                  * (xi[axis] + pair.plus.grad_phi[slot]))
    return float(total)


def a1_total_energy(env: CoupledEnvironment, p_bar: float, xi=None,
                    cfg: SolverConfig = DEFAULT_CONFIG) -> float:
    """``sum_x sum_{e at 0} [xi.A^+ (xi + grad phi^+) - xi.A^- (xi + grad phi^-)](x)``.

    Equal, environment by environment, to ``a1_spatial_average``.
    """
    geom = env.geom
    xi = _xi_for(geom, xi)
    total = 0.0
    for pair in _forced_pairs(env, p_bar, _origin_edges(geom), xi, cfg):
        if pair.delta == 0:
            continue
        total += float(np.sum(energy_density(geom, pair.A_plus, xi, pair.plus.grad_phi))
                       - np.sum(energy_density(geom, pair.A_minus, xi, pair.minus.grad_phi)))
    return total


def a1_series(env: CoupledEnvironment, p_bar: float, xi=None, radius: int | None = None,
              cfg: SolverConfig = DEFAULT_CONFIG, mu: float = 0.0, partial_sums: bool = False):
    """Literal sum over edges based in ``B_radius`` of the energy change at the origin.

    Two corrector solves per edge, so only small radii are practical.  With
    ``mu > 0`` the regularized correctors are used instead of periodic ones.
    ``partial_sums=True`` returns the cumulative sums for radii ``0..radius``.
    """
    geom = env.geom
    xi = _xi_for(geom, xi)
    radius = geom.n if radius is None else int(radius)
    if radius > geom.n or radius < 0:
        raise ValueError(f"radius must lie in [0, {geom.n}], got {radius}")
    origin = geom.origin
    shells = np.zeros(radius + 1)
    edges = [geom.edge(s, i) for s in geom.box_sites(radius) for i in range(geom.d)]
    for pair in _forced_pairs(env, p_bar, edges, xi, cfg, mu):
        if pair.delta == 0:
            continue
        plus = energy_density(geom, pair.A_plus, xi, pair.plus.grad_phi)[origin]
        minus = energy_density(geom, pair.A_minus, xi, pair.minus.grad_phi)[origin]
        coords = np.asarray(pair.edge.site)
        r = int(np.max(np.minimum(coords, geom.L - coords)))
        shells[r] += plus - minus
    cumulative = np.cumsum(shells)
    return cumulative if partial_sums else float(cumulative[-1])


def a1_mc(spec0: DistributionSpec, spec1: DistributionSpec, p_bar: float, geom: TorusGeometry,
          xi=None, samples: int = 100, seed: int = 0, cfg: SolverConfig = DEFAULT_CONFIG,
          threads: int | None = None, share_streams: bool = False, cache_dir=None) -> MonteCarloEstimate:
    """Monte Carlo mean of ``a1_spatial_average``."""
    if samples < 2:
        raise ValueError("samples must be >= 2")
    xi = _xi_for(geom, xi)
    sample = _env_sampler(geom, spec0, spec1, seed, PURPOSE_A1, share_streams, cache_dir)
    values = _map(_guarded(lambda i: a1_spatial_average(sample(i), p_bar, xi, cfg), "a1"),
                  samples, threads)
    return MonteCarloEstimate.from_values(values, seed, f"a1 p_bar={p_bar:g}")


def torus_neighbor_resistance(geom: TorusGeometry, conductance: float = 1.0) -> float:
    """Effective resistance between neighbours of the homogeneous torus.

    Foster's theorem on the edge-transitive torus: ``(N - 1) / (d N)`` for
    unit conductances.
    """
    N = geom.site_count
    return (N - 1) / (geom.d * N) / conductance


def dilute_bond_coefficient(a: float, b: float, geom: TorusGeometry,
                            cfg: SolverConfig = DEFAULT_CONFIG) -> tuple[float, float]:
    """Rank-one value ``(b - a) / (1 + (b - a) h_n)`` for point masses ``a -> b``, ``xi = e_1``.

    ``h_n = 2 (G(0, 0) - G(0, e_1))`` is read off a mean-zero Green column of
    the torus with all conductances ``a``.  Returns ``(a1, h_n)``.
    """
    A = np.full(geom.edge_shape, float(a))
    G = mean_zero_green_column(A, geom.origin, cfg)
    e1 = geom.shift(geom.origin, 0)
    h = 2.0 * (G[geom.origin] - G[e1])
    delta = b - a
    return delta / (1.0 + delta * h), float(h)


@dataclass
class ExpansionReport:
    p_bar: float
    p_grid: list[float]
    baseline: MonteCarloEstimate
    ahom_estimates: list[MonteCarloEstimate]
    differences: list[MonteCarloEstimate]
    slope: float
    slope_std_error: float
    a1_reference: MonteCarloEstimate
    residuals: list[float]
    residual_std_errors: list[float]
    error_exponent_fit: float | None
    error_exponent_std_error: float | None
    exponent_points: list[float]

    @property
    def noise_dominated(self) -> bool:
        return self.error_exponent_fit is None

    def slope_agrees(self, k: float = 3.0) -> bool:
        combined = math.hypot(self.slope_std_error, self.a1_reference.std_error)
        return abs(self.slope - self.a1_reference.mean) <= k * combined

    def to_dict(self) -> dict:
        def est(e):
            return {"label": e.label, "mean": e.mean, "std_error": e.std_error,
                    "n_samples": e.n_samples, "seed": e.seed}
        return {
            "p_bar": self.p_bar,
            "p_grid": list(self.p_grid),
            "baseline": est(self.baseline),
            "ahom_estimates": [est(e) for e in self.ahom_estimates],
            "differences": [est(e) for e in self.differences],
            "slope": self.slope,
            "slope_std_error": self.slope_std_error,
            "a1_reference": est(self.a1_reference),
            "residuals": list(self.residuals),
            "residual_std_errors": list(self.residual_std_errors),
            "error_exponent_fit": self.error_exponent_fit,
            "error_exponent_std_error": self.error_exponent_std_error,
            "error_exponent_status": "noise" if self.noise_dominated else "fitted",
            "exponent_points": list(self.exponent_points),
        }


def validate_grid(p_grid, p_bar: float) -> list[float]:
    grid = [float(p) for p in p_grid]
    if len(grid) < 3:
        raise ValueError(f"p_grid needs at least 3 points, got {len(grid)}")
    if any(q <= p for p, q in zip(grid, grid[1:])):
        raise ValueError("p_grid must be strictly increasing")
    if grid[0] <= 0 or grid[-1] > 1 - p_bar + 1e-15:
        raise ValueError(f"p_grid must lie in (0, 1 - p_bar] = (0, {1 - p_bar:g}]")
    return grid


def expansion_fit(spec0: DistributionSpec, spec1: DistributionSpec, p_bar: float, p_grid,
                  geom: TorusGeometry, xi=None, samples: int = 100, seed: int = 0,
                  cfg: SolverConfig = DEFAULT_CONFIG, a1_samples: int | None = None,
                  threads: int | None = None, share_streams: bool = False,
                  cache_dir=None) -> ExpansionReport:
    """Common-random-number differences ``A_hom(p_bar + p) - A_hom(p_bar)`` and their fits.

    The slope through the origin is a weighted least-squares fit with
    inverse-variance weights; it is formed per sample so its standard error
    accounts for the correlation between grid points.  The error exponent
    is the log-log slope of ``|difference - p a1|`` over grid points whose
    residual exceeds three standard errors, or ``None`` when fewer than two
    qualify.
    """
    if not 0 <= p_bar < 1:
        raise ValueError(f"p_bar must lie in [0, 1), got {p_bar}")
    grid = validate_grid(p_grid, p_bar)
    xi = _xi_for(geom, xi)
    sample = _env_sampler(geom, spec0, spec1, seed, PURPOSE_AHOM, share_streams, cache_dir)

    def one(i):
        env = sample(i)
        energies = [periodic_energy(realize(env, p_bar)[0], xi, cfg)]
        for p in grid:
            energies.append(periodic_energy(realize(env, min(p_bar + p, 1.0))[0], xi, cfg))
        return energies

    E = np.asarray(_map(_guarded(one, "sweep"), samples, threads))
    D = E[:, 1:] - E[:, :1]
    P = np.asarray(grid)
    var = np.var(D, axis=0, ddof=1) if samples >= 2 else np.zeros(len(grid))
    w = 1.0 / var if np.all(var > 0) else np.ones(len(grid))
    per_sample_slope = D @ (w * P) / np.sum(w * P * P)
    slope_est = MonteCarloEstimate.from_values(per_sample_slope, seed, "slope")

    a1_ref = a1_mc(spec0, spec1, p_bar, geom, xi, a1_samples or samples, seed, cfg, threads,
                   share_streams, cache_dir)
    diffs = [MonteCarloEstimate.from_values(D[:, k], seed, f"diff p={p:g}") for k, p in enumerate(grid)]
    residuals = [d.mean - p * a1_ref.mean for d, p in zip(diffs, grid)]
    res_se = [math.hypot(d.std_error, p * a1_ref.std_error) for d, p in zip(diffs, grid)]
    keep = [k for k in range(len(grid)) if abs(residuals[k]) > 3 * res_se[k]]
    exponent = exponent_se = None
    if len(keep) >= 2:
        x = np.log(P[keep])
        y = np.log(np.abs(np.asarray(residuals)[keep]))
        coef, cov = _linear_fit(x, y)
        exponent, exponent_se = float(coef), cov

    return ExpansionReport(
        p_bar=p_bar,
        p_grid=grid,
        baseline=MonteCarloEstimate.from_values(E[:, 0], seed, f"ahom p={p_bar:g}"),
        ahom_estimates=[MonteCarloEstimate.from_values(E[:, k + 1], seed, f"ahom p={p_bar + p:g}")
                        for k, p in enumerate(grid)],
        differences=diffs,
        slope=slope_est.mean,
        slope_std_error=slope_est.std_error,
        a1_reference=a1_ref,
        residuals=residuals,
        residual_std_errors=res_se,
        error_exponent_fit=exponent,
        error_exponent_std_error=exponent_se,
        exponent_points=[grid[k] for k in keep],
    )


def _linear_fit(x, y):
    """Least-squares slope and its standard error (``nan`` with two points)."""
    X = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    dof = len(x) - 2
    if dof <= 0:
        return coef[0], math.nan
    resid = y - X @ coef
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    return coef[0], float(math.sqrt(cov[0, 0]))


def linearization_error_scaling(spec0: DistributionSpec, spec1: DistributionSpec,
                                geom: TorusGeometry, mu: float, p_values, samples: int = 100,
                                seed: int = 0, xi=None, cfg: SolverConfig = DEFAULT_CONFIG,
                                threads: int | None = None, share_streams: bool = False,
                                cache_dir=None) -> list[tuple[float, MonteCarloEstimate]]:
    """Mean of ``|grad phi_mu^(p) - grad phi~_mu^(p)|(0)`` for each ``p``.

    ``phi~`` is the linear approximation built from one single-edge change
    per perturbed edge.  All ``p`` share the same environments, and the
    single-edge changes are reused across the nested perturbed sets.
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    ps = [float(p) for p in p_values]
    for p in ps:
        if not 0 <= p <= 1:
            raise ValueError(f"p must lie in [0, 1], got {p}")
    xi = _xi_for(geom, xi)
    sample = _env_sampler(geom, spec0, spec1, seed, PURPOSE_LINEARIZATION, share_streams, cache_dir)
    origin = geom.origin

    def one(i):
        env = sample(i)
        A0 = env.base
        phi0 = None
        cache: dict[int, np.ndarray] = {}
        errs = []
        for p in ps:
            A, mask = realize(env, p)
            idx = np.flatnonzero(mask.ravel() & (env.defect.ravel() != 0))
            if idx.size == 0:
                errs.append(0.0)
                continue
            if phi0 is None:
                phi0 = regularized_corrector(A0, xi, mu, cfg)
            approx = np.array(phi0.phi)
            for k in idx:
                k = int(k)
                if k not in cache:
                    e = geom.edge_from_index(k)
                    cache[k] = single_edge_delta(A0, phi0, e, env.defect_at(e), mu, cfg)
                approx += cache[k]
            direct = regularized_corrector(A, xi, mu, cfg)
            diff = direct.grad_phi[origin] - forward_gradient(geom, approx)[origin]
            errs.append(float(np.linalg.norm(diff)))
        return errs

    errs = np.asarray(_map(_guarded(one, "linearization"), samples, threads))
    return [(p, MonteCarloEstimate.from_values(errs[:, k], seed, f"linearization p={p:g}"))
            for k, p in enumerate(ps)]


def a1_cross_check(spec0: DistributionSpec, spec1: DistributionSpec, p_bar: float,
                   geom: TorusGeometry, xi=None, samples: int = 2, seed: int = 0,
                   cfg: SolverConfig = DEFAULT_CONFIG, threads: int | None = None,
                   share_streams: bool = False, cache_dir=None) -> float:
    """Largest per-sample disagreement between the origin form and the total-energy form.

    Runs on the environments ``a1_mc`` uses for the same ``seed``; the
    disagreement is relative to ``max(1, |value|)``.
    """
    xi = _xi_for(geom, xi)
    sample = _env_sampler(geom, spec0, spec1, seed, PURPOSE_A1, share_streams, cache_dir)

    def one(i):
        env = sample(i)
        s = a1_spatial_average(env, p_bar, xi, cfg)
        t = a1_total_energy(env, p_bar, xi, cfg)
        return abs(s - t) / max(1.0, abs(s))

    return float(max(_map(_guarded(one, "cross-check"), samples, threads)))


def a1_regularized_mc(spec0: DistributionSpec, spec1: DistributionSpec, p_bar: float,
                      geom: TorusGeometry, mu: float, xi=None, samples: int = 2, seed: int = 0,
                      radius: int | None = None, cfg: SolverConfig = DEFAULT_CONFIG,
                      threads: int | None = None, share_streams: bool = False,
                      cache_dir=None) -> MonteCarloEstimate:
    """Monte Carlo mean of ``a1_series`` with regularized correctors (convergence studies only)."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if samples < 2:
        raise ValueError("samples must be >= 2")
    xi = _xi_for(geom, xi)
    sample = _env_sampler(geom, spec0, spec1, seed, PURPOSE_A1, share_streams, cache_dir)
    values = _map(_guarded(lambda i: a1_series(sample(i), p_bar, xi, radius, cfg, mu), "a1 mu"),
                  samples, threads)
    return MonteCarloEstimate.from_values(values, seed, f"a1 mu={mu:g} p_bar={p_bar:g}")


# the enumeration oracle lives in its own module; re-exported for a single entry point
from .enumeration import exact_enumeration  # noqa: E402,F401
