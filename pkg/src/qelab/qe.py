"""Quantum-ergodicity statistics.

The central quantity is the normalized windowed sum

    (1/N) * sum over eigenvalues in (-lambda0, lambda0) of
            | <psi_i, K psi_i> - <K>(lambda_i) |

for diagonal observables (the reference bracket is the plain average <a>)
and for finite-range kernels (the bracket weights per-distance kernel mass
with tree Green-function ratios).  The diagonal path is the R = 0 kernel
path with a constant unit ratio curve, so the two reports coincide bitwise
on shared inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _rng, tree_green
from .anderson import PotentialAssignment, SpectralData
from .errors import ConfigError
from .graphs import RegularGraph, distance_and_geodesic, distances_within
from .tree_green import DistanceRatioProfile


@dataclass(frozen=True)
class Observable:
    """Per-vertex test function with sup norm at most one.

    Observables are built from graph structure and their own seed only;
    the pipeline constructs them before any potential is sampled so they
    cannot depend on the disorder.
    """

    values: np.ndarray
    tag: str

    def __post_init__(self):
        if np.max(np.abs(self.values)) > 1.0 + 1e-12:
            raise ConfigError(f"observable {self.tag!r} exceeds the sup bound 1")

    @property
    def n(self) -> int:
        return self.values.size

    def mean(self) -> complex | float:
        return self.values.mean()


def make_observable(kind: str, n: int, seed: int = 0, *, constant: float = 1.0,
                    alpha: float = 0.5, vertex: int = 0, values=None,
                    path=None) -> Observable:
    """Deterministic observable constructors.

    kind: "constant" (value ``constant``), "indicator" (random vertex set of
    fraction ``alpha``, ranked by a counter stream on ``seed``), "delta"
    (single vertex), "values" (user array), or "file" (JSON array of per-
    vertex values).  Arrays are validated against the sup bound.
    """
    if kind == "constant":
        if abs(constant) > 1.0:
            raise ConfigError("constant observables need |c| <= 1")
        return Observable(np.full(n, constant, dtype=np.float64), tag=f"constant:{constant}")
    if kind == "indicator":
        if not (0.0 < alpha < 1.0):
            raise ConfigError("indicator fraction must lie in (0, 1)")
        return Observable(indicator_set_values(n, alpha, seed), tag=f"indicator:{alpha}")
    if kind == "delta":
        if not (0 <= vertex < n):
            raise ConfigError("delta vertex out of range")
        vals = np.zeros(n, dtype=np.float64)
        vals[vertex] = 1.0
        return Observable(vals, tag=f"delta:{vertex}")
    if kind == "values":
        vals = np.asarray(values)
        if vals.size != n:
            raise ConfigError("observable array has the wrong length")
        return Observable(vals, tag="values")
    if kind == "file":
        import json

        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        vals = np.asarray(data, dtype=np.float64)
        if vals.ndim != 1 or vals.size != n:
            raise ConfigError(
                f"observable file {path} must hold {n} values, got shape {vals.shape}"
            )
        return Observable(vals, tag=f"file:{path}")
    raise ConfigError(f"unknown observable kind {kind!r}")


def indicator_set_values(n: int, alpha: float, seed: int) -> np.ndarray:
    """0/1 values of a deterministic random set of round(alpha*n) vertices."""
    size = int(round(alpha * n))
    key = _rng.derive_key(seed, "indicator")
    ranks = _rng.hash_u64_vec(key, np.arange(n, dtype=np.uint64))
    chosen = np.argsort(ranks, kind="stable")[:size]
    vals = np.zeros(n, dtype=np.float64)
    vals[chosen] = 1.0
    return vals


@dataclass(frozen=True)
class Kernel:
    """Finite-range two-point test function, stored as COO triples.

    Entries are sorted by (row, col); values vanish beyond graph distance
    ``r_max`` and are sup-bounded by one.  ``distances[e]`` caches the graph
    distance of entry e.
    """

    n: int
    r_max: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    distances: np.ndarray
    tag: str

    def __post_init__(self):
        if self.values.size and np.max(np.abs(self.values)) > 1.0 + 1e-12:
            raise ConfigError(f"kernel {self.tag!r} exceeds the sup bound 1")
        if self.distances.size and int(self.distances.max()) > self.r_max:
            raise ConfigError("kernel entry beyond the declared range")

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values)

    def distance_mass(self) -> np.ndarray:
        """S_r = (1/n) * sum of entries at distance exactly r, r = 0..r_max."""
        out = np.zeros(self.r_max + 1, dtype=self.values.dtype)
        for r in range(self.r_max + 1):
            mask = self.distances == r
            if np.any(mask):
                out[r] = self.values[mask].sum() / self.n
        return out


def diagonal_kernel(obs: Observable) -> Kernel:
    idx = np.arange(obs.n, dtype=np.int64)
    return Kernel(
        n=obs.n,
        r_max=0,
        rows=idx,
        cols=idx,
        values=obs.values.copy(),
        distances=np.zeros(obs.n, dtype=np.int64),
        tag=f"diag({obs.tag})",
    )


def edge_kernel(g: RegularGraph, value: float = 1.0) -> Kernel:
    """All-ones (scaled) kernel supported on graph edges; range 1."""
    if abs(value) > 1.0:
        raise ConfigError("edge kernel value must satisfy |value| <= 1")
    deg = g.q + 1
    rows = np.repeat(np.arange(g.n, dtype=np.int64), deg)
    cols = g.neighbors.reshape(-1).copy()
    order = np.lexsort((cols, rows))
    return Kernel(
        n=g.n,
        r_max=1,
        rows=rows[order],
        cols=cols[order],
        values=np.full(rows.size, value, dtype=np.float64),
        distances=np.ones(rows.size, dtype=np.int64),
        tag=f"edges:{value}",
    )


def ring_kernel(g: RegularGraph, r: int, value: float = 1.0) -> Kernel:
    """Indicator (scaled) of pairs at graph distance exactly r."""
    if r == 0:
        return diagonal_kernel(make_observable("constant", g.n, constant=value))
    rows, cols = [], []
    for x in range(g.n):
        for y, d in sorted(distances_within(g, x, r).items()):
            if d == r:
                rows.append(x)
                cols.append(y)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    order = np.lexsort((cols, rows))
    return Kernel(
        n=g.n,
        r_max=r,
        rows=rows[order],
        cols=cols[order],
        values=np.full(rows.size, value, dtype=np.float64),
        distances=np.full(rows.size, r, dtype=np.int64),
        tag=f"ring:{r}:{value}",
    )


def kernel_from_entries(g: RegularGraph, r_max: int, entries, tag: str = "user") -> Kernel:
    """Kernel from (x, y, value) triples; distances computed and validated."""
    entries = sorted((int(x), int(y), v) for x, y, v in entries)
    rows = np.array([e[0] for e in entries], dtype=np.int64)
    cols = np.array([e[1] for e in entries], dtype=np.int64)
    vals = np.array([e[2] for e in entries])
    dists = np.empty(rows.size, dtype=np.int64)
    for i in range(rows.size):
        ball = distances_within(g, int(rows[i]), r_max)
        if int(cols[i]) not in ball:
            raise ConfigError(
                f"kernel entry ({rows[i]}, {cols[i]}) lies beyond range {r_max}"
            )
        dists[i] = ball[int(cols[i])]
    return Kernel(n=g.n, r_max=r_max, rows=rows, cols=cols,
                  values=vals, distances=dists, tag=tag)


# ----------------------------------------------------------------------
# kernel averages
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class KernelAverageCurve:
    """lambda -> averaged kernel bracket sum_r ratio_r(lambda) * S_r."""

    lambdas: np.ndarray
    ratios: np.ndarray
    weights: np.ndarray
    eta: float
    epsilon: float
    q: int | None
    r_max: int

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        out = np.zeros(lam.shape, dtype=self.weights.dtype)
        for r in range(self.r_max + 1):
            out = out + np.interp(lam, self.lambdas, self.ratios[r]) * self.weights[r]
        return out

    def interpolation_error_bound(self) -> float:
        """Second-order bound on the linear-interpolation error of the bracket.

        max over interior grid points of |second difference| / 8, weighted by
        the per-distance kernel mass; shrinks with the grid spacing squared.
        """
        if self.lambdas.size < 3:
            return 0.0
        bound = 0.0
        for r in range(self.r_max + 1):
            d2 = np.abs(np.diff(self.ratios[r], n=2))
            if d2.size:
                bound += float(np.max(d2)) / 8.0 * abs(complex(self.weights[r]))
        return bound


def unit_diagonal_curve(kernel: Kernel) -> KernelAverageCurve:
    """Constant curve <K>(lambda) = S_0; the diagonal-observable bracket."""
    if kernel.r_max != 0:
        raise ConfigError("unit curve is only defined for range-0 kernels")
    return KernelAverageCurve(
        lambdas=np.array([-1e30, 1e30]),
        ratios=np.ones((1, 2)),
        weights=kernel.distance_mass(),
        eta=0.0,
        epsilon=0.0,
        q=None,
        r_max=0,
    )


def kernel_average_simple(kernel: Kernel, profile: DistanceRatioProfile) -> KernelAverageCurve:
    """Distance-only averaged bracket from a tree ratio profile.

    Valid because the disorder-averaged Im G depends only on the graph
    distance of the pair; for range 0 the curve is constantly S_0 = <a>.
    """
    if profile.r_max < kernel.r_max:
        raise ConfigError(
            f"profile reaches distance {profile.r_max} but the kernel has range {kernel.r_max}"
        )
    return KernelAverageCurve(
        lambdas=profile.lambdas,
        ratios=profile.ratios[: kernel.r_max + 1],
        weights=kernel.distance_mass(),
        eta=profile.eta,
        epsilon=profile.epsilon,
        q=profile.q,
        r_max=kernel.r_max,
    )


@dataclass(frozen=True)
class TabulatedKernelAverage:
    """Interpolated bracket curve tabulated from potential-dependent averages."""

    lambdas: np.ndarray
    values: np.ndarray
    eta: float
    r_max: int

    def __call__(self, lam):
        return np.interp(lam, self.lambdas, self.values)


def kernel_average_general_curve(
    kernel: Kernel,
    g: RegularGraph,
    pot: PotentialAssignment,
    lambdas,
    eta0: float,
    depth: int | None = None,
    backend: str | None = None,
) -> TabulatedKernelAverage:
    """Lifted-average bracket tabulated over a lambda grid.

    Feeds qe_statistic_kernel when the reference bracket should carry the
    actual potential realization instead of the disorder average.
    """
    lambdas = np.asarray(sorted(float(x) for x in lambdas))
    values = np.array([
        kernel_average_general(kernel, g, pot, complex(lam, eta0), depth, backend)
        for lam in lambdas
    ])
    return TabulatedKernelAverage(
        lambdas=lambdas, values=values, eta=eta0, r_max=kernel.r_max
    )


def kernel_average_general(
    kernel: Kernel,
    g: RegularGraph,
    pot: PotentialAssignment,
    gamma,
    depth: int | None = None,
    backend: str | None = None,
):
    """Potential-dependent averaged bracket through the lifted Green function.

    sum over kernel entries of K(x,y) * Im g_lift(x~, y~), normalized by the
    total lifted diagonal mass; pair lifts follow BFS geodesics (always
    non-backtracking).
    """
    gam = tree_green._as_gamma(gamma)
    if depth is None:
        depth = tree_green.suggest_depth(g.q, max(gam.imag, 0.05))
    paths = []
    for x, y in zip(kernel.rows, kernel.cols):
        if x == y:
            paths.append([int(x)])
        else:
            d, path = distance_and_geodesic(g, int(x), int(y))
            paths.append(path)
    lifted = tree_green.lifted_green(g, pot, gam, depth, paths, backend=backend)
    numerator = (kernel.values * lifted.pair_values.imag).sum()
    denominator = lifted.diagonals.imag.sum()
    return numerator / denominator


# ----------------------------------------------------------------------
# windowed eigenfunction statistics
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class QEReport:
    """Windowed eigenfunction-average statistic for one decomposition."""

    statistic: float
    window_count: int
    n: int
    lambda0: float
    eta0: float
    r_max: int
    eigen_indices: np.ndarray
    eigen_values: np.ndarray
    brackets: np.ndarray
    averages: np.ndarray

    def per_eigenvalue_rows(self):
        """Rows (i, lambda_i, bracket, average) for the optional CSV dump."""
        return list(zip(self.eigen_indices.tolist(), self.eigen_values.tolist(),
                        self.brackets.tolist(), self.averages.tolist()))


def _quadratic_brackets(kernel: Kernel, vecs: np.ndarray) -> np.ndarray:
    row_factor = vecs[kernel.rows]
    if np.iscomplexobj(vecs):
        row_factor = np.conj(row_factor)
    return np.einsum("e,ei,ei->i", kernel.values, row_factor, vecs[kernel.cols])


def qe_statistic_kernel(
    spec_data: SpectralData,
    kernel: Kernel,
    lambda0: float,
    averages: KernelAverageCurve,
    eta0: float | None = None,
    q: int | None = None,
) -> QEReport:
    """Windowed statistic (1/N) sum |<psi_i, K psi_i> - <K>(lambda_i)|.

    Kernels of range >= 1 require real eigenvectors and real kernel entries
    (the factorized bracket assumes real-valued pair correlations).
    """
    _validate_window(lambda0, q)
    if kernel.n != spec_data.n:
        raise ConfigError("kernel and spectrum sizes differ")
    if kernel.r_max >= 1 and (np.iscomplexobj(spec_data.eigenvectors) or not kernel.is_real):
        raise ConfigError(
            "kernels of range >= 1 need real eigenvectors and real entries"
        )
    if averages.r_max < kernel.r_max:
        raise ConfigError("average curve does not cover the kernel range")
    eta0 = averages.eta if eta0 is None else eta0
    mask = spec_data.window_mask(lambda0)
    idx = np.nonzero(mask)[0]
    lams = spec_data.eigenvalues[idx]
    brackets = _quadratic_brackets(kernel, spec_data.eigenvectors)[idx]
    avg = averages(lams)
    statistic = float(np.sum(np.abs(brackets - avg))) / spec_data.n
    return QEReport(
        statistic=statistic,
        window_count=int(idx.size),
        n=spec_data.n,
        lambda0=lambda0,
        eta0=float(eta0),
        r_max=kernel.r_max,
        eigen_indices=idx,
        eigen_values=lams,
        brackets=brackets,
        averages=avg,
    )


def qe_statistic_diag(
    spec_data: SpectralData,
    obs: Observable,
    lambda0: float,
    q: int | None = None,
) -> QEReport:
    """Diagonal-observable statistic; the R = 0 kernel path with <K> = <a>."""
    kernel = diagonal_kernel(obs)
    return qe_statistic_kernel(
        spec_data, kernel, lambda0, unit_diagonal_curve(kernel), eta0=0.0, q=q
    )


def _validate_window(lambda0: float, q: int | None) -> None:
    if not (lambda0 > 0):
        raise ConfigError("lambda0 must be positive")
    if q is not None and lambda0 >= 2.0 * np.sqrt(q):
        raise ConfigError(
            f"lambda0 = {lambda0} outside the open interval (0, 2*sqrt(q)) = "
            f"(0, {2.0 * np.sqrt(q):.6f})"
        )


# ----------------------------------------------------------------------
# consequence diagnostics
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class EquivalenceTable:
    """Median gap between lifted and distance-only kernel averages, by size."""

    n_values: list
    medians: list
    gaps: dict
    monotone_decreasing: bool


def average_equivalence_check(
    q: int,
    pot_spec,
    epsilon: float,
    n_values,
    seed_pairs,
    lambdas,
    eta0: float,
    profile: DistanceRatioProfile,
    kernel_builder=edge_kernel,
    cover_depth: int | None = None,
    backend: str | None = None,
) -> EquivalenceTable:
    """Gap |<K>_lifted - <K>_tree| over a size grid, medianed over seeds.

    The kernel is built from graph structure only, so it is independent of
    the potential by construction.
    """
    from .anderson import sample_potential
    from .graphs import generate_random_regular

    n_values = list(n_values)
    medians = []
    gaps = {}
    for n in n_values:
        diffs = []
        for gs, ps in seed_pairs:
            g = generate_random_regular(n, q, gs)
            kernel = kernel_builder(g)
            curve = kernel_average_simple(kernel, profile)
            pot = sample_potential(n, pot_spec, epsilon, ps)
            for lam in lambdas:
                lhs = kernel_average_general(
                    kernel, g, pot, complex(lam, eta0), depth=cover_depth, backend=backend
                )
                rhs = complex(curve(lam)).real
                diffs.append(abs(lhs - rhs))
        gaps[n] = diffs
        medians.append(float(np.median(diffs)))
    monotone = all(medians[i + 1] < medians[i] for i in range(len(medians) - 1))
    return EquivalenceTable(
        n_values=n_values, medians=medians, gaps=gaps, monotone_decreasing=monotone
    )


@dataclass(frozen=True)
class MassDistributionReport:
    thresholds: tuple
    fractions: dict
    mean_abs_deviation: float
    window_count: int


def mass_distribution_check(
    spec_data: SpectralData,
    alpha: float,
    lambda0: float,
    seeds,
    thresholds=(0.05, 0.1, 0.2),
) -> MassDistributionReport:
    """Distribution of indicator-set masses over window eigenfunctions.

    For each seed's vertex set of fraction alpha, reports the fraction of
    window eigenfunctions whose mass deviates from alpha beyond each
    threshold, medianed over seeds, plus the mean absolute deviation
    (the numerator of the Markov bound).
    """
    if not (0.0 < alpha < 1.0):
        raise ConfigError("alpha must lie in (0, 1)")
    mask = spec_data.window_mask(lambda0)
    vecs = spec_data.eigenvectors[:, mask]
    count = int(mask.sum())
    per_seed = {t: [] for t in thresholds}
    devs = []
    for seed in seeds:
        chi = indicator_set_values(spec_data.n, alpha, seed)
        masses = np.einsum("x,xi,xi->i", chi, vecs, vecs)
        dev = np.abs(masses - alpha)
        devs.append(dev.mean() if count else 0.0)
        for t in thresholds:
            per_seed[t].append(float(np.count_nonzero(dev > t)) / max(count, 1))
    fractions = {t: float(np.median(per_seed[t])) for t in thresholds}
    return MassDistributionReport(
        thresholds=tuple(thresholds),
        fractions=fractions,
        mean_abs_deviation=float(np.median(devs)),
        window_count=count,
    )
