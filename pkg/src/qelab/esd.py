"""Spectral-measure diagnostics.

Kesten-McKay density and CDF for the potential-free model, Monte-Carlo
integrated-density-of-states for the disordered tree, Kolmogorov distances
between empirical and reference spectral CDFs, and the local-weak-convergence
moment check: normalized traces of H^k on the graph against exact
closed-walk return moments on the tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.sparse

from . import _rng, tree_green
from .anderson import PotentialSpec, SpectralData
from .errors import ConfigError

LLN_K_CAP = 12
_CDF_GRID = 8193


def kesten_mckay_density(lam: float, q: int) -> float:
    """Limiting spectral density of large random (q+1)-regular graphs.

    Computed as (1/pi) Im of the free tree Green diagonal at lam + i0;
    zero outside the open band (-2 sqrt(q), 2 sqrt(q)).
    """
    if abs(lam) >= 2.0 * math.sqrt(q):
        return 0.0
    zeta = tree_green.free_forward_green(lam, q)
    diag = tree_green.green_diagonal([zeta] * (q + 1), 0.0, 0.0, complex(lam, 0.0))
    return diag.imag / math.pi


def kesten_mckay_density_rational(lam: float, q: int) -> float:
    """Closed rational form of the same density; used as a cross-check."""
    band = 4.0 * q - lam * lam
    if band <= 0.0:
        return 0.0
    return (q + 1) * math.sqrt(band) / (2.0 * math.pi * ((q + 1) ** 2 - lam * lam))


def kesten_mckay_cdf(q: int):
    """CDF evaluator of the Kesten-McKay law (vectorized, cached grid)."""
    edge = 2.0 * math.sqrt(q)
    grid = np.linspace(-edge, edge, _CDF_GRID)
    dens = np.array([kesten_mckay_density(x, q) for x in grid])
    cum = scipy.integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cum /= cum[-1]

    def cdf(x):
        return np.interp(x, grid, cum, left=0.0, right=1.0)

    return cdf


@dataclass(frozen=True)
class IdsEstimate:
    lam: float
    eta: float
    density: float
    stderr: float
    samples: int


def ids_density(
    q: int,
    pot_spec: PotentialSpec,
    epsilon: float,
    lam: float,
    eta: float,
    samples: int,
    seed: int,
    depth: int | None = None,
    leaf_mode: str = "free",
    backend: str | None = None,
) -> IdsEstimate:
    """Smoothed density of states (1/pi) E[Im G(o,o; lam + i eta)] by MC."""
    if depth is None:
        depth = tree_green.suggest_depth(q, max(eta, 0.05))
    ray = tree_green.mc_expectation_im_green(
        q, pot_spec, epsilon, complex(lam, eta), r_max=0, depth=depth,
        samples=samples, seed=seed, leaf_mode=leaf_mode, backend=backend,
    )
    return IdsEstimate(
        lam=lam,
        eta=eta,
        density=float(ray.means[0]) / math.pi,
        stderr=float(ray.stderrs[0]) / math.pi,
        samples=samples,
    )


def ids_cdf(
    q: int,
    pot_spec: PotentialSpec,
    epsilon: float,
    eta: float,
    samples: int,
    seed: int,
    grid_points: int = 129,
    depth: int | None = None,
    leaf_mode: str = "free",
    backend: str | None = None,
):
    """CDF evaluator from the eta-smoothed density on a uniform grid."""
    edge = 2.0 * math.sqrt(q) + abs(epsilon) * pot_spec.support_bound + 4.0 * eta
    grid = np.linspace(-edge, edge, grid_points)
    dens = np.empty(grid_points)
    for i, lam in enumerate(grid):
        dens[i] = ids_density(
            q, pot_spec, epsilon, float(lam), eta, samples,
            _rng.derive_key(seed, "ids-grid", i),
            depth=depth, leaf_mode=leaf_mode, backend=backend,
        ).density
    cum = scipy.integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cum /= cum[-1]

    def cdf(x):
        return np.interp(x, grid, cum, left=0.0, right=1.0)

    return cdf


# ----------------------------------------------------------------------
# histograms and Kolmogorov distance
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def cdf(self, x):
        cum = np.concatenate([[0], np.cumsum(self.counts)]) / self.n
        return np.interp(x, self.bin_edges, cum, left=0.0, right=1.0)


def spectral_histogram(spec_data: SpectralData, q: int, epsilon: float, support_bound: float, bins: int = 200) -> SpectralHistogram:
    edge = 2.0 * math.sqrt(q) + abs(epsilon) * support_bound
    edges = np.linspace(-edge, edge, bins + 1)
    lo = min(edges[0], float(spec_data.eigenvalues[0]))
    hi = max(edges[-1], float(spec_data.eigenvalues[-1]))
    if lo < edges[0] or hi > edges[-1]:
        edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(spec_data.eigenvalues, bins=edges)
    return SpectralHistogram(bin_edges=edges, counts=counts)


def esd_compare(spec_data: SpectralData, reference_cdf) -> float:
    """Kolmogorov (sup) distance between the empirical CDF and a reference."""
    vals = spec_data.eigenvalues
    n = vals.size
    ref = np.asarray(reference_cdf(vals), dtype=np.float64)
    upper = np.arange(1, n + 1) / n
    lower = np.arange(0, n) / n
    return float(np.max(np.maximum(np.abs(ref - upper), np.abs(ref - lower))))


# ----------------------------------------------------------------------
# local-weak-limit moment matching
# ----------------------------------------------------------------------


def tree_return_moment(q: int, k: int, epsilon: float, pot_spec: PotentialSpec) -> float:
    """E[(H_tree)^k (o,o)] by exact enumeration of closed length-k walks.

    Walks move along tree edges (factor 1) or stay in place (factor
    eps * omega_site); the expectation attaches the exact distribution
    moments to per-site stay counts.  Subtree symmetry is quotiented out:
    stepping to an unexplored neighbor carries the count of equivalent
    fresh directions.
    """
    if k < 0:
        raise ConfigError("moment order must be nonnegative")
    if k > LLN_K_CAP:
        raise ConfigError(f"moment order {k} beyond the enumeration cap {LLN_K_CAP}")
    if k == 0:
        return 1.0

    moments = [pot_spec.moment(m) for m in range(k + 1)]
    # node records: parent id, explored child ids, stay count, depth
    parents = [-1]
    children: list[list[int]] = [[]]
    stays = [0]
    depths = [0]
    total = 0.0

    def walk(cur: int, steps: int, weight: float) -> None:
        nonlocal total
        if steps == 0:
            if cur == 0:
                contrib = weight
                for node, m in enumerate(stays):
                    if m:
                        contrib *= moments[m]
                        if contrib == 0.0:
                            return
                total += contrib
            return
        if depths[cur] > steps:
            return  # cannot make it back to the root
        if epsilon != 0.0:
            stays[cur] += 1
            walk(cur, steps - 1, weight * epsilon)
            stays[cur] -= 1
        if cur != 0:
            walk(parents[cur], steps - 1, weight)
        for ch in children[cur]:
            walk(ch, steps - 1, weight)
        fresh = (q + 1 if cur == 0 else q) - len(children[cur])
        if fresh > 0:
            node = len(parents)
            parents.append(cur)
            children.append([])
            stays.append(0)
            depths.append(depths[cur] + 1)
            children[cur].append(node)
            walk(node, steps - 1, weight * fresh)
            children[cur].pop()
            parents.pop()
            children.pop()
            stays.pop()
            depths.pop()

    walk(0, k, 1.0)
    return total


def graph_return_moment(graph, pot, k: int) -> float:
    """trace(H^k) / n via sparse powers; exact integers when eps = 0."""
    if k > LLN_K_CAP:
        raise ConfigError(f"moment order {k} beyond the cap {LLN_K_CAP}")
    if k == 0:
        return 1.0
    n = graph.n
    if pot.epsilon == 0.0:
        rows = np.concatenate([graph.edges[:, 0], graph.edges[:, 1]])
        cols = np.concatenate([graph.edges[:, 1], graph.edges[:, 0]])
        h = scipy.sparse.csr_matrix(
            (np.ones(rows.size, dtype=np.int64), (rows, cols)), shape=(n, n)
        )
    else:
        from .anderson import assemble

        h = assemble(graph, pot, fmt="csr")
    power = h.copy()
    for _ in range(k - 1):
        power = power @ h
    return float(power.diagonal().sum()) / n


@dataclass(frozen=True)
class MomentComparison:
    k: int
    graph_moment: float
    tree_moment: float

    @property
    def abs_diff(self) -> float:
        return abs(self.graph_moment - self.tree_moment)


def lln_moment_check(graph, pot, k_max: int) -> list[MomentComparison]:
    """Graph-vs-tree return moments for k = 1..k_max."""
    if k_max > LLN_K_CAP:
        raise ConfigError(f"k_max {k_max} beyond the cap {LLN_K_CAP}")
    out = []
    for k in range(1, k_max + 1):
        gm = graph_return_moment(graph, pot, k)
        tm = tree_return_moment(graph.q, k, pot.epsilon, pot.spec)
        out.append(MomentComparison(k=k, graph_moment=gm, tree_moment=tm))
    return out
