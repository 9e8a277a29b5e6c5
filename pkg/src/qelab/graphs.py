"""Deterministic (q+1)-regular graph sequences.

Generation uses the pairing (configuration) model with whole-sample rejection
of self-loops and multi-edges, so every accepted graph is simple and exactly
regular.  All structural queries (distances, geodesics, injectivity radii,
expansion) are deterministic: neighbor lists are stored sorted ascending and
BFS ties resolve to the smallest neighbor id.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_key, numpy_generator
from .errors import ConfigError, GenerationError

UNREACHABLE = float("inf")


@dataclass(frozen=True)
class RegularGraph:
    """Simple (q+1)-regular undirected graph.

    Attributes
    ----------
    n : int
        Vertex count.
    q : int
        Branching number; every vertex has degree q+1.
    neighbors : ndarray, shape (n, q+1), int64
        Sorted neighbor ids per vertex.
    edges : ndarray, shape (E, 2), int64
        Undirected edges, each listed once with u < v, sorted.
    """

    n: int
    q: int
    neighbors: np.ndarray
    edges: np.ndarray
    _rev: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def degree(self) -> int:
        return self.q + 1

    def directed_edge_count(self) -> int:
        return self.n * (self.q + 1)

    def directed_indptr(self) -> np.ndarray:
        return np.arange(self.n + 1, dtype=np.int64) * (self.q + 1)

    def directed_targets(self) -> np.ndarray:
        """Flat target array; directed edge u->neighbors[u, j] has id u*(q+1)+j."""
        return self.neighbors.reshape(-1)

    def reverse_edge_index(self) -> np.ndarray:
        """For each directed edge (u -> v), the id of (v -> u)."""
        rev = object.__getattribute__(self, "_rev")
        if rev is None:
            deg = self.q + 1
            targets = self.directed_targets()
            srcs = np.repeat(np.arange(self.n, dtype=np.int64), deg)
            rev = np.empty(targets.size, dtype=np.int64)
            for e in range(targets.size):
                v = targets[e]
                u = srcs[e]
                j = int(np.searchsorted(self.neighbors[v], u))
                rev[e] = v * deg + j
            object.__setattr__(self, "_rev", rev)
        return rev


def _neighbors_from_edges(n: int, q: int, edges: np.ndarray) -> np.ndarray:
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        adj[int(u)].append(int(v))
        adj[int(v)].append(int(u))
    out = np.empty((n, q + 1), dtype=np.int64)
    for x in range(n):
        if len(adj[x]) != q + 1:
            raise ConfigError(f"vertex {x} has degree {len(adj[x])}, expected {q + 1}")
        out[x] = sorted(adj[x])
        if np.any(out[x][1:] == out[x][:-1]):
            raise ConfigError(f"vertex {x} carries a repeated neighbor")
        if x in out[x]:
            raise ConfigError(f"vertex {x} carries a self-loop")
    return out


def graph_from_edges(n: int, q: int, edges) -> RegularGraph:
    """Build and validate a RegularGraph from an undirected edge list."""
    arr = np.asarray(sorted((min(u, v), max(u, v)) for u, v in edges), dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise ConfigError("edge endpoint out of range")
    if len({(int(u), int(v)) for u, v in arr}) != len(arr):
        raise ConfigError("repeated edge in input")
    neighbors = _neighbors_from_edges(n, q, arr)
    return RegularGraph(n=n, q=q, neighbors=neighbors, edges=arr)


def generate_random_regular(n: int, q: int, seed: int, max_attempts: int = 1000) -> RegularGraph:
    """Sample a simple (q+1)-regular graph by rejection from the pairing model.

    The whole stub pairing is resampled whenever it produces a self-loop or a
    multi-edge, so accepted graphs are exact uniform pairing-model samples
    conditioned on simplicity.  Identical (n, q, seed) give identical graphs.
    """
    d = q + 1
    if q < 2:
        raise ConfigError("q must be at least 2")
    if n < q + 2:
        raise ConfigError(f"need n >= q + 2 = {q + 2} vertices")
    if (n * d) % 2 != 0:
        raise ConfigError(f"n*(q+1) = {n * d} is odd; no {d}-regular graph exists")
    rng = numpy_generator(derive_key(seed, "pairing", n, q))
    stubs_base = np.repeat(np.arange(n, dtype=np.int64), d)
    for attempt in range(1, max_attempts + 1):
        stubs = rng.permutation(stubs_base)
        a = stubs[0::2]
        b = stubs[1::2]
        if np.any(a == b):
            continue
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        keys = lo * n + hi
        if np.unique(keys).size != keys.size:
            continue
        order = np.argsort(keys, kind="stable")
        edges = np.stack([lo[order], hi[order]], axis=1)
        neighbors = _neighbors_from_edges(n, q, edges)
        return RegularGraph(n=n, q=q, neighbors=neighbors, edges=edges)
    raise GenerationError(
        f"pairing model produced no simple graph in {max_attempts} attempts "
        f"for n={n}, q={q}, seed={seed}",
        attempts=max_attempts,
    )


# ----------------------------------------------------------------------
# distances and geodesics
# ----------------------------------------------------------------------


def distance_and_geodesic(g: RegularGraph, x: int, y: int):
    """Graph distance and one geodesic, ties broken by smallest-neighbor BFS.

    Returns ``(d, path)`` with ``path[0] == x`` and ``path[-1] == y``.  An
    unreachable pair reports ``(UNREACHABLE, [])``.
    """
    if not (0 <= x < g.n and 0 <= y < g.n):
        raise ConfigError(f"vertex ids ({x}, {y}) out of range for n={g.n}")
    if x == y:
        return 0, [x]
    parent = np.full(g.n, -1, dtype=np.int64)
    parent[x] = x
    frontier = deque([x])
    while frontier:
        u = frontier.popleft()
        for v in g.neighbors[u]:
            v = int(v)
            if parent[v] < 0:
                parent[v] = u
                if v == y:
                    path = [y]
                    while path[-1] != x:
                        path.append(int(parent[path[-1]]))
                    path.reverse()
                    return len(path) - 1, path
                frontier.append(v)
    return UNREACHABLE, []


def distances_within(g: RegularGraph, x: int, radius: int) -> dict[int, int]:
    """Vertices within ``radius`` of x, mapped to their distance."""
    dist = {x: 0}
    frontier = deque([x])
    while frontier:
        u = frontier.popleft()
        du = dist[u]
        if du == radius:
            continue
        for v in g.neighbors[u]:
            v = int(v)
            if v not in dist:
                dist[v] = du + 1
                frontier.append(v)
    return dist


# ----------------------------------------------------------------------
# injectivity radius and (BST) statistic
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class InjectivityProfile:
    """Per-vertex injectivity radii plus the small-radius fraction statistic."""

    radii: np.ndarray  # int64, shape (n,)

    def histogram(self) -> dict[int, int]:
        values, counts = np.unique(self.radii, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def small_radius_fraction(self, r: int) -> float:
        """|{x : rho(x) < r}| / n, the quantity that must vanish for (BST)."""
        return float(np.count_nonzero(self.radii < r)) / self.radii.size


def _injectivity_radius_at(g: RegularGraph, x: int) -> int:
    # BFS from x; a non-tree edge (u, v) certifies a cycle inside the ball of
    # radius max(depth(u), depth(v)), and every cycle inside a ball is caught
    # this way, so rho(x) = (smallest certified radius) - 1.
    depth = np.full(g.n, -1, dtype=np.int64)
    parent = np.full(g.n, -1, dtype=np.int64)
    depth[x] = 0
    parent[x] = x
    best = g.n + 1
    frontier = deque([x])
    while frontier:
        u = frontier.popleft()
        du = int(depth[u])
        if du >= best:
            break  # candidates from deeper scans cannot improve
        for v in g.neighbors[u]:
            v = int(v)
            if v == parent[u]:
                continue
            if depth[v] >= 0:
                cand = max(du, int(depth[v]))
                if cand < best:
                    best = cand
            else:
                depth[v] = du + 1
                parent[v] = u
                frontier.append(v)
    if best > g.n:
        return int(depth.max())  # acyclic component; unreachable for regular graphs
    return best - 1


def injectivity_radius(g: RegularGraph) -> InjectivityProfile:
    """Largest rho per vertex with the induced ball B(x, rho) acyclic."""
    radii = np.empty(g.n, dtype=np.int64)
    for x in range(g.n):
        radii[x] = _injectivity_radius_at(g, x)
    return InjectivityProfile(radii=radii)


def girth(g: RegularGraph) -> int:
    """Length of a shortest cycle."""
    best = g.n + 1
    for x in range(g.n):
        depth = np.full(g.n, -1, dtype=np.int64)
        parent = np.full(g.n, -1, dtype=np.int64)
        depth[x] = 0
        parent[x] = x
        frontier = deque([x])
        while frontier:
            u = frontier.popleft()
            du = int(depth[u])
            if 2 * du + 1 >= best:
                break
            for v in g.neighbors[u]:
                v = int(v)
                if v == parent[u]:
                    continue
                if depth[v] >= 0:
                    cycle = du + int(depth[v]) + 1
                    if cycle < best:
                        best = cycle
                    continue
                depth[v] = du + 1
                parent[v] = u
                frontier.append(v)
    return best


# ----------------------------------------------------------------------
# expansion
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ExpansionReport:
    second_modulus: float
    beta: float
    connected: bool


def exp_check(g: RegularGraph, tol: float = 1e-8) -> ExpansionReport:
    """Spectral-gap check of the normalized adjacency (q+1)^-1 A.

    beta = 1 - max{|mu| : mu != top Perron eigenvalue}.  A disconnected graph
    has eigenvalue 1 with multiplicity > 1 and reports beta <= 0 with
    connected=False.
    """
    from .anderson import eigendecompose  # local import to avoid a cycle

    dense = np.zeros((g.n, g.n), dtype=np.float64)
    rows = np.repeat(np.arange(g.n), g.q + 1)
    dense[rows, g.neighbors.reshape(-1)] = 1.0 / (g.q + 1)
    spec = eigendecompose(dense)
    mu = spec.eigenvalues
    top_count = int(np.count_nonzero(mu > 1.0 - tol))
    connected = top_count == 1
    second = max(abs(float(mu[0])), abs(float(mu[-2])))
    beta = 1.0 - second
    if not connected:
        beta = min(beta, 0.0)
    return ExpansionReport(second_modulus=second, beta=beta, connected=connected)


# ----------------------------------------------------------------------
# file format
# ----------------------------------------------------------------------


def save_graph_json(g: RegularGraph, path) -> None:
    payload = {"n": g.n, "q": g.q, "edges": [[int(u), int(v)] for u, v in g.edges]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, separators=(",", ":"), sort_keys=True)
        f.write("\n")


def load_graph_json(path) -> RegularGraph:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    try:
        n = int(payload["n"])
        q = int(payload["q"])
        edges = payload["edges"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"graph file {path} is missing fields: {exc}") from exc
    for e in edges:
        if len(e) != 2 or not (0 <= e[0] < e[1] < n):
            raise ConfigError(f"graph file {path}: bad edge entry {e}")
    return graph_from_edges(n, q, edges)
