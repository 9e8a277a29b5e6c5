"""Finite-volume Anderson operator: potential sampling, assembly, spectrum.

The operator is H = A + eps * diag(omega) on a (q+1)-regular graph, with the
site potentials omega drawn i.i.d. from a compactly supported distribution.
Eigendecomposition is dense LAPACK (scipy.linalg.eigh) behind a dimension cap;
every decomposition is checked against residual and orthonormality bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from . import _rng
from .errors import BudgetError, ConfigError, InvariantError

DIMENSION_CAP = 4096
RESIDUAL_RTOL = 1e-8

_KIND_CODES = {
    "uniform": _rng.POT_UNIFORM,
    "rescaled-beta": _rng.POT_RESCALED_BETA,
    "two-point": _rng.POT_TWO_POINT,
}


@dataclass(frozen=True)
class PotentialSpec:
    """Distribution of a single site potential.

    ``uniform`` and ``rescaled-beta`` have bounded densities on
    [-support_bound, support_bound] and satisfy the continuity requirement;
    ``two-point`` (Bernoulli on {-A, +A}) does not and must be explicitly
    allowed with ``allow_atomic=True``.
    """

    kind: str = "uniform"
    support_bound: float = 1.0
    holder_exponent: float = 1.0
    holder_constant: float = 0.5
    allow_atomic: bool = False

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ConfigError(f"unknown potential kind {self.kind!r}")
        if not (self.support_bound > 0):
            raise ConfigError("support_bound must be positive")
        if not (0 < self.holder_exponent <= 1):
            raise ConfigError("holder_exponent must lie in (0, 1]")

    @property
    def kind_code(self) -> int:
        return _KIND_CODES[self.kind]

    @property
    def continuous(self) -> bool:
        return self.kind != "two-point"

    def second_moment(self) -> float:
        a2 = self.support_bound**2
        if self.kind == "uniform":
            return a2 / 3.0
        if self.kind == "rescaled-beta":
            return a2 / 5.0
        return a2

    def moment(self, k: int) -> float:
        """k-th moment of the site distribution (exact)."""
        if k % 2 == 1:
            return 0.0
        a_k = self.support_bound**k
        if self.kind == "uniform":
            return a_k / (k + 1.0)
        if self.kind == "rescaled-beta":
            return a_k * 3.0 / ((k + 1.0) * (k + 3.0))
        return a_k


@dataclass(frozen=True)
class PotentialAssignment:
    """Per-vertex disorder values and the coupling strength."""

    omega: np.ndarray
    epsilon: float
    spec: PotentialSpec = field(default_factory=PotentialSpec)

    def __post_init__(self):
        bound = self.spec.support_bound
        if np.any(np.abs(self.omega) > bound):
            raise InvariantError("potential value outside the declared support")


def sample_potential(n: int, spec: PotentialSpec, epsilon: float, seed: int) -> PotentialAssignment:
    """n i.i.d. draws via the counter-based stream keyed by (seed, vertex)."""
    if n < 1:
        raise ConfigError("need at least one vertex")
    if not spec.continuous and not spec.allow_atomic:
        raise ConfigError(
            "two-point potential violates the continuity requirement on the "
            "site distribution; pass allow_atomic=True to override"
        )
    key = _rng.derive_key(seed, "potential")
    omega = _rng.draw_omega_vec(
        spec.kind_code, spec.support_bound, key, np.arange(n, dtype=np.int64)
    )
    return PotentialAssignment(omega=omega, epsilon=float(epsilon), spec=spec)


def assemble(graph, pot: PotentialAssignment, fmt: str = "dense"):
    """H = A + eps * diag(omega) as a dense array or CSR matrix.

    ``graph`` needs only ``n`` and ``edges``; test fixtures may pass
    non-regular edge lists through a (n, edges) tuple.
    """
    if isinstance(graph, tuple):
        n, edges = graph
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    else:
        n, edges = graph.n, graph.edges
    if pot.omega.size != n:
        raise ConfigError(f"potential length {pot.omega.size} != vertex count {n}")
    diag = pot.epsilon * pot.omega
    if fmt == "dense":
        h = np.zeros((n, n), dtype=np.float64)
        h[edges[:, 0], edges[:, 1]] = 1.0
        h[edges[:, 1], edges[:, 0]] = 1.0
        h[np.arange(n), np.arange(n)] = diag
        return h
    if fmt == "csr":
        rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(n)])
        cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(n)])
        vals = np.concatenate([np.ones(2 * len(edges)), diag])
        return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    raise ConfigError(f"unknown assembly format {fmt!r}")


@dataclass(frozen=True)
class SpectralData:
    """Full eigendecomposition of a real symmetric operator.

    ``eigenvalues`` ascending; column i of ``eigenvectors`` pairs with
    eigenvalue i.  Vectors are real and orthonormal to 1e-8 entrywise, with
    a deterministic sign convention (first significant coordinate positive).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    def window_mask(self, lambda0: float) -> np.ndarray:
        """Strict open window (-lambda0, lambda0); endpoints excluded."""
        return (self.eigenvalues > -lambda0) & (self.eigenvalues < lambda0)


def eigendecompose(matrix, dimension_cap: int = DIMENSION_CAP) -> SpectralData:
    """Dense symmetric eigendecomposition with post-hoc invariant checks."""
    if scipy.sparse.issparse(matrix):
        matrix = matrix.toarray()
    h = np.asarray(matrix, dtype=np.float64)
    n = h.shape[0]
    if h.shape != (n, n):
        raise ConfigError("operator must be square")
    if n > dimension_cap:
        raise BudgetError(
            f"dimension {n} exceeds the dense-solver cap {dimension_cap}; "
            "lower the vertex count"
        )
    if not np.allclose(h, h.T, rtol=0.0, atol=1e-12):
        raise ConfigError("operator is not symmetric")
    vals, vecs = scipy.linalg.eigh(h)

    # deterministic sign: make the first coordinate of significant modulus positive
    for i in range(n):
        col = vecs[:, i]
        idx = np.argmax(np.abs(col) > 1e-8)
        if col[idx] < 0:
            vecs[:, i] = -col

    norm = float(np.max(np.abs(vals))) if n else 0.0
    scale = max(norm, 1.0)
    residual = h @ vecs - vecs * vals[np.newaxis, :]
    max_res = float(np.max(np.abs(residual))) if n else 0.0
    if max_res > RESIDUAL_RTOL * scale:
        raise InvariantError(f"eigen residual {max_res:.3e} exceeds {RESIDUAL_RTOL:.0e}*|H|")
    gram = vecs.T @ vecs
    gram_err = float(np.max(np.abs(gram - np.eye(n))))
    if gram_err > RESIDUAL_RTOL:
        raise InvariantError(f"eigenbasis deviates from orthonormal by {gram_err:.3e}")
    return SpectralData(eigenvalues=vals, eigenvectors=vecs)


def check_spectrum_bound(spec_data: SpectralData, q: int, epsilon: float, bound: float) -> None:
    """Operator-norm bound |lambda| <= (q+1) + |eps|*A, with rounding slack."""
    limit = (q + 1) + abs(epsilon) * bound
    top = float(np.max(np.abs(spec_data.eigenvalues)))
    if top > limit * (1 + 1e-12) + 1e-12:
        raise InvariantError(f"eigenvalue {top} outside [-{limit}, {limit}]")


def spectrum_rows(spec_data: SpectralData):
    """Rows for the optional spectrum dump CSV ("index,eigenvalue")."""
    return [(i, float(v)) for i, v in enumerate(spec_data.eigenvalues)]
