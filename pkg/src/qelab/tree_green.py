"""Green-function engine for the Anderson model on the infinite regular tree.

Everything is built from the one-step cavity recursion

    z_parent = 1 / (gamma - eps*omega - sum of child cavity values),

the Schur diagonal formula, and the product factorization of off-diagonal
entries along tree geodesics.  Monte-Carlo expectations sample the recursion
on exact depth-L tree balls (work grows like q**L, guarded by a cap; at
eps = 0 the ball collapses to a single chain).  The same recursion run as
message passing on the directed edges of a finite graph yields the truncated
Green function of the universal-cover lift.

Leaf seeding: sweeps can start leaves at the bare site value 1/(gamma -
eps*omega), which is exact for materialized finite balls, or at the
zero-disorder fixed point ("free").  The estimators default to free
seeding: at moderate eta the per-level contraction is slow (about
1 - c*eta), so bare seeding would need depths far beyond the q**L work
cap, while free-seeded sweeps are stable under depth doubling already at
L of order 10 (see the benchmark and the stabilization tests).

Cavity values z always satisfy Im z < 0, |z| <= 1/eta and
|Im z| >= eta / c_tilde**2; sweeps count violations of these bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels, _rng
from .anderson import PotentialSpec
from .errors import BudgetError, ConfigError

DEFAULT_WORK_CAP = 1 << 24  # tree nodes per sweep
DEFAULT_MC_WORK_CAP = 1 << 33  # tree nodes per Monte-Carlo call
MAX_DEPTH = 400


@dataclass(frozen=True)
class SpectralParameter:
    """Energy lam plus imaginary smoothing eta; gamma = lam + i*eta.

    eta must be positive for every Green evaluation; eta == 0 is admitted
    only on the closed-form free paths (eps = 0 with free-value leaves).
    """

    lam: float
    eta: float

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError("eta must be nonnegative")

    @property
    def gamma(self) -> complex:
        return complex(self.lam, self.eta)


def _as_gamma(gamma) -> complex:
    if isinstance(gamma, SpectralParameter):
        return gamma.gamma
    return complex(gamma)


def c_tilde(q: int, epsilon: float, support_bound: float, lam: float, eta: float = 0.0) -> float:
    """Operator-norm constant in the deterministic lower bound eta/c_tilde**2."""
    return (q + 1) + abs(epsilon) * support_bound + abs(lam) + max(1.0, eta)


def imag_floor(q: int, epsilon: float, support_bound: float, lam: float, eta: float) -> float:
    return eta / c_tilde(q, epsilon, support_bound, lam, eta) ** 2


# ----------------------------------------------------------------------
# free (zero-disorder) values
# ----------------------------------------------------------------------


def free_forward_green(lam: float, q: int) -> complex:
    """Boundary value of the free cavity field inside the spectral band.

    Returns (lam - i*sqrt(4q - lam^2)) / (2q); defined for |lam| < 2*sqrt(q).
    """
    if abs(lam) >= 2.0 * math.sqrt(q):
        raise ConfigError(f"|lam| = {abs(lam)} is at or beyond the band edge 2*sqrt({q})")
    return complex(lam, -math.sqrt(4.0 * q - lam * lam)) / (2.0 * q)


def free_forward_green_complex(gamma, q: int) -> complex:
    """Root of q*z**2 - gamma*z + 1 = 0 with Im z < 0.

    Continuous in gamma for eta > 0 and converging to free_forward_green as
    eta drops to 0 inside the band (where it is evaluated directly).
    """
    g = _as_gamma(gamma)
    if g.imag == 0.0:
        return free_forward_green(g.real, q)
    s = np.sqrt(complex(g * g - 4.0 * q))
    r1 = (g + s) / (2.0 * q)
    r2 = (g - s) / (2.0 * q)
    return r1 if r1.imag < 0 else r2


def fixed_point_forward_green(gamma, q: int, tol: float = 1e-12, max_iter: int = 1_000_000) -> complex:
    """Iterate z <- 1/(gamma - q z) from the bare value to stationarity."""
    g = _as_gamma(gamma)
    if g.imag <= 0:
        raise ConfigError("fixed-point iteration needs eta > 0")
    z = 1.0 / g
    for _ in range(max_iter):
        z_next = 1.0 / (g - q * z)
        if abs(z_next - z) < tol:
            return z_next
        z = z_next
    raise BudgetError(f"cavity fixed point not stationary to {tol} in {max_iter} iterations")


# ----------------------------------------------------------------------
# exact tree-ball sweeps
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class TreeSweepResult:
    """One disorder realization swept over a depth-L tree ball.

    root_values[b] is the cavity value of branch b at the root; spine[k-1]
    is the cavity value at depth k along the first ray of branch 0.
    violations = [sign, modulus-cap, imaginary-floor, nodes-visited].
    """

    root_values: np.ndarray
    omega_root: float
    spine: np.ndarray
    violations: np.ndarray
    gamma: complex
    depth: int
    leaf_mode: str


def tree_work(q: int, depth: int, branches: int) -> int:
    return _kernels.tree_node_count(q, depth, branches)


def suggest_depth(
    q: int,
    eta: float,
    branches: int | None = None,
    work_cap: int = DEFAULT_WORK_CAP,
) -> int:
    """Depth heuristic ceil(8/eta) capped at 400 and at the work budget."""
    branches = q + 1 if branches is None else branches
    want = min(MAX_DEPTH, max(1, math.ceil(8.0 / max(eta, 1e-6))))
    depth = 1
    while depth < want and tree_work(q, depth + 1, branches) <= work_cap:
        depth += 1
    return depth


def _leaf_value(gamma: complex, q: int, leaf_mode: str) -> tuple[complex, bool]:
    if leaf_mode == "free":
        return free_forward_green_complex(gamma, q), True
    if leaf_mode == "bare":
        return 0.0j, False
    raise ConfigError(f"unknown leaf_mode {leaf_mode!r}; expected 'bare' or 'free'")


def _require_eta(gamma: complex, epsilon: float, leaf_mode: str) -> None:
    if gamma.imag > 0:
        return
    if gamma.imag == 0 and epsilon == 0.0 and leaf_mode == "free":
        return  # closed-form free path; recursion is stationary there
    raise ConfigError("eta must be strictly positive for Green evaluations")


def _zero_disorder_chain(q: int, depth: int, gamma: complex, leaf_mode: str):
    """Per-level cavity values when eps = 0 (all siblings coincide).

    Returns values[k], k = 1..depth indexed by values[k-1]; values[depth-1]
    is the leaf.  The arithmetic matches the full sweep bit for bit, so this
    is the sweep, just with the q**L duplication removed.
    """
    leaf, use_free = _leaf_value(gamma, q, leaf_mode)
    if use_free and gamma.imag == 0.0:
        # stationary by construction; keep the closed form exact
        return np.full(depth, leaf, dtype=np.complex128)
    values = np.empty(depth, dtype=np.complex128)
    v = leaf if use_free else _kernels.crecip_scalar(gamma)
    values[depth - 1] = v
    for k in range(depth - 1, 0, -1):
        acc = 0.0j
        for _ in range(q):
            acc += v
        v = _kernels.crecip_scalar(gamma - 0.0 - acc)
        values[k - 1] = v
    return values


def forward_recursion_tree(
    q: int,
    pot_spec: PotentialSpec,
    epsilon: float,
    gamma,
    depth: int,
    seed: int,
    leaf_mode: str = "bare",
    spine_len: int = 0,
    spine_branch: int = 0,
    branches: int | None = None,
    lambda0: float | None = None,
    check_bounds: bool = True,
    work_cap: int = DEFAULT_WORK_CAP,
    backend: str | None = None,
) -> TreeSweepResult:
    """Sample one disorder realization on the depth-L tree ball.

    The depth-first sweep draws site potentials lazily from the counter
    stream keyed by (seed); memory stays O(depth).  Work is the full node
    count of the ball (q**L growth) and is rejected beyond ``work_cap``;
    at eps = 0 the sweep collapses to a single chain and any depth is cheap.
    """
    g = _as_gamma(gamma)
    branches = q + 1 if branches is None else branches
    if depth < 1:
        raise ConfigError("depth must be at least 1")
    if depth > MAX_DEPTH:
        raise ConfigError(f"depth {depth} exceeds the cap {MAX_DEPTH}")
    if spine_len > depth:
        raise ConfigError("spine length cannot exceed the sweep depth")
    _require_eta(g, epsilon, leaf_mode)

    lam0 = abs(g.real) if lambda0 is None else lambda0
    floor = imag_floor(q, epsilon, pot_spec.support_bound, lam0, g.imag)
    abs_cap = 1.0 / g.imag if g.imag > 0 else np.inf
    key = _rng.derive_key(seed, "tree-sweep")

    if epsilon == 0.0:
        values = _zero_disorder_chain(q, depth, g, leaf_mode)
        viol = np.zeros(4, dtype=np.int64)
        _kernels._check_vec(values, check_bounds, abs_cap, floor, viol)
        omega_root = _rng.draw_omega_scalar(pot_spec.kind_code, pot_spec.support_bound, key, 0)
        return TreeSweepResult(
            root_values=np.full(branches, values[0], dtype=np.complex128),
            omega_root=omega_root,
            spine=values[:spine_len].copy(),
            violations=viol,
            gamma=g,
            depth=depth,
            leaf_mode=leaf_mode,
        )

    work = tree_work(q, depth, branches)
    if work > work_cap:
        raise BudgetError(
            f"tree sweep needs {work} node visits at depth {depth} (cap {work_cap}); "
            "lower the depth or the sample count"
        )
    leaf, use_free = _leaf_value(g, q, leaf_mode)
    out_branch = np.empty(branches, dtype=np.complex128)
    out_spine = np.empty(max(spine_len, 1), dtype=np.complex128)
    viol = np.zeros(4, dtype=np.int64)
    omega_root = _kernels.cavity_sweep(
        q, depth, branches, epsilon, g, leaf, use_free,
        pot_spec.kind_code, pot_spec.support_bound, np.uint64(key), spine_len,
        spine_branch, check_bounds, abs_cap, floor, out_branch, out_spine, viol,
        backend=backend,
    )
    return TreeSweepResult(
        root_values=out_branch,
        omega_root=float(omega_root),
        spine=out_spine[:spine_len],
        violations=viol,
        gamma=g,
        depth=depth,
        leaf_mode=leaf_mode,
    )


def green_diagonal(zeta_children, omega_root: float, epsilon: float, gamma) -> complex:
    """Schur diagonal: G(o,o) = 1 / (eps*omega - gamma + sum of cavity values)."""
    g = _as_gamma(gamma)
    acc = 0.0j
    for z in np.asarray(zeta_children, dtype=np.complex128):
        acc += z
    return _kernels.crecip_scalar(epsilon * omega_root - g + acc)


def green_along_path(g_diag: complex, zetas_on_path) -> complex:
    """Factorized off-diagonal: multiply cavity values along a tree geodesic."""
    out = complex(g_diag)
    for z in zetas_on_path:
        out *= z
    return out


# ----------------------------------------------------------------------
# Monte-Carlo expectations along a root ray
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class RayExpectation:
    """Sample means of Im G(root, y_r) for r = 0..r_max, with standard errors."""

    distances: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    samples: int
    violations: np.ndarray
    gamma: complex
    epsilon: float
    q: int
    depth: int
    leaf_mode: str


def _mean_stderr(columns: np.ndarray):
    means = columns.mean(axis=0)
    if columns.shape[0] > 1:
        stderrs = columns.std(axis=0, ddof=1) / math.sqrt(columns.shape[0])
    else:
        stderrs = np.zeros_like(means)
    return means, stderrs


def mc_expectation_im_green(
    q: int,
    pot_spec: PotentialSpec,
    epsilon: float,
    gamma,
    r_max: int,
    depth: int,
    samples: int,
    seed: int,
    leaf_mode: str = "free",
    ray_branch: int = 0,
    lambda0: float | None = None,
    check_bounds: bool = True,
    work_cap: int = DEFAULT_WORK_CAP,
    total_work_cap: int = DEFAULT_MC_WORK_CAP,
    backend: str | None = None,
) -> RayExpectation:
    """Monte-Carlo estimate of E[Im G(o, y_r)] along one ray of the tree.

    Each sample sweeps an independent depth-L ball (substream keyed by the
    sample index), takes the Schur diagonal and multiplies cavity values
    down the first ray.  Deterministic for fixed seed: fixed substreams,
    fixed summation order.
    """
    g = _as_gamma(gamma)
    if samples < 1:
        raise ConfigError("need at least one sample")
    if depth < r_max + 1:
        raise ConfigError(
            f"depth {depth} too shallow for distance {r_max}; need depth >= r_max + 1"
        )
    _require_eta(g, epsilon, leaf_mode)
    lam0 = abs(g.real) if lambda0 is None else lambda0
    floor = imag_floor(q, epsilon, pot_spec.support_bound, lam0, g.imag)
    abs_cap = 1.0 / g.imag if g.imag > 0 else np.inf

    if epsilon == 0.0:
        values = _zero_disorder_chain(q, depth, g, leaf_mode)
        viol = np.zeros(4, dtype=np.int64)
        _kernels._check_vec(values, check_bounds, abs_cap, floor, viol)
        green = green_diagonal(np.full(q + 1, values[0]), 0.0, 0.0, g)
        ims = np.empty(r_max + 1, dtype=np.float64)
        ims[0] = green.imag
        for r in range(1, r_max + 1):
            green = green * values[r - 1]
            ims[r] = green.imag
        return RayExpectation(
            distances=np.arange(r_max + 1),
            means=ims,
            stderrs=np.zeros(r_max + 1),
            samples=samples,
            violations=viol,
            gamma=g,
            epsilon=epsilon,
            q=q,
            depth=depth,
            leaf_mode=leaf_mode,
        )

    work = tree_work(q, depth, q + 1) * samples
    if work > total_work_cap:
        raise BudgetError(
            f"MC budget {work} node visits exceeds {total_work_cap}; "
            "lower depth or samples"
        )
    if tree_work(q, depth, q + 1) > work_cap:
        raise BudgetError(f"per-sweep work exceeds cap {work_cap}; lower the depth")
    leaf, use_free = _leaf_value(g, q, leaf_mode)
    batch_key = _rng.derive_key(seed, "mc-ray")
    im_out = np.empty((samples, r_max + 1), dtype=np.float64)
    viol_out = np.empty((samples, 4), dtype=np.int64)
    if not (0 <= ray_branch <= q):
        raise ConfigError("ray_branch must name one of the q+1 root branches")
    _kernels.ray_batch(
        q, depth, epsilon, g, leaf, use_free,
        pot_spec.kind_code, pot_spec.support_bound, np.uint64(batch_key),
        r_max, ray_branch, check_bounds, abs_cap, floor, im_out, viol_out,
        backend=backend,
    )
    means, stderrs = _mean_stderr(im_out)
    return RayExpectation(
        distances=np.arange(r_max + 1),
        means=means,
        stderrs=stderrs,
        samples=samples,
        violations=viol_out.sum(axis=0),
        gamma=g,
        epsilon=epsilon,
        q=q,
        depth=depth,
        leaf_mode=leaf_mode,
    )


@dataclass(frozen=True)
class DistanceRatioProfile:
    """E[Im G(o, y_r)] / E[Im G(o, o)] on a lambda grid at fixed eta.

    ratios[0] is identically one; rows r >= 1 are the distance-r profiles
    entering the averaged kernel bracket.  The profile depends only on
    (q, epsilon, eta, distribution), never on a graph or a potential seed.
    """

    lambdas: np.ndarray
    ratios: np.ndarray
    diag_means: np.ndarray
    diag_stderrs: np.ndarray
    eta: float
    epsilon: float
    q: int
    r_max: int
    samples: int
    depth: int
    leaf_mode: str

    def ratio_at(self, r: int, lam) -> np.ndarray:
        """Linear interpolation of the distance-r ratio curve."""
        return np.interp(lam, self.lambdas, self.ratios[r])


def distance_ratio_profile(
    q: int,
    pot_spec: PotentialSpec,
    epsilon: float,
    eta: float,
    r_max: int,
    lambdas,
    samples: int,
    seed: int,
    depth: int | None = None,
    leaf_mode: str = "free",
    check_bounds: bool = True,
    backend: str | None = None,
) -> DistanceRatioProfile:
    """Monte-Carlo distance profile over a lambda grid (one substream each)."""
    lambdas = np.asarray(sorted(float(x) for x in lambdas))
    if lambdas.size < 2:
        raise ConfigError("profile needs at least two lambda grid points")
    if depth is None:
        depth = suggest_depth(q, max(eta, 0.05))
        depth = max(depth, r_max + 1)
    ratios = np.empty((r_max + 1, lambdas.size))
    diag_means = np.empty(lambdas.size)
    diag_stderrs = np.empty(lambdas.size)
    lam_sup = float(np.max(np.abs(lambdas)))
    for i, lam in enumerate(lambdas):
        ray = mc_expectation_im_green(
            q, pot_spec, epsilon, complex(lam, eta), r_max, depth,
            samples, _rng.derive_key(seed, "profile", i),
            leaf_mode=leaf_mode, lambda0=lam_sup, check_bounds=check_bounds,
            backend=backend,
        )
        diag_means[i] = ray.means[0]
        diag_stderrs[i] = ray.stderrs[0]
        for r in range(r_max + 1):
            ratios[r, i] = ray.means[r] / ray.means[0]
    return DistanceRatioProfile(
        lambdas=lambdas,
        ratios=ratios,
        diag_means=diag_means,
        diag_stderrs=diag_stderrs,
        eta=eta,
        epsilon=epsilon,
        q=q,
        r_max=r_max,
        samples=samples,
        depth=depth,
        leaf_mode=leaf_mode,
    )


# ----------------------------------------------------------------------
# cavity-moment tables (condition checks)
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class MomentPoint:
    lam: float
    eta: float
    abs_mean: float
    abs_stderr: float
    square_mean: float
    square_stderr: float
    inverse: dict
    samples: int
    violations: np.ndarray


@dataclass(frozen=True)
class GreenMomentTable:
    """Per (lam, eta) grid point: E|Im z|, E (Im z)^2, E |Im z|^-s estimates."""

    points: list
    s_values: tuple
    epsilon: float
    q: int
    leaf_mode: str
    depth: int

    def csv_rows(self):
        rows = []
        for p in self.points:
            rows.append((p.lam, p.eta, "", p.abs_mean, p.abs_stderr, "abs_mean"))
            rows.append((p.lam, p.eta, "", p.square_mean, p.square_stderr, "square_mean"))
            for s in self.s_values:
                est, err = p.inverse[s]
                rows.append((p.lam, p.eta, s, est, err, "inverse_moment"))
        return rows

    def total_violations(self) -> np.ndarray:
        out = np.zeros(4, dtype=np.int64)
        for p in self.points:
            out += p.violations
        return out

    def bounds(self):
        """(inf over grid of abs_mean, sup over grid of square_mean)."""
        abs_means = [p.abs_mean for p in self.points]
        sq_means = [p.square_mean for p in self.points]
        return min(abs_means), max(sq_means)


def green_condition_moments(
    q: int,
    pot_spec: PotentialSpec,
    epsilon: float,
    lambda_grid,
    eta_grid,
    s_list,
    samples: int,
    seed: int,
    depth: int | None = None,
    leaf_mode: str = "free",
    check_bounds: bool = True,
    work_cap: int = DEFAULT_WORK_CAP,
    backend: str | None = None,
) -> GreenMomentTable:
    """Monte-Carlo moments of the root cavity field over a (lam, eta) grid.

    The inverse moments are clamped below at the deterministic floor
    eta/c_tilde**2 (a no-op in exact arithmetic) so they are finite by
    construction.  Grid points own independent substreams; at eps = 0 the
    field is deterministic and every sample coincides.
    """
    lambda_grid = [float(x) for x in lambda_grid]
    eta_grid = [float(x) for x in eta_grid]
    s_list = tuple(float(s) for s in s_list)
    if any(s <= 0 for s in s_list):
        raise ConfigError("inverse-moment exponents must be positive")
    lam_sup = max(abs(x) for x in lambda_grid)
    master = _rng.derive_key(seed, "green-moments")
    points = []
    point_idx = 0
    for lam in lambda_grid:
        for eta in eta_grid:
            g = complex(lam, eta)
            _require_eta(g, epsilon, leaf_mode)
            floor = imag_floor(q, epsilon, pot_spec.support_bound, lam_sup, eta)
            abs_cap = 1.0 / eta if eta > 0 else np.inf
            use_depth = suggest_depth(q, max(eta, 1e-6), branches=q, work_cap=work_cap) if depth is None else depth
            if epsilon == 0.0:
                # the field is deterministic: a point mass whose moments are
                # evaluated exactly rather than averaged over constant samples
                if leaf_mode == "free":
                    z = free_forward_green_complex(g, q)
                else:
                    chain = _zero_disorder_chain(q, use_depth, g, leaf_mode)
                    acc = 0.0j
                    for _ in range(q):
                        acc += chain[0]
                    z = _kernels.crecip_scalar(g - 0.0 - acc)
                viol = np.zeros(4, dtype=np.int64)
                _kernels._check_vec(np.asarray([z]), check_bounds, abs_cap, floor, viol)
                im_abs = abs(z.imag)
                clamped = max(im_abs, floor)
                inverse = {s: (clamped ** (-s), 0.0) for s in s_list}
                points.append(
                    MomentPoint(lam, eta, im_abs, 0.0,
                                z.imag * z.imag, 0.0, inverse, samples, viol)
                )
            else:
                if tree_work(q, use_depth, q) > work_cap:
                    raise BudgetError(f"per-sweep work exceeds cap {work_cap}; lower the depth")
                leaf, use_free = _leaf_value(g, q, leaf_mode)
                key = _rng.derive_key(master, point_idx)
                zeta_out = np.empty(samples, dtype=np.complex128)
                viol_out = np.empty((samples, 4), dtype=np.int64)
                _kernels.cavity_batch(
                    q, use_depth, epsilon, g, leaf, use_free,
                    pot_spec.kind_code, pot_spec.support_bound, np.uint64(key),
                    check_bounds, abs_cap, floor, zeta_out, viol_out,
                    backend=backend,
                )
                zeta_im = zeta_out.imag
                viol = viol_out.sum(axis=0)
                abs_vals = np.abs(zeta_im)
                sq_vals = zeta_im * zeta_im
                abs_mean, abs_err = _mean_stderr(abs_vals[:, None])
                sq_mean, sq_err = _mean_stderr(sq_vals[:, None])
                clamped = np.maximum(abs_vals, floor) if floor > 0 else abs_vals
                inverse = {}
                for s in s_list:
                    inv_vals = clamped ** (-s)
                    m, e = _mean_stderr(inv_vals[:, None])
                    inverse[s] = (float(m[0]), float(e[0]))
                points.append(
                    MomentPoint(lam, eta, float(abs_mean[0]), float(abs_err[0]),
                                float(sq_mean[0]), float(sq_err[0]), inverse, samples, viol)
                )
            point_idx += 1
    return GreenMomentTable(
        points=points,
        s_values=s_list,
        epsilon=epsilon,
        q=q,
        leaf_mode=leaf_mode,
        depth=depth if depth is not None else -1,
    )


# ----------------------------------------------------------------------
# lifted Green function on a finite graph (universal-cover truncation)
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class LiftedGreen:
    """Depth-L truncated Green values of the universal-cover lift."""

    diagonals: np.ndarray
    pair_values: np.ndarray
    violations: np.ndarray
    gamma: complex
    depth: int


def _directed_edge_ids(g, path) -> np.ndarray:
    deg = g.q + 1
    ids = np.empty(len(path) - 1, dtype=np.int64)
    for k in range(len(path) - 1):
        u, v = path[k], path[k + 1]
        j = int(np.searchsorted(g.neighbors[u], v))
        if j >= deg or g.neighbors[u][j] != v:
            raise ConfigError(f"path step ({u}, {v}) is not an edge")
        ids[k] = u * deg + j
    return ids


def lifted_green(
    graph,
    pot,
    gamma,
    depth: int,
    pairs,
    check_bounds: bool = False,
    lambda0: float | None = None,
    backend: str | None = None,
) -> LiftedGreen:
    """Green function of the lifted operator, truncated at cover depth L.

    Messages on directed edges reproduce the cavity recursion of the
    universal cover with the potential pulled back through the covering
    map.  The diagonal at x combines the q+1 branch messages of the
    depth-L ball around the lift of x; an off-diagonal pair multiplies the
    branch message of the ball at each step of its non-backtracking
    geodesic, taking the message one round earlier per step so that every
    factor is the cavity value of the same truncated ball.  The result
    equals dense inversion of the materialized ball operator exactly.
    """
    g = _as_gamma(gamma)
    if g.imag <= 0:
        raise ConfigError("eta must be strictly positive for the lifted Green function")
    if depth < 1:
        raise ConfigError("depth must be at least 1")
    max_steps = 0
    for path in pairs:
        if len(path) < 1:
            raise ConfigError("empty pair path")
        for k in range(len(path) - 2):
            if path[k] == path[k + 2]:
                raise ConfigError(f"path {path} backtracks at step {k}")
        max_steps = max(max_steps, len(path) - 1)
    if depth < max_steps:
        raise ConfigError(
            f"cover depth {depth} shorter than a requested geodesic ({max_steps} steps)"
        )
    lam0 = abs(g.real) if lambda0 is None else lambda0
    floor = imag_floor(graph.q, pot.epsilon, pot.spec.support_bound, lam0, g.imag)
    abs_cap = 1.0 / g.imag
    indptr = graph.directed_indptr()
    targets = graph.directed_targets()
    rev = graph.reverse_edge_index()
    viol = np.zeros(4, dtype=np.int64)

    # messages after r rounds are cavity values with r levels below their
    # target; the diagonal uses round depth-1, step k of a path round depth-k
    msg = _kernels.messages_init(targets, pot.omega, pot.epsilon, g, check_bounds, abs_cap, floor, viol)
    history: dict[int, np.ndarray] = {0: msg}
    keep_from = max(depth - max_steps, 0)
    lead = min(keep_from, depth - 1)
    if lead > 0:
        msg = _kernels.messages_advance(
            indptr, targets, rev, pot.omega, pot.epsilon, g, msg, lead,
            check_bounds, abs_cap, floor, viol, backend=backend,
        )
        history[lead] = msg
    for r in range(lead + 1, depth):
        msg = _kernels.messages_advance(
            indptr, targets, rev, pot.omega, pot.epsilon, g, msg, 1,
            check_bounds, abs_cap, floor, viol, backend=backend,
        )
        history[r] = msg

    site_sum = _kernels.segment_sums(msg, indptr)
    diagonals = _kernels.crecip_vec(pot.epsilon * pot.omega - g + site_sum)
    pair_values = np.empty(len(pairs), dtype=np.complex128)
    for i, path in enumerate(pairs):
        value = diagonals[path[0]]
        if len(path) > 1:
            edge_ids = _directed_edge_ids(graph, list(path))
            for k, e in enumerate(edge_ids, start=1):
                value *= history[depth - k][e]
        pair_values[i] = value
    return LiftedGreen(
        diagonals=diagonals,
        pair_values=pair_values,
        violations=viol,
        gamma=g,
        depth=depth,
    )


# ----------------------------------------------------------------------
# materialized small trees (oracle support and exact small-depth work)
# ----------------------------------------------------------------------


def materialized_tree_operator(
    q: int,
    depth: int,
    branches: int,
    epsilon: float,
    pot_spec: PotentialSpec,
    seed: int,
):
    """Dense operator of the depth-L tree ball with the sweep's potentials.

    Node ids are level-ordered exactly as in the sweeps, so dense inversion
    of (H - gamma) is directly comparable with recursion outputs.
    Returns (H, omegas, offsets).
    """
    n = _kernels.tree_node_count(q, depth, branches)
    if n > 20000:
        raise BudgetError(f"materialized tree would hold {n} nodes; lower the depth")
    offsets = _kernels.level_offsets(q, depth, branches)
    key = _rng.derive_key(seed, "tree-sweep")
    omegas = _rng.draw_omega_vec(
        pot_spec.kind_code, pot_spec.support_bound, key, np.arange(n, dtype=np.int64)
    )
    h = np.zeros((n, n), dtype=np.float64)
    h[np.arange(n), np.arange(n)] = epsilon * omegas
    for b in range(branches):
        child = offsets[1] + b
        h[0, child] = 1.0
        h[child, 0] = 1.0
    for k in range(1, depth):
        width = branches * q ** (k - 1)
        for m in range(width):
            parent = offsets[k] + m
            for c in range(q):
                child = offsets[k + 1] + m * q + c
                h[parent, child] = 1.0
                h[child, parent] = 1.0
    return h, omegas, offsets


def full_ball_green_row(
    q: int,
    depth: int,
    branches: int,
    epsilon: float,
    pot_spec: PotentialSpec,
    gamma,
    seed: int,
    leaf_mode: str = "bare",
):
    """Root row of the ball Green function via recursion/Schur/factorization.

    Retains every cavity value (level by level), so this is meant for small
    materialized balls; large sweeps should use forward_recursion_tree.
    Returns (row, omegas) with row[v] = G(root, v) for level-ordered v.
    """
    g = _as_gamma(gamma)
    _require_eta(g, epsilon, leaf_mode)
    n = _kernels.tree_node_count(q, depth, branches)
    if n > 200000:
        raise BudgetError(f"full-ball evaluation on {n} nodes; lower the depth")
    offsets = _kernels.level_offsets(q, depth, branches)
    key = _rng.derive_key(seed, "tree-sweep")
    omegas = _rng.draw_omega_vec(
        pot_spec.kind_code, pot_spec.support_bound, key, np.arange(n, dtype=np.int64)
    )
    leaf, use_free = _leaf_value(g, q, leaf_mode)

    values_by_level: list[np.ndarray] = [None] * (depth + 1)
    n_leaf = branches * q ** (depth - 1)
    if use_free:
        values = np.full(n_leaf, leaf, dtype=np.complex128)
    else:
        ids = offsets[depth] + np.arange(n_leaf)
        values = _kernels.crecip_vec(g - epsilon * omegas[ids])
    values_by_level[depth] = values
    for k in range(depth - 1, 0, -1):
        width = branches * q ** (k - 1)
        ids = offsets[k] + np.arange(width)
        child_sum = values.reshape(width, q).sum(axis=1)
        values = _kernels.crecip_vec(g - epsilon * omegas[ids] - child_sum)
        values_by_level[k] = values

    row = np.empty(n, dtype=np.complex128)
    diag = green_diagonal(values_by_level[1], float(omegas[0]), epsilon, g)
    row[0] = diag
    prev = diag * values_by_level[1]
    row[offsets[1] : offsets[1] + branches] = prev
    for k in range(2, depth + 1):
        width = branches * q ** (k - 2)
        parents = np.repeat(prev, q)
        prev = parents * values_by_level[k]
        row[offsets[k] : offsets[k] + width * q] = prev
    return row, omegas
