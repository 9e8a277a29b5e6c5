"""Hot numeric kernels: cavity tree sweeps and directed-edge message passing.

Two interchangeable backends live here.  The default compiles the inner loops
with numba's ``@njit``; setting the environment variable ``QELAB_NO_NUMBA=1``
before import selects a pure-numpy path instead.  Both backends evaluate the
same arithmetic in the same order on the same counter-based random streams,
so their outputs are bit-identical (covered by tests); only speed and memory
profile differ.  ``benchmarks/bench_kernels.py`` compares the two.

Conventions shared by every kernel:

* the spectral parameter is ``gamma = lam + 1j*eta`` with ``eta > 0``;
* a cavity value z satisfies ``Im z < 0``, ``|z| <= 1/eta`` and
  ``|Im z| >= eta / c_tilde**2``; kernels count violations of these bounds
  (with a 1e-12 relative slack for floating-point rounding) instead of
  raising, callers decide what to do with the counts;
* tree nodes are numbered in level order: root 0, then level k holding
  ``branches * q**(k-1)`` nodes; node ids feed the potential stream.

Violation counter layout (int64[4]): [sign, modulus-cap, imaginary-floor,
nodes-visited].
"""

from __future__ import annotations

import os

import numpy as np

from ._rng import (
    GOLDEN,
    OMEGA_STRIDE,
    POT_RESCALED_BETA,
    POT_TWO_POINT,
    POT_UNIFORM,
    draw_omega_vec,
    hash_u64_vec,
    uniform01_vec,
)

_FLAG = os.environ.get("QELAB_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG in {"1", "true", "yes", "on"}

if not NUMBA_DISABLED:
    # this box's TBB is too old for numba; omp avoids the fallback warning
    os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
    try:
        from numba import njit, prange

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"

_SLACK = 1e-12
_U = np.uint64


def crecip_scalar(z: complex) -> complex:
    """1/z via the explicit conjugate formula.

    numpy, LLVM and CPython disagree in the last bit of complex division;
    every backend routes through this one formula so results stay
    bit-identical.  Safe without Smith scaling: cavity denominators live in
    [eta, O(1/eta)].
    """
    den = z.real * z.real + z.imag * z.imag
    return complex(z.real / den, -z.imag / den)


def crecip_vec(z: np.ndarray) -> np.ndarray:
    zr = z.real
    zi = z.imag
    den = zr * zr + zi * zi
    out = np.empty_like(z)
    out.real = zr / den
    out.imag = -zi / den
    return out


def tree_node_count(q: int, depth: int, branches: int) -> int:
    """Number of nodes in a depth-``depth`` sweep with ``branches`` subtrees."""
    per_branch = (q**depth - 1) // (q - 1) if q > 1 else depth
    return 1 + branches * per_branch


def level_offsets(q: int, depth: int, branches: int) -> np.ndarray:
    """Level-order id of the first node in each level, index 1..depth."""
    off = np.zeros(depth + 1, dtype=np.int64)
    off[1] = 1
    for k in range(1, depth):
        off[k + 1] = off[k] + branches * q ** (k - 1)
    return off


# ======================================================================
# numba backend
# ======================================================================

if HAVE_NUMBA:

    @njit(cache=True, inline="always")
    def _mix64_nb(z):
        z = (z ^ (z >> _U(30))) * _U(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U(27))) * _U(0x94D049BB133111EB)
        return z ^ (z >> _U(31))

    @njit(cache=True, inline="always")
    def _hash_nb(key, ctr):
        return _mix64_nb(key + (ctr + _U(1)) * _U(GOLDEN))

    @njit(cache=True, inline="always")
    def _unif_nb(h):
        return (h >> _U(11)) * (2.0**-53)

    @njit(cache=True, inline="always")
    def _crecip_nb(z):
        den = z.real * z.real + z.imag * z.imag
        return complex(z.real / den, -z.imag / den)

    @njit(cache=True, inline="always")
    def _omega_nb(kind, bound, key, index):
        base = _U(index) * _U(OMEGA_STRIDE)
        u0 = _unif_nb(_hash_nb(key, base))
        if kind == POT_UNIFORM:
            return bound * (2.0 * u0 - 1.0)
        if kind == POT_TWO_POINT:
            return bound if u0 >= 0.5 else -bound
        u1 = _unif_nb(_hash_nb(key, base + _U(1)))
        u2 = _unif_nb(_hash_nb(key, base + _U(2)))
        med = min(max(min(u0, u1), u2), max(u0, u1))
        return bound * (2.0 * med - 1.0)

    @njit(cache=True, inline="always")
    def _emit_check_nb(value, check, abs_cap, im_floor, viol):
        viol[3] += 1
        if check:
            im = value.imag
            if im >= 0.0:
                viol[0] += 1
            if abs(value) > abs_cap * (1.0 + _SLACK):
                viol[1] += 1
            if -im < im_floor * (1.0 - _SLACK):
                viol[2] += 1

    @njit(cache=True)
    def _sweep_nb(
        q,
        depth,
        branches,
        eps,
        gamma,
        leaf_value,
        use_free_leaf,
        pot_kind,
        pot_a,
        key,
        spine_len,
        spine_branch,
        check,
        abs_cap,
        im_floor,
        out_branch,
        out_spine,
        viol,
    ):
        """Depth-first cavity sweep of a level-``depth`` tree ball.

        Memory is O(depth): only the active root-to-node path plus one
        accumulator per level is held.  The spine records the cavity values
        along the first ray of branch ``spine_branch``.  Returns the
        root-site potential.
        """
        omega_root = _omega_nb(pot_kind, pot_a, key, 0)
        offsets = np.zeros(depth + 1, dtype=np.int64)
        targets = np.zeros(depth + 1, dtype=np.int64)
        offsets[1] = 1
        targets[1] = spine_branch
        width = branches
        for k in range(1, depth):
            offsets[k + 1] = offsets[k] + width
            targets[k + 1] = targets[k] * q
            width *= q

        local = np.zeros(depth + 1, dtype=np.int64)
        done = np.zeros(depth + 1, dtype=np.int64)
        acc = np.zeros(depth + 1, dtype=np.complex128)
        om = np.zeros(depth + 1, dtype=np.float64)

        for b in range(branches):
            k = 1
            local[1] = b
            done[1] = 0
            acc[1] = 0.0j
            om[1] = _omega_nb(pot_kind, pot_a, key, offsets[1] + b)
            value = 0.0j
            while True:
                if k == depth:
                    if use_free_leaf:
                        value = leaf_value
                    else:
                        value = _crecip_nb(gamma - eps * om[k])
                    _emit_check_nb(value, check, abs_cap, im_floor, viol)
                    if spine_len >= k and local[k] == targets[k]:
                        out_spine[k - 1] = value
                    k -= 1
                    if k == 0:
                        break
                    acc[k] += value
                    done[k] += 1
                    continue
                if done[k] < q:
                    c = done[k]
                    child = local[k] * q + c
                    k += 1
                    local[k] = child
                    done[k] = 0
                    acc[k] = 0.0j
                    om[k] = _omega_nb(pot_kind, pot_a, key, offsets[k] + child)
                    continue
                value = _crecip_nb(gamma - eps * om[k] - acc[k])
                _emit_check_nb(value, check, abs_cap, im_floor, viol)
                if spine_len >= k and local[k] == targets[k]:
                    out_spine[k - 1] = value
                k -= 1
                if k == 0:
                    break
                acc[k] += value
                done[k] += 1
            out_branch[b] = value
        return omega_root

    @njit(cache=True, parallel=True)
    def _ray_batch_nb(
        q,
        depth,
        eps,
        gamma,
        leaf_value,
        use_free_leaf,
        pot_kind,
        pot_a,
        batch_key,
        r_max,
        spine_branch,
        check,
        abs_cap,
        im_floor,
        im_out,
        viol_out,
    ):
        samples = im_out.shape[0]
        branches = q + 1
        for m in prange(samples):
            key_m = _mix64_nb(_U(batch_key) + (_U(m) + _U(1)) * _U(GOLDEN))
            out_branch = np.empty(branches, dtype=np.complex128)
            out_spine = np.empty(max(r_max, 1), dtype=np.complex128)
            viol = np.zeros(4, dtype=np.int64)
            omega_root = _sweep_nb(
                q, depth, branches, eps, gamma, leaf_value, use_free_leaf,
                pot_kind, pot_a, key_m, r_max, spine_branch, check, abs_cap, im_floor,
                out_branch, out_spine, viol,
            )
            s = 0.0j
            for b in range(branches):
                s += out_branch[b]
            g = _crecip_nb(eps * omega_root - gamma + s)
            im_out[m, 0] = g.imag
            for r in range(1, r_max + 1):
                g = g * out_spine[r - 1]
                im_out[m, r] = g.imag
            for j in range(4):
                viol_out[m, j] = viol[j]

    @njit(cache=True, parallel=True)
    def _cavity_batch_nb(
        q,
        depth,
        eps,
        gamma,
        leaf_value,
        use_free_leaf,
        pot_kind,
        pot_a,
        batch_key,
        check,
        abs_cap,
        im_floor,
        zeta_out,
        viol_out,
    ):
        samples = zeta_out.shape[0]
        for m in prange(samples):
            key_m = _mix64_nb(_U(batch_key) + (_U(m) + _U(1)) * _U(GOLDEN))
            out_branch = np.empty(q, dtype=np.complex128)
            out_spine = np.empty(1, dtype=np.complex128)
            viol = np.zeros(4, dtype=np.int64)
            omega_root = _sweep_nb(
                q, depth, q, eps, gamma, leaf_value, use_free_leaf,
                pot_kind, pot_a, key_m, 0, 0, check, abs_cap, im_floor,
                out_branch, out_spine, viol,
            )
            s = 0.0j
            for b in range(q):
                s += out_branch[b]
            z = _crecip_nb(gamma - eps * omega_root - s)
            _emit_check_nb(z, check, abs_cap, im_floor, viol)
            zeta_out[m] = z
            for j in range(4):
                viol_out[m, j] = viol[j]

    @njit(cache=True)
    def _messages_advance_nb(
        indptr,
        nbrs,
        rev,
        omega,
        eps,
        gamma,
        msg_in,
        rounds,
        check,
        abs_cap,
        im_floor,
        viol,
    ):
        n_edges = nbrs.size
        n = indptr.size - 1
        msg = msg_in.copy()
        new = np.empty(n_edges, dtype=np.complex128)
        site_sum = np.empty(n, dtype=np.complex128)
        for _ in range(rounds):
            for v in range(n):
                s = 0.0j
                for e in range(indptr[v], indptr[v + 1]):
                    s += msg[e]
                site_sum[v] = s
            for e in range(n_edges):
                v = nbrs[e]
                new[e] = _crecip_nb(gamma - eps * omega[v] - (site_sum[v] - msg[rev[e]]))
                _emit_check_nb(new[e], check, abs_cap, im_floor, viol)
            msg, new = new, msg
        return msg

else:  # pure-numpy build: keep the names importable
    _sweep_nb = None
    _ray_batch_nb = None
    _cavity_batch_nb = None
    _messages_advance_nb = None


# ======================================================================
# numpy backend (vectorized level-by-level; different memory profile)
# ======================================================================


def _check_vec(values: np.ndarray, check: bool, abs_cap: float, im_floor: float, viol: np.ndarray) -> None:
    viol[3] += values.size
    if check:
        im = values.imag
        viol[0] += int(np.count_nonzero(im >= 0.0))
        viol[1] += int(np.count_nonzero(np.abs(values) > abs_cap * (1.0 + _SLACK)))
        viol[2] += int(np.count_nonzero(-im < im_floor * (1.0 - _SLACK)))


def segment_sums(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    """Per-segment sums in strict left-to-right order.

    Matches a scalar accumulation loop bit for bit, unlike np.add.reduceat,
    whose association differs.
    """
    n = indptr.size - 1
    deg = np.diff(indptr)
    out = np.zeros(n, dtype=values.dtype)
    for j in range(int(deg.max())):
        mask = deg > j
        out[mask] = out[mask] + values[indptr[:-1][mask] + j]
    return out


def _sweep_np(
    q,
    depth,
    branches,
    eps,
    gamma,
    leaf_value,
    use_free_leaf,
    pot_kind,
    pot_a,
    key,
    spine_len,
    spine_branch,
    check,
    abs_cap,
    im_floor,
    out_branch,
    out_spine,
    viol,
):
    """Level-ordered sweep, vectorized across each level.

    Matches ``_sweep_nb`` bit for bit: identical per-node arithmetic, child
    sums taken in child order, same potential stream.
    """
    offsets = level_offsets(q, depth, branches)
    targets = np.zeros(depth + 1, dtype=np.int64)
    targets[1] = spine_branch
    for k in range(1, depth):
        targets[k + 1] = targets[k] * q
    omega_root = float(draw_omega_vec(pot_kind, pot_a, key, np.zeros(1, dtype=np.int64))[0])

    n_leaf = branches * q ** (depth - 1)
    if use_free_leaf:
        values = np.full(n_leaf, leaf_value, dtype=np.complex128)
    else:
        ids = offsets[depth] + np.arange(n_leaf, dtype=np.int64)
        om = draw_omega_vec(pot_kind, pot_a, key, ids)
        values = crecip_vec(gamma - eps * om)
    _check_vec(values, check, abs_cap, im_floor, viol)
    if spine_len >= depth:
        out_spine[depth - 1] = values[targets[depth]]

    for k in range(depth - 1, 0, -1):
        n_k = branches * q ** (k - 1)
        ids = offsets[k] + np.arange(n_k, dtype=np.int64)
        om = draw_omega_vec(pot_kind, pot_a, key, ids)
        resh = values.reshape(n_k, q)
        child_sum = np.zeros(n_k, dtype=np.complex128)
        for j in range(q):
            child_sum = child_sum + resh[:, j]
        values = crecip_vec(gamma - eps * om - child_sum)
        _check_vec(values, check, abs_cap, im_floor, viol)
        if spine_len >= k:
            out_spine[k - 1] = values[targets[k]]
    out_branch[:] = values
    return omega_root


def _ray_batch_np(
    q,
    depth,
    eps,
    gamma,
    leaf_value,
    use_free_leaf,
    pot_kind,
    pot_a,
    batch_key,
    r_max,
    spine_branch,
    check,
    abs_cap,
    im_floor,
    im_out,
    viol_out,
):
    samples = im_out.shape[0]
    branches = q + 1
    keys = hash_u64_vec(batch_key, np.arange(samples, dtype=np.uint64))
    out_branch = np.empty(branches, dtype=np.complex128)
    out_spine = np.empty(max(r_max, 1), dtype=np.complex128)
    for m in range(samples):
        viol = np.zeros(4, dtype=np.int64)
        omega_root = _sweep_np(
            q, depth, branches, eps, gamma, leaf_value, use_free_leaf,
            pot_kind, pot_a, int(keys[m]), r_max, spine_branch, check, abs_cap, im_floor,
            out_branch, out_spine, viol,
        )
        s = 0.0j
        for b in range(branches):
            s += out_branch[b]
        g = crecip_scalar(eps * omega_root - gamma + s)
        im_out[m, 0] = g.imag
        for r in range(1, r_max + 1):
            g = g * out_spine[r - 1]
            im_out[m, r] = g.imag
        viol_out[m] = viol


def _cavity_batch_np(
    q,
    depth,
    eps,
    gamma,
    leaf_value,
    use_free_leaf,
    pot_kind,
    pot_a,
    batch_key,
    check,
    abs_cap,
    im_floor,
    zeta_out,
    viol_out,
):
    samples = zeta_out.shape[0]
    keys = hash_u64_vec(batch_key, np.arange(samples, dtype=np.uint64))
    out_branch = np.empty(q, dtype=np.complex128)
    out_spine = np.empty(1, dtype=np.complex128)
    for m in range(samples):
        viol = np.zeros(4, dtype=np.int64)
        omega_root = _sweep_np(
            q, depth, q, eps, gamma, leaf_value, use_free_leaf,
            pot_kind, pot_a, int(keys[m]), 0, 0, check, abs_cap, im_floor,
            out_branch, out_spine, viol,
        )
        s = 0.0j
        for b in range(q):
            s += out_branch[b]
        z = crecip_scalar(gamma - eps * omega_root - s)
        _check_vec(np.asarray([z]), check, abs_cap, im_floor, viol)
        zeta_out[m] = z
        viol_out[m] = viol


def _messages_advance_np(
    indptr,
    nbrs,
    rev,
    omega,
    eps,
    gamma,
    msg_in,
    rounds,
    check,
    abs_cap,
    im_floor,
    viol,
):
    site_pot = eps * omega[nbrs]
    msg = msg_in.copy()
    for _ in range(rounds):
        site_sum = segment_sums(msg, indptr)
        msg = crecip_vec(gamma - site_pot - (site_sum[nbrs] - msg[rev]))
        _check_vec(msg, check, abs_cap, im_floor, viol)
    return msg


def messages_init(nbrs, omega, eps, gamma, check, abs_cap, im_floor, viol):
    """Bare-site starting messages; shared by both backends."""
    msg = crecip_vec(gamma - eps * omega[nbrs])
    _check_vec(msg, check, abs_cap, im_floor, viol)
    return msg


# ======================================================================
# dispatch
# ======================================================================

IMPLEMENTATIONS = {
    "numpy": {
        "sweep": _sweep_np,
        "ray_batch": _ray_batch_np,
        "cavity_batch": _cavity_batch_np,
        "messages_advance": _messages_advance_np,
    },
}
if HAVE_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "sweep": _sweep_nb,
        "ray_batch": _ray_batch_nb,
        "cavity_batch": _cavity_batch_nb,
        "messages_advance": _messages_advance_nb,
    }


def cavity_sweep(*args, backend: str | None = None):
    return IMPLEMENTATIONS[backend or BACKEND]["sweep"](*args)


def ray_batch(*args, backend: str | None = None):
    impl = IMPLEMENTATIONS[backend or BACKEND]["ray_batch"]
    return impl(*args)


def cavity_batch(*args, backend: str | None = None):
    impl = IMPLEMENTATIONS[backend or BACKEND]["cavity_batch"]
    return impl(*args)


def messages_advance(indptr, nbrs, rev, omega, eps, gamma, msg, rounds, check, abs_cap, im_floor, viol, backend: str | None = None):
    impl = IMPLEMENTATIONS[backend or BACKEND]["messages_advance"]
    return impl(indptr, nbrs, rev, omega, eps, gamma, msg, rounds, check, abs_cap, im_floor, viol)
