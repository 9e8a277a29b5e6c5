"""Timing comparison of the numba and pure-numpy kernel backends.

Runs the two hot kernels (cavity tree sweeps batched over Monte-Carlo
samples, and directed-edge message passing) through both backends on
identical inputs, verifies the outputs agree bitwise, and prints a timing
table.  Run from the repository root:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from qelab import _kernels, anderson, graphs, tree_green


def _time(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_cavity_batch(q=2, depth=12, samples=400, eps=0.25):
    gamma = 0.5 + 0.2j
    spec = anderson.PotentialSpec()
    leaf = tree_green.free_forward_green_complex(gamma, q)
    nodes = tree_green.tree_work(q, depth, q) * samples

    def run(backend):
        zeta = np.empty(samples, dtype=np.complex128)
        viol = np.empty((samples, 4), dtype=np.int64)
        _kernels.cavity_batch(
            q, depth, eps, gamma, leaf, True, spec.kind_code, 1.0,
            np.uint64(42), True, 1.0 / gamma.imag, 1e-9, zeta, viol,
            backend=backend,
        )
        return zeta

    return "cavity sweep batch", f"q={q} L={depth} M={samples}", nodes, run


def bench_messages(n=2000, q=2, rounds=200, eps=0.25):
    g = graphs.generate_random_regular(n, q, seed=3)
    pot = anderson.sample_potential(n, anderson.PotentialSpec(), eps, seed=5)
    gamma = 0.3 + 0.2j
    indptr = g.directed_indptr()
    targets = g.directed_targets()
    rev = g.reverse_edge_index()
    updates = rounds * targets.size

    def run(backend):
        viol = np.zeros(4, dtype=np.int64)
        msg = _kernels.messages_init(targets, pot.omega, pot.epsilon, gamma,
                                     False, 5.0, 0.0, viol)
        return _kernels.messages_advance(
            indptr, targets, rev, pot.omega, pot.epsilon, gamma, msg, rounds,
            False, 5.0, 0.0, viol, backend=backend,
        )

    return "message passing", f"n={n} rounds={rounds}", updates, run


def main():
    if not _kernels.HAVE_NUMBA:
        print("numba backend unavailable (QELAB_NO_NUMBA set or import failed); "
              "timing numpy only")
    benches = [bench_cavity_batch(), bench_messages()]
    print(f"{'kernel':<22} {'size':<22} {'backend':<8} {'best (s)':>10} {'Mops/s':>9}")
    for name, size, ops, run in benches:
        results = {}
        backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
        for backend in backends:
            run(backend)  # warm up (jit compile, caches)
            dt, out = _time(lambda: run(backend))
            results[backend] = out
            print(f"{name:<22} {size:<22} {backend:<8} {dt:>10.4f} {ops / dt / 1e6:>9.1f}")
        if len(results) == 2:
            same = np.array_equal(results["numba"], results["numpy"])
            print(f"{'':<22} {'':<22} outputs bitwise equal: {same}")


if __name__ == "__main__":
    main()
