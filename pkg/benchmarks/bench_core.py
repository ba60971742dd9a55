"""Compare the compiled and numpy solver kernels on SBM-sized problems.

Usage: python3 benchmarks/bench_core.py [--cycles 500] [--repeat 5]
"""

import argparse
import time

import numpy as np

from grulsif._backend import available_backends, get_backend
from grulsif.graph import sbm_generate


def problem(n_clusters, L, seed=0):
    g = sbm_generate([20] * n_clusters, 0.5, 0.01, seed)
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((g.n_nodes, L, L))
    M = np.ascontiguousarray(A @ A.transpose(0, 2, 1) / L / g.n_nodes)
    h = rng.standard_normal((g.n_nodes, L)) / g.n_nodes
    lam, gamma = 0.1, 1e-3
    rates = np.linalg.eigvalsh(M)[:, -1] + lam * g.degrees
    return g, M, h, rates, lam, gamma


def time_run(kern, g, M, h, rates, lam, gamma, cycles, repeat):
    best = np.inf
    for _ in range(repeat):
        theta = np.zeros_like(h)
        t0 = time.perf_counter()
        kern.run(theta, M, h, g.indptr, g.indices, g.weights, g.degrees, rates, lam, gamma,
                 0.0, cycles, False)
        best = min(best, time.perf_counter() - t0)
    return best / cycles, theta


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cycles", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = available_backends()
    print(f"backends: {backends}")
    print(f"{'N':>5} {'L':>4} " + " ".join(f"{b + ' us/cycle':>18}" for b in backends)
          + f" {'speedup':>8} {'max |diff|':>11}")
    for n_clusters, L in [(2, 20), (4, 40), (4, 80), (8, 40)]:
        prob = problem(n_clusters, L)
        per, thetas = {}, {}
        for b in backends:
            per[b], thetas[b] = time_run(get_backend(b), *prob, args.cycles, args.repeat)
        line = f"{prob[0].n_nodes:>5} {L:>4} " + " ".join(f"{per[b] * 1e6:>18.1f}" for b in backends)
        if len(backends) == 2:
            diff = np.max(np.abs(thetas["cython"] - thetas["python"]))
            line += f" {per['python'] / per['cython']:>8.1f} {diff:>11.2e}"
        print(line)


if __name__ == "__main__":
    main()
