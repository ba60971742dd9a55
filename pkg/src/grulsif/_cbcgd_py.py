"""Pure-numpy cyclic block coordinate descent kernels.

Reference backend, and the fallback when the compiled extension is absent.
Signatures match :mod:`grulsif._cbcgd_ext` exactly.

Shared conventions: ``M[v] = ((1 - alpha) H_v + alpha H'_v) / N`` and
``h[v] = h'_v / N``; the graph is passed as CSR arrays of the symmetric
adjacency.
"""

import numpy as np


def objective(theta, M, h, indptr, indices, weights, degrees, lam, gamma):
    quad = 0.5 * np.einsum("vi,vij,vj->", theta, M, theta) - np.sum(h * theta)
    sq = np.sum(theta * theta, axis=1)
    cross = 0.0
    for v in range(theta.shape[0]):
        lo, hi = indptr[v], indptr[v + 1]
        if hi > lo:
            cross += theta[v] @ (weights[lo:hi] @ theta[indices[lo:hi]])
    return float(quad + 0.5 * lam * (np.dot(degrees + gamma, sq) - cross))


def cycle(theta, M, h, indptr, indices, weights, degrees, rates, lam, gamma):
    """One in-place sweep over nodes ``0..N-1``.

    Updating in place means neighbours ``u < v`` are already at the new cycle
    while ``u >= v`` still hold the previous one.
    """
    lg = lam * gamma
    for v in range(theta.shape[0]):
        lo, hi = indptr[v], indptr[v + 1]
        th = theta[v]
        grad = M[v] @ th - h[v] + lam * degrees[v] * th
        if hi > lo:
            grad -= lam * (weights[lo:hi] @ theta[indices[lo:hi]])
        theta[v] = (rates[v] * th - grad) / (rates[v] + lg)


def run(theta, M, h, indptr, indices, weights, degrees, rates, lam, gamma,
        tol, max_cycles, track):
    """Iterate :func:`cycle` until the relative change drops to ``tol``.

    Returns ``(cycles, converged, trace)``; ``trace`` holds the objective after
    each cycle when ``track`` is true, else it is empty.
    """
    trace = []
    prev = theta.copy()
    for i in range(1, max_cycles + 1):
        prev[...] = theta
        cycle(theta, M, h, indptr, indices, weights, degrees, rates, lam, gamma)
        if track:
            trace.append(objective(theta, M, h, indptr, indices, weights,
                                   degrees, lam, gamma))
        old = np.linalg.norm(prev)
        diff = np.linalg.norm(theta - prev)
        if old == 0.0:
            if np.linalg.norm(theta) == 0.0:
                return i, True, np.asarray(trace)
        elif diff <= tol * old:
            return i, True, np.asarray(trace)
    return max_cycles, False, np.asarray(trace)
