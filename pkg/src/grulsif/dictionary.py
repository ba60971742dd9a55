"""Coherence-based dictionary construction.

Each node first keeps the observations whose kernel correlation with every
already-kept point stays below ``mu0_node`` (scanning its reference sample, then
its test sample). The union of the node dictionaries, in node order, is then
filtered once more with the looser threshold ``mu0_graph`` under a single
bandwidth, the median of the per-node bandwidths.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernels import Dictionary, GaussianKernel, as_points, median_heuristic


@dataclass(frozen=True)
class DictionaryConfig:
    mu0_node: float = 0.1
    mu0_graph: float = 0.99

    def __post_init__(self):
        for name in ("mu0_node", "mu0_graph"):
            mu = getattr(self, name)
            if not 0.0 < mu < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {mu}")


def lower_median(values) -> float:
    """Median; for even counts, the lower of the two middle elements."""
    vals = np.sort(np.asarray(values, dtype=float).ravel())
    if vals.size == 0:
        raise ValueError("median of an empty set")
    return float(vals[(vals.size - 1) // 2])


def coherence_scan(points, sigma: float, mu0: float, seed_with_first: bool = True):
    """Greedy coherence filter; returns the indices of admitted rows.

    A point is admitted when its largest kernel value against the points
    admitted so far is ``<= mu0``. The first point is always admitted.
    """
    X = as_points(points)
    if X.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    inv = 1.0 / (2.0 * sigma ** 2)
    kept = [0]
    kept_pts = np.empty_like(X)
    kept_pts[0] = X[0]
    for i in range(1, X.shape[0]):
        d2 = np.sum((kept_pts[:len(kept)] - X[i]) ** 2, axis=1)
        if np.exp(-np.min(d2) * inv) <= mu0:
            kept_pts[len(kept)] = X[i]
            kept.append(i)
    return np.asarray(kept, dtype=np.int64)


def build_node_dictionary(X_v, Xp_v, sigma_v: float, mu0_node: float) -> np.ndarray:
    """Node-level dictionary: scan ``X_v`` then ``Xp_v`` starting from ``X_v[0]``.

    To scan the test sample first, pass the two samples in swapped order.
    """
    X_v = as_points(X_v)
    if X_v.shape[0] == 0:
        raise ValueError("node dictionary needs a non-empty reference sample")
    Xp_v = as_points(Xp_v) if len(Xp_v) else np.empty((0, X_v.shape[1]))
    Z = np.vstack([X_v, Xp_v])
    return Z[coherence_scan(Z, sigma_v, mu0_node)]


def build_global_dictionary(samples, cfg: DictionaryConfig = DictionaryConfig(),
                            reverse: bool = False):
    """Build the shared dictionary for a set of paired node samples.

    Parameters
    ----------
    samples : PairedNodeSamples
    cfg : DictionaryConfig
    reverse : bool
        Treat ``X'`` as the reference sample (bandwidths from ``X'_v``, scan
        ``X'_v`` first). Used for the second direction of the two-sample test.

    Returns
    -------
    dictionary : Dictionary
    node_sigmas : ndarray of shape (N,)
        Per-node median-heuristic bandwidths.
    """
    if reverse:
        samples = samples.swapped()
    node_dicts = []
    sigmas = np.empty(samples.n_nodes)
    for v in range(samples.n_nodes):
        X_v, Xp_v = samples.X[v], samples.Xp[v]
        if X_v.shape[0] < 2:
            raise ValueError(f"node {v} has fewer than 2 reference observations")
        sigmas[v] = median_heuristic(X_v)
        node_dicts.append(build_node_dictionary(X_v, Xp_v, sigmas[v], cfg.mu0_node))
    Z = np.vstack(node_dicts)
    sigma = lower_median(sigmas)
    centers = Z[coherence_scan(Z, sigma, cfg.mu0_graph)]
    return Dictionary(centers, GaussianKernel(sigma)), sigmas


def write_dictionary(dictionary: Dictionary, path) -> None:
    """CSV of centres (``center_index, dim_0..``) plus a ``.json`` sidecar with sigma."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["center_index"] + [f"dim_{j}" for j in range(dictionary.dim)])
        for i, c in enumerate(dictionary.centers):
            writer.writerow([i] + [repr(float(x)) for x in c])
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps({"sigma": dictionary.sigma, "size": dictionary.size}))


def read_dictionary(path) -> Dictionary:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Dictionary(rows[:, 1:], GaussianKernel(sidecar["sigma"]))
