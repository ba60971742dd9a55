"""Graph-blind comparators sharing the two-sample harness.

* Pool: the graph estimator with every edge removed and ``lam = 1``; the
  dictionary and ``(sigma, gamma)`` are still shared by all nodes.
* RULSIF / ULSIF: independent per-node fits with node-specific centres and
  leave-one-out selection of ``(sigma, gamma)``. ULSIF is RULSIF with
  ``alpha = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dictionary import DictionaryConfig
from .estimator import (
    FitResult,
    Hyperparams,
    PairedNodeSamples,
    SolverConfig,
    fit,
)
from .graph import Graph, build_graph
from .kernels import Dictionary, GaussianKernel, as_points, median_heuristic
from .seeding import derive_seed, rng_for
from .two_sample import PERMUTATION_SOLVER, DirectionSetup, prepare_direction

BASELINE_KINDS = ("pool", "rulsif", "ulsif")
#: Centre cap of the reference RULSIF/ULSIF implementations.
MAX_CENTERS = 100
SIGMA_FACTORS = (0.6, 0.8, 1.0, 1.2, 1.4)
BASELINE_GAMMA_GRID = (1e-5, 1e-3, 0.1, 10.0)
POOL_LAMBDA = 1.0


# ---------------------------------------------------------------------------
# Pool
# ---------------------------------------------------------------------------

def pool_fit(samples: PairedNodeSamples, dictionary: Dictionary, gamma: float, alpha: float,
             solver: SolverConfig = SolverConfig(), n_nodes: Optional[int] = None) -> FitResult:
    """Graph estimator on the edgeless graph with ``lam = 1``."""
    g0 = build_graph([], n_nodes or samples.n_nodes)
    return fit(samples, dictionary, g0, Hyperparams(alpha, POOL_LAMBDA, gamma), solver)


def prepare_pool_direction(samples: PairedNodeSamples, g: Graph, alpha: float,
                           reverse: bool = False, dict_cfg: DictionaryConfig = DictionaryConfig(),
                           seed: int = 0, n_splits: int = 5, **kwargs) -> DirectionSetup:
    """Pool counterpart of :func:`~grulsif.two_sample.prepare_direction`."""
    return prepare_direction(samples, g.without_edges(), alpha, reverse, dict_cfg, seed,
                             n_splits, lambda_grid=(POOL_LAMBDA,), **kwargs)


# ---------------------------------------------------------------------------
# RULSIF / ULSIF
# ---------------------------------------------------------------------------

def choose_centers(Xp_v, seed: int = 0, max_centers: int = MAX_CENTERS) -> np.ndarray:
    """All test-sample points, or a seeded random subset of ``max_centers`` of them."""
    Xp_v = as_points(Xp_v)
    if Xp_v.shape[0] <= max_centers:
        return Xp_v.copy()
    idx = np.sort(rng_for(seed).choice(Xp_v.shape[0], max_centers, replace=False))
    return Xp_v[idx]


def _rulsif_solve(Phi, Phip, alpha, gamma):
    H = Phi.T @ Phi / Phi.shape[0]
    Hp = Phip.T @ Phip / Phip.shape[0]
    hp = Phip.mean(axis=0)
    A = (1 - alpha) * H + alpha * Hp + gamma * np.eye(H.shape[0])
    return np.linalg.solve(A, hp), (H, Hp, hp)


def rulsif_node_fit(X_v, Xp_v, alpha: float, sigma: float, gamma_reg: float,
                    centers=None, seed: int = 0):
    """Single-node closed form ``((1-alpha)H + alpha H' + gamma I)^-1 h'``.

    Returns ``(theta, centers)``.
    """
    if centers is None:
        centers = choose_centers(Xp_v, seed)
    k = GaussianKernel(sigma)
    theta, _ = _rulsif_solve(k.gram(X_v, centers), k.gram(Xp_v, centers), alpha, gamma_reg)
    return theta, centers


def rulsif_pe(theta, X_v, Xp_v, alpha, sigma, centers) -> float:
    k = GaussianKernel(sigma)
    f = k.gram(X_v, centers) @ theta
    fp = k.gram(Xp_v, centers) @ theta
    return float(np.mean(fp) - (1 - alpha) * np.mean(f ** 2) / 2 - alpha * np.mean(fp ** 2) / 2 - 0.5)


def _loo_loss(f_ref, f_test, alpha):
    return (1 - alpha) * f_ref ** 2 / 2 + alpha * f_test ** 2 / 2 - f_test


def loo_score_refit(Phi, Phip, alpha, gamma) -> float:
    """Leave-one-out held-out loss by explicit refits.

    Round ``i`` removes the ``i``-th observation of both samples
    (``i < min(n, n')``) and scores the refitted model on that pair.
    """
    n_min = min(Phi.shape[0], Phip.shape[0])
    scores = np.empty(n_min)
    for i in range(n_min):
        theta, _ = _rulsif_solve(np.delete(Phi, i, axis=0), np.delete(Phip, i, axis=0),
                                 alpha, gamma)
        scores[i] = _loo_loss(Phi[i] @ theta, Phip[i] @ theta, alpha)
    return float(scores.mean())


def loo_score_hat(Phi, Phip, alpha, gamma) -> float:
    """Same quantity as :func:`loo_score_refit` via a rank-two Woodbury update."""
    n, n_p = Phi.shape[0], Phip.shape[0]
    if min(n, n_p) < 2:
        raise ValueError("leave-one-out needs at least two observations per sample")
    n_min = min(n, n_p)
    L = Phi.shape[1]
    a = (1 - alpha) / (n - 1)
    b = alpha / (n_p - 1)
    B = a * Phi.T @ Phi + b * Phip.T @ Phip + gamma * np.eye(L)
    Binv = np.linalg.inv(B)
    U = np.stack([np.sqrt(a) * Phi[:n_min], np.sqrt(b) * Phip[:n_min]], axis=2)  # (n_min, L, 2)
    P = np.einsum("ij,njk->nik", Binv, U)
    K = np.eye(2) - np.einsum("nik,nil->nkl", U, P)
    r = (Phip.sum(axis=0) - Phip[:n_min]) / (n_p - 1)
    q = np.einsum("nik,ni->nk", P, r)
    s = np.linalg.solve(K, q[..., None])[..., 0]
    theta = r @ Binv.T + np.einsum("nik,nk->ni", P, s)
    f_ref = np.sum(Phi[:n_min] * theta, axis=1)
    f_test = np.sum(Phip[:n_min] * theta, axis=1)
    return float(np.mean(_loo_loss(f_ref, f_test, alpha)))


@dataclass
class BaselineSelection:
    sigma_star: float
    gamma_star: float
    table: dict = field(repr=False)


def baseline_hyperparameters(X_v, Xp_v, alpha: float, sigma_grid: Optional[Sequence] = None,
                             gamma_grid: Sequence = BASELINE_GAMMA_GRID, centers=None,
                             method: str = "hat") -> BaselineSelection:
    """Leave-one-out choice of ``(sigma, gamma)`` for one node.

    The default width grid is :data:`SIGMA_FACTORS` times the median heuristic
    of ``Xp_v``. Ties go to the smaller ``gamma``, then the earlier ``sigma``.
    """
    X_v, Xp_v = as_points(X_v), as_points(Xp_v)
    if Xp_v.shape[0] < 2 or X_v.shape[0] < 2:
        raise ValueError("baseline selection needs at least two observations per sample")
    if sigma_grid is None:
        med = median_heuristic(Xp_v)
        sigma_grid = [f * med for f in SIGMA_FACTORS]
    if centers is None:
        centers = choose_centers(Xp_v)
    score = {"hat": loo_score_hat, "refit": loo_score_refit}[method]
    table = {}
    for sigma in sigma_grid:
        k = GaussianKernel(sigma)
        Phi, Phip = k.gram(X_v, centers), k.gram(Xp_v, centers)
        for gamma in gamma_grid:
            table[(float(sigma), float(gamma))] = score(Phi, Phip, alpha, gamma)
    order = {s: i for i, s in enumerate(float(s) for s in sigma_grid)}
    s, g = min(table, key=lambda k: (table[k], k[1], order[k[0]]))
    return BaselineSelection(s, g, table)


@dataclass
class RulsifSetup:
    """Per-node RULSIF ingredients for one direction, frozen on the observed data."""

    centers: list
    sigmas: np.ndarray
    gammas: np.ndarray
    alpha: float
    reverse: bool = False

    def bind(self, Z: np.ndarray):
        feats = [GaussianKernel(s).gram(Z[v], c)
                 for v, (s, c) in enumerate(zip(self.sigmas, self.centers))]

        def statistic(ref_idx, test_idx):
            if self.reverse:
                ref_idx, test_idx = test_idx, ref_idx
            out = np.empty(len(feats))
            for v, F in enumerate(feats):
                theta, (H, Hp, hp) = _rulsif_solve(F[ref_idx], F[test_idx], self.alpha,
                                                   self.gammas[v])
                loss = (1 - self.alpha) * theta @ H @ theta / 2 \
                    + self.alpha * theta @ Hp @ theta / 2 - hp @ theta
                out[v] = -loss - 0.5
            return out, True

        return statistic

    def describe(self) -> dict:
        return {"alpha": self.alpha, "reverse": self.reverse,
                "sigma": [float(s) for s in self.sigmas],
                "gamma": [float(g) for g in self.gammas],
                "n_centers": [int(c.shape[0]) for c in self.centers]}


def prepare_rulsif_direction(samples: PairedNodeSamples, alpha: float, reverse: bool = False,
                             seed: int = 0, sigma_grid_factors: Sequence = SIGMA_FACTORS,
                             gamma_grid: Sequence = BASELINE_GAMMA_GRID) -> RulsifSetup:
    oriented = samples.swapped() if reverse else samples
    centers, sigmas, gammas = [], [], []
    for v in range(oriented.n_nodes):
        X_v, Xp_v = oriented.X[v], oriented.Xp[v]
        c = choose_centers(Xp_v, derive_seed(seed, v))
        med = median_heuristic(Xp_v)
        sel = baseline_hyperparameters(X_v, Xp_v, alpha, [f * med for f in sigma_grid_factors],
                                       gamma_grid, centers=c)
        centers.append(c)
        sigmas.append(sel.sigma_star)
        gammas.append(sel.gamma_star)
    return RulsifSetup(centers, np.array(sigmas), np.array(gammas), alpha, reverse)


def prepare_baseline(kind: str, samples: PairedNodeSamples, g: Graph, alpha: float,
                     reverse: bool, seed: int, dict_cfg: DictionaryConfig = DictionaryConfig(),
                     n_splits: int = 5, solver: SolverConfig = PERMUTATION_SOLVER):
    """Direction setup for ``kind`` in ``{"grulsif", "pool", "rulsif", "ulsif"}``."""
    if kind == "grulsif":
        return prepare_direction(samples, g, alpha, reverse, dict_cfg, seed, n_splits,
                                 solver=solver)
    if kind == "pool":
        return prepare_pool_direction(samples, g, alpha, reverse, dict_cfg, seed, n_splits,
                                      solver=solver)
    if kind == "rulsif":
        return prepare_rulsif_direction(samples, alpha, reverse, seed)
    if kind == "ulsif":
        return prepare_rulsif_direction(samples, 0.0, reverse, seed)
    raise ValueError(f"unknown method {kind!r}")
