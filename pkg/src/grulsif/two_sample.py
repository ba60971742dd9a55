"""Collaborative permutation two-sample test over the nodes of a graph.

The per-node statistic is the sum of two Pearson-divergence estimates, one
with ``X`` as reference sample and one with the roles swapped. P-values come
from permuting whole observation vectors ``X[:, j]`` (all nodes' ``j``-th
observations together), which keeps any cross-node dependence intact.
Dictionaries and hyperparameters are chosen once, on the observed data, and
reused for every permutation; only the parameters are re-fitted.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dictionary import DictionaryConfig, build_global_dictionary
from .estimator import (
    Hyperparams,
    PairedNodeSamples,
    SolverConfig,
    fit_moments,
    moments_from_features,
    pe_divergences,
)
from .graph import Graph
from .kernels import Dictionary
from .model_selection import SelectionResult, default_grids, select_hyperparameters, with_grids
from .seeding import PERMUTATION, SELECTION, derive_seed, rng_for

PERMUTATION_SOLVER = SolverConfig(track_objective=False)


@dataclass(frozen=True)
class PermutationConfig:
    n_perm: int = 1000
    pi_star: float = 0.05
    seed: int = 0
    alpha: float = 0.1
    conservative: bool = False

    def __post_init__(self):
        if self.n_perm < 1:
            raise ValueError("n_perm must be >= 1")
        if not 0.0 < self.pi_star < 1.0:
            raise ValueError("pi_star must lie in (0, 1)")


@dataclass
class DirectionSetup:
    """Frozen ingredients for one direction of the statistic.

    ``reverse=False`` estimates the ratio with ``X`` as reference sample,
    ``reverse=True`` with ``X'`` as reference.    """

    dictionary: Dictionary
    hyperparams: Hyperparams
    graph: Graph
    reverse: bool = False
    solver: SolverConfig = PERMUTATION_SOLVER
    node_sigmas: Optional[np.ndarray] = field(default=None, repr=False)
    selection: Optional[SelectionResult] = field(default=None, repr=False)

    def bind(self, Z: np.ndarray):
        """Statistic evaluator over the pooled vectors ``Z`` of shape ``(N, n+n', d)``.

        Features are computed once here; the returned callable maps a split
        ``(ref_idx, test_idx)`` of the columns to the per-node divergence
        estimates of this direction.
        """
        N, m, d = Z.shape
        F = self.dictionary.features(Z.reshape(N * m, d)).reshape(N, m, -1)
        solver = self.solver

        def statistic(ref_idx, test_idx):
            if self.reverse:
                ref_idx, test_idx = test_idx, ref_idx
            moments = moments_from_features(F[:, ref_idx], F[:, test_idx])
            res = fit_moments(moments, self.dictionary, self.graph, self.hyperparams, solver)
            return pe_divergences(res.theta, moments, self.hyperparams.alpha), res.converged

        return statistic

    def describe(self) -> dict:
        hp = self.hyperparams
        return {"sigma": self.dictionary.sigma, "lambda": hp.lam, "gamma": hp.gamma,
                "alpha": hp.alpha, "n_centers": self.dictionary.size,
                "reverse": self.reverse}


@dataclass
class TestReport:
    stat: np.ndarray
    perm_stats: np.ndarray
    p_values: np.ndarray
    detected: frozenset
    pi_star: float
    method: str = "grulsif"
    setups: tuple = ()
    metadata: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def detected_at(self, pi_star: float) -> frozenset:
        return frozenset(int(v) for v in np.flatnonzero(self.p_values < pi_star))

    def rows(self, node_ids=None):
        ids = node_ids if node_ids is not None else range(len(self.stat))
        for v, node_id in enumerate(ids):
            yield {"node_id": node_id, "statistic": float(self.stat[v]),
                   "p_value": float(self.p_values[v]), "detected": v in self.detected}

    def to_dict(self, node_ids=None) -> dict:
        return {
            "method": self.method,
            "pi_star": self.pi_star,
            "nodes": list(self.rows(node_ids)),
            "setups": [s.describe() if hasattr(s, "describe") else s for s in self.setups],
            "metadata": self.metadata,
        }

    def write_json(self, path, node_ids=None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(node_ids), fh, indent=2, sort_keys=True)

    def write_csv(self, path, node_ids=None) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "node_id", "statistic", "p_value", "detected"])
            for row in self.rows(node_ids):
                writer.writerow([self.method, row["node_id"], repr(row["statistic"]),
                                 repr(row["p_value"]), str(row["detected"]).lower()])


def pooled_vectors(samples: PairedNodeSamples) -> np.ndarray:
    """Columns ``X[:, 0..n-1]`` followed by ``X'[:, 0..n'-1]`` as one ``(N, n+n', d)`` array."""
    X, Xp = samples.as_arrays()
    return np.concatenate([X, Xp], axis=1)


def graph_level_permutation(samples: PairedNodeSamples, tau) -> PairedNodeSamples:
    """Permute whole observation vectors by ``tau`` and split back into ``(X, X')``."""
    X, _ = samples.as_arrays()
    Z = pooled_vectors(samples)
    tau = np.asarray(tau)
    if sorted(tau.tolist()) != list(range(Z.shape[1])):
        raise ValueError("tau must be a permutation of range(n + n')")
    Zt = Z[:, tau]
    n = X.shape[1]
    return PairedNodeSamples(list(Zt[:, :n]), list(Zt[:, n:]))


def draw_permutation(seed: int, i: int, size: int) -> np.ndarray:
    """Replicate ``i``'s permutation; reproducible independently of the others."""
    return rng_for(seed, PERMUTATION, i).permutation(size)


def prepare_direction(samples: PairedNodeSamples, g: Graph, alpha: float, reverse: bool = False,
                      dict_cfg: DictionaryConfig = DictionaryConfig(), seed: int = 0,
                      n_splits: int = 5, sigma_grid=None, lambda_grid=None, gamma_grid=None,
                      hyperparams: Optional[Hyperparams] = None, sigma: Optional[float] = None,
                      selection_solver: SolverConfig = PERMUTATION_SOLVER,
                      solver: SolverConfig = PERMUTATION_SOLVER) -> DirectionSetup:
    """Build the dictionary and select hyperparameters for one direction.

    Passing both ``hyperparams`` and ``sigma`` skips the cross-validation.
    """
    dictionary, node_sigmas = build_global_dictionary(samples, dict_cfg, reverse=reverse)
    selection = None
    if hyperparams is None or sigma is None:
        oriented = samples.swapped() if reverse else samples
        cfg = default_grids(node_sigmas, g, n_splits=n_splits, seed=seed)
        cfg = with_grids(cfg, sigma_grid, lambda_grid, gamma_grid)
        selection = select_hyperparameters(oriented, dictionary, g, alpha, cfg, selection_solver)
        sigma = selection.sigma_star
        hyperparams = Hyperparams(alpha, selection.lambda_star, selection.gamma_star)
    return DirectionSetup(dictionary.with_sigma(sigma), hyperparams, g, reverse, solver,
                          node_sigmas, selection)


def symmetric_statistic(samples: PairedNodeSamples, d1, d2) -> np.ndarray:
    """Per-node ``PE(X, X') + PE(X', X)`` on the observed split."""
    Z = pooled_vectors(samples)
    n = samples.X[0].shape[0]
    ref, test = np.arange(n), np.arange(n, Z.shape[1])
    s1, _ = d1.bind(Z)(ref, test)
    s2, _ = d2.bind(Z)(ref, test)
    return s1 + s2


def p_values(stat, perm_stats, conservative: bool = False) -> np.ndarray:
    """Fraction of permutations whose statistic strictly exceeds the observed one.

    With ``conservative=True``: ``(1 + #{perm >= observed}) / (n_perm + 1)``.
    """
    stat = np.asarray(stat)
    perm_stats = np.atleast_2d(perm_stats)
    if conservative:
        return (1.0 + np.sum(perm_stats >= stat, axis=0)) / (perm_stats.shape[0] + 1)
    return np.mean(perm_stats > stat, axis=0)


def permutation_test(samples: PairedNodeSamples, g: Graph, cfg: PermutationConfig, d1, d2,
                     method: str = "grulsif") -> TestReport:
    """Permutation p-values for the symmetric statistic at every node.

    ``d1`` and ``d2`` are setups exposing ``bind(Z)`` (see :class:`DirectionSetup`);
    the baselines provide the same interface.
    """
    if samples.n_nodes != g.n_nodes:
        raise ValueError(f"samples cover {samples.n_nodes} nodes, graph has {g.n_nodes}")
    Z = pooled_vectors(samples)
    n = samples.X[0].shape[0]
    m = Z.shape[1]
    stat1, stat2 = d1.bind(Z), d2.bind(Z)

    def both(idx):
        a, ok_a = stat1(idx[:n], idx[n:])
        b, ok_b = stat2(idx[:n], idx[n:])
        return a + b, ok_a and ok_b

    observed, obs_ok = both(np.arange(m))
    perm_seed = derive_seed(cfg.seed, PERMUTATION)
    perm_stats = np.empty((cfg.n_perm, g.n_nodes))
    not_converged = 0
    for i in range(cfg.n_perm):
        perm_stats[i], ok = both(draw_permutation(perm_seed, i, m))
        not_converged += not ok
    valid = np.all(np.isfinite(perm_stats), axis=1)
    if not valid.any():
        raise RuntimeError("no valid permutation replicate")
    perm_stats = perm_stats[valid]
    pv = p_values(observed, perm_stats, cfg.conservative)
    detected = frozenset(int(v) for v in np.flatnonzero(pv < cfg.pi_star))
    meta = {
        "n_perm": cfg.n_perm,
        "n_valid_perm": int(valid.sum()),
        "seed": cfg.seed,
        "alpha": cfg.alpha,
        "conservative": cfg.conservative,
        "observed_fit_converged": bool(obs_ok),
        "non_converged_replicates": int(not_converged),
    }
    return TestReport(observed, perm_stats, pv, detected, cfg.pi_star, method, (d1, d2), meta)


def run_test(samples: PairedNodeSamples, g: Graph, cfg: PermutationConfig,
             dict_cfg: DictionaryConfig = DictionaryConfig(), n_splits: int = 5,
             **grid_overrides) -> TestReport:
    """Dictionaries, selection for both directions, then the permutation test."""
    sel_seed = derive_seed(cfg.seed, SELECTION)
    d1 = prepare_direction(samples, g, cfg.alpha, False, dict_cfg, derive_seed(sel_seed, 1),
                           n_splits, **grid_overrides)
    d2 = prepare_direction(samples, g, cfg.alpha, True, dict_cfg, derive_seed(sel_seed, 2),
                           n_splits, **grid_overrides)
    return permutation_test(samples, g, cfg, d1, d2)
