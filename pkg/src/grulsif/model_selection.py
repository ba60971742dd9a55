"""Cross-validated choice of kernel width and penalty constants.

For every ``(sigma, lam, gamma)`` in the grid the estimator is trained on
``R - 1`` folds of both samples and scored by the mean node loss on the
held-out fold; the triple with the lowest average held-out loss wins. The
dictionary centres stay fixed, only the kernel width changes with ``sigma``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .dictionary import lower_median
from .estimator import (
    Hyperparams,
    PairedNodeSamples,
    SolverConfig,
    fit_moments,
    moments_from_features,
    node_losses,
)
from .graph import Graph, average_degree
from .kernels import Dictionary
from .seeding import rng_for

GAMMA_GRID = (1e-5, 1e-3, 0.1, 1.0)
LAMBDA_FACTORS = (1e-3, 1e-2, 0.1, 1.0, 10.0)


@dataclass(frozen=True)
class SelectionConfig:
    sigma_grid: tuple
    lambda_grid: tuple
    gamma_grid: tuple
    n_splits: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_grid", "lambda_grid", "gamma_grid"):
            grid = tuple(float(x) for x in getattr(self, name))
            if not grid:
                raise ValueError(f"{name} must be non-empty")
            if any(not x > 0 for x in grid):
                raise ValueError(f"{name} values must be positive")
            object.__setattr__(self, name, grid)
        if self.n_splits < 2:
            raise ValueError("n_splits must be >= 2")


@dataclass
class SelectionResult:
    sigma_star: float
    lambda_star: float
    gamma_star: float
    cv_table: dict = field(repr=False)
    converged: dict = field(repr=False)

    @property
    def hyperparams_triple(self):
        return self.sigma_star, self.lambda_star, self.gamma_star

    def pe_table(self) -> dict:
        """Mean held-out Pearson-divergence estimate per grid point."""
        return {k: -loss - 0.5 for k, loss in self.cv_table.items()}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sigma", "lambda", "gamma", "mean_heldout_loss", "converged"])
            for (s, l, g), loss in sorted(self.cv_table.items()):
                writer.writerow([repr(s), repr(l), repr(g), repr(loss),
                                 str(self.converged[(s, l, g)]).lower()])


def _dedup(values) -> tuple:
    return tuple(sorted(set(float(v) for v in values)))


def default_grids(per_node_sigmas, g: Graph, n_splits: int = 5, seed: int = 0) -> SelectionConfig:
    """Grids built from per-node bandwidths and the average degree.

    ``sigma`` in ``{min, (min+med)/2, med, (max+med)/2, max}`` of the node
    bandwidths, ``gamma`` in :data:`GAMMA_GRID`, and ``lam`` in
    :data:`LAMBDA_FACTORS` divided by the average degree (by 1 if the graph has
    no edges).
    """
    sig = np.asarray(per_node_sigmas, dtype=float)
    if sig.size == 0:
        raise ValueError("per_node_sigmas is empty")
    lo, med, hi = float(sig.min()), lower_median(sig), float(sig.max())
    sigma_grid = _dedup([lo, (lo + med) / 2, med, (hi + med) / 2, hi])
    dbar = average_degree(g)
    scale = dbar if dbar > 0 else 1.0
    lambda_grid = tuple(f / scale for f in LAMBDA_FACTORS)
    return SelectionConfig(sigma_grid, lambda_grid, GAMMA_GRID, n_splits, seed)


def _fold_labels(n: int, R: int, rng: np.random.Generator) -> np.ndarray:
    """Shuffled assignment of ``n`` items to ``R`` near-equal folds."""
    labels = np.arange(n) % R
    return labels[rng.permutation(n)]


def fold_assignments(samples: PairedNodeSamples, R: int, seed: int):
    """Per-node fold labels for ``X`` and ``X'`` (independent shuffles per node)."""
    ref, test = [], []
    for v in range(samples.n_nodes):
        n, n_p = samples.X[v].shape[0], samples.Xp[v].shape[0]
        if n < R or n_p < R:
            raise ValueError(f"node {v} has fewer than {R} observations in a sample")
        ref.append(_fold_labels(n, R, rng_for(seed, v, 0)))
        test.append(_fold_labels(n_p, R, rng_for(seed, v, 1)))
    return ref, test


def paired_kfold_split(samples: PairedNodeSamples, R: int, seed: int):
    """``R`` (train, test) pairs of :class:`PairedNodeSamples`.

    Fold ``r`` holds out the ``r``-th part of both ``X_v`` and ``X'_v`` at every
    node.
    """
    ref, test = fold_assignments(samples, R, seed)
    splits = []
    for r in range(R):
        train = PairedNodeSamples(
            [x[lab != r] for x, lab in zip(samples.X, ref)],
            [x[lab != r] for x, lab in zip(samples.Xp, test)],
        )
        held = PairedNodeSamples(
            [x[lab == r] for x, lab in zip(samples.X, ref)],
            [x[lab == r] for x, lab in zip(samples.Xp, test)],
        )
        splits.append((train, held))
    return splits


def _sweep_order(grid, descending: bool):
    return tuple(sorted(grid, reverse=True)) if descending else grid


def _select(table: dict, conv: dict, cfg: SelectionConfig):
    order = {s: i for i, s in enumerate(cfg.sigma_grid)}
    candidates = [k for k in table if conv[k] and np.isfinite(table[k])]
    if not candidates:
        raise RuntimeError("no grid point produced a converged fit")
    # lowest loss; ties -> smaller gamma, smaller lambda, earlier sigma
    return min(candidates, key=lambda k: (table[k], k[2], k[1], order[k[0]]))


def select_hyperparameters(samples: PairedNodeSamples, dictionary: Dictionary, g: Graph,
                           alpha: float, cfg: SelectionConfig,
                           solver: SolverConfig = SolverConfig(track_objective=False),
                           warm_start: bool = True) -> SelectionResult:
    """Grid search with ``R``-fold cross-validation.

    Fits that hit ``max_cycles`` mark their grid point as non-converged; such
    points are excluded from the argmin. With ``warm_start`` each fold's fit
    starts from that fold's previous solution in the sweep (``gamma`` visited
    from large to small, where the solver is slowest).
    """
    R = cfg.n_splits
    ref_labels, test_labels = fold_assignments(samples, R, cfg.seed)
    table, conv = {}, {}
    for sigma in cfg.sigma_grid:
        d_sigma = dictionary.with_sigma(sigma)
        F = [d_sigma.features(x) for x in samples.X]
        Fp = [d_sigma.features(x) for x in samples.Xp]
        folds = []
        for r in range(R):
            train = moments_from_features(
                [f[lab != r] for f, lab in zip(F, ref_labels)],
                [f[lab != r] for f, lab in zip(Fp, test_labels)])
            held = moments_from_features(
                [f[lab == r] for f, lab in zip(F, ref_labels)],
                [f[lab == r] for f, lab in zip(Fp, test_labels)])
            folds.append((train, held))
        previous = [None] * R
        for lam in cfg.lambda_grid:
            for gamma in _sweep_order(cfg.gamma_grid, warm_start):
                hp = Hyperparams(alpha, lam, gamma)
                losses, ok = [], True
                for r, (train, held) in enumerate(folds):
                    res = fit_moments(train, d_sigma, g, hp, replace(solver, theta0=previous[r]))
                    if warm_start:
                        previous[r] = res.theta
                    ok &= res.converged
                    losses.append(float(np.mean(node_losses(res.theta, held, alpha))))
                table[(sigma, lam, gamma)] = float(np.mean(losses))
                conv[(sigma, lam, gamma)] = ok
    s, l, gm = _select(table, conv, cfg)
    return SelectionResult(s, l, gm, table, conv)


def with_grids(cfg: SelectionConfig, sigma_grid: Optional[Sequence] = None,
               lambda_grid: Optional[Sequence] = None,
               gamma_grid: Optional[Sequence] = None) -> SelectionConfig:
    """Copy of ``cfg`` with any of the grids replaced."""
    return SelectionConfig(
        tuple(sigma_grid) if sigma_grid is not None else cfg.sigma_grid,
        tuple(lambda_grid) if lambda_grid is not None else cfg.lambda_grid,
        tuple(gamma_grid) if gamma_grid is not None else cfg.gamma_grid,
        cfg.n_splits,
        cfg.seed,
    )
