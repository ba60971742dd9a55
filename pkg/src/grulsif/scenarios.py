"""Synthetic node data, detection metrics and the repeated-experiment driver.

Random streams: every (node, sample set) pair draws from its own PCG64 stream
seeded with ``SeedSequence([seed, DATA, node, s])`` where ``s = 0`` for ``X``
and ``s = 1`` for ``X'`` (``DATA`` from :mod:`grulsif.seeding`). Ports to other languages reproduce the distributions,
not the bit streams.

Scenario I (1-D). ``X_v ~ Normal(0, 1)`` everywhere; ``X'_v ~ Uniform(-1, 1)``
on cluster 0, ``Normal(1, 1)`` on cluster 1, ``Normal(0, 1)`` elsewhere. Note
that the uniform law matches the normal in mean only (its variance is 1/3).

Scenario II (2-D, four clusters, unit variances). Base laws per cluster have
cross-covariance -0.8, -0.8, 0.8 and 0 (the last also mean zero); two clusters
chosen at random get the perturbed law (cross-covariance 0.8, 0, 0, and mean
shift to (1, 1) respectively).
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .baselines import prepare_baseline
from .dictionary import DictionaryConfig
from .estimator import PairedNodeSamples
from .graph import Graph, sbm_generate
from .seeding import DATA, GRAPH, PERMUTATION, SCENARIO_CHOICE, SELECTION, derive_seed, rng_for
from .two_sample import PermutationConfig, permutation_test

SCENARIOS = ("I", "II", "null")
METHODS = ("grulsif", "pool", "rulsif", "ulsif")
TABLE_COLUMNS = ("experiment", "method", "n", "pi_star", "recall_mean", "recall_std",
                 "precision_mean", "precision_std", "f1_mean", "f1_std")

# Scenario II: (base cross-covariance, base mean) -> (perturbed cross-covariance, perturbed mean)
_SCENARIO_II_LAWS = (
    ((-0.8, (0.0, 0.0)), (0.8, (0.0, 0.0))),
    ((-0.8, (0.0, 0.0)), (0.0, (0.0, 0.0))),
    ((0.8, (0.0, 0.0)), (0.0, (0.0, 0.0))),
    ((0.0, (0.0, 0.0)), (0.0, (1.0, 1.0))),
)


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = "I"
    n: int = 50
    seed: int = 0
    cluster_sizes: tuple = (20, 20, 20, 20)
    p_in: float = 0.5
    p_out: float = 0.01
    #: Scenario II only; ``None`` draws two clusters at random per repetition.
    perturbed_clusters: Optional[tuple] = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.perturbed_clusters is not None:
            k = len(self.cluster_sizes)
            if any(not 0 <= c < k for c in self.perturbed_clusters):
                raise ValueError("perturbed cluster index not among the graph's clusters")


@dataclass(frozen=True)
class DetectionMetrics:
    recall: float
    precision: float
    f1: float
    true_set: frozenset = field(repr=False)
    predicted_set: frozenset = field(repr=False)


def _node_stream(seed, v, which):
    return rng_for(seed, DATA, v, which)


def _clusters(g: Graph, minimum: int):
    clusters = g.clusters()
    if len(clusters) < minimum:
        raise ValueError(f"scenario needs at least {minimum} clusters, graph has {len(clusters)}")
    return clusters


def generate_null(g: Graph, n: int, seed: int):
    """Every node draws both samples from ``Normal(0, 1)``; empty true set."""
    X = [_node_stream(seed, v, 0).standard_normal((n, 1)) for v in range(g.n_nodes)]
    Xp = [_node_stream(seed, v, 1).standard_normal((n, 1)) for v in range(g.n_nodes)]
    return PairedNodeSamples(X, Xp), frozenset()


def generate_scenario_I(g: Graph, n: int, seed: int):
    if g.cluster_of is None:
        raise ValueError("scenario I needs cluster labels on the graph")
    c1, c2 = _clusters(g, 2)[:2]
    X, Xp = [], []
    for v in range(g.n_nodes):
        X.append(_node_stream(seed, v, 0).standard_normal((n, 1)))
        rng = _node_stream(seed, v, 1)
        if v in c1:
            Xp.append(rng.uniform(-1.0, 1.0, (n, 1)))
        elif v in c2:
            Xp.append(rng.normal(1.0, 1.0, (n, 1)))
        else:
            Xp.append(rng.standard_normal((n, 1)))
    return PairedNodeSamples(X, Xp), frozenset(int(v) for v in np.concatenate([c1, c2]))


def _bivariate(rng, n, rho, mean):
    chol = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    return rng.standard_normal((n, 2)) @ chol.T + np.asarray(mean)


def scenario_II_clusters(seed: int) -> tuple:
    """The two perturbed cluster indices (drawn without replacement from 0..3)."""
    return tuple(sorted(int(c) for c in rng_for(seed, SCENARIO_CHOICE).choice(4, 2, replace=False)))


def generate_scenario_II(g: Graph, n: int, seed: int, selected: Optional[Sequence[int]] = None):
    if g.cluster_of is None:
        raise ValueError("scenario II needs cluster labels on the graph")
    clusters = g.clusters()
    if len(clusters) != 4:
        raise ValueError(f"scenario II needs exactly 4 clusters, graph has {len(clusters)}")
    selected = scenario_II_clusters(seed) if selected is None else tuple(selected)
    label_of = {int(v): c for c, members in enumerate(clusters) for v in members}
    X, Xp = [], []
    true = []
    for v in range(g.n_nodes):
        c = label_of[v]
        base, pert = _SCENARIO_II_LAWS[c]
        X.append(_bivariate(_node_stream(seed, v, 0), n, *base))
        law = pert if c in selected else base
        Xp.append(_bivariate(_node_stream(seed, v, 1), n, *law))
        if c in selected:
            true.append(v)
    return PairedNodeSamples(X, Xp), frozenset(true)


def generate(scenario: str, g: Graph, n: int, seed: int, perturbed_clusters=None):
    if scenario == "II":
        return generate_scenario_II(g, n, seed, perturbed_clusters)
    return {"I": generate_scenario_I, "null": generate_null}[scenario](g, n, seed)


def detection_metrics(true_set, predicted_set, n_nodes: Optional[int] = None) -> DetectionMetrics:
    """Recall, precision and F1 of ``predicted_set`` against ``true_set``.

    Empty prediction: precision is 1 if the true set is empty too, else 0.
    Empty true set: recall is 1.
    """
    C, Ch = frozenset(true_set), frozenset(predicted_set)
    if n_nodes is not None and any(not 0 <= v < n_nodes for v in C | Ch):
        raise ValueError("node index out of range")
    hits = len(C & Ch)
    recall = hits / len(C) if C else 1.0
    precision = hits / len(Ch) if Ch else (1.0 if not C else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return DetectionMetrics(recall, precision, f1, C, Ch)


def read_report_p_values(path) -> dict:
    """Per-method ``{node_id: p_value}`` from a report CSV.

    Accepts the report schema (``method,node_id,statistic,p_value,detected``);
    only ``method``, ``node_id`` and ``p_value`` are required, so p-value
    tables from external methods can be scored alongside ours.
    """
    out: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"method", "node_id", "p_value"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):
            try:
                node, pv = int(row["node_id"]), float(row["p_value"])
            except ValueError:
                raise ValueError(f"{path}: row {row_no}: bad node_id or p_value") from None
            if not 0.0 <= pv <= 1.0:
                raise ValueError(f"{path}: row {row_no}: p_value outside [0, 1]")
            out.setdefault(row["method"], {})[node] = pv
    return out


def score_p_values(p_values: dict, true_set, pi_levels=(0.01, 0.05),
                   n_nodes: Optional[int] = None) -> dict:
    """``{pi_star: DetectionMetrics}`` for a ``{node_id: p_value}`` table."""
    return {pi: detection_metrics(true_set, {v for v, p in p_values.items() if p < pi}, n_nodes)
            for pi in pi_levels}


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_repetition(spec: ScenarioSpec, method: str, rep: int, n_perm: int, alpha: float,
                   pi_levels: Sequence[float], dict_cfg: DictionaryConfig = DictionaryConfig()):
    """One generate -> select -> test -> score cycle.

    Returns ``{pi_star: DetectionMetrics}`` and the report's p-values.
    """
    g = sbm_generate(spec.cluster_sizes, spec.p_in, spec.p_out,
                     derive_seed(spec.seed, rep, GRAPH))
    samples, true_set = generate(spec.scenario, g, spec.n, derive_seed(spec.seed, rep, DATA),
                                 spec.perturbed_clusters)
    sel = derive_seed(spec.seed, rep, SELECTION)
    d1 = prepare_baseline(method, samples, g, alpha, False, derive_seed(sel, 1), dict_cfg)
    d2 = prepare_baseline(method, samples, g, alpha, True, derive_seed(sel, 2), dict_cfg)
    cfg = PermutationConfig(n_perm=n_perm, pi_star=max(pi_levels), alpha=alpha,
                            seed=derive_seed(spec.seed, rep, PERMUTATION))
    report = permutation_test(samples, g, cfg, d1, d2, method=method)
    metrics = {pi: detection_metrics(true_set, report.detected_at(pi), g.n_nodes)
               for pi in pi_levels}
    return metrics, report.p_values


def _run_repetition_args(args):
    return run_repetition(*args)


@dataclass
class ExperimentResult:
    spec: ScenarioSpec
    method: str
    pi_levels: tuple
    metrics: list  # one {pi: DetectionMetrics} per repetition
    p_values: list

    def f1(self, pi_star: float) -> np.ndarray:
        return np.array([m[pi_star].f1 for m in self.metrics])

    def rows(self):
        for pi in self.pi_levels:
            vals = {k: np.array([getattr(m[pi], k) for m in self.metrics])
                    for k in ("recall", "precision", "f1")}
            row = {"experiment": self.spec.scenario, "method": self.method, "n": self.spec.n,
                   "pi_star": pi}
            for k, arr in vals.items():
                row[f"{k}_mean"] = float(arr.mean())
                row[f"{k}_std"] = float(arr.std())
            yield row


def run_experiment(spec: ScenarioSpec, method: str = "grulsif", repetitions: int = 10,
                   n_perm: int = 200, alpha: float = 0.1, pi_levels=(0.01, 0.05),
                   dict_cfg: DictionaryConfig = DictionaryConfig(),
                   n_jobs: int = 1) -> ExperimentResult:
    """Repeat a scenario and collect per-repetition detection metrics.

    Repetition ``r`` derives its graph, data, selection and permutation seeds
    from ``(spec.seed, r)``, so results do not depend on ``n_jobs``.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    pi_levels = tuple(float(p) for p in pi_levels)
    jobs = [(spec, method, r, n_perm, alpha, pi_levels, dict_cfg) for r in range(repetitions)]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_run_repetition_args, jobs))
    else:
        results = [run_repetition(*job) for job in jobs]
    return ExperimentResult(spec, method, pi_levels, [m for m, _ in results],
                            [p for _, p in results])


def write_table(results: Sequence[ExperimentResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for res in results:
            for row in res.rows():
                writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                                 for k, v in row.items()})
