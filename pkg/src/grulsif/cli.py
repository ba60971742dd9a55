"""Command-line front end: ``grulsif {fit,select,test,experiment,simulate,score}``.

Every command reads flags from the command line and, optionally, a JSON
config file (``--config``). Config keys are flag names with underscores.
The groups ``grid`` (sigma, lambda, gamma), ``dictionary`` (mu0_node,
mu0_graph) and ``solver`` (tol, max_cycles, backend) may be nested, and a
section named after the command overrides top-level keys. Command-line flags win over the file.

Exit codes: 0 success, 1 usage error, 2 data validation error, 3 numerical
failure. Errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import _backend
from .baselines import prepare_baseline, prepare_pool_direction
from .dictionary import DictionaryConfig, build_global_dictionary, write_dictionary
from .estimator import Hyperparams, PairedNodeSamples, SolverConfig, fit, save_model
from .graph import read_edge_csv, sbm_generate, write_edge_csv
from .model_selection import default_grids, select_hyperparameters, with_grids
from .scenarios import (
    METHODS,
    SCENARIOS,
    ScenarioSpec,
    generate,
    read_report_p_values,
    run_experiment,
    score_p_values,
    write_table,
)
from .seeding import DATA, GRAPH, PERMUTATION, SELECTION, derive_seed
from .two_sample import PermutationConfig, permutation_test, prepare_direction

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
SAMPLE_SETS = ("ref", "test")
FULL_REPS, FULL_PERMS = 50, 1000
PERMS_BY_COMMAND = {"test": 1000, "experiment": 200}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# observation files
# ---------------------------------------------------------------------------

def ingest_observations(path, n_nodes=None, require_equal_counts: bool = False
                        ) -> PairedNodeSamples:
    """Read ``node_id,sample_set,dim_0..dim_{d-1}`` rows into paired samples.

    ``node_id`` is the integer graph node index; ``sample_set`` is ``ref``
    (the ``X`` sample) or ``test`` (``X'``). Row order within a node is kept.
    Errors name the offending file row (the header is row 1).
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["node_id", "sample_set"] or len(header) < 3:
            raise DataError(f"{path}: header must be node_id,sample_set,dim_0,...")
        d = len(header) - 2
        if header[2:] != [f"dim_{j}" for j in range(d)]:
            raise DataError(f"{path}: dimension columns must be dim_0..dim_{d - 1}")
        rows = {}
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise DataError(f"{path}: row {row_no} has {len(row) - 2} coordinates, "
                                f"expected {d}")
            try:
                v = int(row[0])
            except ValueError:
                raise DataError(f"{path}: row {row_no}: node_id {row[0]!r} is not an integer") \
                    from None
            if v < 0 or (n_nodes is not None and v >= n_nodes):
                raise DataError(f"{path}: row {row_no}: unknown node_id {v}")
            which = row[1].strip()
            if which not in SAMPLE_SETS:
                raise DataError(f"{path}: row {row_no}: sample_set must be ref or test, "
                                f"got {row[1]!r}")
            try:
                x = [float(t) for t in row[2:]]
            except ValueError as exc:
                raise DataError(f"{path}: row {row_no}: {exc}") from None
            rows.setdefault(v, {"ref": [], "test": []})[which].append(x)
    N = n_nodes if n_nodes is not None else (max(rows) + 1 if rows else 0)
    if N == 0:
        raise DataError(f"{path}: no observations")
    X, Xp = [], []
    for v in range(N):
        node = rows.get(v)
        if node is None or not node["ref"] or not node["test"]:
            raise DataError(f"{path}: node {v} needs at least one ref and one test row")
        X.append(np.array(node["ref"]))
        Xp.append(np.array(node["test"]))
    samples = PairedNodeSamples(X, Xp)
    if require_equal_counts and not samples.has_equal_counts():
        raise DataError(f"{path}: the test needs the same number of ref rows at every node "
                        "and the same number of test rows at every node")
    return samples


def export_observations(samples: PairedNodeSamples, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "sample_set"] + [f"dim_{j}" for j in range(samples.dim)])
        for v in range(samples.n_nodes):
            for which, data in (("ref", samples.X[v]), ("test", samples.Xp[v])):
                for x in data:
                    writer.writerow([v, which] + [repr(float(t)) for t in x])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

DEFAULTS = {
    "alpha": 0.1, "seed": 0, "tol": 1e-4, "max_cycles": None, "backend": None,
    "n_splits": 5, "mu0_node": 0.1, "mu0_graph": 0.99,
    "sigma_grid": None, "lambda_grid": None, "gamma_grid": None,
    "sigma": None, "lam": None, "gamma": None, "n_nodes": None,
    "method": "grulsif", "n_perm": None, "pi_star": 0.05, "conservative": False,
    "scenario": "I", "n": 50, "reps": 10, "full": False, "jobs": 1,
    "cluster_sizes": [20, 20, 20, 20], "p_in": 0.5, "p_out": 0.01,
    "report": None, "truth": None, "pi_levels": [0.01, 0.05],
}


# nested config groups -> flat keys
CONFIG_ALIASES = {
    "grid_sigma": "sigma_grid", "grid_lambda": "lambda_grid", "grid_gamma": "gamma_grid",
    "dictionary_mu0_node": "mu0_node", "dictionary_mu0_graph": "mu0_graph",
    "solver_tol": "tol", "solver_max_cycles": "max_cycles", "solver_backend": "backend",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}".replace("-", "_")
        if isinstance(v, dict):
            out.update(_flatten(v, key + "_"))
        else:
            out[CONFIG_ALIASES.get(key, key)] = v
    return out


def load_config(path, command: str) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: top level must be an object")
    section = raw.pop(command, {}) if isinstance(raw.get(command), dict) else {}
    for name in COMMAND_NAMES:
        if isinstance(raw.get(name), dict):
            raw.pop(name)
    merged = _flatten(raw)
    merged.update(_flatten(section))
    return merged


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="root seed (default 0)")
    p.add_argument("--alpha", type=float, help="relative ratio parameter in [0, 1) (default 0.1)")
    p.add_argument("--tol", type=float, help="solver relative-change tolerance (default 1e-4)")
    p.add_argument("--max-cycles", type=int, help="solver cycle cap (default 5000)")
    p.add_argument("--backend", choices=_backend.available_backends(),
                   help="solver kernel backend")


def _add_data(p):
    p.add_argument("--graph", help="edge list CSV (u,v[,weight])")
    p.add_argument("--observations", help="observations CSV (node_id,sample_set,dim_*)")
    p.add_argument("--n-nodes", type=int, help="node count if the graph has isolated trailing nodes")


def _add_selection(p):
    p.add_argument("--n-splits", type=int, help="cross-validation folds (default 5)")
    p.add_argument("--mu0-node", type=float, help="node coherence threshold (default 0.1)")
    p.add_argument("--mu0-graph", type=float, help="graph coherence threshold (default 0.99)")
    p.add_argument("--sigma-grid", type=float, nargs="+", help="override the width grid")
    p.add_argument("--lambda-grid", type=float, nargs="+", help="override the lambda grid")
    p.add_argument("--gamma-grid", type=float, nargs="+", help="override the gamma grid")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grulsif", description="Graph-regularized relative likelihood-ratio "
                     "estimation and node-level two-sample testing.")
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", argument_default=argparse.SUPPRESS,
                       help="select hyperparameters (unless given) and fit one model")
    _add_common(p)
    _add_data(p)
    _add_selection(p)
    p.add_argument("--sigma", type=float, help="kernel width; skips selection with --lam/--gamma")
    p.add_argument("--lam", type=float, help="graph penalty")
    p.add_argument("--gamma", type=float, help="ridge penalty")
    p.add_argument("--reverse", action="store_true", help="use the test sample as reference")

    p = sub.add_parser("select", argument_default=argparse.SUPPRESS,
                       help="cross-validated hyperparameter selection")
    _add_common(p)
    _add_data(p)
    _add_selection(p)
    p.add_argument("--reverse", action="store_true", help="use the test sample as reference")

    p = sub.add_parser("test", argument_default=argparse.SUPPRESS,
                       help="node-level permutation two-sample test")
    _add_common(p)
    _add_data(p)
    _add_selection(p)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--n-perm", type=int, help="permutations (default 1000)")
    p.add_argument("--pi-star", type=float, help="significance level (default 0.05)")
    p.add_argument("--conservative", action="store_true",
                   help="(1 + #{perm >= obs}) / (n_perm + 1) p-values")

    p = sub.add_parser("experiment", argument_default=argparse.SUPPRESS,
                       help="repeated synthetic experiment, aggregate table")
    _add_common(p)
    _add_selection(p)
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--n", type=int, help="observations per node and sample (default 50)")
    p.add_argument("--method", nargs="+", choices=METHODS)
    p.add_argument("--reps", type=int, help="repetitions (default 10)")
    p.add_argument("--n-perm", type=int, help="permutations per repetition (default 200)")
    p.add_argument("--full", action="store_true",
                   help=f"{FULL_REPS} repetitions with {FULL_PERMS} permutations")
    p.add_argument("--jobs", type=int, help="worker processes for repetitions (default 1)")
    p.add_argument("--cluster-sizes", type=int, nargs="+", help="SBM block sizes")
    p.add_argument("--p-in", type=float)
    p.add_argument("--p-out", type=float)

    p = sub.add_parser("simulate", argument_default=argparse.SUPPRESS,
                       help="write a synthetic graph and observation file")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--n", type=int)
    p.add_argument("--cluster-sizes", type=int, nargs="+")
    p.add_argument("--p-in", type=float)
    p.add_argument("--p-out", type=float)

    p = sub.add_parser("score", argument_default=argparse.SUPPRESS,
                       help="detection metrics of report CSVs against a truth file")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--report", nargs="+", help="report CSVs (any method, incl. external)")
    p.add_argument("--truth", help="JSON with a changed_nodes list (as written by simulate)")
    p.add_argument("--pi-levels", type=float, nargs="+", help="levels (default 0.01 0.05)")
    return parser


def resolve(argv) -> dict:
    args = build_parser().parse_args(argv)
    if args.command is None:
        raise UsageError(f"a command is required: {', '.join(COMMAND_NAMES)}")
    given = vars(args)
    cfg = dict(DEFAULTS)
    cfg["reverse"] = False
    if "config" in given:
        from_file = load_config(given["config"], args.command)
        unknown = set(from_file) - set(cfg) - {"graph", "observations", "out", "report", "truth"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(from_file)
    cfg.update(given)
    if cfg["n_perm"] is None:
        cfg["n_perm"] = PERMS_BY_COMMAND.get(args.command, 1)
    if isinstance(cfg.get("method"), str) and args.command == "experiment":
        cfg["method"] = [cfg["method"]]
    _validate(cfg)
    return cfg


def _validate(cfg):
    if not cfg.get("out"):
        raise UsageError("--out is required")
    if not 0.0 <= cfg["alpha"] < 1.0:
        raise UsageError("alpha must lie in [0, 1)")
    if cfg["tol"] <= 0:
        raise UsageError("tol must be positive")
    if cfg["max_cycles"] is not None and cfg["max_cycles"] < 1:
        raise UsageError("max_cycles must be >= 1")
    if not all(0.0 < pi < 1.0 for pi in [cfg["pi_star"], *cfg["pi_levels"]]):
        raise UsageError("significance levels must lie in (0, 1)")
    for key in ("n_perm", "reps", "n", "jobs"):
        if cfg[key] < 1:
            raise UsageError(f"{key} must be >= 1")
    if cfg["n_splits"] < 2:
        raise UsageError("n_splits must be >= 2")
    if cfg["command"] in ("fit", "select", "test"):
        for key in ("graph", "observations"):
            if not cfg.get(key):
                raise UsageError(f"--{key} is required")
            if not Path(cfg[key]).is_file():
                raise UsageError(f"{key} file not found: {cfg[key]}")
    if cfg["command"] == "score":
        if not cfg.get("report") or not cfg.get("truth"):
            raise UsageError("--report and --truth are required")
        for path in [*cfg["report"], cfg["truth"]]:
            if not Path(path).is_file():
                raise UsageError(f"file not found: {path}")
    out = Path(cfg["out"])
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path is not a directory: {out}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _version() -> str:
    try:
        return metadata.version("grulsif")
    except metadata.PackageNotFoundError:
        return "unknown"


def provenance(cfg: dict, **extra) -> dict:
    """Resolved configuration plus versions; enough to re-run the command."""
    return {
        "command": cfg["command"],
        "config": {k: v for k, v in sorted(cfg.items()) if k != "config"},
        "versions": {"grulsif": _version(), "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "solver_backend": cfg.get("backend") or _backend.BACKEND,
        **extra,
    }


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.generic, np.ndarray)):
        return x.tolist()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


def _load_inputs(cfg, require_equal_counts=False):
    """Graph and samples; without ``--n-nodes`` the node count is the larger of
    the two files' highest index + 1 (an edge list cannot show trailing
    isolated nodes)."""
    if cfg["n_nodes"] is not None:
        g = read_edge_csv(cfg["graph"], cfg["n_nodes"])
        return g, ingest_observations(cfg["observations"], g.n_nodes, require_equal_counts)
    g = read_edge_csv(cfg["graph"])
    samples = ingest_observations(cfg["observations"], None, require_equal_counts)
    if samples.n_nodes > g.n_nodes:
        g = read_edge_csv(cfg["graph"], samples.n_nodes)
    elif samples.n_nodes < g.n_nodes:
        raise DataError(f"{cfg['observations']}: no observations for nodes "
                        f"{samples.n_nodes}..{g.n_nodes - 1} of the graph")
    return g, samples


def _solver(cfg) -> SolverConfig:
    return SolverConfig(tol=cfg["tol"], max_cycles=cfg["max_cycles"], track_objective=False,
                        backend=cfg["backend"])


def _dict_cfg(cfg) -> DictionaryConfig:
    return DictionaryConfig(cfg["mu0_node"], cfg["mu0_graph"])


def _grids(cfg) -> dict:
    return {"sigma_grid": cfg["sigma_grid"], "lambda_grid": cfg["lambda_grid"],
            "gamma_grid": cfg["gamma_grid"]}


def _select(cfg, samples, g, out):
    """Dictionary plus cross-validation in the configured direction."""
    dictionary, node_sigmas = build_global_dictionary(samples, _dict_cfg(cfg), cfg["reverse"])
    oriented = samples.swapped() if cfg["reverse"] else samples
    seed = derive_seed(cfg["seed"], SELECTION)
    sel_cfg = with_grids(default_grids(node_sigmas, g, cfg["n_splits"], seed), **_grids(cfg))
    result = select_hyperparameters(oriented, dictionary, g, cfg["alpha"], sel_cfg, _solver(cfg))
    result.write_csv(out / "selection.csv")
    write_dictionary(dictionary, out / "dictionary.csv")
    return dictionary, oriented, result, seed


def cmd_select(cfg) -> dict:
    out = Path(cfg["out"])
    g, samples = _load_inputs(cfg)
    _, _, result, seed = _select(cfg, samples, g, out)
    selected = {"sigma": result.sigma_star, "lambda": result.lambda_star,
                "gamma": result.gamma_star}
    _write_json(out / "selected.json", selected)
    return provenance(cfg, seeds={"root": cfg["seed"], "selection": seed}, selected=selected)


def cmd_fit(cfg) -> dict:
    out = Path(cfg["out"])
    g, samples = _load_inputs(cfg)
    fixed = all(cfg[k] is not None for k in ("sigma", "lam", "gamma"))
    seeds = {"root": cfg["seed"]}
    if fixed:
        dictionary, _ = build_global_dictionary(samples, _dict_cfg(cfg), cfg["reverse"])
        oriented = samples.swapped() if cfg["reverse"] else samples
        sigma, hp = cfg["sigma"], Hyperparams(cfg["alpha"], cfg["lam"], cfg["gamma"])
        write_dictionary(dictionary, out / "dictionary.csv")
    else:
        dictionary, oriented, result, seeds["selection"] = _select(cfg, samples, g, out)
        sigma = result.sigma_star
        hp = Hyperparams(cfg["alpha"], result.lambda_star, result.gamma_star)
    res = fit(oriented, dictionary.with_sigma(sigma), g, hp, _solver(cfg))
    save_model(res.model, out / "model")
    if not res.converged:
        raise FloatingPointError(f"solver did not converge within {res.cycles} cycles")
    fitted = {"sigma": sigma, "lambda": hp.lam, "gamma": hp.gamma, "cycles": res.cycles,
              "converged": res.converged}
    return provenance(cfg, seeds=seeds, fitted=fitted)


def cmd_test(cfg) -> dict:
    out = Path(cfg["out"])
    g, samples = _load_inputs(cfg, require_equal_counts=True)
    alpha, method = cfg["alpha"], cfg["method"]
    sel = derive_seed(cfg["seed"], SELECTION)
    setups = []
    for reverse, key in ((False, 1), (True, 2)):
        seed = derive_seed(sel, key)
        common = dict(dict_cfg=_dict_cfg(cfg), seed=seed, n_splits=cfg["n_splits"])
        if method == "grulsif":
            d = prepare_direction(samples, g, alpha, reverse, selection_solver=_solver(cfg),
                                  solver=_solver(cfg), **common, **_grids(cfg))
        elif method == "pool":
            grids = {k: v for k, v in _grids(cfg).items() if k != "lambda_grid"}
            d = prepare_pool_direction(samples, g, alpha, reverse, selection_solver=_solver(cfg),
                                       solver=_solver(cfg), **common, **grids)
        else:
            d = prepare_baseline(method, samples, g, alpha, reverse, seed, _dict_cfg(cfg))
        setups.append(d)
    pcfg = PermutationConfig(cfg["n_perm"], cfg["pi_star"], cfg["seed"], alpha,
                             cfg["conservative"])
    report = permutation_test(samples, g, pcfg, *setups, method=method)
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    return provenance(cfg, seeds={"root": cfg["seed"], "selection": sel,
                                  "selection_directions": [derive_seed(sel, 1),
                                                           derive_seed(sel, 2)],
                                  "permutation": derive_seed(cfg["seed"], PERMUTATION)},
                      detected=sorted(report.detected))


def cmd_experiment(cfg) -> dict:
    out = Path(cfg["out"])
    reps, n_perm = cfg["reps"], cfg["n_perm"]
    if cfg["full"]:
        reps, n_perm = FULL_REPS, FULL_PERMS
    spec = ScenarioSpec(cfg["scenario"], cfg["n"], cfg["seed"], tuple(cfg["cluster_sizes"]),
                        cfg["p_in"], cfg["p_out"])
    results = [run_experiment(spec, m, reps, n_perm, cfg["alpha"], dict_cfg=_dict_cfg(cfg),
                              n_jobs=cfg["jobs"]) for m in cfg["method"]]
    write_table(results, out / "table.csv")
    return provenance(cfg, scenario=asdict(spec), repetitions=reps, n_perm=n_perm)


def cmd_simulate(cfg) -> dict:
    out = Path(cfg["out"])
    g = sbm_generate(cfg["cluster_sizes"], cfg["p_in"], cfg["p_out"],
                     derive_seed(cfg["seed"], GRAPH))
    samples, true_set = generate(cfg["scenario"], g, cfg["n"], derive_seed(cfg["seed"], DATA))
    write_edge_csv(g, out / "graph.csv")
    export_observations(samples, out / "observations.csv")
    _write_json(out / "truth.json", {"changed_nodes": sorted(true_set),
                                     "cluster_of": g.cluster_of.tolist()})
    return provenance(cfg, n_nodes=g.n_nodes)


def cmd_score(cfg) -> dict:
    out = Path(cfg["out"])
    try:
        truth = json.loads(Path(cfg["truth"]).read_text())
        true_set = {int(v) for v in truth["changed_nodes"]}
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{cfg['truth']}: expected a changed_nodes list ({exc})") from None
    with open(out / "scores.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["report", "method", "pi_star", "recall", "precision", "f1"])
        for path in cfg["report"]:
            for method, table in read_report_p_values(path).items():
                scores = score_p_values(table, true_set, cfg["pi_levels"])
                for pi, m in scores.items():
                    writer.writerow([path, method, repr(float(pi)), repr(m.recall),
                                     repr(m.precision), repr(m.f1)])
    return provenance(cfg)


COMMANDS = {"fit": cmd_fit, "select": cmd_select, "test": cmd_test,
            "experiment": cmd_experiment, "simulate": cmd_simulate, "score": cmd_score}
COMMAND_NAMES = tuple(COMMANDS)


def _fail(kind, code, message) -> int:
    print(json.dumps({"error": kind, "exit_code": code, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        cfg = resolve(sys.argv[1:] if argv is None else argv)
        Path(cfg["out"]).mkdir(parents=True, exist_ok=True)
        manifest = COMMANDS[cfg["command"]](cfg)
        _write_json(Path(cfg["out"]) / "manifest.json", manifest)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, str(exc))
    except (DataError, ValueError) as exc:
        return _fail("data", EXIT_DATA, str(exc))
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        return _fail("numerical", EXIT_NUMERICAL, str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
