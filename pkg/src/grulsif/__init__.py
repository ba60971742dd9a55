"""Graph-regularized relative likelihood-ratio estimation and node-level two-sample tests."""

from ._backend import BACKEND
from .dictionary import DictionaryConfig, build_global_dictionary
from .estimator import (
    FitResult,
    Hyperparams,
    ModelParams,
    PairedNodeSamples,
    SolverConfig,
    closed_form_solve,
    compute_moments,
    fit,
    iteration_bound,
    load_model,
    pe_divergence,
    predict,
    save_model,
)
from .graph import Graph, build_graph, laplacian, read_edge_csv, sbm_generate
from .kernels import Dictionary, GaussianKernel, median_heuristic
from .model_selection import SelectionConfig, default_grids, select_hyperparameters
from .scenarios import ScenarioSpec, detection_metrics, generate, generate_scenario_I, run_experiment
from .two_sample import PermutationConfig, TestReport, permutation_test, run_test

__version__ = "0.1.0"
