"""Graph-regularized relative likelihood-ratio estimation (GRULSIF).

Every node ``v`` models ``r_v^alpha(x) = p'_v(x) / ((1 - alpha) p_v(x) + alpha p'_v(x))``
with ``f_v(x) = theta_v . phi(x)`` over a shared kernel dictionary. The joint
objective is

    Phi(Theta) = (1/N) sum_v l_v(theta_v) + (lam/2) Theta' ([Lap + gamma I] kron I_L) Theta
    l_v(t)     = (1 - alpha) t'H_v t / 2 + alpha t'H'_v t / 2 - h'_v . t

and is minimized by cyclic block coordinate gradient descent, one node block
at a time in ascending index order.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla

from ._backend import get_backend
from .graph import Graph, laplacian
from .kernels import Dictionary, GaussianKernel, as_points

#: Largest ``N * L`` for which dense solves (closed form, iteration bound) run.
DENSE_GUARD = 5000
#: Largest dictionary size for which block step sizes use a dense eigensolve.
EIGEN_DENSE_MAX = 512
DEFAULT_MAX_CYCLES = 5000
MODEL_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------

class PairedNodeSamples:
    """Per-node observation sets ``X_v ~ p_v`` and ``X'_v ~ p'_v``.

    ``X`` and ``Xp`` are lists with one ``(n_v, d)`` array per node.
    """

    def __init__(self, X, Xp):
        if len(X) != len(Xp):
            raise ValueError("X and Xp must cover the same nodes")
        if len(X) == 0:
            raise ValueError("at least one node is required")
        self.X = [as_points(x) for x in X]
        self.Xp = [as_points(x) for x in Xp]
        dims = {a.shape[1] for a in self.X + self.Xp}
        if len(dims) != 1:
            raise ValueError(f"inconsistent observation dimensions {sorted(dims)}")
        for v, (a, b) in enumerate(zip(self.X, self.Xp)):
            if a.shape[0] < 1 or b.shape[0] < 1:
                raise ValueError(f"node {v} needs at least one observation in each sample")

    @classmethod
    def from_arrays(cls, X, Xp):
        """From stacked arrays of shape ``(N, n, d)`` (or ``(N, n)`` for d = 1)."""
        X = np.asarray(X, dtype=float)
        Xp = np.asarray(Xp, dtype=float)
        return cls(list(X), list(Xp))

    @property
    def n_nodes(self) -> int:
        return len(self.X)

    @property
    def dim(self) -> int:
        return self.X[0].shape[1]

    def swapped(self) -> "PairedNodeSamples":
        return PairedNodeSamples(self.Xp, self.X)

    def has_equal_counts(self) -> bool:
        return len({a.shape[0] for a in self.X}) == 1 and len({a.shape[0] for a in self.Xp}) == 1

    def as_arrays(self):
        """Stacked ``(N, n, d)`` and ``(N, n', d)`` arrays; requires equal counts."""
        if not self.has_equal_counts():
            raise ValueError("all nodes must have the same number of observations "
                             "in X and in X'")
        return np.stack(self.X), np.stack(self.Xp)

    def __eq__(self, other):
        if not isinstance(other, PairedNodeSamples) or other.n_nodes != self.n_nodes:
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.X + self.Xp, other.X + other.Xp))

    def __repr__(self):
        return f"PairedNodeSamples(n_nodes={self.n_nodes}, dim={self.dim})"


@dataclass(frozen=True)
class NodeMoments:
    H: np.ndarray
    Hp: np.ndarray
    hp: np.ndarray


@dataclass
class Moments:
    """Stacked empirical moments: ``H``, ``Hp`` of shape ``(N, L, L)``, ``hp`` of ``(N, L)``."""

    H: np.ndarray
    Hp: np.ndarray
    hp: np.ndarray

    def __len__(self):
        return self.H.shape[0]

    def __getitem__(self, v) -> NodeMoments:
        return NodeMoments(self.H[v], self.Hp[v], self.hp[v])

    @property
    def size(self) -> int:
        return self.H.shape[1]


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 0.1
    lam: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass
class ModelParams:
    theta: np.ndarray
    dictionary: Dictionary
    hyperparams: Hyperparams

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim != 2 or self.theta.shape[1] != self.dictionary.size:
            raise ValueError("theta must have shape (N, L) with L the dictionary size")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta has non-finite entries")

    @property
    def n_nodes(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule for :func:`fit`.

    ``max_cycles=None`` means :data:`DEFAULT_MAX_CYCLES`; use
    :meth:`from_iteration_bound` to derive the cap from the convergence bound.
    ``track_objective`` can be switched off to save one objective evaluation
    per cycle.
    """

    tol: float = 1e-4
    max_cycles: Optional[int] = None
    theta0: Optional[np.ndarray] = field(default=None, compare=False)
    track_objective: bool = True
    backend: Optional[str] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_cycles is not None and self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")

    @classmethod
    def from_iteration_bound(cls, moments, g, hp, epsilon=1e-6, **kwargs):
        try:
            i_max = iteration_bound(moments, g, hp, None, epsilon)
        except ValueError:
            return cls(max_cycles=DEFAULT_MAX_CYCLES, **kwargs)
        return cls(max_cycles=max(1, 10 * i_max), **kwargs)


@dataclass
class FitResult:
    model: ModelParams
    cycles: int
    objective_trace: np.ndarray
    converged: bool

    @property
    def theta(self):
        return self.model.theta


# ---------------------------------------------------------------------------
# moments, losses, objective
# ---------------------------------------------------------------------------

def moments_from_features(F, Fp) -> Moments:
    """Moments from per-node feature matrices (lists of ``(n_v, L)`` arrays, or stacked)."""
    if isinstance(F, np.ndarray) and F.ndim == 3 and isinstance(Fp, np.ndarray) and Fp.ndim == 3:
        H = np.matmul(F.transpose(0, 2, 1), F) / F.shape[1]
        Hp = np.matmul(Fp.transpose(0, 2, 1), Fp) / Fp.shape[1]
        return Moments(H, Hp, Fp.mean(axis=1))
    H = np.stack([f.T @ f / f.shape[0] for f in F])
    Hp = np.stack([f.T @ f / f.shape[0] for f in Fp])
    hp = np.stack([f.mean(axis=0) for f in Fp])
    return Moments(H, Hp, hp)


def compute_moments(samples: PairedNodeSamples, dictionary: Dictionary) -> Moments:
    if samples.dim != dictionary.dim:
        raise ValueError(f"samples have dimension {samples.dim}, dictionary {dictionary.dim}")
    F = [dictionary.features(x) for x in samples.X]
    Fp = [dictionary.features(x) for x in samples.Xp]
    return moments_from_features(F, Fp)


def node_loss(theta_v, m: NodeMoments, alpha: float) -> float:
    t = np.asarray(theta_v, dtype=float)
    return float((1 - alpha) * t @ m.H @ t / 2 + alpha * t @ m.Hp @ t / 2 - m.hp @ t)


def node_losses(theta, moments: Moments, alpha: float) -> np.ndarray:
    """Vector of ``l_v(theta_v)`` over all nodes."""
    quad_ref = np.einsum("vi,vij,vj->v", theta, moments.H, theta)
    quad_test = np.einsum("vi,vij,vj->v", theta, moments.Hp, theta)
    return (1 - alpha) * quad_ref / 2 + alpha * quad_test / 2 - np.sum(moments.hp * theta, axis=1)


def _scaled_system(moments: Moments, alpha: float):
    N = len(moments)
    M = np.ascontiguousarray(((1 - alpha) * moments.H + alpha * moments.Hp) / N)
    h = np.ascontiguousarray(moments.hp / N)
    return M, h


def objective(theta, moments: Moments, g: Graph, hp: Hyperparams) -> float:
    """Joint objective, computed from neighbour sums (no Kronecker product)."""
    theta = _theta_array(theta)
    M, h = _scaled_system(moments, hp.alpha)
    return get_backend("python").objective(
        theta, M, h, g.indptr, g.indices, g.weights, g.degrees, hp.lam, hp.gamma)


def block_gradient(theta, moments: Moments, g: Graph, hp: Hyperparams) -> np.ndarray:
    """Gradient of :func:`objective`, one row per node block."""
    theta = _theta_array(theta)
    M, h = _scaled_system(moments, hp.alpha)
    grad = np.einsum("vij,vj->vi", M, theta) - h
    grad += hp.lam * (g.degrees[:, None] + hp.gamma) * theta
    grad -= hp.lam * (g.adjacency() @ theta)
    return grad


def _theta_array(theta) -> np.ndarray:
    if isinstance(theta, ModelParams):
        theta = theta.theta
    return np.ascontiguousarray(theta, dtype=float)


# ---------------------------------------------------------------------------
# step sizes and the solver
# ---------------------------------------------------------------------------

def _power_lambda_max(A, tol=1e-8, max_iter=1000) -> float:
    x = np.ones(A.shape[0]) / math.sqrt(A.shape[0])
    val = 0.0
    for _ in range(max_iter):
        y = A @ x
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        new = float(x @ y)
        x = y / nrm
        if abs(new - val) <= tol * max(abs(new), 1.0):
            return new
        val = new
    return val


def learning_rate(m: NodeMoments, alpha: float, lam: float, d_v: float, n_nodes: int) -> float:
    """Block Lipschitz constant ``lambda_max([(1-alpha)H_v + alpha H'_v]/N + lam d_v I)``."""
    A = ((1 - alpha) * m.H + alpha * m.Hp) / n_nodes
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite moments")
    if A.shape[0] <= EIGEN_DENSE_MAX:
        top = float(np.linalg.eigvalsh(A)[-1])
    else:
        top = _power_lambda_max(A)
    return top + lam * d_v


def learning_rates(moments: Moments, g: Graph, hp: Hyperparams) -> np.ndarray:
    M, _ = _scaled_system(moments, hp.alpha)
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite moments")
    if M.shape[1] <= EIGEN_DENSE_MAX:
        top = np.linalg.eigvalsh(M)[:, -1]
    else:
        top = np.array([_power_lambda_max(m) for m in M])
    return np.ascontiguousarray(top + hp.lam * g.degrees)


def cbcgd_cycle(theta, moments: Moments, g: Graph, hp: Hyperparams, rates,
                backend: Optional[str] = None) -> np.ndarray:
    """Run one sweep over all node blocks, in place; returns ``theta``."""
    M, h = _scaled_system(moments, hp.alpha)
    rates = np.ascontiguousarray(rates, dtype=float)
    get_backend(backend).cycle(theta, M, h, g.indptr, g.indices, g.weights,
                               g.degrees, rates, hp.lam, hp.gamma)
    return theta


def _check_shapes(moments: Moments, g: Graph):
    if len(moments) != g.n_nodes:
        raise ValueError(f"moments cover {len(moments)} nodes, graph has {g.n_nodes}")


def fit_moments(moments: Moments, dictionary: Dictionary, g: Graph, hp: Hyperparams,
                cfg: SolverConfig = SolverConfig()) -> FitResult:
    """:func:`fit` starting from precomputed moments."""
    _check_shapes(moments, g)
    N, L = len(moments), moments.size
    if cfg.theta0 is None:
        theta = np.zeros((N, L))
    else:
        theta = np.array(cfg.theta0, dtype=float, order="C", copy=True)
        if theta.shape != (N, L):
            raise ValueError(f"theta0 must have shape {(N, L)}")
    M, h = _scaled_system(moments, hp.alpha)
    rates = learning_rates(moments, g, hp)
    max_cycles = cfg.max_cycles or DEFAULT_MAX_CYCLES
    cycles, converged, trace = get_backend(cfg.backend).run(
        theta, M, h, g.indptr, g.indices, g.weights, g.degrees, rates,
        hp.lam, hp.gamma, cfg.tol, max_cycles, cfg.track_objective)
    return FitResult(ModelParams(theta, dictionary, hp), int(cycles),
                     np.asarray(trace), bool(converged))


def fit(samples: PairedNodeSamples, dictionary: Dictionary, g: Graph, hp: Hyperparams,
        cfg: SolverConfig = SolverConfig()) -> FitResult:
    """Estimate all node parameters jointly by cyclic block coordinate descent.

    Iterates until ``||Theta_i - Theta_{i-1}|| <= tol * ||Theta_{i-1}||`` (when
    the previous iterate is zero, only an all-zero iterate stops the loop) or
    ``max_cycles`` is reached; in the latter case ``converged`` is false.
    """
    return fit_moments(compute_moments(samples, dictionary), dictionary, g, hp, cfg)


# ---------------------------------------------------------------------------
# dense oracle, evaluation, divergence, bound
# ---------------------------------------------------------------------------

def system_matrix(moments: Moments, g: Graph, hp: Hyperparams) -> np.ndarray:
    """Dense ``A = blockdiag(M_v) + lam ([Lap + gamma I] kron I_L)``."""
    N, L = len(moments), moments.size
    if N * L > DENSE_GUARD:
        raise ValueError(f"N*L = {N * L} exceeds the dense guard {DENSE_GUARD}")
    M, _ = _scaled_system(moments, hp.alpha)
    lap = laplacian(g).toarray() + hp.gamma * np.eye(N)
    A = hp.lam * np.kron(lap, np.eye(L))
    A += sla.block_diag(*M)
    return A


def closed_form_moments(moments: Moments, dictionary: Dictionary, g: Graph,
                        hp: Hyperparams) -> ModelParams:
    _check_shapes(moments, g)
    A = system_matrix(moments, g, hp)
    _, h = _scaled_system(moments, hp.alpha)
    try:
        factor = sla.cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"system matrix not positive definite: {exc}") from None
    theta = sla.cho_solve(factor, h.ravel()).reshape(h.shape)
    return ModelParams(theta, dictionary, hp)


def closed_form_solve(samples: PairedNodeSamples, dictionary: Dictionary, g: Graph,
                      hp: Hyperparams) -> ModelParams:
    """Exact minimizer via a Cholesky solve of the dense system (small problems only)."""
    return closed_form_moments(compute_moments(samples, dictionary), dictionary, g, hp)


def evaluate(model: ModelParams, v: int, x) -> float:
    """Estimated relative likelihood ratio ``f_v(x)`` at node ``v``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.shape[0] != model.dictionary.dim:
        raise ValueError(f"expected a point of dimension {model.dictionary.dim}")
    return float(model.dictionary.features(x[None, :])[0] @ model.theta[v])


def predict(model: ModelParams, v: int, X) -> np.ndarray:
    return model.dictionary.features(X) @ model.theta[v]


def pe_divergence(model: ModelParams, v: int, moments_v: NodeMoments) -> float:
    """Pearson-divergence estimate ``-l_v(theta_v) - 1/2`` against the given moments."""
    theta_v = model.theta[v] if isinstance(model, ModelParams) else np.asarray(model)[v]
    alpha = model.hyperparams.alpha
    _warn_if_unbounded(model, v, moments_v)
    return -node_loss(theta_v, moments_v, alpha) - 0.5


def pe_divergences(theta, moments: Moments, alpha: float) -> np.ndarray:
    """Vectorised :func:`pe_divergence` over all nodes."""
    return -node_losses(_theta_array(theta), moments, alpha) - 0.5


def _warn_if_unbounded(model, v, moments_v):
    alpha = model.hyperparams.alpha
    if alpha <= 0:
        return
    # the mean of f over X' cannot exceed 1/alpha for a valid ratio
    mean_f = float(moments_v.hp @ model.theta[v])
    if mean_f > 1.0 / alpha:
        warnings.warn(f"node {v}: mean fitted ratio {mean_f:.3g} exceeds 1/alpha",
                      RuntimeWarning, stacklevel=3)


@dataclass(frozen=True)
class BoundConstants:
    C: float
    C_v: np.ndarray
    C_min: float
    phi0: float
    phi_star: float


def bound_constants(moments: Moments, g: Graph, hp: Hyperparams, theta0=None) -> BoundConstants:
    N, L = len(moments), moments.size
    if N * L > DENSE_GUARD:
        raise ValueError(f"N*L = {N * L} exceeds the dense guard {DENSE_GUARD}")
    M, h = _scaled_system(moments, hp.alpha)
    smooth = sla.block_diag(*M) + hp.lam * np.kron(laplacian(g).toarray(), np.eye(L))
    C = float(np.linalg.eigvalsh(smooth)[-1])
    C_v = learning_rates(moments, g, hp)
    theta_star = sla.solve(system_matrix(moments, g, hp), h.ravel(),
                           assume_a="pos").reshape(N, L)
    theta0 = np.zeros((N, L)) if theta0 is None else _theta_array(theta0)
    return BoundConstants(
        C=C,
        C_v=C_v,
        C_min=float(C_v.min()),
        phi0=objective(theta0, moments, g, hp),
        phi_star=objective(theta_star, moments, g, hp),
    )


def iteration_bound(moments: Moments, g: Graph, hp: Hyperparams, theta0, epsilon: float) -> int:
    """Upper bound on the number of cycles needed to reach ``Phi - Phi* <= epsilon``.

    ``ceil((mu (C_min + mu) + 16 C^2 log^2(3 N L)) / (mu (C_min + mu))
    * log((Phi(Theta0) - Phi*) / epsilon))`` with ``mu = lam * gamma``, ``C``
    the Lipschitz constant of the smooth part and ``C_min`` the smallest block
    constant. Returns 0 when ``Theta0`` is already within ``epsilon``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    N, L = len(moments), moments.size
    k = bound_constants(moments, g, hp, theta0)
    gap = k.phi0 - k.phi_star
    if gap <= epsilon:
        return 0
    mu = hp.lam * hp.gamma
    base = mu * (k.C_min + mu)
    ratio = (base + 16.0 * k.C ** 2 * math.log(3 * N * L) ** 2) / base
    return int(math.ceil(ratio * math.log(gap / epsilon)))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_model(model: ModelParams, directory) -> None:
    """Write ``manifest.json``, ``centers.csv`` and ``theta.csv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    hp = model.hyperparams
    manifest = {
        "format": "grulsif-model",
        "version": MODEL_FORMAT_VERSION,
        "sigma": model.dictionary.sigma,
        "alpha": hp.alpha,
        "lambda": hp.lam,
        "gamma": hp.gamma,
        "n_nodes": model.n_nodes,
        "n_centers": model.dictionary.size,
        "dim": model.dictionary.dim,
        "files": {"centers": "centers.csv", "theta": "theta.csv"},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    np.savetxt(directory / "centers.csv", model.dictionary.centers, delimiter=",",
               fmt="%.17g", header=",".join(f"dim_{j}" for j in range(model.dictionary.dim)),
               comments="")
    np.savetxt(directory / "theta.csv", model.theta, delimiter=",", fmt="%.17g",
               header=",".join(f"center_{j}" for j in range(model.dictionary.size)),
               comments="")


def load_model(directory) -> ModelParams:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != "grulsif-model" or manifest.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"{directory}: unsupported model manifest")
    centers = np.loadtxt(directory / manifest["files"]["centers"], delimiter=",",
                         skiprows=1, ndmin=2)
    theta = np.loadtxt(directory / manifest["files"]["theta"], delimiter=",",
                       skiprows=1, ndmin=2)
    hp = Hyperparams(manifest["alpha"], manifest["lambda"], manifest["gamma"])
    return ModelParams(theta, Dictionary(centers, GaussianKernel(manifest["sigma"])), hp)
