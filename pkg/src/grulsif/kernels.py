"""Gaussian kernel, median-heuristic bandwidth and dictionary feature maps.

The kernel convention is ``K(x, y) = exp(-||x - y||^2 / (2 sigma^2))``; every
bandwidth grid in the package is expressed against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

#: Above this many points the median heuristic works on a seeded subsample.
MEDIAN_MAX_POINTS = 2000


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")

    def __call__(self, x, y) -> float:
        return kernel_eval(self, x, y)

    def gram(self, X, Y) -> np.ndarray:
        """Kernel matrix between the rows of ``X`` and ``Y``."""
        X = as_points(X)
        Y = as_points(Y)
        if X.shape[1] != Y.shape[1]:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        d2 = cdist(X, Y, "sqeuclidean")
        return np.exp(-d2 / (2.0 * self.sigma ** 2))


@dataclass(frozen=True)
class Dictionary:
    """``L`` kernel centres (rows of ``centers``) sharing one Gaussian width."""

    centers: np.ndarray
    kernel: GaussianKernel

    def __post_init__(self):
        centers = as_points(self.centers)
        if centers.shape[0] < 1:
            raise ValueError("dictionary needs at least one center")
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def sigma(self) -> float:
        return self.kernel.sigma

    def with_sigma(self, sigma: float) -> "Dictionary":
        return Dictionary(self.centers, GaussianKernel(sigma))

    def features(self, X) -> np.ndarray:
        """Feature matrix, one row ``phi(x)`` per row of ``X``."""
        return self.kernel.gram(X, self.centers)

    def coherence(self) -> float:
        """Largest kernel value between two distinct centres (0 if ``L == 1``)."""
        if self.size < 2:
            return 0.0
        d2 = pdist(self.centers, "sqeuclidean")
        return float(np.max(np.exp(-d2 / (2.0 * self.sigma ** 2))))


def as_points(X) -> np.ndarray:
    """Coerce to a 2-D float array of shape ``(n, d)``; 1-D input is ``(n, 1)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D array of points, got shape {X.shape}")
    return X


def kernel_eval(k: GaussianKernel, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    return float(np.exp(-np.dot(diff, diff) / (2.0 * k.sigma ** 2)))


def median_heuristic(points, seed: int = 0) -> float:
    """Median of the pairwise Euclidean distances between distinct points.

    With more than :data:`MEDIAN_MAX_POINTS` points, a uniform subsample of that
    size (drawn with ``seed``) is used instead.
    """
    X = as_points(points)
    if X.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    if X.shape[0] > MEDIAN_MAX_POINTS:
        rng = np.random.default_rng(seed)
        X = X[rng.choice(X.shape[0], MEDIAN_MAX_POINTS, replace=False)]
    sigma = float(np.median(pdist(X)))
    if sigma <= 0:
        raise ValueError("median pairwise distance is zero; points are degenerate")
    return sigma


def feature_map(dictionary: Dictionary, x) -> np.ndarray:
    """``(K(x, c_1), ..., K(x, c_L))`` for a single point ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.shape[0] != dictionary.dim:
        raise ValueError(f"expected a point of dimension {dictionary.dim}")
    return dictionary.features(x[None, :])[0]
