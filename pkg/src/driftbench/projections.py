"""Dimensionality reduction for feature-based detectors: PCA and SRP.

PCA is fitted on the training split by eigendecomposing the sample covariance
with a cyclic Jacobi rotation solver. The sparse random projection uses the
standard {+a, 0, -a} entry distribution with a = sqrt(1 / (density * r)); its
output dimension is paired with the PCA dimension by the callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import errors
from .rng import make_rng

__all__ = ["PcaModel", "SrpModel", "fit_pca", "transform_pca", "fit_srp", "transform_srp", "jacobi_eigh"]


def jacobi_eigh(a, tol: float = 1e-10, max_sweeps: int = 100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop when the off-diagonal Frobenius norm drops below `tol` or
    after `max_sweeps` full cycles. Returns (eigenvalues, eigenvectors) with
    eigenvectors in columns, unsorted.
    """
    m = np.array(a, dtype=np.float64, copy=True)
    n = m.shape[0]
    v = np.eye(n)
    if n == 1:
        return np.array([m[0, 0]]), v
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, float((m**2).sum() - (np.diag(m) ** 2).sum())))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (m[q, q] - m[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * m[p, :] - s * m[q, :]
                rot_q = s * m[p, :] + c * m[q, :]
                m[p, :], m[q, :] = rot_p, rot_q
                rot_p = c * m[:, p] - s * m[:, q]
                rot_q = s * m[:, p] + c * m[:, q]
                m[:, p], m[:, q] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    return np.diag(m).copy(), v


@dataclass(frozen=True)
class PcaModel:
    """Principal axes (rows of `components`) retaining a target variance share."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    variance_retention: float

    @property
    def r(self) -> int:
        return int(self.components.shape[0])

    @property
    def width(self) -> int:
        return int(self.components.shape[1])

    def to_json(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "variance_retention": self.variance_retention,
        }

    @staticmethod
    def from_json(obj: dict) -> "PcaModel":
        return PcaModel(
            np.asarray(obj["mean"], dtype=np.float64),
            np.asarray(obj["components"], dtype=np.float64),
            np.asarray(obj["explained_variance"], dtype=np.float64),
            float(obj["variance_retention"]),
        )


def fit_pca(train, variance_retention: float = 0.8) -> PcaModel:
    """Fit PCA on the training split, keeping the smallest axis count whose
    cumulative variance ratio reaches `variance_retention`.

    Covariance uses 1/(n-1) normalization. Axis signs are fixed so the
    largest-magnitude component of each axis is positive.
    """
    x = np.asarray(getattr(train, "values", train), dtype=np.float64)
    if x.ndim != 2:
        raise errors.DimensionMismatch("expected a 2-D matrix")
    n, m = x.shape
    if n < 2 or m < 1:
        raise errors.DegenerateData("PCA needs at least 2 rows and 1 column")
    if not (0.0 < variance_retention <= 1.0):
        raise errors.InvalidArgument("variance_retention must lie in (0, 1]")
    mean = x.mean(axis=0)
    b = x - mean
    cov = (b.T @ b) / (n - 1)
    eigvals, eigvecs = jacobi_eigh(cov)
    eigvals = np.maximum(eigvals, 0.0)
    total = float(eigvals.sum())
    if total <= 0.0:
        raise errors.DegenerateData("training data has zero total variance")
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    cum = np.cumsum(eigvals) / total
    r = int(np.searchsorted(cum, variance_retention - 1e-12) + 1)
    r = min(r, m)
    comps = eigvecs[:, :r].T.copy()
    for i in range(r):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return PcaModel(mean, comps, eigvals[:r].copy(), float(variance_retention))


def transform_pca(model: PcaModel, X) -> np.ndarray:
    """Project rows onto the retained principal axes: (X - mean) @ components.T."""
    x = np.asarray(getattr(X, "values", X), dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.width:
        raise errors.DimensionMismatch(
            f"expected width {model.width}, got {x.shape[1] if x.ndim == 2 else '?'}"
        )
    return (x - model.mean) @ model.components.T


@dataclass(frozen=True)
class SrpModel:
    """Sparse sign projection with entries in {+a, 0, -a}."""

    projection: np.ndarray
    density: float
    seed: int

    @property
    def r(self) -> int:
        return int(self.projection.shape[0])

    @property
    def width(self) -> int:
        return int(self.projection.shape[1])

    def to_json(self) -> dict:
        rows, cols = np.nonzero(self.projection)
        signs = np.sign(self.projection[rows, cols]).astype(int)
        return {
            "r": self.r,
            "m": self.width,
            "density": self.density,
            "seed": self.seed,
            "entries": [[int(a), int(b), int(s)] for a, b, s in zip(rows, cols, signs)],
        }

    @staticmethod
    def from_json(obj: dict) -> "SrpModel":
        r, m = int(obj["r"]), int(obj["m"])
        density = float(obj["density"])
        scale = math.sqrt(1.0 / (density * r))
        proj = np.zeros((r, m), dtype=np.float64)
        for row, col, sign in obj["entries"]:
            proj[row, col] = sign * scale
        return SrpModel(proj, density, int(obj["seed"]))


def fit_srp(m: int, r: int, density: float, seed: int) -> SrpModel:
    """Draw an r x m sparse sign matrix: +/-a with probability density/2 each,
    zero otherwise, a = sqrt(1 / (density * r)). Deterministic per seed."""
    if r < 1 or m < 1:
        raise errors.InvalidArgument("r and m must be >= 1")
    if not (0.0 < density <= 1.0):
        raise errors.InvalidArgument("density must lie in (0, 1]")
    rng = make_rng(seed, "srp")
    u = rng.random((r, m))
    scale = math.sqrt(1.0 / (density * r))
    proj = np.zeros((r, m), dtype=np.float64)
    proj[u < density / 2.0] = scale
    proj[(u >= density / 2.0) & (u < density)] = -scale
    return SrpModel(proj, float(density), int(seed))


def default_srp_density(m: int) -> float:
    """Standard sparse-projection density 1/sqrt(m)."""
    return 1.0 / math.sqrt(max(1, m))


def transform_srp(model: SrpModel, X) -> np.ndarray:
    """Linear projection X @ projection.T."""
    x = np.asarray(getattr(X, "values", X), dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.width:
        raise errors.DimensionMismatch(
            f"expected width {model.width}, got {x.shape[1] if x.ndim == 2 else '?'}"
        )
    return x @ model.projection.T
