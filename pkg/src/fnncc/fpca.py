"""Pointwise standardization and multivariate functional PCA on a grid.

Multivariate functional samples are held as grid values with shape
``(n, P, C)``: ``n`` samples, ``P`` covariates, ``C`` grid points. Inner
products use a shared :class:`~fnncc.basis.QuadratureRule`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fnncc.basis import FunctionalData, QuadratureRule
from fnncc.errors import DataError, DegenerateDataError

PRESS_THRESHOLD = 0.01


def as_grid_values(data, grid) -> np.ndarray:
    """Coerce a FunctionalData, a list of them, or an array to ``(n, P, C)``."""
    if isinstance(data, FunctionalData):
        data = [data]
    if isinstance(data, (list, tuple)) and data and isinstance(data[0], FunctionalData):
        return np.stack([fd.evaluate(grid) for fd in data], axis=1)
    values = np.asarray(data, dtype=float)
    if values.ndim == 2:
        values = values[:, None, :]
    if values.ndim != 3:
        raise DataError("functional data must have shape (n, P, C)")
    return values


@dataclass(frozen=True)
class StandardizationFns:
    """Pointwise mean and standard deviation, each of shape ``(P, C)``."""

    mean_fn: np.ndarray
    sd_fn: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean_fn) / self.sd_fn

    def invert(self, standardized: np.ndarray) -> np.ndarray:
        return standardized * self.sd_fn + self.mean_fn

    def to_dict(self) -> dict:
        return {"mean_fn": self.mean_fn.tolist(), "sd_fn": self.sd_fn.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "StandardizationFns":
        return cls(np.asarray(doc["mean_fn"], float), np.asarray(doc["sd_fn"], float))


def standardize(data, grid) -> tuple[np.ndarray, StandardizationFns]:
    """Subtract the pointwise sample mean and divide by the pointwise SD.

    Returns the standardized grid values ``(n, P, C)`` and the fitted
    functions, which must be reused unchanged for any new sample.
    """
    values = as_grid_values(data, grid)
    if values.shape[0] < 2:
        raise DegenerateDataError("standardization needs at least two samples")
    mean = values.mean(axis=0)
    sd = values.std(axis=0)
    if np.any(sd <= 0) or not np.all(np.isfinite(sd)):
        bad = np.argwhere(~(sd > 0))[0]
        raise DegenerateDataError(
            f"zero pointwise standard deviation (covariate {bad[0]}, grid index {bad[1]})"
        )
    fns = StandardizationFns(mean, sd)
    return fns.apply(values), fns


@dataclass(frozen=True)
class MfpcaModel:
    """Eigen-decomposition of the multivariate covariance operator.

    Attributes
    ----------
    eigenvalues : array, shape (M,)
        Non-increasing.
    eigenfunctions : array, shape (M, P, C)
        Grid values; orthonormal under the summed quadrature inner product.
    standardization : StandardizationFns or None
    rule : QuadratureRule
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    rule: QuadratureRule
    standardization: StandardizationFns | None = None

    @property
    def n_components(self) -> int:
        return self.eigenvalues.size

    def gram(self) -> np.ndarray:
        psi = self.eigenfunctions
        return np.einsum("apc,bpc,c->ab", psi, psi, self.rule.weights)

    def transform(self, values) -> np.ndarray:
        """Standardize raw grid values with the frozen functions, then score."""
        values = as_grid_values(values, self.rule.grid)
        if self.standardization is not None:
            values = self.standardization.apply(values)
        return compute_scores(self, values)

    def to_dict(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenfunctions": self.eigenfunctions.tolist(),
            "rule": self.rule.to_dict(),
            "standardization": None if self.standardization is None else self.standardization.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MfpcaModel":
        std = doc.get("standardization")
        return cls(
            np.asarray(doc["eigenvalues"], float),
            np.asarray(doc["eigenfunctions"], float),
            QuadratureRule.from_dict(doc["rule"]),
            None if std is None else StandardizationFns.from_dict(std),
        )


def fit_mfpca(
    values,
    rule: QuadratureRule,
    max_M: int | None = None,
    standardization: StandardizationFns | None = None,
    rtol: float = 1e-12,
) -> MfpcaModel:
    """Solve the discretized eigenproblem of the covariance operator.

    Grid values are weighted by the square roots of the quadrature weights
    so that the matrix problem is symmetric and its eigenvectors map back to
    L2-orthonormal functions. Components with eigenvalue below
    ``rtol * largest`` are dropped.
    """
    values = as_grid_values(values, rule.grid)
    n, P, C = values.shape
    if n < 2:
        raise DataError("MFPCA needs at least two samples")
    if not np.all(np.isfinite(values)):
        raise DataError("functional data contain non-finite values")
    sqrt_w = np.sqrt(rule.weights)
    z = (values - values.mean(axis=0)) * sqrt_w
    z = z.reshape(n, P * C)
    cov = z.T @ z / (n - 1)
    if not np.all(np.isfinite(cov)):
        raise DataError("non-finite covariance")
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    limit = min(n - 1, P * C) if max_M is None else min(max_M, n - 1, P * C)
    keep = min(limit, int(np.sum(evals > rtol * evals[0])))
    evals, evecs = evals[:keep], evecs[:, :keep]
    psi = evecs.T.reshape(keep, P, C) / sqrt_w
    # sign convention: largest-magnitude grid value positive
    flat = psi.reshape(keep, P * C)
    signs = np.sign(flat[np.arange(keep), np.argmax(np.abs(flat), axis=1)])
    psi = psi * signs[:, None, None]
    return MfpcaModel(evals, psi, rule, standardization)


def compute_scores(model: MfpcaModel, values) -> np.ndarray:
    """Scores ``xi_im = sum_p <X_ip, psi_mp>`` for standardized grid values."""
    values = as_grid_values(values, model.rule.grid)
    return np.einsum("npc,mpc,c->nm", values, model.eigenfunctions, model.rule.weights)


def reconstruct(model: MfpcaModel, scores: np.ndarray, M: int) -> np.ndarray:
    """Truncated expansion ``sum_{m<=M} xi_im psi_m`` (standardized scale)."""
    if M > model.n_components:
        raise DataError(f"M={M} exceeds the {model.n_components} fitted components")
    scores = np.atleast_2d(scores)
    return np.einsum("nm,mpc->npc", scores[:, :M], model.eigenfunctions[:M])


def integrated_squared_error(model: MfpcaModel, values, M: int) -> float:
    values = as_grid_values(values, model.rule.grid)
    scores = compute_scores(model, values)
    resid = values - reconstruct(model, scores, M)
    return float(np.sum(resid**2 * model.rule.weights))


def press_curve(y, scores, max_M: int | None = None) -> np.ndarray:
    """Leave-one-out PRESS of ``y ~ 1 + xi_1 + ... + xi_M`` for M = 0..max_M.

    Uses the closed form ``e_i / (1 - h_ii)`` for the deleted residuals.
    """
    y = np.asarray(y, dtype=float)
    scores = np.atleast_2d(scores)
    max_M = scores.shape[1] if max_M is None else min(max_M, scores.shape[1])
    n = y.size
    out = np.empty(max_M + 1)
    design = np.ones((n, 1))
    for m in range(max_M + 1):
        if m > 0:
            design = np.column_stack([design, scores[:, m - 1]])
        q, _ = np.linalg.qr(design)
        hat_diag = np.sum(q**2, axis=1)
        resid = y - q @ (q.T @ y)
        out[m] = np.sum((resid / (1.0 - hat_diag)) ** 2)
    return out


def select_M_press(y, scores, reduction_threshold: float = PRESS_THRESHOLD, max_M: int | None = None) -> int:
    """Number of leading components to retain by sequential PRESS reduction.

    Components are added in order while each one lowers PRESS by at least
    ``reduction_threshold`` relative to the previous model. At least one
    component is always returned; when even the first fails to help the
    intercept-only model is preferred and ``M = 1`` is the floor.
    """
    if np.asarray(y).size < 10:
        raise DataError("PRESS selection needs at least 10 observations")
    press = press_curve(y, scores, max_M)
    floor = 1e-12 * press[0]
    M = 0
    for m in range(1, press.size):
        if press[m - 1] <= floor or press[m] > (1.0 - reduction_threshold) * press[m - 1]:
            break
        M = m
    return max(M, 1)
