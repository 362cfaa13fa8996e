"""B-spline bases, penalized smoothing and quadrature on a fixed grid.

All functional objects live on the unit interval [0, 1]. Bases use equally
spaced interior knots with clamped (order-fold) boundary knots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.interpolate import BSpline

from fnncc.errors import ConfigurationError, IllPosedFitError

GCV_LAMBDAS = np.logspace(-8, 2, 25)

# eigenvalues of the reparametrized penalty below this fraction of the largest
# are treated as exact null space (linear functions for a 2nd-derivative penalty)
_NULL_SPACE_RTOL = 1e-10


def uniform_grid(n_points: int = 150) -> np.ndarray:
    """Equally spaced grid on [0, 1] with ``n_points`` points."""
    grid = np.linspace(0.0, 1.0, n_points)
    return check_grid(grid)


def check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 4:
        raise ConfigurationError("grid must be one-dimensional with at least 4 points")
    if np.any(np.diff(grid) <= 0):
        raise ConfigurationError("grid must be strictly increasing")
    if grid[0] != 0.0 or grid[-1] != 1.0:
        raise ConfigurationError("grid must start at 0 and end at 1")
    return grid


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis on [0, 1] with equally spaced interior knots.

    Parameters
    ----------
    order : int
        Spline order (degree + 1); cubic splines have order 4.
    n_basis : int
        Number of basis functions, ``len(interior_knots) + order``.
    """

    order: int
    n_basis: int

    def __post_init__(self):
        if self.order < 1:
            raise ConfigurationError("order must be positive")
        if self.n_basis < self.order:
            raise ConfigurationError(
                f"n_basis ({self.n_basis}) must be at least the order ({self.order})"
            )

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def interior_knots(self) -> np.ndarray:
        n_interior = self.n_basis - self.order
        return np.linspace(0.0, 1.0, n_interior + 2)[1:-1]

    @property
    def knots(self) -> np.ndarray:
        return np.concatenate(
            [np.zeros(self.order), self.interior_knots, np.ones(self.order)]
        )

    def evaluate(self, t, deriv: int = 0) -> np.ndarray:
        """Dense ``len(t) x n_basis`` matrix of basis values (or derivatives)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any((t < 0.0) | (t > 1.0)):
            raise ConfigurationError("evaluation points must lie in [0, 1]")
        if deriv == 0:
            return BSpline.design_matrix(t, self.knots, self.degree).toarray()
        out = np.empty((t.size, self.n_basis))
        eye = np.eye(self.n_basis)
        for k in range(self.n_basis):
            out[:, k] = BSpline(self.knots, eye[k], self.degree)(t, nu=deriv)
        return out

    def integrals(self) -> np.ndarray:
        """Exact integral of each basis function over [0, 1]."""
        knots = self.knots
        return (knots[self.order :] - knots[: self.n_basis]) / self.order

    def _span_quadrature(self, degree: int):
        # Gauss-Legendre nodes per knot span, exact for polynomials of `degree`
        n_gauss = degree // 2 + 1
        x, w = np.polynomial.legendre.leggauss(n_gauss)
        breaks = np.unique(self.knots)
        lo, hi = breaks[:-1], breaks[1:]
        half = (hi - lo)[:, None] / 2.0
        nodes = (lo[:, None] + half * (x[None, :] + 1.0)).ravel()
        weights = (half * w[None, :]).ravel()
        return nodes, weights

    def penalty_matrix(self, deriv: int = 2) -> np.ndarray:
        """Exact roughness penalty ``int B_i^(deriv) B_j^(deriv) dt``."""
        if deriv >= self.order:
            return np.zeros((self.n_basis, self.n_basis))
        nodes, weights = self._span_quadrature(2 * (self.degree - deriv))
        d = self.evaluate(nodes, deriv=deriv)
        return d.T @ (weights[:, None] * d)

    def gram_matrix(self) -> np.ndarray:
        """Exact ``int B_i B_j dt``."""
        return self.penalty_matrix(deriv=0)

    def to_dict(self) -> dict:
        return {"type": "bspline", "order": self.order, "n_basis": self.n_basis}

    @classmethod
    def from_dict(cls, doc: dict) -> "BSplineBasis":
        return cls(order=int(doc["order"]), n_basis=int(doc["n_basis"]))


def make_bspline_basis(order: int, n_basis: int) -> BSplineBasis:
    return BSplineBasis(order=order, n_basis=n_basis)


def eval_basis(basis: BSplineBasis, grid) -> np.ndarray:
    return basis.evaluate(grid)


@dataclass
class FunctionalData:
    """Basis-coefficient representation of a sample of curves.

    ``coefficients`` has one row per sample.
    """

    basis: BSplineBasis
    coefficients: np.ndarray
    covariate_id: str = "X1"
    smoothing_lambda: Optional[float] = None

    def __post_init__(self):
        self.coefficients = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        if self.coefficients.shape[1] != self.basis.n_basis:
            raise ConfigurationError("coefficient columns must match basis size")
        if not np.all(np.isfinite(self.coefficients)):
            raise ConfigurationError("coefficients must be finite")

    @property
    def n_samples(self) -> int:
        return self.coefficients.shape[0]

    def evaluate(self, t) -> np.ndarray:
        """Curve values, shape ``(n_samples, len(t))``."""
        return self.coefficients @ self.basis.evaluate(t).T


class Smoother:
    """Roughness-penalized least-squares smoother for curves sampled on one grid.

    Uses a Demmler-Reinsch reparametrization so that the fit for any
    penalty and its effective degrees of freedom come from a single
    eigendecomposition.
    """

    def __init__(self, basis: BSplineBasis, grid):
        self.basis = basis
        self.grid = np.asarray(grid, dtype=float)
        self.design = basis.evaluate(self.grid)
        self.penalty = basis.penalty_matrix(2)
        self.full_rank = (
            self.grid.size >= basis.n_basis
            and np.linalg.matrix_rank(self.design) == basis.n_basis
        )
        if self.full_rank:
            q, r = np.linalg.qr(self.design)
            r_inv = np.linalg.inv(r)
            a = r_inv.T @ self.penalty @ r_inv
            s, u = np.linalg.eigh((a + a.T) / 2.0)
            s[s < _NULL_SPACE_RTOL * s.max()] = 0.0
            self._q, self._r_inv, self._s, self._u = q, r_inv, s, u

    def _shrink(self, lam: float) -> np.ndarray:
        return 1.0 / (1.0 + lam * self._s)

    def coefficients(self, raw: np.ndarray, lam: float) -> np.ndarray:
        raw = np.atleast_2d(raw)
        if lam < 0:
            raise ConfigurationError("smoothing parameter must be nonnegative")
        if self.full_rank:
            proj = (raw @ self._q) @ self._u
            d = (proj * self._shrink(lam)) @ self._u.T
            return d @ self._r_inv.T
        if lam == 0:
            raise IllPosedFitError(
                "normal equations are singular: more basis functions than grid "
                "points and no roughness penalty"
            )
        lhs = self.design.T @ self.design + lam * self.penalty
        return np.linalg.solve(lhs, self.design.T @ raw.T).T

    def df(self, lam: float) -> float:
        """Trace of the smoothing operator."""
        if self.full_rank:
            return float(self._shrink(lam).sum())
        lhs = self.design.T @ self.design + lam * self.penalty
        return float(np.trace(np.linalg.solve(lhs, self.design.T @ self.design)))

    def sse(self, raw: np.ndarray, lam: float) -> float:
        raw = np.atleast_2d(raw)
        fitted = self.coefficients(raw, lam) @ self.design.T
        return float(np.sum((raw - fitted) ** 2))

    def gcv(self, raw: np.ndarray, lam: float) -> float:
        """Pooled GCV score ``C * SSE / (C - df)^2`` over all curves."""
        n = self.grid.size
        return n * self.sse(raw, lam) / (n - self.df(lam)) ** 2

    def select_lambda(self, raw: np.ndarray, lambdas=GCV_LAMBDAS) -> float:
        scores = [self.gcv(raw, lam) for lam in lambdas]
        return float(lambdas[int(np.argmin(scores))])

    def operator(self, lam: float) -> np.ndarray:
        """Linear map from raw grid values to fitted grid values (``C x C``)."""
        return self.coefficients(np.eye(self.grid.size), lam) @ self.design.T


def smooth_profiles(
    raw,
    grid,
    basis: BSplineBasis,
    penalty: Union[float, str] = 0.0,
    lambdas=GCV_LAMBDAS,
    covariate_id: str = "X1",
) -> FunctionalData:
    """Fit penalized B-spline coefficients to discretely observed curves.

    Parameters
    ----------
    raw : array, shape (n, C)
        Observed values, one row per curve, on ``grid``.
    penalty : float or "gcv"
        Fixed smoothing parameter, or ``"gcv"`` to select one from
        ``lambdas`` by generalized cross-validation (pooled over curves).
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    grid = np.asarray(grid, dtype=float)
    if raw.shape[1] != grid.size:
        raise ConfigurationError("raw data columns must match the grid length")
    smoother = Smoother(basis, grid)
    lam = smoother.select_lambda(raw, lambdas) if penalty == "gcv" else float(penalty)
    coefs = smoother.coefficients(raw, lam)
    return FunctionalData(basis, coefs, covariate_id, smoothing_lambda=lam)


@dataclass(frozen=True)
class QuadratureRule:
    grid: np.ndarray
    weights: np.ndarray
    method: str = field(default="simpson")

    def integrate(self, values) -> np.ndarray:
        """Integrate grid values along the last axis."""
        return np.asarray(values) @ self.weights

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "grid": self.grid.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "QuadratureRule":
        return cls(np.asarray(doc["grid"], float), np.asarray(doc["weights"], float), doc["method"])


def quadrature_weights(grid, method: str = "simpson") -> QuadratureRule:
    """Composite quadrature weights on ``grid``.

    Simpson needs an equally spaced grid; with an even number of points the
    last interval is closed with the trapezoid rule.
    """
    grid = np.asarray(grid, dtype=float)
    n = grid.size
    h = np.diff(grid)
    if method == "trapezoid":
        w = np.zeros(n)
        w[:-1] += h / 2.0
        w[1:] += h / 2.0
    elif method == "simpson":
        if n < 3:
            raise ConfigurationError("simpson needs at least 3 grid points")
        if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
            raise ConfigurationError(
                "simpson requires an equally spaced grid; use method='trapezoid'"
            )
        step = h[0]
        n_simpson = n if n % 2 == 1 else n - 1
        w = np.zeros(n)
        w[0:n_simpson:2] = 2.0
        w[1:n_simpson:2] = 4.0
        w[0] = w[n_simpson - 1] = 1.0
        w *= step / 3.0
        if n_simpson < n:
            w[-2] += step / 2.0
            w[-1] += step / 2.0
    else:
        raise ConfigurationError(f"unknown quadrature method {method!r}")
    return QuadratureRule(grid, w, method)


def inner_product(f, g, rule: QuadratureRule) -> np.ndarray:
    """Quadrature inner product of two functions on ``rule.grid``.

    Each operand is a ``FunctionalData``, an array of grid values (last axis
    over the grid), or a scalar constant.
    """

    def values(x):
        if isinstance(x, FunctionalData):
            return x.evaluate(rule.grid)
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            return np.full(rule.grid.size, float(x))
        return x

    return rule.integrate(values(f) * values(g))
