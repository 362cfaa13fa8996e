"""Linear scalar-on-function regression on MFPC scores."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from fnncc.errors import RankError
from fnncc.fpca import MfpcaModel, as_grid_values, compute_scores


@dataclass(frozen=True)
class SofModel:
    """``y = alpha + sum_m b_m xi_m``; ``mfpca`` maps curves to scores."""

    alpha_hat: float
    b_hat: np.ndarray
    mfpca: MfpcaModel

    @property
    def M(self) -> int:
        return self.b_hat.size

    def to_dict(self) -> dict:
        return {"alpha_hat": self.alpha_hat, "b_hat": self.b_hat.tolist(), "mfpca": self.mfpca.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "SofModel":
        return cls(float(doc["alpha_hat"]), np.asarray(doc["b_hat"], float), MfpcaModel.from_dict(doc["mfpca"]))


def fit_sof(y, scores, mfpca: MfpcaModel | None = None, M: int | None = None, check_tol: float = 1e-8) -> SofModel:
    """Least-squares intercept and score coefficients.

    Uses ``alpha = mean(y)`` and ``b_m = sum y xi_m / sum xi_m^2``, which is
    the OLS solution when the score columns are centred and mutually
    orthogonal. A warning is issued if a full OLS solve disagrees by more
    than ``check_tol``.
    """
    y = np.asarray(y, dtype=float)
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    if M is not None:
        scores = scores[:, :M]
    ss = np.sum(scores**2, axis=0)
    for m, value in enumerate(ss):
        if not value > 0:
            raise RankError(f"score column {m + 1} has zero sum of squares")
    if y.size < scores.shape[1] + 1:
        raise RankError("need more observations than coefficients")
    alpha = float(y.mean())
    b = y @ scores / ss

    design = np.column_stack([np.ones(y.size), scores])
    ols, *_ = np.linalg.lstsq(design, y, rcond=None)
    gap = np.max(np.abs(ols - np.r_[alpha, b]))
    if gap > check_tol * max(1.0, np.max(np.abs(ols))):
        warnings.warn(
            f"closed-form SOF coefficients differ from OLS by {gap:.3g}; "
            "score columns are not orthogonal on this sample",
            RuntimeWarning,
            stacklevel=2,
        )
    return SofModel(alpha, b, mfpca)


def predict_sof(model: SofModel, standardized) -> np.ndarray:
    """Predictions for standardized grid values ``(n, P, C)``."""
    scores = compute_scores(model.mfpca, standardized)[:, : model.M]
    return model.alpha_hat + scores @ model.b_hat


def beta_hat(model: SofModel) -> np.ndarray:
    """Functional coefficients on the model grid, shape ``(P, C)``."""
    return np.einsum("m,mpc->pc", model.b_hat, model.mfpca.eigenfunctions[: model.M])


def predict_sof_integral(model: SofModel, standardized) -> np.ndarray:
    """Same prediction as :func:`predict_sof` via ``alpha + sum_p <X_p, beta_p>``."""
    values = as_grid_values(standardized, model.mfpca.rule.grid)
    return model.alpha_hat + np.einsum("npc,pc,c->n", values, beta_hat(model), model.mfpca.rule.weights)
