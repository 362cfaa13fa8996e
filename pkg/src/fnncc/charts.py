"""Shewhart-type control charts on responses or regression residuals.

A chart is built in Phase I from a predictor (with its frozen
preprocessing) and a tuning set; control limits are empirical quantiles of
the tuning statistics. Phase II monitoring applies the frozen predictor to
each new observation and signals outside the limits.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from fnncc.basis import BSplineBasis, GCV_LAMBDAS, Smoother, quadrature_weights
from fnncc.errors import ConfigurationError, SchemaError
from fnncc.fnn import FnnConfig, FnnData, FnnModel, Network, fit_fnn, train_network
from fnncc.fpca import (
    PRESS_THRESHOLD,
    StandardizationFns,
    compute_scores,
    fit_mfpca,
    select_M_press,
    standardize,
)
from fnncc.profiles import ProfileSet
from fnncc.sof import SofModel, fit_sof, predict_sof

PREDICTOR_KINDS = ("none", "sof-linear", "fnn", "rawdata-mlp", "bspline-mlp")
CHART_NAMES = {
    "none": "SCC",
    "sof-linear": "FRCC",
    "fnn": "FNNCC",
    "rawdata-mlp": "RawdataMLPCC",
    "bspline-mlp": "BsplineMLPCC",
}
DEFAULT_SMOOTHING = dict(n_basis=30, order=4, smoothing_lambda=1e-6)


@dataclass
class Preprocessor:
    """Frozen Phase I preprocessing of raw profiles.

    ``mode`` is ``"smoothed"`` (standardized grid values of smoothed
    curves), ``"raw"`` (pointwise standardized raw values) or
    ``"coefficients"`` (column-standardized spline coefficients, flattened).
    """

    mode: str
    grid: np.ndarray
    basis: BSplineBasis | None = None
    smoothing_lambda: float = 0.0
    standardization: StandardizationFns | None = None

    @classmethod
    def fit(cls, data: ProfileSet, mode: str, basis=None, smoothing_lambda=1e-6) -> "Preprocessor":
        if mode not in ("smoothed", "raw", "coefficients"):
            raise ConfigurationError(f"unknown preprocessing mode {mode!r}")
        pre = cls(mode, data.grid.copy(), basis, 0.0)
        if mode != "raw":
            if basis is None:
                raise ConfigurationError("smoothing needs a basis")
            if smoothing_lambda == "gcv":
                smoother = Smoother(basis, data.grid)
                flat = data.raw.reshape(-1, data.grid.size)
                smoothing_lambda = smoother.select_lambda(flat, GCV_LAMBDAS)
            pre.smoothing_lambda = float(smoothing_lambda)
        _, pre.standardization = standardize(pre._unstandardized(data), data.grid)
        return pre

    @cached_property
    def _coef_operator(self) -> np.ndarray:
        smoother = Smoother(self.basis, self.grid)
        return smoother.coefficients(np.eye(self.grid.size), self.smoothing_lambda)

    def _check(self, data: ProfileSet) -> None:
        if data.grid.shape != self.grid.shape or not np.allclose(data.grid, self.grid, rtol=0, atol=1e-12):
            raise SchemaError("profile grid is incompatible with the frozen preprocessing")
        if self.standardization is not None and data.n_covariates != self.standardization.mean_fn.shape[0]:
            raise SchemaError("number of covariates differs from the frozen preprocessing")

    def _unstandardized(self, data: ProfileSet) -> np.ndarray:
        if self.mode == "raw":
            return data.raw
        coefs = data.raw @ self._coef_operator
        if self.mode == "coefficients":
            return coefs
        return coefs @ self.basis.evaluate(self.grid).T

    def smoothed_values(self, data: ProfileSet) -> np.ndarray:
        """Smoothed grid values before standardization, ``(n, P, C)``."""
        self._check(data)
        coefs = data.raw @ self._coef_operator
        return coefs @ self.basis.evaluate(self.grid).T

    def transform(self, data: ProfileSet) -> np.ndarray:
        self._check(data)
        return self.standardization.apply(self._unstandardized(data))

    def flat(self, data: ProfileSet) -> np.ndarray:
        values = self.transform(data)
        return values.reshape(values.shape[0], -1)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "grid": self.grid.tolist(),
            "basis": None if self.basis is None else self.basis.to_dict(),
            "smoothing_lambda": self.smoothing_lambda,
            "standardization": self.standardization.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Preprocessor":
        return cls(
            doc["mode"],
            np.asarray(doc["grid"], float),
            None if doc["basis"] is None else BSplineBasis.from_dict(doc["basis"]),
            float(doc["smoothing_lambda"]),
            StandardizationFns.from_dict(doc["standardization"]),
        )


@dataclass
class Predictor:
    """Fitted response model plus the preprocessing frozen in Phase I."""

    kind: str
    model: object = None
    preprocessor: Preprocessor | None = None

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ConfigurationError(f"unknown predictor kind {self.kind!r}")

    def predict(self, data: ProfileSet) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(len(data))
        if self.kind == "sof-linear":
            return predict_sof(self.model, self.preprocessor.transform(data))
        if self.kind == "fnn":
            return self.model.predict(self.preprocessor.transform(data), data.z)
        return self.model.forward(self.preprocessor.flat(data))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "model": None if self.model is None else self.model.to_dict(),
            "preprocessor": None if self.preprocessor is None else self.preprocessor.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Predictor":
        kind = doc["kind"]
        loaders = {"sof-linear": SofModel, "fnn": FnnModel, "rawdata-mlp": Network, "bspline-mlp": Network}
        model = None if kind == "none" else loaders[kind].from_dict(doc["model"])
        pre = None if doc["preprocessor"] is None else Preprocessor.from_dict(doc["preprocessor"])
        return cls(kind, model, pre)


def smoothing_basis(smoothing: dict | None) -> tuple[BSplineBasis, float]:
    opts = dict(DEFAULT_SMOOTHING, **(smoothing or {}))
    return BSplineBasis(opts["order"], opts["n_basis"]), opts["smoothing_lambda"]


def make_scc_predictor() -> Predictor:
    return Predictor("none")


def make_sof_predictor(
    train: ProfileSet,
    smoothing: dict | None = None,
    press_threshold: float = PRESS_THRESHOLD,
    quadrature: str = "simpson",
) -> Predictor:
    """Linear SOF regression on MFPC scores with PRESS-selected components."""
    basis, lam = smoothing_basis(smoothing)
    pre = Preprocessor.fit(train, "smoothed", basis, lam)
    values = pre.transform(train)
    mfpca = fit_mfpca(values, quadrature_weights(train.grid, quadrature), standardization=pre.standardization)
    scores = compute_scores(mfpca, values)
    M = select_M_press(train.y, scores, press_threshold)
    return Predictor("sof-linear", fit_sof(train.y, scores[:, :M], mfpca), pre)


def make_fnn_predictor(
    train: ProfileSet,
    validation: ProfileSet,
    config: FnnConfig = FnnConfig(),
    smoothing: dict | None = None,
):
    """Train a functional network; returns ``(predictor, history)``."""
    basis, lam = smoothing_basis(smoothing)
    pre = Preprocessor.fit(train, "smoothed", basis, lam)
    model, history = fit_fnn(
        config,
        FnnData(pre.transform(train), train.y, train.z),
        FnnData(pre.transform(validation), validation.y, validation.z),
        train.grid,
    )
    return Predictor("fnn", model, pre), history


def _fit_mlp(kind: str, pre: Preprocessor, train, validation, config: FnnConfig):
    x_tr, x_val = pre.flat(train), pre.flat(validation)
    rng = np.random.default_rng([config.seed, 0])
    net = Network.initialize(x_tr.shape[1], config.n_neurons, config.activations, rng)
    net, history = train_network(net, x_tr, train.y, x_val, validation.y, config)
    return Predictor(kind, net, pre), history


def make_rawdata_mlp_predictor(train: ProfileSet, validation: ProfileSet, config: FnnConfig = FnnConfig()):
    """MLP on pointwise-standardized raw grid values; ``(predictor, history)``."""
    pre = Preprocessor.fit(train, "raw")
    return _fit_mlp("rawdata-mlp", pre, train, validation, config)


def make_bspline_mlp_predictor(
    train: ProfileSet,
    validation: ProfileSet,
    config: FnnConfig = FnnConfig(),
    smoothing: dict | None = None,
):
    """MLP on standardized B-spline coefficients; ``(predictor, history)``."""
    basis, lam = smoothing_basis(smoothing)
    pre = Preprocessor.fit(train, "coefficients", basis, lam)
    return _fit_mlp("bspline-mlp", pre, train, validation, config)


def empirical_quantile(values, q: float) -> float:
    """Inverse empirical CDF: the ``ceil(n q)``-th order statistic."""
    s = np.sort(np.asarray(values, dtype=float))
    k = math.ceil(s.size * q - 1e-9)
    return float(s[min(max(k, 1), s.size) - 1])


@dataclass(frozen=True)
class ChartPoint:
    id: str
    statistic: float
    signal: bool


@dataclass
class ControlChart:
    lcl: float
    ucl: float
    alpha: float
    statistic: str
    predictor: Predictor
    name: str = ""

    def statistics(self, data: ProfileSet) -> np.ndarray:
        if data.y is None:
            raise SchemaError("observations need a response")
        if self.statistic == "response":
            return np.asarray(data.y, dtype=float)
        return data.y - self.predictor.predict(data)

    def signals(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return (values < self.lcl) | (values > self.ucl)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lcl": self.lcl,
            "ucl": self.ucl,
            "alpha": self.alpha,
            "statistic": self.statistic,
            "predictor": self.predictor.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ControlChart":
        return cls(
            float(doc["lcl"]),
            float(doc["ucl"]),
            float(doc["alpha"]),
            doc["statistic"],
            Predictor.from_dict(doc["predictor"]),
            doc.get("name", ""),
        )


def build_chart(predictor: Predictor, tuning: ProfileSet, alpha: float = 0.05, name: str | None = None) -> ControlChart:
    """Control limits from the ``alpha/2`` and ``1 - alpha/2`` tuning quantiles."""
    if not 0 < alpha < 1:
        raise ConfigurationError("alpha must lie in (0, 1)")
    n = len(tuning)
    if n < 2.0 / alpha:
        raise ConfigurationError(f"tuning set of {n} is too small for alpha={alpha} (need {math.ceil(2 / alpha)})")
    if n < 10.0 / alpha:
        warnings.warn(f"tuning set of {n} is small for alpha={alpha}", RuntimeWarning, stacklevel=2)
    statistic = "response" if predictor.kind == "none" else "residual"
    chart = ControlChart(0.0, 0.0, alpha, statistic, predictor, name or CHART_NAMES[predictor.kind])
    values = chart.statistics(tuning)
    chart.lcl = empirical_quantile(values, alpha / 2.0)
    chart.ucl = empirical_quantile(values, 1.0 - alpha / 2.0)
    if not chart.lcl < chart.ucl:
        raise ConfigurationError("degenerate tuning statistics: LCL is not below UCL")
    return chart


def monitor(chart: ControlChart, data: ProfileSet) -> list[ChartPoint]:
    """Phase II chart points; each observation is judged on its own."""
    values = chart.statistics(data)
    flags = chart.signals(values)
    return [ChartPoint(str(i), float(v), bool(f)) for i, v, f in zip(data.ids, values, flags)]
