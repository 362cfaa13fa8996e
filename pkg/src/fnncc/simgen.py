"""Scenario data generation for the run-length study.

Functional covariates are Gaussian processes with a Bessel correlation
around a polynomial-plus-bumps mean, observed with noise on 150 points and
smoothed with 30 cubic B-splines. The scalar response is a (possibly
nonlinear) transform of a linear functional of the smoothed covariate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.special import j0
from scipy.stats import norm

from fnncc.basis import Smoother, make_bspline_basis, quadrature_weights, uniform_grid
from fnncc.errors import CalibrationError, ConfigurationError, FnnccError
from fnncc.profiles import ProfileSet

log = logging.getLogger(__name__)

SCENARIOS = ("A", "B", "C", "D", "E")
PAPER_SIZES = (4000, 1000, 10000, 20000)
DESK_SIZES = (1000, 250, 2000, 4000)
SHIFT_MULTIPLES = (0.5, 1.0, 1.5, 2.0)

# streams of the master seed; one per generated set
_STREAMS = {"train": 0, "validation": 1, "tuning": 2, "oc": 3}


@dataclass(frozen=True)
class MeanModel:
    """``a z^2 + b z + (c + delta) + r * sum_i N(z; m_i, s_i)``."""

    a: float = 0.5
    b: float = -0.3
    c: float = 0.2
    bumps: tuple = ((0.25, 0.05), (0.75, 0.05))
    r: float = 0.2
    delta: float = 0.0

    def __post_init__(self):
        if any(s <= 0 for _, s in self.bumps):
            raise ConfigurationError("bump standard deviations must be positive")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = self.a * t**2 + self.b * t + self.c + self.delta
        for m, s in self.bumps:
            out = out + self.r * norm.pdf(t, loc=m, scale=s)
        return out

    def translated(self, delta: float) -> "MeanModel":
        return replace(self, delta=self.delta + delta)


def bessel_correlation(grid, length_scale: float) -> np.ndarray:
    """``max(J0(|s - t| / length_scale), 0)`` on the grid."""
    grid = np.asarray(grid, dtype=float)
    if np.isinf(length_scale):
        return np.ones((grid.size, grid.size))
    lag = np.abs(grid[:, None] - grid[None, :])
    return np.maximum(j0(lag / length_scale), 0.0)


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """Factor ``F`` with ``F F^T`` the nearest PSD matrix by eigenvalue clipping."""
    evals, evecs = np.linalg.eigh((cov + cov.T) / 2.0)
    clipped = np.clip(evals, 0.0, None)
    lost = np.sum(clipped - evals)
    if lost > 1e-8 * np.trace(cov):
        log.info("clipped negative eigenvalues, reconstruction error %.3g of trace", lost / np.trace(cov))
    factor = evecs * np.sqrt(clipped)
    if not np.all(np.isfinite(factor)):
        raise FnnccError("covariance factor is not finite")
    return factor


@dataclass(frozen=True)
class CovariateModel:
    """Generating model for one functional covariate observed with noise."""

    mean_model: MeanModel = field(default_factory=MeanModel)
    n_points: int = 150
    length_scale: float = 0.25
    variance: float = 1.0
    meas_noise_sd: float = 0.05
    n_basis: int = 30
    smoothing_lambda: float = 1e-6

    @cached_property
    def grid(self) -> np.ndarray:
        return uniform_grid(self.n_points)

    @cached_property
    def factor(self) -> np.ndarray:
        return psd_factor(self.variance * bessel_correlation(self.grid, self.length_scale))

    @cached_property
    def smoother(self) -> Smoother:
        return Smoother(make_bspline_basis(4, self.n_basis), self.grid)

    @cached_property
    def smoothing_operator(self) -> np.ndarray:
        return self.smoother.operator(self.smoothing_lambda)

    def sample(self, n: int, rng, delta: float = 0.0) -> np.ndarray:
        """Raw noisy profiles ``(n, C)``; ``delta`` translates the mean."""
        if n < 1:
            raise ConfigurationError("n must be at least 1")
        mean = self.mean_model.translated(delta)(self.grid)
        latent = rng.standard_normal((n, self.factor.shape[1])) @ self.factor.T
        noise = self.meas_noise_sd * rng.standard_normal((n, self.n_points))
        return mean + latent + noise

    def smooth(self, raw: np.ndarray) -> np.ndarray:
        """Smoothed grid values of raw profiles."""
        return raw @ self.smoothing_operator.T

    def smoothed_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Population mean and covariance of the smoothed profiles on the grid."""
        S = self.smoothing_operator
        raw_cov = self.factor @ self.factor.T + self.meas_noise_sd**2 * np.eye(self.n_points)
        return S @ self.mean_model(self.grid), S @ raw_cov @ S.T


def gen_covariates(
    n: int,
    mean_model: MeanModel | None = None,
    grid=None,
    length_scale: float = 0.25,
    meas_noise_sd: float = 0.05,
    seed=0,
) -> np.ndarray:
    """Draw ``n`` raw covariate profiles on a uniform grid."""
    n_points = 150 if grid is None else np.asarray(grid).size
    model = CovariateModel(
        mean_model=mean_model or MeanModel(),
        n_points=n_points,
        length_scale=length_scale,
        meas_noise_sd=meas_noise_sd,
    )
    return model.sample(n, np.random.default_rng(seed))


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "A"
    u: float = 2.0
    target_R2: float = 0.97
    mu_y: float = 0.0
    v_y: float = 1.0
    noise_sd: float | None = None

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.kind!r}")
        if self.u <= 0:
            raise ConfigurationError("u must be positive")

    @property
    def error_sd(self) -> float:
        """Response noise sd: from the R2 target for A, otherwise 0.1."""
        if self.noise_sd is not None:
            return self.noise_sd
        if self.kind == "A":
            return float(np.sqrt(self.v_y * (1.0 - self.target_R2)))
        return 0.1

    def transform(self, lin: np.ndarray) -> np.ndarray:
        if self.kind == "A":
            return lin
        if self.kind == "B":
            return np.exp(lin)
        if self.kind == "C":
            return np.abs(lin)
        if self.kind == "D":
            return np.log(np.abs(lin) + self.u)
        return lin**2


@dataclass(frozen=True)
class ShiftSpec:
    response_shift_multiples: tuple = (0.0,)
    covariate_delta: float = 0.0


@dataclass(frozen=True)
class LinearTruth:
    """Calibrated linear functional ``L = alpha + sum_j g_j (x_j - center_j)``.

    ``beta`` is the coefficient function on the population-standardized
    scale; ``g`` folds in quadrature weights, the population SD and the
    calibration scale.
    """

    beta: np.ndarray
    g: np.ndarray
    center: np.ndarray
    sd: np.ndarray
    alpha: float
    scale: float

    def linear_predictor(self, smoothed: np.ndarray) -> np.ndarray:
        smoothed = np.asarray(smoothed)
        if smoothed.ndim == 3:
            smoothed = smoothed[:, 0, :]
        return self.alpha + (smoothed - self.center) @ self.g


def population_eigenfunctions(cov_model: CovariateModel, n_components: int = 3):
    """Leading eigenfunctions of the standardized smoothed covariate process."""
    center, cov = cov_model.smoothed_moments()
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    rule = quadrature_weights(cov_model.grid)
    sw = np.sqrt(rule.weights)
    evals, evecs = np.linalg.eigh(sw[:, None] * corr * sw[None, :])
    order = np.argsort(evals)[::-1][:n_components]
    psi = (evecs[:, order] / sw[:, None]).T
    idx = np.argmax(np.abs(psi), axis=1)
    psi *= np.sign(psi[np.arange(n_components), idx])[:, None]
    return evals[order], psi, center, sd, cov, rule


def calibrate_truth(
    cov_model: CovariateModel,
    scenario: ScenarioSpec = ScenarioSpec(),
    beta_coefs=(-1.0, 0.6, 0.3),
) -> LinearTruth:
    """Build ``beta`` from the leading eigenfunctions and scale it to hit R2.

    The variance of the linear functional is computed exactly from the
    population covariance of the smoothed process, so that
    ``var(L) = R2 * v_y`` and ``E[L] = mu_y``.
    """
    _, psi, center, sd, cov, rule = population_eigenfunctions(cov_model, len(beta_coefs))
    beta = np.asarray(beta_coefs, dtype=float) @ psi
    g_raw = rule.weights * beta / sd
    var = float(g_raw @ cov @ g_raw)
    if not var > 1e-14:
        raise CalibrationError("linear predictor has (near) zero variance")
    scale = np.sqrt(scenario.target_R2 * scenario.v_y / var)
    return LinearTruth(beta, scale * g_raw, center, sd, scenario.mu_y, float(scale))


def gen_response(
    scenario: ScenarioSpec,
    smoothed: np.ndarray,
    truth: LinearTruth,
    seed=0,
) -> tuple[np.ndarray, float]:
    """Responses ``G(L) + eps`` and their sample SD.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(seed)
    lin = truth.linear_predictor(smoothed)
    y = scenario.transform(lin) + scenario.error_sd * rng.standard_normal(lin.size)
    return y, float(np.std(y, ddof=1))


def apply_shifts(data: ProfileSet, response_shift: float, covariate_delta: float, s_y: float) -> ProfileSet:
    """Shift responses by ``response_shift * s_y`` and covariates by ``covariate_delta``.

    The covariate translation equals regenerating the profiles from the
    translated mean model with the same random stream. Responses are kept
    from the unshifted covariates, so only the chart's view of X moves.
    """
    out = replace(
        data,
        raw=data.raw + covariate_delta,
        y=None if data.y is None else data.y + response_shift * s_y,
        meta=dict(data.meta, response_shift=response_shift, covariate_delta=covariate_delta),
    )
    return out


@dataclass
class SimulatedData:
    train: ProfileSet
    validation: ProfileSet
    tuning: ProfileSet
    oc: dict
    s_y: float
    scenario: ScenarioSpec
    truth: LinearTruth


def _draw_set(n, cov_model, scenario, truth, rng, prefix) -> ProfileSet:
    raw = cov_model.sample(n, rng)
    smoothed = cov_model.smooth(raw)
    y, _ = gen_response(scenario, smoothed, truth, rng)
    lin = truth.linear_predictor(smoothed)
    ids = np.array([f"{prefix}{i}" for i in range(n)])
    return ProfileSet(raw, cov_model.grid, y=y, ids=ids, meta={"linear_predictor": lin})


def make_datasets(
    scenario: ScenarioSpec | str = "A",
    shift: ShiftSpec = ShiftSpec(),
    sizes=DESK_SIZES,
    seed: int = 0,
    cov_model: CovariateModel | None = None,
    truth: LinearTruth | None = None,
) -> SimulatedData:
    """Training, validation, tuning and out-of-control sets for one scenario.

    Each set uses its own random stream of ``seed``. ``oc`` maps every
    response-shift multiple to the same out-of-control draw shifted by that
    multiple of ``s_y`` (and by ``shift.covariate_delta`` in the covariates).
    """
    if isinstance(scenario, str):
        scenario = ScenarioSpec(kind=scenario)
    if any(s < 1 for s in sizes):
        raise ConfigurationError("all set sizes must be at least 1")
    cov_model = cov_model or CovariateModel()
    truth = truth or calibrate_truth(cov_model, scenario)
    sets = {}
    for name, n in zip(("train", "validation", "tuning", "oc"), sizes):
        rng = np.random.default_rng([seed, _STREAMS[name]])
        sets[name] = _draw_set(n, cov_model, scenario, truth, rng, prefix=name[:2])
    reference = np.concatenate([sets[k].y for k in ("train", "validation", "tuning")])
    s_y = float(np.std(reference, ddof=1))
    oc = {
        float(m): apply_shifts(sets["oc"], m, shift.covariate_delta, s_y)
        for m in shift.response_shift_multiples
    }
    return SimulatedData(sets["train"], sets["validation"], sets["tuning"], oc, s_y, scenario, truth)
