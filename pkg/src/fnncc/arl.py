"""Average run length estimation and simulation studies.

For a Shewhart chart on independent observations the run length is
geometric, so ``ARL = 1 / p`` with ``p`` the per-point signal probability.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from io import BytesIO, StringIO

import numpy as np

from fnncc.charts import (
    CHART_NAMES,
    ControlChart,
    Preprocessor,
    smoothing_basis,
    build_chart,
    make_bspline_mlp_predictor,
    make_fnn_predictor,
    make_rawdata_mlp_predictor,
    make_scc_predictor,
    make_sof_predictor,
)
from fnncc.errors import ConfigurationError, TrainingDivergedError
from fnncc.fnn import FnnConfig, FnnData, derived_seed, tune_hyperparameters
from fnncc.io import atomic_write_bytes, atomic_write_text
from fnncc.profiles import ProfileSet
from fnncc.simgen import DESK_SIZES, SCENARIOS, SHIFT_MULTIPLES, ShiftSpec, apply_shifts, make_datasets

log = logging.getLogger(__name__)

CHARTS = tuple(CHART_NAMES.values())
ARL_COLUMNS = ("scenario", "chart", "shift_multiple", "covariate_delta", "n_oc", "p_hat", "arl", "se_arl")
DEFAULT_TUNING_GRID = (
    FnnConfig(),
    FnnConfig(batch_size=128),
    FnnConfig(n_neurons=(16, 8, 1)),
    FnnConfig(n_neurons=(16, 8, 1), batch_size=128),
)


@dataclass(frozen=True)
class ArlEstimate:
    chart: str
    scenario: str
    shift_multiple: float
    covariate_delta: float
    p_hat: float
    arl: float
    se_arl: float
    n_oc: int
    censored: bool = False
    failed: bool = False

    def interval(self, k: float = 3.0) -> tuple[float, float]:
        return self.arl - k * self.se_arl, self.arl + k * self.se_arl


def arl_from_signals(signals, chart: str = "", scenario: str = "", shift_multiple: float = 0.0, covariate_delta: float = 0.0) -> ArlEstimate:
    """``1 / p_hat`` with delta-method standard error.

    With no signals ``p_hat`` is floored at ``1 / (n + 1)`` and the
    estimate is flagged as censored.
    """
    signals = np.asarray(signals, dtype=bool)
    n = signals.size
    if n == 0:
        raise ConfigurationError("need at least one out-of-control observation")
    p = float(signals.sum()) / n
    censored = p == 0
    if censored:
        p = 1.0 / (n + 1)
    se = math.sqrt(p * (1.0 - p) / n) / p**2
    return ArlEstimate(chart, scenario, float(shift_multiple), float(covariate_delta), float(p), 1.0 / p, se, n, bool(censored))


def estimate_arl(chart: ControlChart, oc_set: ProfileSet, scenario: str = "") -> ArlEstimate:
    signals = chart.signals(chart.statistics(oc_set))
    return arl_from_signals(
        signals,
        chart.name,
        scenario,
        oc_set.meta.get("response_shift", 0.0),
        oc_set.meta.get("covariate_delta", 0.0),
    )


def simulate_run_lengths(signal_prob: float, n_runs: int, rng, max_length: int = 10**7) -> np.ndarray:
    """Explicit run lengths: points until the first signal, per run."""
    if not 0 < signal_prob <= 1:
        raise ConfigurationError("signal probability must lie in (0, 1]")
    lengths = np.empty(n_runs, dtype=np.int64)
    for r in range(n_runs):
        k = 1
        while rng.random() >= signal_prob and k < max_length:
            k += 1
        lengths[r] = k
    return lengths


def run_lengths_from_stream(signals) -> np.ndarray:
    """Run lengths obtained by scanning a signal stream and restarting after each alarm."""
    idx = np.flatnonzero(np.asarray(signals, dtype=bool))
    return np.diff(np.r_[-1, idx])


def fit_charts(data, charts, fnn_config, tuning_grid, seed, alpha, n_folds):
    """One predictor per chart kind, trained on the scenario's IC sets."""
    out, failed = {}, []
    config = fnn_config
    needs_nn = any(c in charts for c in ("FNNCC", "RawdataMLPCC", "BsplineMLPCC"))
    if needs_nn and config is None:
        pre = Preprocessor.fit(data.train, "smoothed", *smoothing_basis(None))
        grid = data.train.grid
        best, _ = tune_hyperparameters(
            tuning_grid, FnnData(pre.transform(data.train), data.train.y), grid,
            validation=FnnData(pre.transform(data.validation), data.validation.y),
            n_folds=n_folds, seed=seed,
        )
        config = best
        log.info("scenario %s: tuned config %s", data.scenario.kind, config)
    makers = {
        "SCC": lambda: make_scc_predictor(),
        "FRCC": lambda: make_sof_predictor(data.train),
        "FNNCC": lambda: make_fnn_predictor(data.train, data.validation, config)[0],
        "RawdataMLPCC": lambda: make_rawdata_mlp_predictor(data.train, data.validation, config)[0],
        "BsplineMLPCC": lambda: make_bspline_mlp_predictor(data.train, data.validation, config)[0],
    }
    for name in charts:
        if name not in makers:
            raise ConfigurationError(f"unknown chart {name!r}")
        try:
            out[name] = build_chart(makers[name](), data.tuning, alpha, name)
        except TrainingDivergedError as exc:
            log.warning("scenario %s, chart %s: %s", data.scenario.kind, name, exc)
            failed.append(name)
    return out, failed, config


def _study_cell(args) -> list[ArlEstimate]:
    scenario, shifts, deltas, charts, sizes, seed, fnn_config, tuning_grid, alpha, n_folds = args
    data = make_datasets(scenario, ShiftSpec((0.0,)), sizes, seed)
    fitted, failed, _ = fit_charts(data, charts, fnn_config, tuning_grid, seed, alpha, n_folds)
    base = data.oc[0.0]
    rows = []
    for delta in deltas:
        for m in shifts:
            oc = apply_shifts(base, m, delta, data.s_y)
            for name in charts:
                if name in failed:
                    rows.append(ArlEstimate(name, scenario, m, delta, math.nan, math.nan, math.nan, len(oc), failed=True))
                else:
                    rows.append(estimate_arl(fitted[name], oc, scenario))
    return rows


def run_study(
    scenarios=SCENARIOS,
    shifts=(0.0,) + SHIFT_MULTIPLES,
    charts=("SCC", "FRCC", "FNNCC"),
    sizes=DESK_SIZES,
    seed: int = 0,
    covariate_deltas=(0.0,),
    fnn_config: FnnConfig | None = None,
    tuning_grid=DEFAULT_TUNING_GRID,
    alpha: float = 0.05,
    n_folds: int = 5,
    workers: int = 1,
) -> list[ArlEstimate]:
    """ARL table over scenarios, response shifts, covariate shifts and charts.

    Every scenario gets its own data (seeded by ``(seed, scenario index)``)
    and one trained predictor per chart, reused across all shifts. When
    ``fnn_config`` is None the network hyperparameters are chosen by
    cross-validated grid search over ``tuning_grid``. Shift 0 gives ARL0.
    """
    cells = [
        (s, tuple(shifts), tuple(covariate_deltas), tuple(charts), tuple(sizes),
         derived_seed(seed, SCENARIOS.index(s)), fnn_config, tuple(tuning_grid), alpha, n_folds)
        for s in scenarios
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_study_cell, cells))
    else:
        results = [_study_cell(c) for c in cells]
    return [row for rows in results for row in rows]


def arl_rows(estimates) -> list[dict]:
    return [{k: asdict(e)[k] for k in ARL_COLUMNS} for e in estimates]


def write_arl_csv(estimates, path) -> None:
    buf = StringIO()
    writer = csv.DictWriter(buf, fieldnames=ARL_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in arl_rows(estimates):
        writer.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})
    atomic_write_text(path, buf.getvalue())


def read_arl_csv(path) -> list[ArlEstimate]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append(ArlEstimate(
            r["chart"], r["scenario"], float(r["shift_multiple"]), float(r["covariate_delta"]),
            float(r["p_hat"]), float(r["arl"]), float(r["se_arl"]), int(r["n_oc"]),
        ))
    return out


def plot_arl(estimates, path, scenario: str | None = None, covariate_delta: float = 0.0) -> None:
    """SVG line plot of ARL against shift multiple, one series per chart."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sel = [e for e in estimates if (scenario is None or e.scenario == scenario) and e.covariate_delta == covariate_delta]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for chart in dict.fromkeys(e.chart for e in sel):
        pts = sorted((e.shift_multiple, e.arl, e.se_arl) for e in sel if e.chart == chart)
        x, y, se = map(np.asarray, zip(*pts))
        ax.errorbar(x, y, yerr=3 * se, marker="o", capsize=3, label=chart)
    ax.set_xlabel("shift multiple of s_y")
    ax.set_ylabel("ARL")
    if scenario:
        ax.set_title(f"Scenario {scenario}, delta={covariate_delta:g}")
    ax.legend()
    fig.tight_layout()
    buf = BytesIO()
    with plt.rc_context({"svg.hashsalt": "fnncc"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
