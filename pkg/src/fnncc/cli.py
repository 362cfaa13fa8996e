"""Command-line front end.

Every subcommand reads a JSON config (``--config``), validates it against a
schema that rejects unknown keys, and writes its outputs into ``--out-dir``.
Failures print one JSON error record on stderr and exit with the error's
code. ``FNNCC_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from fnncc import io
from fnncc.arl import (
    ArlEstimate,
    DEFAULT_TUNING_GRID,
    fit_charts,
    estimate_arl,
    plot_arl,
    run_study,
    write_arl_csv,
)
from fnncc.charts import (
    Preprocessor,
    build_chart,
    make_bspline_mlp_predictor,
    make_fnn_predictor,
    make_rawdata_mlp_predictor,
    make_scc_predictor,
    make_sof_predictor,
    monitor,
    smoothing_basis,
)
from fnncc.errors import ConfigurationError, FnnccError, InputFileError
from fnncc.fnn import FnnConfig, FnnData, functional_weights, tune_hyperparameters
from fnncc.profiles import ProfileSet
from fnncc.simgen import DESK_SIZES, SCENARIOS, SHIFT_MULTIPLES, ScenarioSpec, ShiftSpec, SimulatedData, make_datasets
from fnncc.sof import beta_hat

log = logging.getLogger("fnncc")

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_PATH = {"type": "string", "minLength": 1}
_DATASET = {
    "type": "object",
    "properties": {"profiles": _PATH, "responses": _PATH},
    "required": ["profiles"],
    "additionalProperties": False,
}
_SMOOTHING = {
    "type": "object",
    "properties": {
        "n_basis": _POS_INT,
        "order": _POS_INT,
        "smoothing_lambda": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "gcv"}]},
    },
    "additionalProperties": False,
}
_FNN = {
    "type": "object",
    "properties": {
        "n_neurons": {"type": "array", "items": _POS_INT, "minItems": 1},
        "activations": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "n_weight_basis": _POS_INT,
        "weight_basis_order": _POS_INT,
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "batch_size": _POS_INT,
        "max_epochs": _POS_INT,
        "patience": {"type": "integer", "minimum": 0},
        "lr_decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "quadrature": {"enum": ["simpson", "trapezoid"]},
        "seed": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}
_GRID = {"type": "object", "properties": {k: {"type": "array", "minItems": 1} for k in _FNN["properties"]}, "additionalProperties": False}
_SIZES = {"type": "array", "items": _POS_INT, "minItems": 4, "maxItems": 4}
_SHIFTS = {"type": "array", "items": _NUM, "minItems": 1}
_CHARTS = {"type": "array", "items": {"enum": ["SCC", "FRCC", "FNNCC", "RawdataMLPCC", "BsplineMLPCC"]}, "minItems": 1}
_KIND = {"enum": ["none", "sof-linear", "fnn", "rawdata-mlp", "bspline-mlp"]}
_ALPHA = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}


def _schema(properties: dict, required=()) -> dict:
    return {"type": "object", "properties": properties, "required": list(required), "additionalProperties": False}


SCHEMAS = {
    "simulate": _schema(
        {
            "scenario": {"enum": list(SCENARIOS)},
            "sizes": _SIZES,
            "shifts": _SHIFTS,
            "covariate_delta": _NUM,
            "noise_sd": {"type": "number", "minimum": 0},
        },
        ["scenario"],
    ),
    "ingest": _schema(
        {
            "profiles": _PATH,
            "responses": _PATH,
            "trim": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "n_basis": _POS_INT,
            "order": _POS_INT,
            "penalty": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "gcv"}]},
            "rms": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
        },
        ["profiles"],
    ),
    "tune": _schema(
        {"train": _DATASET, "validation": _DATASET, "grid": _GRID, "n_folds": {"type": "integer", "minimum": 2}, "smoothing": _SMOOTHING},
        ["train"],
    ),
    "train": _schema(
        {"kind": _KIND, "train": _DATASET, "validation": _DATASET, "fnn": _FNN, "smoothing": _SMOOTHING, "press_threshold": _NUM},
        ["kind", "train"],
    ),
    "build-chart": _schema({"predictor": _PATH, "tuning": _DATASET, "alpha": _ALPHA, "name": {"type": "string"}}, ["predictor", "tuning"]),
    "monitor": _schema({"chart": _PATH, "observations": _DATASET}, ["chart", "observations"]),
    "arl-study": _schema(
        {
            "scenarios": {"type": "array", "items": {"enum": list(SCENARIOS)}, "minItems": 1},
            "data_dir": _PATH,
            "shifts": _SHIFTS,
            "covariate_deltas": _SHIFTS,
            "charts": _CHARTS,
            "sizes": _SIZES,
            "alpha": _ALPHA,
            "n_folds": {"type": "integer", "minimum": 2},
            "fnn": _FNN,
            "grid": _GRID,
            "plots": {"type": "boolean"},
        }
    ),
    "export-weights": _schema({"predictor": _PATH, "n_points": {"type": "integer", "minimum": 2}}, ["predictor"]),
}


class _Context:
    def __init__(self, config: dict, config_dir: Path, out_dir: Path, seed: int, workers: int):
        self.config = config
        self.config_dir = config_dir
        self.out_dir = out_dir
        self.seed = seed
        self.workers = workers

    def path(self, p) -> Path:
        p = Path(p)
        full = p if p.is_absolute() else self.config_dir / p
        if not full.exists():
            raise InputFileError(f"input file not found: {full}")
        return full

    def dataset(self, ref: dict) -> ProfileSet:
        responses = self.path(ref["responses"]) if "responses" in ref else None
        return io.read_profiles_csv(self.path(ref["profiles"]), responses)

    def out(self, name: str) -> Path:
        return self.out_dir / name


def load_config(path, command: str) -> dict:
    if path is None:
        config = {}
    else:
        try:
            config = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise InputFileError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc.msg} (byte offset {exc.pos})") from exc
    try:
        jsonschema.validate(config, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"invalid config at {where}: {exc.message}") from exc
    return config


def expand_grid(grid: dict | None, seed: int) -> list[FnnConfig]:
    if not grid:
        return [FnnConfig(**{**c.to_dict(), "seed": seed}) for c in DEFAULT_TUNING_GRID]
    keys = sorted(grid)
    return [FnnConfig(**dict(zip(keys, values)), **({} if "seed" in grid else {"seed": seed})) for values in itertools.product(*(grid[k] for k in keys))]


def _fnn_config(doc: dict | None, seed: int) -> FnnConfig:
    doc = dict(doc or {})
    doc.setdefault("seed", seed)
    return FnnConfig(**doc)


# -- subcommands -------------------------------------------------------------


def cmd_simulate(ctx: _Context) -> dict:
    """Generate training, validation, tuning and out-of-control sets."""
    cfg = ctx.config
    scenario = ScenarioSpec(cfg["scenario"], noise_sd=cfg.get("noise_sd"))
    shifts = tuple(cfg.get("shifts", (0.0,) + SHIFT_MULTIPLES))
    data = make_datasets(scenario, ShiftSpec(shifts, cfg.get("covariate_delta", 0.0)), tuple(cfg.get("sizes", DESK_SIZES)), ctx.seed)
    for name in ("train", "validation", "tuning"):
        ps = getattr(data, name)
        io.write_profiles_csv(ctx.out(f"{name}_profiles.csv"), ps)
        io.write_responses_csv(ctx.out(f"{name}_responses.csv"), ps)
    oc_files = []
    first = next(iter(data.oc.values()))
    io.write_profiles_csv(ctx.out("oc_profiles.csv"), first)
    for m, ps in data.oc.items():
        name = f"oc_responses_{m:g}.csv"
        io.write_responses_csv(ctx.out(name), ps)
        oc_files.append({"shift_multiple": m, "responses": name})
    meta = {
        "scenario": scenario.kind,
        "noise_sd": scenario.error_sd,
        "seed": ctx.seed,
        "sizes": [len(data.train), len(data.validation), len(data.tuning), len(first)],
        "s_y": data.s_y,
        "covariate_delta": cfg.get("covariate_delta", 0.0),
        "oc": oc_files,
    }
    io.atomic_write_text(ctx.out("simulation.json"), json.dumps(meta, indent=1) + "\n")
    return {"s_y": data.s_y, "files": len(oc_files) + 7}


def cmd_ingest(ctx: _Context) -> dict:
    """Validate, trim, re-map and smooth external profile CSVs."""
    cfg = ctx.config
    result = io.ingest(
        ctx.path(cfg["profiles"]),
        ctx.path(cfg["responses"]) if "responses" in cfg else None,
        trim=cfg.get("trim", 0.0),
        n_basis=cfg.get("n_basis", 70),
        order=cfg.get("order", 4),
        penalty=cfg.get("penalty", "gcv"),
        rms=tuple(cfg["rms"]) if "rms" in cfg else None,
    )
    io.write_profiles_csv(ctx.out("profiles.csv"), result.profiles)
    if result.profiles.y is not None:
        io.write_responses_csv(ctx.out("responses.csv"), result.profiles)
    io.save_document(
        ctx.out("functional.json"),
        "functional-data",
        {"sample_ids": result.profiles.ids.tolist(), "covariates": [io.functional_to_dict(fd) for fd in result.functional]},
    )
    return {"n_samples": len(result.profiles), "covariates": list(result.profiles.covariate_ids),
            "smoothing_lambda": [fd.smoothing_lambda for fd in result.functional]}


def cmd_tune(ctx: _Context) -> dict:
    """Cross-validated grid search over network hyperparameters."""
    cfg = ctx.config
    train = ctx.dataset(cfg["train"])
    pre = Preprocessor.fit(train, "smoothed", *smoothing_basis(cfg.get("smoothing")))
    validation = None
    if "validation" in cfg:
        val = ctx.dataset(cfg["validation"])
        validation = FnnData(pre.transform(val), val.y)
    configs = expand_grid(cfg.get("grid"), ctx.seed)
    best, table = tune_hyperparameters(
        configs, FnnData(pre.transform(train), train.y), train.grid,
        validation=validation, n_folds=cfg.get("n_folds", 5), seed=ctx.seed,
    )
    lines = ["index,n_parameters,cv_mse,diverged,config"]
    for row in table:
        lines.append(f"{row['index']},{row['n_parameters']},{row['cv_mse']!r},{int(row['diverged'])},\"{json.dumps(row['config'].to_dict()).replace(chr(34), chr(34) * 2)}\"")
    io.atomic_write_text(ctx.out("tuning_table.csv"), "\n".join(lines) + "\n")
    io.atomic_write_text(ctx.out("best_config.json"), json.dumps(best.to_dict(), indent=1) + "\n")
    return {"best": best.to_dict(), "cv_mse": min(r["cv_mse"] for r in table)}


def cmd_train(ctx: _Context) -> dict:
    """Fit a predictor and save it as a JSON document."""
    cfg = ctx.config
    kind = cfg["kind"]
    train = ctx.dataset(cfg["train"])
    smoothing = cfg.get("smoothing")
    extra = {}
    if kind == "none":
        predictor = make_scc_predictor()
    elif kind == "sof-linear":
        predictor = make_sof_predictor(train, smoothing, cfg.get("press_threshold", 0.01))
        extra["M"] = predictor.model.M
    else:
        if "validation" not in cfg:
            raise ConfigurationError(f"training a {kind} predictor needs a validation set")
        validation = ctx.dataset(cfg["validation"])
        config = _fnn_config(cfg.get("fnn"), ctx.seed)
        if kind == "fnn":
            predictor, history = make_fnn_predictor(train, validation, config, smoothing)
        elif kind == "rawdata-mlp":
            predictor, history = make_rawdata_mlp_predictor(train, validation, config)
        else:
            predictor, history = make_bspline_mlp_predictor(train, validation, config, smoothing)
        extra.update(config=config.to_dict(), best_epoch=history.best_epoch, stopped_epoch=history.stopped_epoch,
                     validation_mse=history.validation_mse[history.best_epoch - 1])
    io.save_predictor(ctx.out("predictor.json"), predictor, extra)
    if train.y is not None:
        extra["train_mse"] = float(np.mean((train.y - predictor.predict(train)) ** 2))
    return extra


def cmd_build_chart(ctx: _Context) -> dict:
    """Compute control limits from a tuning set."""
    cfg = ctx.config
    predictor = io.load_predictor(ctx.path(cfg["predictor"]))
    chart = build_chart(predictor, ctx.dataset(cfg["tuning"]), cfg.get("alpha", 0.05), cfg.get("name"))
    io.save_chart(ctx.out("chart.json"), chart)
    return {"name": chart.name, "lcl": chart.lcl, "ucl": chart.ucl, "alpha": chart.alpha}


def cmd_monitor(ctx: _Context) -> dict:
    """Apply a saved chart to Phase II observations."""
    cfg = ctx.config
    chart = io.load_chart(ctx.path(cfg["chart"]))
    points = monitor(chart, ctx.dataset(cfg["observations"]))
    io.write_points_csv(ctx.out("points.csv"), points, chart)
    n_sig = sum(p.signal for p in points)
    return {"n": len(points), "signals": n_sig, "signal_fraction": n_sig / max(len(points), 1)}


def _study_from_dir(ctx: _Context, cfg: dict) -> list[ArlEstimate]:
    root = ctx.path(cfg["data_dir"])
    meta = json.loads((root / "simulation.json").read_text())
    sets = {
        name: io.read_profiles_csv(root / f"{name}_profiles.csv", root / f"{name}_responses.csv")
        for name in ("train", "validation", "tuning")
    }
    data = SimulatedData(sets["train"], sets["validation"], sets["tuning"], {}, meta["s_y"],
                         ScenarioSpec(meta["scenario"]), None)
    charts = tuple(cfg.get("charts", ("SCC", "FRCC", "FNNCC")))
    fnn = _fnn_config(cfg["fnn"], ctx.seed) if "fnn" in cfg else None
    fitted, failed, _ = fit_charts(data, charts, fnn, expand_grid(cfg.get("grid"), ctx.seed), ctx.seed,
                                    cfg.get("alpha", 0.05), cfg.get("n_folds", 5))
    rows = []
    for oc in meta["oc"]:
        ps = io.read_profiles_csv(root / "oc_profiles.csv", root / oc["responses"])
        ps.meta.update(response_shift=oc["shift_multiple"], covariate_delta=meta["covariate_delta"])
        for name in charts:
            if name in failed:
                rows.append(ArlEstimate(name, meta["scenario"], oc["shift_multiple"], meta["covariate_delta"],
                                        np.nan, np.nan, np.nan, len(ps), failed=True))
            else:
                rows.append(estimate_arl(fitted[name], ps, meta["scenario"]))
    return rows


def cmd_arl_study(ctx: _Context) -> dict:
    """Estimate ARL tables by simulation."""
    cfg = ctx.config
    if "data_dir" in cfg:
        if "scenarios" in cfg or "sizes" in cfg or "covariate_deltas" in cfg or "shifts" in cfg:
            raise ConfigurationError("data_dir fixes scenario, sizes and shifts; remove them from the config")
        rows = _study_from_dir(ctx, cfg)
    else:
        rows = run_study(
            scenarios=tuple(cfg.get("scenarios", SCENARIOS)),
            shifts=tuple(cfg.get("shifts", (0.0,) + SHIFT_MULTIPLES)),
            charts=tuple(cfg.get("charts", ("SCC", "FRCC", "FNNCC"))),
            sizes=tuple(cfg.get("sizes", DESK_SIZES)),
            seed=ctx.seed,
            covariate_deltas=tuple(cfg.get("covariate_deltas", (0.0,))),
            fnn_config=_fnn_config(cfg["fnn"], ctx.seed) if "fnn" in cfg else None,
            tuning_grid=expand_grid(cfg.get("grid"), ctx.seed),
            alpha=cfg.get("alpha", 0.05),
            n_folds=cfg.get("n_folds", 5),
            workers=ctx.workers,
        )
    write_arl_csv(rows, ctx.out("arl.csv"))
    if cfg.get("plots", True):
        for scenario in dict.fromkeys(r.scenario for r in rows):
            for delta in dict.fromkeys(r.covariate_delta for r in rows):
                plot_arl(rows, ctx.out(f"arl_{scenario}_delta{delta:g}.svg"), scenario, delta)
    return {"rows": len(rows), "failed": sum(r.failed for r in rows)}


def cmd_export_weights(ctx: _Context) -> dict:
    """Write functional weights (FNN) or coefficients (SOF) on a grid."""
    cfg = ctx.config
    predictor = io.load_predictor(ctx.path(cfg["predictor"]))
    if predictor.kind == "fnn":
        grid = np.linspace(0.0, 1.0, cfg["n_points"]) if "n_points" in cfg else predictor.model.rule.grid
        weights = functional_weights(predictor.model, grid)
    elif predictor.kind == "sof-linear":
        if "n_points" in cfg:
            raise ConfigurationError("SOF coefficients are only available on the model grid")
        grid = predictor.model.mfpca.rule.grid
        weights = beta_hat(predictor.model)
    else:
        raise ConfigurationError(f"a {predictor.kind} predictor has no functional weights")
    cov_ids = [f"X{p + 1}" for p in range(weights.shape[0])]
    lines = ["covariate_id,t,weight"]
    for p, cid in enumerate(cov_ids):
        lines += [f"{cid},{t!r},{w!r}" for t, w in zip(grid.tolist(), weights[p].tolist())]
    io.atomic_write_text(ctx.out("weights.csv"), "\n".join(lines) + "\n")
    return {"kind": predictor.kind, "n_points": int(grid.size), "n_covariates": len(cov_ids)}


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "tune": cmd_tune,
    "train": cmd_train,
    "build-chart": cmd_build_chart,
    "monitor": cmd_monitor,
    "arl-study": cmd_arl_study,
    "export-weights": cmd_export_weights,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fnncc", description="Functional neural network control charts.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="JSON config document")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default=".")
        p.add_argument("--workers", type=int, default=1)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("FNNCC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.seed < 0:
            raise ConfigurationError("--seed must be non-negative")
        if args.workers < 1:
            raise ConfigurationError("--workers must be at least 1")
        config = load_config(args.config, args.command)
        config_dir = Path(args.config).resolve().parent if args.config else Path.cwd()
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ctx = _Context(config, config_dir, out_dir, args.seed, args.workers)
        summary = COMMANDS[args.command](ctx)
    except FnnccError as exc:
        record = {"status": "error", "command": args.command, "error": type(exc).__name__, "code": exc.code, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return exc.code
    print(json.dumps({"status": "ok", "command": args.command, **summary}, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
