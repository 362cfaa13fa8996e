"""File formats, atomic persistence and ingestion of external profile data.

Profiles are exchanged as long-format CSV with columns
``sample_id, covariate_id, t, value`` and responses as ``sample_id, y``.
Models and charts are JSON documents with a ``format_version`` field.
Floats are written with ``repr`` so that every round trip is exact.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from fnncc.basis import BSplineBasis, FunctionalData, quadrature_weights, smooth_profiles
from fnncc.errors import DataError, DocumentParseError, SchemaError, VersionMismatchError
from fnncc.profiles import ProfileSet

FORMAT_VERSION = 1
PROFILE_COLUMNS = ("sample_id", "covariate_id", "t", "value")
RESPONSE_COLUMNS = ("sample_id", "y")
POINT_COLUMNS = ("id", "statistic", "lcl", "ucl", "signal")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- JSON documents ---------------------------------------------------------


def save_document(path, kind: str, body: dict) -> None:
    doc = {"format_version": FORMAT_VERSION, "kind": kind, "body": body}
    atomic_write_text(path, json.dumps(doc, indent=1, allow_nan=False) + "\n")


def parse_document(raw: bytes, kind: str | None = None) -> dict:
    """Parse a document; errors carry the byte offset of the problem."""
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DocumentParseError("document is not valid UTF-8", exc.start) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise DocumentParseError(f"malformed document: {exc.msg}", offset) from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise SchemaError("document has no format_version field")
    if doc["format_version"] != FORMAT_VERSION:
        raise VersionMismatchError(
            f"document format_version {doc['format_version']!r} is not supported "
            f"(expected {FORMAT_VERSION}); re-export it with a matching release"
        )
    if kind is not None and doc.get("kind") != kind:
        raise SchemaError(f"expected a {kind!r} document, found {doc.get('kind')!r}")
    return doc


def load_document(path, kind: str | None = None) -> dict:
    return parse_document(Path(path).read_bytes(), kind)


def save_chart(path, chart) -> None:
    save_document(path, "chart", chart.to_dict())


def load_chart(path):
    from fnncc.charts import ControlChart

    return ControlChart.from_dict(load_document(path, "chart")["body"])


def save_predictor(path, predictor, extra: dict | None = None) -> None:
    body = predictor.to_dict()
    if extra:
        body["extra"] = extra
    save_document(path, "predictor", body)


def load_predictor(path):
    from fnncc.charts import Predictor

    return Predictor.from_dict(load_document(path, "predictor")["body"])


# -- CSV --------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def profiles_to_frame(data: ProfileSet) -> pd.DataFrame:
    n, P, C = data.raw.shape
    return pd.DataFrame(
        {
            "sample_id": np.repeat(data.ids, P * C),
            "covariate_id": np.tile(np.repeat(np.asarray(data.covariate_ids), C), n),
            "t": np.tile(data.grid, n * P),
            "value": data.raw.reshape(-1),
        }
    )


def write_profiles_csv(path, data: ProfileSet) -> None:
    frame = profiles_to_frame(data)
    lines = [",".join(PROFILE_COLUMNS)]
    lines += [
        f"{s},{c},{_fmt(t)},{_fmt(v)}"
        for s, c, t, v in zip(frame.sample_id, frame.covariate_id, frame.t, frame.value)
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_responses_csv(path, data: ProfileSet) -> None:
    if data.y is None:
        raise SchemaError("profile set has no responses")
    lines = [",".join(RESPONSE_COLUMNS)] + [f"{s},{_fmt(y)}" for s, y in zip(data.ids, data.y)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _read_csv(path, columns) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype={"sample_id": str, "covariate_id": str}, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SchemaError(f"{path}: cannot parse CSV ({exc})") from exc
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    for col in columns:
        if col in ("sample_id", "covariate_id"):
            continue
        if not pd.api.types.is_numeric_dtype(frame[col]) or frame[col].isna().any():
            raise SchemaError(f"{path}: column {col!r} must be numeric and complete")
    return frame[list(columns)]


def read_responses_csv(path) -> pd.Series:
    frame = _read_csv(path, RESPONSE_COLUMNS)
    if frame.sample_id.duplicated().any():
        raise DataError(f"{path}: duplicated sample_id in responses")
    return pd.Series(frame.y.to_numpy(float), index=frame.sample_id.to_numpy(str))


def frame_to_profiles(frame: pd.DataFrame, source: str = "profiles") -> tuple[np.ndarray, np.ndarray, np.ndarray, tuple]:
    """Validate a long-format frame and return ``(raw, grid, ids, covariate_ids)``.

    Samples and covariates keep their order of first appearance.
    """
    if frame.duplicated(["sample_id", "covariate_id", "t"]).any():
        raise DataError(f"{source}: duplicated (sample_id, covariate_id, t) records")
    t = frame.t.to_numpy(float)
    if np.any(t < 0) or np.any(t > 1):
        raise DataError(f"{source}: t must lie in [0, 1]")
    keys = frame.sample_id.astype(str) + "\x00" + frame.covariate_id.astype(str)
    step = np.diff(t)
    same = keys.to_numpy()[1:] == keys.to_numpy()[:-1]
    if np.any(same & (step <= 0)):
        bad = frame.iloc[1:][same & (step <= 0)].iloc[0]
        raise DataError(f"{source}: non-monotone t for sample {bad.sample_id!r}, covariate {bad.covariate_id!r}")
    ids = pd.unique(frame.sample_id.astype(str))
    covs = tuple(pd.unique(frame.covariate_id.astype(str)))
    grid = np.unique(t)
    counts = frame.groupby(["sample_id", "covariate_id"], sort=False).size()
    if len(counts) != len(ids) * len(covs) or np.any(counts.to_numpy() != grid.size):
        raise DataError(f"{source}: incomplete grids; every sample must cover the common grid for every covariate")
    cube = frame.pivot_table(index=["sample_id", "covariate_id"], columns="t", values="value", aggfunc="first")
    if cube.isna().any().any():
        raise DataError(f"{source}: incomplete grids; samples disagree on the observation grid")
    raw = np.empty((len(ids), len(covs), grid.size))
    cube = cube.reindex(columns=grid)
    for i, s in enumerate(ids):
        for p, c in enumerate(covs):
            raw[i, p] = cube.loc[(s, c)].to_numpy(float)
    return raw, grid, ids, covs


def read_profiles_csv(path, responses_path=None) -> ProfileSet:
    frame = _read_csv(path, PROFILE_COLUMNS)
    raw, grid, ids, covs = frame_to_profiles(frame, str(path))
    y = None
    if responses_path is not None:
        y = align_responses(ids, read_responses_csv(responses_path))
    return ProfileSet(raw, grid, y=y, ids=ids, covariate_ids=covs)


def align_responses(ids, responses: pd.Series) -> np.ndarray:
    ids = np.asarray(ids, dtype=str)
    missing = sorted(set(ids) - set(responses.index))
    extra = sorted(set(responses.index) - set(ids))
    if missing or extra:
        raise DataError(
            f"orphan sample_ids: {len(missing)} profiles without response, {len(extra)} responses without profiles "
            f"(e.g. {(missing + extra)[:3]})"
        )
    return responses.loc[ids].to_numpy(float)


def write_points_csv(path, points, chart) -> None:
    lines = [",".join(POINT_COLUMNS)]
    lines += [f"{p.id},{_fmt(p.statistic)},{_fmt(chart.lcl)},{_fmt(chart.ucl)},{int(p.signal)}" for p in points]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_points_csv(path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"id": str}, float_precision="round_trip")
    missing = [c for c in POINT_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    return frame


# -- ingestion --------------------------------------------------------------


@dataclass
class IngestResult:
    """Trimmed raw profiles plus one smoothed :class:`FunctionalData` per covariate."""

    profiles: ProfileSet
    functional: list = field(default_factory=list)
    trim: float = 0.0


def trim_and_remap(grid, trim: float) -> tuple[np.ndarray, np.ndarray]:
    """Drop the leading ``trim`` fraction of the domain and map the rest to [0, 1].

    Returns the boolean mask of retained points and the re-mapped grid.
    """
    if not 0 <= trim < 1:
        raise DataError("trim must lie in [0, 1)")
    grid = np.asarray(grid, dtype=float)
    lo, hi = grid[0], grid[-1]
    start = lo + trim * (hi - lo)
    keep = grid >= start - 1e-12 * (hi - lo)
    kept = grid[keep]
    if kept.size < 4:
        raise DataError("fewer than four grid points remain after trimming")
    t0, t1 = kept[0], kept[-1]
    if t0 == 0.0 and t1 == 1.0:
        return keep, kept.copy()
    remapped = (kept - t0) / (t1 - t0)
    remapped[0], remapped[-1] = 0.0, 1.0
    return keep, remapped


def rms_response(data: ProfileSet, inside: str, setpoint: str, method: str = "trapezoid") -> np.ndarray:
    """Root mean square of ``inside - setpoint`` over the (unit) domain."""
    try:
        i, s = data.covariate_ids.index(inside), data.covariate_ids.index(setpoint)
    except ValueError as exc:
        raise DataError(f"RMS response needs covariates {inside!r} and {setpoint!r}") from exc
    rule = quadrature_weights(data.grid, method)
    diff = data.raw[:, i] - data.raw[:, s]
    return np.sqrt(rule.integrate(diff**2) / (data.grid[-1] - data.grid[0]))


def ingest(
    profiles_path,
    responses_path=None,
    trim: float = 0.0,
    n_basis: int = 70,
    order: int = 4,
    penalty="gcv",
    rms: tuple[str, str] | None = None,
) -> IngestResult:
    """Read, validate, trim, re-map and smooth external profile data.

    With ``rms=(inside, setpoint)`` the response is the RMS of their
    difference over the retained domain, and those two covariates are
    removed from the functional covariates.
    """
    data = read_profiles_csv(profiles_path, responses_path)
    keep, grid = trim_and_remap(data.grid, trim)
    data = ProfileSet(data.raw[:, :, keep], grid, y=data.y, ids=data.ids, covariate_ids=data.covariate_ids)
    if rms is not None:
        y = rms_response(data, *rms)
        if data.y is not None and not np.array_equal(y, data.y):
            raise DataError("both a response file and an RMS response were requested")
        keep_cov = [p for p, c in enumerate(data.covariate_ids) if c not in rms]
        if not keep_cov:
            raise DataError("no functional covariates remain after deriving the RMS response")
        data = ProfileSet(
            data.raw[:, keep_cov], grid, y=y, ids=data.ids,
            covariate_ids=tuple(data.covariate_ids[p] for p in keep_cov),
        )
    basis = BSplineBasis(order, n_basis)
    functional = [
        smooth_profiles(data.raw[:, p], grid, basis, penalty, covariate_id=c)
        for p, c in enumerate(data.covariate_ids)
    ]
    return IngestResult(data, functional, trim)


def functional_to_dict(fd: FunctionalData) -> dict:
    return {
        "covariate_id": fd.covariate_id,
        "basis": fd.basis.to_dict(),
        "smoothing_lambda": fd.smoothing_lambda,
        "coefficients": np.asarray(fd.coefficients).tolist(),
    }
