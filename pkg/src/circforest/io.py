"""CSV ingestion and export, preprocessing, derived features and model files."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .circular import wrap_angle
from .dataset import Dataset
from .errors import DataError, ModelFormatError
from .partition import Covariate

log = logging.getLogger(__name__)

KINDS = ("numeric", "categorical", "circular")


@dataclass
class Schema:
    """Column typing for :func:`ingest`.

    ``covariates`` maps column name to ``numeric``, ``categorical`` or
    ``circular``; when ``None`` every remaining column is used, typed
    categorical if it does not parse as numbers. Circular covariates are read
    in ``angle_unit`` and kept as degrees in ``[0, 360)``.
    """

    time: str = "time"
    response: str = "y"
    response_unit: str = "deg"
    covariates: Optional[dict] = None
    angle_unit: str = "deg"

    def __post_init__(self):
        for unit in (self.response_unit, self.angle_unit):
            if unit not in ("deg", "rad"):
                raise ValueError(f"angle unit must be 'deg' or 'rad', got {unit!r}")
        if self.covariates is not None:
            bad = {k: v for k, v in self.covariates.items() if v not in KINDS}
            if bad:
                raise ValueError(f"unknown covariate kinds: {bad}")

    @classmethod
    def from_file(cls, path) -> "Schema":
        return cls(**json.loads(Path(path).read_text()))


def _to_radians(values, unit):
    return np.deg2rad(values) if unit == "deg" else values


def _bad_lines(raw: pd.Series, parsed: pd.Series):
    text = raw.astype("string").str.strip()
    bad = parsed.isna() & raw.notna() & (text != "")
    # header is line 1, first record line 2
    return (np.flatnonzero(bad.to_numpy()) + 2).tolist()


def _numeric_column(frame, name):
    raw = frame[name]
    parsed = pd.to_numeric(raw, errors="coerce")
    bad = _bad_lines(raw, parsed)
    if bad:
        raise DataError(f"column {name!r}: unparseable values on lines {bad[:20]}")
    return parsed.to_numpy(dtype=np.float64)


def ingest(path, schema: Optional[Schema] = None, require_response: bool = True) -> Dataset:
    """Read a CSV file into a :class:`Dataset`.

    With ``require_response=False`` a missing response column yields an
    all-missing response (prediction inputs).

    Angles are converted to radians (response) or canonical degrees (circular
    covariates); 360 degrees becomes 0. The meteorological orientation
    (clockwise from north) is recorded in ``meta`` and not altered.
    """
    schema = Schema() if schema is None else schema
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=True)
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    needed = (schema.time, schema.response) if require_response else (schema.time,)
    for col in needed:
        if col not in frame.columns:
            raise DataError(f"column {col!r} not found in {path}")
    times = pd.to_datetime(frame[schema.time], errors="coerce")
    bad = np.flatnonzero(times.isna().to_numpy()) + 2
    if bad.size:
        raise DataError(f"unparseable timestamps on lines {bad[:20].tolist()}")
    if getattr(times.dt, "tz", None) is not None:
        times = times.dt.tz_convert("UTC").dt.tz_localize(None)
    dup = times.duplicated(keep=False).to_numpy()
    if dup.any():
        raise DataError(f"duplicate timestamps on lines {(np.flatnonzero(dup) + 2)[:20].tolist()}")
    order = np.argsort(times.to_numpy(), kind="stable")
    frame = frame.iloc[order].reset_index(drop=True)
    times = times.iloc[order].reset_index(drop=True)

    if schema.response in frame.columns:
        y = _to_radians(_numeric_column(frame, schema.response), schema.response_unit)
    else:
        y = np.full(len(frame), np.nan)
    if schema.covariates is None:
        kinds = {}
        for col in frame.columns:
            if col in (schema.time, schema.response):
                continue
            parsed = pd.to_numeric(frame[col], errors="coerce")
            kinds[col] = "numeric" if not _bad_lines(frame[col], parsed) else "categorical"
    else:
        missing = [c for c in schema.covariates if c not in frame.columns]
        if missing:
            raise DataError(f"covariate columns not found: {missing}")
        kinds = dict(schema.covariates)
    covs = []
    for name, kind in kinds.items():
        if kind == "categorical":
            labels = frame[name].where(frame[name].notna(), None).tolist()
            labels = [None if v is None or str(v).strip() == "" else str(v).strip() for v in labels]
            covs.append(Covariate.from_labels(name, labels))
        else:
            vals = _numeric_column(frame, name)
            if kind == "circular":
                deg = np.rad2deg(vals) if schema.angle_unit == "rad" else vals
                ok = ~np.isnan(deg)
                deg[ok] = np.rad2deg(wrap_angle(np.deg2rad(deg[ok])))
                deg[ok & (deg >= 360.0)] = 0.0
                covs.append(Covariate(name, deg, "numeric", circular=True))
            else:
                covs.append(Covariate(name, vals, "numeric"))
    meta = {
        "source": str(path),
        "response_unit": schema.response_unit,
        "orientation": "clockwise from north",
    }
    return Dataset(y, covs, times.to_numpy(dtype="datetime64[ns]"), schema.response, meta)


def to_frame(data: Dataset, unit="deg", time_col="time") -> pd.DataFrame:
    cols = {}
    if data.time is not None:
        cols[time_col] = pd.DatetimeIndex(data.time).strftime("%Y-%m-%dT%H:%M:%S")
    y = np.rad2deg(data.response) if unit == "deg" else data.response
    cols[data.response_name] = y
    for c in data.covariates:
        if c.kind == "categorical":
            labels = np.array([None] + list(c.levels), dtype=object)
            codes = np.where(np.isnan(c.values), 0, c.values).astype(np.int64)
            cols[c.name] = labels[codes]
        else:
            cols[c.name] = c.values
    return pd.DataFrame(cols)


def export_csv(data: Dataset, path, unit="deg", time_col="time"):
    """Write ``data`` as CSV (response in ``unit``; floats at full precision)."""
    to_frame(data, unit, time_col).to_csv(path, index=False, float_format="%.17g")


def schema_for(data: Dataset, unit="deg", time_col="time") -> Schema:
    """Schema that reads back a file written by :func:`export_csv`."""
    kinds = {}
    for c in data.covariates:
        kinds[c.name] = "categorical" if c.kind == "categorical" else (
            "circular" if c.circular else "numeric")
    return Schema(time=time_col, response=data.response_name, response_unit=unit,
                  covariates=kinds)


def preprocess(data: Dataset, missing_var_threshold: float = 0.05) -> Dataset:
    """Drop covariates with more than ``missing_var_threshold`` missing values,
    then every row with any remaining missing value (response included)."""
    n = data.n
    keep = []
    dropped = []
    for c in data.covariates:
        frac = float(np.isnan(c.values).mean()) if n else 0.0
        (dropped if frac > missing_var_threshold else keep).append(c)
    ok = ~np.isnan(data.response)
    for c in keep:
        ok &= ~np.isnan(c.values)
    out = data.with_covariates(keep).take(np.flatnonzero(ok))
    if out.n == 0:
        raise DataError("preprocessing removed every row")
    report = {
        "dropped_covariates": [c.name for c in dropped],
        "n_covariates": len(keep),
        "dropped_rows": int(n - out.n),
        "n_rows": out.n,
    }
    out.meta["preprocess"] = report
    log.info("preprocess: %s", report)
    return out


@dataclass
class FeatureSpec:
    """Derived-feature recipe.

    ``base`` names variables (covariates, or the response name) from which
    lagged features are built; ``spatial`` lists ``(variable, reference)``
    pairs whose difference is taken. Every feature at time ``t`` uses only
    observations at ``t - lag`` and earlier.
    """

    base: Sequence[str] = ()
    lag: int = 1
    window: int = 3
    changes: Sequence[int] = (1, 3)
    spatial: Sequence = ()
    time_features: bool = True
    statistics: Sequence[str] = ("mean", "min", "max")

    def __post_init__(self):
        # tuples throughout so specs compare equal after a JSON round trip
        self.base = tuple(self.base)
        self.changes = tuple(int(k) for k in self.changes)
        self.statistics = tuple(self.statistics)
        self.spatial = tuple(tuple(p) for p in self.spatial)
        bad = set(self.statistics) - {"mean", "min", "max"}
        if bad:
            raise ValueError(f"unknown statistics {sorted(bad)}")
        if any(len(p) != 2 for p in self.spatial):
            raise ValueError("spatial entries must be (variable, reference) pairs")
        if self.lag < 1 or self.window < 1 or any(k < 1 for k in self.changes):
            raise ValueError("lag, window and changes must be positive")


def _hourly(data: Dataset):
    idx = pd.DatetimeIndex(data.time)
    full = pd.date_range(idx[0].floor("h"), idx[-1].ceil("h"), freq="h")
    return idx, full


def _series_for(data: Dataset, name):
    if name == data.response_name:
        return np.rad2deg(data.response), True
    cov = data.covariate(name)
    if cov.kind == "categorical":
        raise DataError(f"cannot derive features from categorical variable {name!r}")
    return cov.values, cov.circular


def _wrap_deg(d):
    return (d + 180.0) % 360.0 - 180.0


def derive_features(data: Dataset, spec: FeatureSpec) -> Dataset:
    """Replace covariates by lagged base values and derived quantities.

    Circular variables (degrees) use vector means over the rolling window
    and wrapped differences; circular minima/maxima are not produced. Rows
    whose features lack history are dropped.
    """
    if data.time is None:
        raise DataError("derived features need a time index")
    idx, full = _hourly(data)
    names = [data.response_name] + data.names
    for b in list(spec.base) + [v for pair in spec.spatial for v in pair]:
        if b not in names:
            raise DataError(f"unknown base variable {b!r}")
    lag = int(spec.lag)
    w = int(spec.window)
    feats = {}

    def on_grid(values):
        return pd.Series(values, index=idx).reindex(full)

    for name in spec.base:
        vals, circ = _series_for(data, name)
        s = on_grid(vals)
        feats[f"{name}_lag{lag}"] = (s.shift(lag), circ)
        if circ:
            rad = np.deg2rad(s)
            cm = np.cos(rad).rolling(w, min_periods=w).mean()
            sm = np.sin(rad).rolling(w, min_periods=w).mean()
            if "mean" in spec.statistics:
                mean = pd.Series(np.rad2deg(np.arctan2(sm, cm)) % 360.0, index=full)
                feats[f"{name}_mean{w}h_lag{lag}"] = (mean.shift(lag), True)
            for k in spec.changes:
                feats[f"{name}_diff{k}h_lag{lag}"] = (_wrap_deg(s - s.shift(k)).shift(lag), False)
        else:
            roll = s.rolling(w, min_periods=w)
            for stat in spec.statistics:
                feats[f"{name}_{stat}{w}h_lag{lag}"] = (getattr(roll, stat)().shift(lag), False)
            for k in spec.changes:
                feats[f"{name}_diff{k}h_lag{lag}"] = ((s - s.shift(k)).shift(lag), False)
    for var, ref in spec.spatial:
        a, circ_a = _series_for(data, var)
        b, circ_b = _series_for(data, ref)
        d = on_grid(a) - on_grid(b)
        if circ_a or circ_b:
            d = _wrap_deg(d)
        feats[f"{var}_minus_{ref}_lag{lag}"] = (d.shift(lag), False)
    covs = []
    for fname, (series, circ) in feats.items():
        vals = series.reindex(idx).to_numpy(dtype=np.float64)
        covs.append(Covariate(fname, vals, "numeric", circular=circ))
    if spec.time_features:
        covs.append(Covariate("hour", idx.hour.to_numpy().astype(float)))
        covs.append(Covariate("doy", idx.dayofyear.to_numpy().astype(float)))
    ok = np.ones(data.n, dtype=bool)
    for c in covs:
        ok &= ~np.isnan(c.values)
    out = Dataset(data.response, covs, data.time, data.response_name, dict(data.meta))
    out = out.take(np.flatnonzero(ok))
    out.meta["features"] = {"lag": lag, "n_features": len(covs), "dropped_rows": int((~ok).sum())}
    return out


# -- model files ---------------------------------------------------------------

def save_model(model, path, features: Optional[FeatureSpec] = None,
               schema: Optional[Schema] = None):
    """Write a tree or forest as a versioned JSON container.

    The container embeds the growth controls (via the model) and, when
    given, the input schema and feature recipe needed to rebuild the inputs.
    """
    d = model.to_dict()
    if schema is not None:
        d["schema"] = asdict(schema)
    if features is not None:
        d["features"] = {k: list(v) if isinstance(v, tuple) else v
                         for k, v in asdict(features).items()}
    Path(path).write_text(json.dumps(d))


def load_model(path, with_inputs: bool = False):
    """Read a model container.

    With ``with_inputs`` returns ``(model, schema, features)``; the latter two
    are ``None`` when the container does not record them.
    """
    from .forest import Forest
    from .tree import Tree

    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from None
    fmt = d.get("format") if isinstance(d, dict) else None
    try:
        if fmt == "circforest.tree":
            model = Tree.from_dict(d)
        elif fmt == "circforest.forest":
            model = Forest.from_dict(d)
        else:
            raise ModelFormatError(f"{path} is not a circforest model file")
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: malformed model ({exc})") from None
    if not with_inputs:
        return model
    try:
        feats = d.get("features")
        if feats is not None:
            feats = FeatureSpec(**feats)
        schema = Schema(**d["schema"]) if d.get("schema") is not None else None
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed input description ({exc})") from None
    return model, schema, feats


def feature_spec_from_file(path) -> FeatureSpec:
    d = json.loads(Path(path).read_text())
    unknown = set(d) - set(FeatureSpec.__dataclass_fields__)
    if unknown:
        raise DataError(f"unknown feature-spec keys {sorted(unknown)}")
    try:
        return FeatureSpec(**d)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid feature spec {path}: {exc}") from None


def schema_from_model(model, time_col="time", response_col=None, unit="deg") -> Schema:
    """Schema reading prediction inputs with the covariate types a model expects."""
    kinds = {c.name: "categorical" if c.kind == "categorical" else
             ("circular" if c.circular else "numeric") for c in model.covariates}
    return Schema(time=time_col, response=response_col or model.response_name,
                  response_unit=unit, covariates=kinds)


def predictions_frame(times, mu, kappa) -> pd.DataFrame:
    mu = np.asarray(mu, dtype=float)
    return pd.DataFrame(
        {
            "timestamp": pd.DatetimeIndex(times).strftime("%Y-%m-%dT%H:%M:%S"),
            "mu_deg": np.rad2deg(mu),
            "kappa": np.asarray(kappa, dtype=float),
        }
    )


def read_predictions(path) -> pd.DataFrame:
    """Read a ``timestamp, mu_deg, kappa`` CSV; adds ``mu`` in radians."""
    frame = pd.read_csv(path)
    need = {"timestamp", "mu_deg", "kappa"}
    if not need <= set(frame.columns):
        raise DataError(f"{path} must have columns {sorted(need)}")
    frame["timestamp"] = pd.to_datetime(frame["timestamp"])
    frame["mu"] = np.deg2rad(frame["mu_deg"].to_numpy(float))
    return frame
