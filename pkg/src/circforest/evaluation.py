"""Circular CRPS, skill scores and the year-out cross-validation protocol."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, special

from .baselines import climatology_predict, persistence_predict
from .circular import TWO_PI, VonMisesParams, angular_distance, sample
from .dataset import Dataset
from .errors import CircForestError, DataError, InsufficientDataError
from .forest import ForestControl, grow_forest
from .tree import TreeControl, grow

log = logging.getLogger(__name__)

FOLD_MODELS = ("tree", "forest", "climatology")
ROLLING_MODELS = ("persistence",)


@dataclass
class EvalConfig:
    method: str = "quadrature"
    mc_samples: int = 10000
    mc_seed: int = 0
    epsabs: float = 1e-6

    def __post_init__(self):
        if self.method not in ("quadrature", "montecarlo"):
            raise ValueError("method must be 'quadrature' or 'montecarlo'")
        if self.method == "montecarlo" and self.mc_samples < 1000:
            raise ValueError("mc_samples must be >= 1000 for Monte Carlo CRPS")


@dataclass(frozen=True)
class ScoreRecord:
    timestamp: object
    model: str
    crps: float
    note: str = ""

    @property
    def missing(self) -> bool:
        return not math.isfinite(self.crps)


def _peak_points(centre, kappa):
    w = min(math.pi, 8.0 / math.sqrt(kappa))
    pts = {centre, centre - w, centre + w, w}
    return sorted(p for p in pts if 0.0 < p < math.pi)


def expected_distance(delta, kappa, epsabs=1e-6):
    """``E d(Y, y)`` for ``Y ~ vM(mu, kappa)`` where ``delta = y - mu``."""
    if kappa == 0.0:
        return math.pi / 2
    d = abs(math.remainder(delta, TWO_PI))
    norm = TWO_PI * float(special.i0e(kappa))
    exp, cos = math.exp, math.cos

    def f(u):
        return u * (exp(kappa * (cos(d + u) - 1.0)) + exp(kappa * (cos(d - u) - 1.0))) / norm

    val, _ = integrate.quad(f, 0.0, math.pi, points=_peak_points(d, kappa) or None,
                            epsabs=epsabs, epsrel=0.0, limit=500)
    return val


@lru_cache(maxsize=65536)
def expected_pair_distance(kappa, epsabs=1e-6):
    """``E d(Y, Y')`` for independent ``Y, Y' ~ vM(., kappa)``.

    Integrates against the density of ``Y - Y'``,
    ``I0(2 kappa cos(u/2)) / (2 pi I0(kappa)^2)``.
    """
    if kappa == 0.0:
        return math.pi / 2
    norm = TWO_PI * float(special.i0e(kappa)) ** 2
    i0e = special.i0e

    def f(u):
        c = math.cos(0.5 * u)
        return 2.0 * u * float(i0e(2.0 * kappa * c)) * math.exp(2.0 * kappa * (c - 1.0)) / norm

    val, _ = integrate.quad(f, 0.0, math.pi, points=_peak_points(0.0, kappa) or None,
                            epsabs=epsabs, epsrel=0.0, limit=500)
    return val


def _crps_mc(mu, kappa, obs, n, rng):
    p = VonMisesParams(mu, kappa)
    y1 = sample(p, n, rng)
    y2 = sample(p, n, rng)
    return float(angular_distance(y1, obs).mean() - 0.5 * angular_distance(y1, y2).mean())


def crps_circular(pred: VonMisesParams, obs: float, cfg: Optional[EvalConfig] = None) -> float:
    """Circular CRPS ``E d(Y, y) - E d(Y, Y') / 2`` with angular distance ``d``."""
    return float(crps_vonmises(pred.mu, pred.kappa, obs, cfg))


def crps_vonmises(mu, kappa, obs, cfg: Optional[EvalConfig] = None):
    """Vectorised circular CRPS; NaN parameters give NaN scores."""
    cfg = EvalConfig() if cfg is None else cfg
    mu, kappa, obs = np.broadcast_arrays(np.asarray(mu, float), np.asarray(kappa, float),
                                         np.asarray(obs, float))
    out = np.full(mu.shape, np.nan)
    flat_out = out.reshape(-1)
    rng = np.random.default_rng(cfg.mc_seed) if cfg.method == "montecarlo" else None
    for i, (m, k, y) in enumerate(zip(mu.ravel(), kappa.ravel(), obs.ravel())):
        if not (math.isfinite(m) and math.isfinite(k) and math.isfinite(y)):
            continue
        if rng is not None:
            v = _crps_mc(m, k, y, cfg.mc_samples, rng)
        else:
            v = expected_distance(y - m, k, cfg.epsabs) - 0.5 * expected_pair_distance(
                float(k), cfg.epsabs)
        flat_out[i] = min(max(v, 0.0), math.pi)
    if out.ndim == 0:
        return float(out)
    return out


def _mean_by_timestamp(records):
    return {r.timestamp: r.crps for r in records if not r.missing}


def crpss(model_scores: Iterable[ScoreRecord], reference_scores: Iterable[ScoreRecord]) -> float:
    """Skill ``1 - mean(model) / mean(reference)`` over timestamps scored by both."""
    m = _mean_by_timestamp(model_scores)
    r = _mean_by_timestamp(reference_scores)
    common = sorted(set(m) & set(r))
    if not common:
        raise DataError("model and reference share no scored timestamps")
    ref = float(np.mean([r[t] for t in common]))
    if not ref > 0:
        raise DataError("reference mean CRPS must be positive")
    return 1.0 - float(np.mean([m[t] for t in common])) / ref


def records_frame(records: Sequence[ScoreRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "timestamp": [r.timestamp for r in records],
            "model": [r.model for r in records],
            "crps": [r.crps for r in records],
        }
    )


def aggregate(records: Sequence[ScoreRecord], reference: Optional[str] = "climatology") -> pd.DataFrame:
    """Mean CRPS per (month, hour, model) cell plus skill against ``reference``.

    Skill in a cell compares means over the timestamps both the model and the
    reference scored. Cells without scores are omitted.
    """
    df = records_frame(records).dropna(subset=["crps"])
    cols = ["month", "hour", "model", "mean_crps", "crpss", "n"]
    if df.empty:
        return pd.DataFrame(columns=cols)
    ts = pd.to_datetime(df["timestamp"])
    df = df.assign(month=ts.dt.month.to_numpy(), hour=ts.dt.hour.to_numpy())
    out = (
        df.groupby(["month", "hour", "model"], sort=True)["crps"]
        .agg(mean_crps="mean", n="size")
        .reset_index()
    )
    out["crpss"] = np.nan
    if reference is not None and reference in set(df["model"]):
        ref = df[df["model"] == reference][["timestamp", "crps"]].rename(columns={"crps": "ref"})
        joined = df.merge(ref, on="timestamp", how="inner")
        cell = joined.groupby(["month", "hour", "model"]).agg(m=("crps", "mean"), r=("ref", "mean"))
        skill = (1.0 - cell["m"] / cell["r"]).rename("crpss").reset_index()
        out = out.drop(columns="crpss").merge(skill, on=["month", "hour", "model"], how="left")
    return out[cols]


def _years(times):
    return pd.DatetimeIndex(times).year.to_numpy()


def _predict_fold_model(name, train: Dataset, test: Dataset, tree_ctrl, forest_ctrl):
    if name == "tree":
        model = grow(train, tree_ctrl)
        return model.predict_data(test)
    if name == "forest":
        model = grow_forest(train, forest_ctrl)
        return model.predict_data(test)
    if name == "climatology":
        mu, kappa, _ = climatology_predict(train.time, train.response, test.time)
        return mu, kappa
    raise ValueError(f"unknown model {name!r}")


def cross_validate(
    data: Dataset,
    models: Sequence[str] = ("tree", "forest", "climatology", "persistence"),
    cfg: Optional[EvalConfig] = None,
    tree_ctrl: Optional[TreeControl] = None,
    forest_ctrl: Optional[ForestControl] = None,
    lead_hours: int = 1,
    external: Optional[dict] = None,
) -> list:
    """Out-of-sample scores for every timestamp and model.

    Tree, forest and climatology are trained on all calendar years but one
    and scored on the held-out year. Persistence rolls over the series using
    only earlier observations. ``external`` maps a model name to a frame
    with columns ``timestamp, mu, kappa`` (radians) that is scored as given.
    A model that fails on a fold yields missing records carrying a note.
    """
    cfg = EvalConfig() if cfg is None else cfg
    if data.time is None:
        raise DataError("cross-validation needs a time index")
    if np.any(np.isnan(data.response)):
        raise DataError("response has missing values; preprocess the data first")
    unknown = [m for m in models if m not in FOLD_MODELS + ROLLING_MODELS]
    if unknown:
        raise ValueError(f"unknown models {unknown}")
    times = data.time
    years = _years(times)
    fold_models = [m for m in models if m in FOLD_MODELS]
    if fold_models and np.unique(years).size < 2:
        raise InsufficientDataError(
            f"models {fold_models} need at least two calendar years for year-out folds"
        )
    records = []
    for name in models:
        mu = np.full(data.n, np.nan)
        kappa = np.full(data.n, np.nan)
        notes = [""] * data.n
        if name in FOLD_MODELS:
            for year in np.unique(years):
                test_rows = np.flatnonzero(years == year)
                train_rows = np.flatnonzero(years != year)
                try:
                    m, k = _predict_fold_model(name, data.take(train_rows), data.take(test_rows),
                                               tree_ctrl, forest_ctrl)
                except (CircForestError, ValueError) as exc:
                    log.warning("model %s failed on fold %s: %s", name, year, exc)
                    for r in test_rows:
                        notes[r] = f"fold {year} failed: {exc}"
                    continue
                mu[test_rows], kappa[test_rows] = m, k
        else:
            m, k, ok = persistence_predict(times, data.response, times, lead_hours)
            mu, kappa = m, k
            for r in np.flatnonzero(~ok):
                notes[r] = "incomplete lagged history"
        scores = crps_vonmises(mu, kappa, data.response, cfg)
        for r in range(data.n):
            note = notes[r] or ("" if math.isfinite(scores[r]) else "no prediction")
            records.append(ScoreRecord(pd.Timestamp(times[r]), name, float(scores[r]), note))
    for name, frame in (external or {}).items():
        records.extend(score_external(data, frame, name, cfg))
    return records


def score_external(data: Dataset, frame: pd.DataFrame, name: str, cfg=None) -> list:
    """Score externally produced ``(timestamp, mu, kappa)`` predictions."""
    pred = frame.set_index(pd.to_datetime(frame["timestamp"]))
    pred = pred[~pred.index.duplicated(keep="first")]
    idx = pd.DatetimeIndex(data.time)
    aligned = pred.reindex(idx)
    scores = crps_vonmises(aligned["mu"].to_numpy(float), aligned["kappa"].to_numpy(float),
                           data.response, cfg)
    return [
        ScoreRecord(t, name, float(s), "" if math.isfinite(s) else "no prediction")
        for t, s in zip(idx, scores)
    ]
