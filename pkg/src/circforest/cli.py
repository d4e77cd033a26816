"""Command line interface: ``circforest {fit,predict,evaluate,export,simulate}``.

Failures print one JSON object ``{"error": <category>, "message": ...}`` to
stderr; the exit status is 2 for usage errors and 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from . import io
from .errors import CircForestError
from .evaluation import EvalConfig, aggregate, cross_validate, records_frame
from .forest import Forest, ForestControl, _forest_tree_control, grow_forest
from .simulate import DGPS, simulate
from .tree import TreeControl, grow

log = logging.getLogger("circforest")

FOREST_FLAGS = ("ntrees", "fraction", "mtry")


class UsageError(Exception):
    category = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_data_args(p, response=True):
    p.add_argument("--data", required=True, help="input CSV file")
    p.add_argument("--schema", help="JSON file with column typing (see circforest.io.Schema)")
    p.add_argument("--time-col", default=None)
    if response:
        p.add_argument("--response-col", default=None)
        p.add_argument("--unit", choices=("deg", "rad"), default=None,
                       help="unit of the response column (default deg)")
    p.add_argument("--features", help="JSON feature recipe applied after ingestion")
    p.add_argument("--missing-threshold", type=float, default=0.05,
                   help="drop covariates with a larger missing fraction")


def _add_growth_args(p):
    g = p.add_argument_group("tree growth")
    g.add_argument("--alpha", type=float)
    g.add_argument("--minsplit", type=int)
    g.add_argument("--minbucket", type=int)
    g.add_argument("--maxdepth", type=int)
    g.add_argument("--nmax", type=int)
    f = p.add_argument_group("forest")
    f.add_argument("--ntrees", type=int)
    f.add_argument("--fraction", type=float)
    f.add_argument("--mtry", type=int)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="circforest", description="Circular regression trees and forests.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a tree or forest and write a model file")
    _add_data_args(p)
    p.add_argument("--model", choices=("tree", "forest"), default="tree")
    _add_growth_args(p)
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="model file (JSON)")

    p = sub.add_parser("predict", help="predict von Mises parameters")
    p.add_argument("--model-file", required=True)
    _add_data_args(p, response=False)
    p.add_argument("--out", required=True, help="predictions CSV (timestamp, mu_deg, kappa)")

    p = sub.add_parser("evaluate", help="year-out cross-validation with circular CRPS")
    _add_data_args(p)
    p.add_argument("--models", default="tree,forest",
                   help="comma-separated fold models (tree, forest); empty for none")
    p.add_argument("--baselines", default="climatology,persistence")
    p.add_argument("--external-predictions", action="append", default=[],
                   help="NAME=CSV or CSV with columns timestamp, mu_deg, kappa")
    p.add_argument("--crps", choices=("quadrature", "mc"), default="quadrature")
    p.add_argument("--mc-samples", type=int, default=10000)
    p.add_argument("--lead", type=int, default=1, help="persistence lead time in hours")
    p.add_argument("--reference", default="climatology")
    _add_growth_args(p)
    p.add_argument("--out", required=True, help="scores CSV (timestamp, model, crps)")
    p.add_argument("--aggregate-out", help="(month, hour, model) summary CSV "
                   "(default: <out>_aggregate.csv)")

    p = sub.add_parser("export", help="export a model as DOT or JSON")
    p.add_argument("--model-file", required=True)
    p.add_argument("--format", choices=("dot", "json"), default="dot")
    p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--dgp", choices=DGPS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV file (default stdout)")
    return parser


def _schema(args) -> io.Schema:
    base = io.Schema.from_file(args.schema) if args.schema else io.Schema()
    if args.time_col:
        base.time = args.time_col
    if getattr(args, "response_col", None):
        base.response = args.response_col
    if getattr(args, "unit", None):
        base.response_unit = args.unit
    return base


def _load(args, schema=None, require_response=True):
    data = io.ingest(args.data, schema or _schema(args), require_response=require_response)
    spec = io.feature_spec_from_file(args.features) if getattr(args, "features", None) else None
    return data, spec


def _prepare(data, spec, threshold, drop_response_na=True):
    if spec is not None:
        data = io.derive_features(data, spec)
    return io.preprocess(data, threshold) if drop_response_na else data


def _tree_ctrl(args, forest: bool) -> TreeControl:
    base = _forest_tree_control() if forest else TreeControl()
    kw = {k: getattr(args, k) for k in ("alpha", "minsplit", "minbucket", "maxdepth", "nmax")
          if getattr(args, k) is not None}
    if "minbucket" in kw and "minsplit" not in kw:
        kw["minsplit"] = max(base.minsplit, 2 * kw["minbucket"])
    vals = {**vars(base), **kw}
    return TreeControl(**vals)


def _forest_ctrl(args) -> ForestControl:
    kw = {"tree_ctrl": _tree_ctrl(args, True), "seed": args.seed}
    if args.ntrees is not None:
        kw["n_trees"] = args.ntrees
    if args.fraction is not None:
        kw["subsample_fraction"] = args.fraction
    if args.mtry is not None:
        kw["mtry"] = args.mtry
    return ForestControl(**kw)


def _check_forest_flags(args, uses_forest: bool):
    used = [f"--{f}" for f in FOREST_FLAGS if getattr(args, f) is not None]
    if used and not uses_forest:
        raise UsageError(f"{', '.join(used)} only apply to forests")


def _write(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_fit(args):
    _check_forest_flags(args, args.model == "forest")
    schema = _schema(args)
    data, spec = _load(args, schema)
    data = _prepare(data, spec, args.missing_threshold)
    if args.model == "tree":
        model = grow(data, _tree_ctrl(args, False))
        summary = {"model": "tree", "n_leaves": model.n_leaves, "depth": model.depth}
    else:
        model = grow_forest(data, _forest_ctrl(args), n_jobs=args.n_jobs)
        summary = {"model": "forest", "n_trees": model.n_trees}
    io.save_model(model, args.out, features=spec, schema=schema)
    summary.update(n=data.n, out=str(args.out))
    print(json.dumps(summary))


def cmd_predict(args):
    model, stored, spec = io.load_model(args.model_file, with_inputs=True)
    if args.features:
        spec = io.feature_spec_from_file(args.features)
    if args.schema:
        schema = _schema(args)
    elif stored is not None:
        schema = stored
        if args.time_col:
            schema.time = args.time_col
    else:
        schema = io.schema_from_model(model, time_col=args.time_col or "time")
    data = io.ingest(args.data, schema, require_response=False)
    if spec is not None:
        data = io.derive_features(data, spec)
    mu, kappa = model.predict_data(data)
    frame = io.predictions_frame(data.time, mu, kappa)
    frame.to_csv(args.out, index=False, float_format="%.10g")
    print(json.dumps({"n": int(frame.shape[0]), "out": str(args.out)}))


def _split_list(s):
    return [x.strip() for x in s.split(",") if x.strip()] if s else []


def _external(specs):
    out = {}
    for i, item in enumerate(specs):
        name, _, path = item.rpartition("=")
        name = name or (Path(path).stem if len(specs) > 1 else "external")
        frame = io.read_predictions(path)
        out[name] = frame[["timestamp", "mu", "kappa"]]
    return out


def cmd_evaluate(args):
    fold = _split_list(args.models)
    baselines = _split_list(args.baselines)
    bad = [m for m in fold if m not in ("tree", "forest")]
    bad += [b for b in baselines if b not in ("climatology", "persistence")]
    if bad:
        raise UsageError(f"unknown models {bad}")
    _check_forest_flags(args, "forest" in fold)
    if args.crps != "mc" and args.mc_samples != 10000:
        raise UsageError("--mc-samples requires --crps mc")
    data, spec = _load(args)
    data = _prepare(data, spec, args.missing_threshold)
    cfg = EvalConfig(method="montecarlo" if args.crps == "mc" else "quadrature",
                     mc_samples=args.mc_samples, mc_seed=args.seed)
    models = tuple(fold + baselines)
    records = cross_validate(
        data,
        models=models,
        cfg=cfg,
        tree_ctrl=_tree_ctrl(args, False),
        forest_ctrl=_forest_ctrl(args) if "forest" in fold else None,
        lead_hours=args.lead,
        external=_external(args.external_predictions),
    )
    scores = records_frame(records)
    scores["timestamp"] = pd.DatetimeIndex(scores["timestamp"]).strftime("%Y-%m-%dT%H:%M:%S")
    scores.to_csv(args.out, index=False, float_format="%.10g")
    agg_path = args.aggregate_out or str(Path(args.out).with_suffix("")) + "_aggregate.csv"
    ref = args.reference if args.reference in set(scores["model"]) else None
    agg = aggregate(records, reference=ref)
    agg.to_csv(agg_path, index=False, float_format="%.10g")
    means = scores.groupby("model")["crps"].mean().to_dict()
    print(json.dumps({"mean_crps": means, "out": str(args.out), "aggregate": agg_path}))


def cmd_export(args):
    model = io.load_model(args.model_file)
    if isinstance(model, Forest):
        if args.format == "dot":
            raise UsageError("DOT export is only available for trees")
        text = model.to_json(indent=1)
    else:
        text = model.export(args.format)
    _write(text, args.out)


def cmd_simulate(args):
    data = simulate(args.dgp, args.n, args.seed)
    if args.out:
        io.export_csv(data, args.out)
    else:
        io.to_frame(data).to_csv(sys.stdout, index=False, float_format="%.17g")


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "export": cmd_export,
    "simulate": cmd_simulate,
}


def _fail(category, message, code):
    sys.stderr.write(json.dumps({"error": category, "message": str(message)}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except CircForestError as exc:
        return _fail(exc.category, exc, 1)
    except (ValueError, OSError) as exc:
        return _fail("invalid_input", exc, 1)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
