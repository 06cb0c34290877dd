"""Command-line interface.

Machine-readable JSON goes to stdout; human diagnostics go to stderr.
Exit codes: 0 success (detect: no shift found), 3 shift detected (detect
only), 2 usage error, 1 runtime error. The default seed comes from the
DRIFTBENCH_SEED environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import benchmark as bench
from . import detectors as det_mod
from . import errors, projections, shifts
from .detectors import DetectorContext, DetectorSpec, canonical_name
from .forest import ForestConfig, RandomForestClassifier
from .rng import derive_seed
from .tabular import Dataset, Preprocessor, SplitSpec, SyntheticSpec, load_csv, make_synthetic, split, subsample, write_csv

BUNDLE_FORMAT = "driftbench.model-bundle"


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


def _detector_arg(value: str) -> str:
    try:
        return canonical_name(value)
    except errors.InvalidArgument as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _default_seed() -> int:
    try:
        return int(os.environ.get("DRIFTBENCH_SEED", "0"))
    except ValueError:
        return 0


def save_model_bundle(path, model: RandomForestClassifier, prep: Preprocessor) -> None:
    doc = {
        "format": BUNDLE_FORMAT,
        "version": 1,
        "forest": model.to_json(),
        "preprocessor": prep.to_json(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model_bundle(path) -> tuple[RandomForestClassifier, Preprocessor]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise errors.IoError(f"cannot read model bundle {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise errors.InvalidSpec(f"model bundle {path} is not valid JSON: {exc}") from exc
    if doc.get("format") != BUNDLE_FORMAT or int(doc.get("version", 0)) != 1:
        raise errors.InvalidSpec(f"{path} is not a driftbench model bundle")
    return (
        RandomForestClassifier.from_json(doc["forest"]),
        Preprocessor.from_json(doc["preprocessor"]),
    )


_MODEL_DETECTORS = ("BBSDs", "BBSDh", "DC*", "BBSDs+X", "BBSDs+DC")


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------

def _cmd_detect(args) -> int:
    name = args.detector
    spec = DetectorSpec(name, adaptive=args.adaptive, alpha=args.alpha)
    source = load_csv(args.source, args.label)
    target = load_csv(args.target, args.label)

    if args.model:
        model, prep = load_model_bundle(args.model)
        enc_source = prep.transform(source)
        pca = projections.fit_pca(enc_source, args.variance_retention)
        srp = projections.fit_srp(
            enc_source.width, pca.r,
            projections.default_srp_density(enc_source.width),
            derive_seed(args.seed, "srp"),
        )
        ctx = DetectorContext(prep, model, pca, srp,
                              ForestConfig(seed=derive_seed(args.seed, "dc")))
    else:
        ctx = det_mod.fit_context(
            source,
            seed=args.seed,
            variance_retention=args.variance_retention,
            fit_primary=source.labels is not None,
        )
    if name in _MODEL_DETECTORS and ctx.primary_model is None:
        raise UsageError(f"{name} requires --label or --model")

    enc_s = ctx.preprocessor.transform(source)
    enc_t = ctx.preprocessor.transform(target)
    n_s, n_t = enc_s.n_rows, enc_t.n_rows
    size = min(n_s, n_t)
    if n_s != n_t and name in ("DC", "DC*", "BBSDs+DC"):
        _log(f"balancing sides for {name}: subsampling both to {size} rows")
        enc_s = ctx.preprocessor.transform(subsample(source, size, derive_seed(args.seed, "balance-src")))
        enc_t = ctx.preprocessor.transform(subsample(target, size, derive_seed(args.seed, "balance-tgt")))

    level = None
    if args.adaptive:
        level = _resolve_adaptive_level(args, ctx, source, spec, size)

    result = det_mod.run_detector(ctx, spec, enc_s, enc_t, seed=args.seed, level=level)
    if args.save_model and ctx.primary_model is not None:
        save_model_bundle(args.save_model, ctx.primary_model, ctx.preprocessor)
        _log(f"model bundle written to {args.save_model}")
    _emit(result.to_json())
    return 3 if result.shift_detected else 0


def _resolve_adaptive_level(args, ctx, source: Dataset, spec: DetectorSpec, size: int) -> float:
    if args.levels:
        try:
            with open(args.levels, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise errors.IoError(f"cannot read {args.levels}: {exc}") from exc
        entries = doc if isinstance(doc, list) else [doc]
        same_name = [e for e in entries if canonical_name(e["detector"]) == spec.name]
        if not same_name:
            raise errors.InvalidArgument(
                f"{args.levels} has no calibrated level for {spec.name}"
            )
        exact = [e for e in same_name if int(e["size"]) == size]
        entry = exact[0] if exact else same_name[0]
        if not exact:
            _log(
                f"warning: no calibrated level at size {size}; "
                f"using the level calibrated at size {entry['size']}"
            )
        return float(entry["level"])
    cal_size = min(size, source.n_rows // 2)
    if cal_size < 1:
        raise errors.InsufficientRows("source too small to calibrate")
    if cal_size < size:
        _log(f"warning: calibrating at size {cal_size} (source has {source.n_rows} rows)")
    _log(f"calibrating {spec.name} on the source dataset ({args.calibration_runs} runs)")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        level = det_mod.calibrate_significance_level(
            ctx, source, spec, size=cal_size, runs=args.calibration_runs,
            alpha=args.alpha, seed=derive_seed(args.seed, "calibration"),
        )
    for w in caught:
        _log(f"warning: {w.message}")
    return level


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

def _cmd_calibrate(args) -> int:
    spec = DetectorSpec(args.detector, adaptive=True, alpha=args.alpha)
    source = load_csv(args.source, args.label)
    if spec.name in _MODEL_DETECTORS and source.labels is None:
        raise UsageError(f"{spec.name} requires --label")
    ctx = det_mod.fit_context(source, seed=args.seed, fit_primary=source.labels is not None)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        null_ps = det_mod.calibration_null_pvalues(
            ctx, source, spec, runs=args.runs, size=args.size,
            seed=derive_seed(args.seed, "calibration"),
        )[spec.name]
        from .stats import empirical_quantile

        level = empirical_quantile(null_ps, args.alpha)
        if sum(1 for p in null_ps if p >= 1.0) > 0.5 * len(null_ps):
            warnings.warn(
                f"{spec.name}: degenerate null p-value distribution (most mass at 1)",
                errors.DegenerateNullWarning,
            )
    for w in caught:
        _log(f"warning: {w.message}")
    doc = {
        "detector": spec.name,
        "size": args.size,
        "alpha": args.alpha,
        "runs": args.runs,
        "level": level,
        "null_p_values": null_ps,
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
        _log(f"levels written to {args.out}")
    _emit({"detector": spec.name, "size": args.size, "level": level})
    return 0


# ---------------------------------------------------------------------------
# simulate-shift
# ---------------------------------------------------------------------------

_LABEL_KINDS = ("knock_out", "only_one", "under_sampling", "over_sampling")
_MODEL_KINDS = ("adv_zoo", "adv_boundary")


def _cmd_simulate_shift(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        sspec = shifts.ShiftSpec.from_json(json.load(fh))
    ds = load_csv(args.input, args.label)
    if sspec.kind in _LABEL_KINDS + _MODEL_KINDS and ds.labels is None:
        raise UsageError(f"shift kind {sspec.kind!r} requires --label")
    half = ds.n_rows // 2
    _, source, target = split(ds, SplitSpec(0, half, ds.n_rows - half, seed=args.seed))
    ctx = None
    if sspec.kind in _MODEL_KINDS:
        _log("fitting a primary model on the source split for the attack")
        ctx = det_mod.fit_context(source, seed=args.seed)
    outcome = shifts.apply(target, sspec, ctx)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(source, out_dir / "source.csv")
    write_csv(outcome.target, out_dir / "target.csv")
    with open(out_dir / "spec.json", "w", encoding="utf-8") as fh:
        json.dump(outcome.applied.to_json(), fh, sort_keys=True)
    _emit({
        "source": str(out_dir / "source.csv"),
        "target": str(out_dir / "target.csv"),
        "spec": str(out_dir / "spec.json"),
        "n_source": source.n_rows,
        "n_target": outcome.target.n_rows,
        "affected_rows": int(len(outcome.affected_rows)),
        "attack_failures": outcome.attack_failures,
    })
    return 0


# ---------------------------------------------------------------------------
# benchmark / compare / model-quality / eigen-shift
# ---------------------------------------------------------------------------

def _load_plan(path) -> bench.ExperimentPlan:
    try:
        with open(path, encoding="utf-8") as fh:
            return bench.ExperimentPlan.from_json(json.load(fh))
    except OSError as exc:
        raise errors.IoError(f"cannot read plan {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise errors.InvalidSpec(f"plan {path} is not valid JSON: {exc}") from exc


def _cmd_benchmark(args) -> int:
    plan = _load_plan(args.plan)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = bench.run(plan, jobs=args.jobs, log=_log if args.verbose else None)
    bench.write_cells_csv(report, out_dir / "cells.csv")
    bench.write_report_json(report, out_dir / "report.json")
    bench.write_tables_md(report, out_dir / "tables.md")
    n_err = report.tables["counts"]["errors"]
    if n_err:
        _log(f"{n_err} cell(s) failed; see the error column in cells.csv")
    _emit({
        "out": str(out_dir),
        "cells": report.tables["counts"]["cells"],
        "errors": n_err,
        "files": ["cells.csv", "report.json", "tables.md"],
    })
    return 0


def _cmd_compare(args) -> int:
    try:
        with open(args.report, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise errors.IoError(f"cannot read report {args.report}: {exc}") from exc
    tables = doc["tables"]
    datasets = sorted(tables["efficiency"])
    if args.shift_type not in bench.POSITIVE_TYPES:
        raise UsageError(
            f"unknown shift type {args.shift_type!r}; one of {', '.join(bench.POSITIVE_TYPES)}"
        )
    det_labels = [d["name"] + (" (adapt)" if d.get("adaptive") else "")
                  for d in doc["plan"]["detectors"]]
    if len(datasets) < 2 or len(det_labels) < 2:
        raise errors.InvalidShape("need at least 2 datasets and 2 detectors to compare")
    comp = bench.compare_detectors_from_tables(tables, datasets, det_labels, args.shift_type)
    if not comp["significant"]:
        _log("Friedman: no significant difference between detectors")
    _emit(comp)
    return 0


def _cmd_model_quality(args) -> int:
    plan = _load_plan(args.plan)
    qualities = tuple(float(q) for q in args.qualities.split(","))
    result = bench.model_quality_experiment(
        plan, qualities=qualities, size=args.size,
        log=_log if args.verbose else None,
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result, fh, sort_keys=True, indent=1)
        _log(f"model-quality table written to {args.out}")
    _emit(result)
    return 0


def _cmd_eigen_shift(args) -> int:
    model, prep = load_model_bundle(args.model)
    ds = load_csv(args.eval, args.label)
    if ds.labels is None:
        raise UsageError("eigen-shift requires --label")
    enc = prep.transform(ds)
    result = bench.eigen_shift_experiment(
        model, enc, ds.labels, alphas=args.alphas, seed=args.seed,
    )
    _emit(result.to_json())
    return 0


# ---------------------------------------------------------------------------
# make-synthetic
# ---------------------------------------------------------------------------

def _cmd_make_synthetic(args) -> int:
    if args.preset:
        match = [d for d in bench.default_datasets() if d.name == args.preset]
        if not match:
            names = ", ".join(d.name for d in bench.default_datasets())
            raise UsageError(f"unknown preset {args.preset!r}; one of: {names}")
        spec = match[0].synthetic
        if args.n:
            spec = replace(spec, n=args.n)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
    else:
        spec = SyntheticSpec(
            n=args.n or 10000, k=args.classes, d=args.features,
            separation=args.separation,
            seed=args.seed if args.seed is not None else _default_seed(),
        )
    ds = make_synthetic(spec)
    write_csv(ds, args.out)
    _emit({"path": args.out, "n": ds.n_rows, "d": ds.n_cols, "k": ds.n_classes,
           "label_column": ds.label_name})
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class UsageError(Exception):
    """Command-line misuse detected after parsing."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftbench",
        description="Dataset-shift detectors and benchmark for tabular data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    seed_default = _default_seed()

    p = sub.add_parser("detect", help="compare a source and a target CSV")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--detector", required=True, type=_detector_arg)
    p.add_argument("--label", default=None)
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--model", default=None, help="model bundle JSON from --save-model")
    p.add_argument("--save-model", default=None)
    p.add_argument("--levels", default=None, help="calibrated levels file from `calibrate`")
    p.add_argument("--calibration-runs", type=int, default=100)
    p.add_argument("--variance-retention", type=float, default=0.8)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("calibrate", help="calibrate a dataset-adaptive significance level")
    p.add_argument("--source", required=True)
    p.add_argument("--detector", required=True, type=_detector_arg)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--label", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("simulate-shift", help="apply one synthetic shift to a CSV split")
    p.add_argument("--input", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", default=None)
    p.add_argument("--seed", type=int, default=seed_default)
    p.set_defaults(func=_cmd_simulate_shift)

    p = sub.add_parser("benchmark", help="run a full benchmark plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("compare", help="Friedman/Nemenyi comparison from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--shift-type", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("model-quality", help="detection power vs primary-model quality")
    p.add_argument("--plan", required=True)
    p.add_argument("--qualities", default="0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--size", type=int, default=1000)
    p.add_argument("--out", default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_model_quality)

    p = sub.add_parser("eigen-shift", help="prior shifts along the minimum eigenvector")
    p.add_argument("--model", required=True, help="model bundle JSON")
    p.add_argument("--eval", required=True, help="labelled evaluation CSV")
    p.add_argument("--label", required=True)
    p.add_argument("--alphas", type=int, default=11)
    p.add_argument("--seed", type=int, default=seed_default)
    p.set_defaults(func=_cmd_eigen_shift)

    p = sub.add_parser("make-synthetic", help="write a synthetic benchmark CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--features", type=int, default=6)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--preset", default=None, help="bundled dataset name (synth-a/b/c)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_make_synthetic)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _log(f"usage error: {exc}")
        return 2
    except errors.DriftbenchError as exc:
        _log(f"error: {type(exc).__name__}: {exc}")
        return 1
    except OSError as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
