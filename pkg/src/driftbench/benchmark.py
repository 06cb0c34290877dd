"""Benchmark harness: shift x size x seed sweeps, metrics and rank comparison.

Protocol per dataset: a fixed training split fits the detector context; the
remaining rows are re-split into source (validation) and target (test) once
per run seed; each parameterized shift perturbs the target split; both sides
are subsampled to each evaluation size and scored by every detector.

Aggregation order: p-values are averaged over run seeds first, the detection
decision is taken on the mean, and decisions are then averaged over the
parameterizations of the same shift type. Per-cell failures are recorded with
an error tag and excluded from aggregates; they never abort the sweep.

Everything is keyed by content (dataset name, shift parameters, run index,
size, detector label), so results are byte-identical regardless of the number
of worker threads.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import errors, shifts, stats
from .detectors import DetectorSpec, calibrate_all, fit_context, run_detector
from .errors import DriftbenchError
from .forest import ConfusionMatrix, confusion_matrix, min_eigenpair, perturb
from .rng import derive_seed, make_rng
from .shifts import SHIFT_TYPE_LABELS, ShiftSpec, table1_shift_specs
from .tabular import Dataset, SplitSpec, SyntheticSpec, load_csv, make_synthetic, split, subsample

DEFAULT_SIZES = (10, 100, 500, 1000, 2000)
POSITIVE_TYPES = tuple(
    SHIFT_TYPE_LABELS[k] for k in SHIFT_TYPE_LABELS if k != "no_shift"
)


def detection_decision(p: float, level: float) -> bool:
    """A drift is detected when the p-value is strictly below the level."""
    return p < level


def efficiency_score(detected_by_size, sizes) -> int:
    """Score len(sizes) .. 1 by the smallest size that detects; 0 if none."""
    for size in sizes:
        if size not in detected_by_size:
            raise errors.MissingSize(f"missing detection flag for size {size}")
    for i, size in enumerate(sizes):
        if detected_by_size[size]:
            return len(sizes) - i
    return 0


# ---------------------------------------------------------------------------
# Plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSource:
    """A named data source: either a CSV path + label column or a synthetic spec."""

    name: str
    synthetic: SyntheticSpec | None = None
    csv_path: str | None = None
    label_column: str | None = None

    def __post_init__(self):
        if (self.synthetic is None) == (self.csv_path is None):
            raise errors.InvalidSpec("dataset source needs exactly one of synthetic/csv_path")

    def load(self) -> Dataset:
        if self.synthetic is not None:
            return make_synthetic(self.synthetic)
        return load_csv(self.csv_path, self.label_column)

    def to_json(self) -> dict:
        if self.synthetic is not None:
            out = self.synthetic.to_json()
            out["name"] = self.name
            return out
        return {"type": "csv", "name": self.name, "path": self.csv_path,
                "label_column": self.label_column}

    @staticmethod
    def from_json(obj: dict) -> "DatasetSource":
        if obj.get("type", "synthetic") == "csv":
            return DatasetSource(obj["name"], csv_path=obj["path"],
                                 label_column=obj.get("label_column"))
        spec = SyntheticSpec.from_json(obj)
        return DatasetSource(obj.get("name", spec.name), synthetic=spec)


def default_datasets() -> list[DatasetSource]:
    """Three bundled synthetic datasets standing in for real benchmark data.

    Each mixes well-separated continuous features, coarse count-like rounded
    features, and zero-inflated one-sided features, which is what makes the
    selection-bias shifts detectable the way they are on real tabular data.
    """
    a = 0.585
    cov_a = tuple(map(tuple, np.diag([1.0, 1.0, 1.0, 16.0, 16.0, 4.0])))
    spec_a = SyntheticSpec(
        n=10000, k=2, d=6,
        centers=((-a, -a, -0.3, -4 * a, -4 * a, -0.5),
                 (a, a, 0.3, 4 * a, 4 * a, 0.5)),
        covariances=cov_a,
        abs_columns=(2, 5), round_columns=(3, 4, 5), spike_columns=(2, 5),
        spike_prob=0.6, seed=22, name="synth-a",
    )
    b = 0.7
    cov_b = tuple(map(tuple, np.diag([1.0, 1.0, 6.25, 9.0])))
    spec_b = SyntheticSpec(
        n=10000, k=2, d=4,
        centers=((-b, -0.25, -2.5 * b, -0.6), (b, 0.25, 2.5 * b, 0.6)),
        covariances=cov_b,
        abs_columns=(1, 3), round_columns=(2, 3), spike_columns=(1, 3),
        spike_prob=0.5, seed=33, name="synth-b",
    )
    c = 0.52
    base = np.eye(8)
    for i in range(4):
        for j in range(4):
            if i != j:
                base[i, j] = 0.3
    base[4, 4] = base[5, 5] = 16.0
    base[7, 7] = 4.0
    spec_c = SyntheticSpec(
        n=10000, k=2, d=8,
        centers=((-c, -c, -c, -c, -4 * c, -4 * c, -0.3, -0.4),
                 (c, c, c, c, 4 * c, 4 * c, 0.3, 0.4)),
        covariances=tuple(map(tuple, base)),
        abs_columns=(6, 7), round_columns=(4, 5, 7), spike_columns=(6, 7),
        spike_prob=0.6, seed=44, name="synth-c",
    )
    return [DatasetSource(s.name, synthetic=s) for s in (spec_a, spec_b, spec_c)]


def default_detectors(adaptive_ensembles: bool = True) -> list[DetectorSpec]:
    """The six base detectors plus the three ensembles (adaptive by default)."""
    specs = [DetectorSpec(name) for name in ("BBSDs", "BBSDh", "Test_X", "Test_PCA", "Test_SRP", "DC")]
    specs += [DetectorSpec(name, adaptive=adaptive_ensembles) for name in ("DC*", "BBSDs+X", "BBSDs+DC")]
    return specs


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything needed to reproduce one benchmark sweep."""

    datasets: tuple = ()
    shifts: tuple = ()
    sizes: tuple = DEFAULT_SIZES
    n_runs: int = 5
    detectors: tuple = ()
    split: SplitSpec = SplitSpec(1000, 2000, 2000, seed=0)
    alpha: float = 0.05
    calibration_runs: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets) or tuple(default_datasets()))
        object.__setattr__(
            self, "shifts",
            tuple(self.shifts) or tuple(table1_shift_specs(include_no_shift=True)),
        )
        object.__setattr__(
            self, "detectors", tuple(self.detectors) or tuple(default_detectors())
        )
        object.__setattr__(self, "sizes", tuple(sorted(self.sizes)))
        if any(s <= 0 for s in self.sizes):
            raise errors.InvalidSpec("sizes must be positive")
        if self.sizes and self.sizes[-1] > self.split.source_size:
            raise errors.InvalidSpec("every size must be <= split.source_size")
        if self.n_runs < 1:
            raise errors.InvalidSpec("n_runs must be >= 1")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise errors.InvalidSpec("dataset names must be unique")

    def to_json(self) -> dict:
        return {
            "datasets": [d.to_json() for d in self.datasets],
            "shifts": [s.to_json() for s in self.shifts],
            "sizes": list(self.sizes),
            "n_runs": self.n_runs,
            "detectors": [d.to_json() for d in self.detectors],
            "split": self.split.to_json(),
            "alpha": self.alpha,
            "calibration_runs": self.calibration_runs,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "ExperimentPlan":
        return ExperimentPlan(
            datasets=tuple(DatasetSource.from_json(d) for d in obj.get("datasets", [])),
            shifts=tuple(ShiftSpec.from_json(s) for s in obj.get("shifts", [])),
            sizes=tuple(obj.get("sizes", DEFAULT_SIZES)),
            n_runs=int(obj.get("n_runs", 5)),
            detectors=tuple(DetectorSpec.from_json(d) for d in obj.get("detectors", [])),
            split=SplitSpec.from_json(obj["split"]) if "split" in obj else SplitSpec(1000, 2000, 2000, 0),
            alpha=float(obj.get("alpha", 0.05)),
            calibration_runs=int(obj.get("calibration_runs", 100)),
            seed=int(obj.get("seed", 0)),
        )


@dataclass(frozen=True)
class CellResult:
    """One (dataset, shift, size, run, detector) measurement."""

    dataset: str
    shift_key: str
    shift_kind: str
    size: int
    run: int
    detector: str
    p_value: float | None
    level: float | None
    detected: bool | None
    effective_size: int
    error: str | None = None

    @property
    def shift_type(self) -> str:
        return SHIFT_TYPE_LABELS[self.shift_kind]

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "shift": self.shift_key,
            "kind": self.shift_kind,
            "type": self.shift_type,
            "size": self.size,
            "run": self.run,
            "detector": self.detector,
            "p_value": self.p_value,
            "level": self.level,
            "detected": self.detected,
            "effective_size": self.effective_size,
            "error": self.error,
        }


CELL_CSV_COLUMNS = (
    "dataset", "shift", "kind", "type", "size", "run", "detector",
    "p_value", "level", "detected", "effective_size", "error",
)


# ---------------------------------------------------------------------------
# Sweep execution
# ---------------------------------------------------------------------------

def _dataset_environment(plan: ExperimentPlan, source: DatasetSource):
    """Fixed train split + evaluation pool + fitted (uncalibrated) context."""
    ds = source.load()
    need = plan.split.train_size + plan.split.source_size + plan.split.target_size
    if ds.n_rows < need:
        raise errors.InsufficientRows(
            f"{source.name}: needs {need} rows, has {ds.n_rows}"
        )
    perm = make_rng(plan.split.seed, source.name, "train-pool").permutation(ds.n_rows)
    train = ds.take(perm[: plan.split.train_size])
    pool = ds.take(perm[plan.split.train_size :])
    ctx = fit_context(train, seed=derive_seed(plan.seed, source.name, "context"))
    return train, pool, ctx


def _run_split(plan: ExperimentPlan, name: str, pool: Dataset, run_idx: int):
    spec = SplitSpec(
        0, plan.split.source_size, plan.split.target_size,
        derive_seed(plan.split.seed, name, "valtest", run_idx),
    )
    _, src, tgt = split(pool, spec)
    return src, tgt


def _error_cell(name, shift_spec, size, run_idx, det, eff, exc) -> CellResult:
    msg = exc if isinstance(exc, str) else f"{type(exc).__name__}: {exc}"
    return CellResult(
        name, shift_spec.param_key, shift_spec.kind, size, run_idx, det.label,
        None, None, None, eff, error=msg,
    )


def _score_pair(plan, ctx, name, shift_spec, run_idx, size, enc_s, enc_t, eff, det, model_override=None):
    if det.adaptive:
        key = (det.name, int(size))
        if key not in ctx.calibrated_levels:
            return _error_cell(name, shift_spec, size, run_idx, det, eff, "uncalibrated")
        level = ctx.calibrated_levels[key]
    else:
        level = det.alpha
    seed = derive_seed(plan.seed, name, shift_spec.param_key, run_idx, size, det.label)
    try:
        if model_override is not None and det.name in ("BBSDs", "BBSDh"):
            from .detectors import detect_bbsdh, detect_bbsds

            fn = detect_bbsds if det.name == "BBSDs" else detect_bbsdh
            res = fn(ctx, enc_s, enc_t, det, seed=seed, level=level, model=model_override)
        else:
            res = run_detector(ctx, det, enc_s, enc_t, seed=seed, level=level)
        return CellResult(
            name, shift_spec.param_key, shift_spec.kind, size, run_idx, det.label,
            res.p_value, res.significance_level, res.shift_detected, eff,
        )
    except DriftbenchError as exc:
        return _error_cell(name, shift_spec, size, run_idx, det, eff, exc)


def _shift_task(plan, ctx, name, src_split, tgt_split, shift_spec, run_idx, model_override=None):
    """Apply one shift for one run and score every (size, detector) cell.

    When the shifted target keeps fewer rows than a nominal size, both sides
    are subsampled to the available count instead (recorded as
    effective_size) so the comparison stays balanced.
    """
    cells = []
    sspec = replace(shift_spec, seed=derive_seed(plan.seed, name, "shift", shift_spec.param_key, run_idx))
    try:
        outcome = shifts.apply(tgt_split, sspec, ctx)
    except DriftbenchError as exc:
        for size in plan.sizes:
            for det in plan.detectors:
                cells.append(_error_cell(name, shift_spec, size, run_idx, det, 0, exc))
        return cells
    for size in plan.sizes:
        eff = min(size, outcome.target.n_rows, src_split.n_rows)
        if eff < 1:
            for det in plan.detectors:
                cells.append(_error_cell(name, shift_spec, size, run_idx, det, eff, "empty shifted target"))
            continue
        sub_s = subsample(src_split, eff, derive_seed(plan.seed, name, shift_spec.param_key, run_idx, size, "src"))
        sub_t = subsample(outcome.target, eff, derive_seed(plan.seed, name, shift_spec.param_key, run_idx, size, "tgt"))
        enc_s = ctx.preprocessor.transform(sub_s)
        enc_t = ctx.preprocessor.transform(sub_t)
        for det in plan.detectors:
            cells.append(_score_pair(plan, ctx, name, shift_spec, run_idx, size, enc_s, enc_t, eff, det, model_override))
    return cells


@dataclass
class BenchmarkReport:
    """Raw cells plus the derived tables; self-auditing: every table is
    recomputable from the stored cells, levels and plan."""

    plan: ExperimentPlan
    cells: list[CellResult]
    calibrated_levels: dict
    calibration_errors: dict
    tables: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "plan": self.plan.to_json(),
            "calibrated_levels": {
                ds: {f"{name}@{size}": lvl for (name, size), lvl in sorted(levels.items())}
                for ds, levels in sorted(self.calibrated_levels.items())
            },
            "calibration_errors": {k: v for k, v in sorted(self.calibration_errors.items())},
            "cells": [c.to_json() for c in self.cells],
            "tables": self.tables,
        }


def run(plan: ExperimentPlan, jobs: int = 1, log=None) -> BenchmarkReport:
    """Execute the full sweep and assemble the report tables."""
    all_cells: list[CellResult] = []
    calibrated: dict = {}
    calibration_errors: dict = {}
    for source in plan.datasets:
        name = source.name
        if log:
            log(f"dataset {name}: fitting context")
        train, pool, ctx = _dataset_environment(plan, source)
        adaptive = [d for d in plan.detectors if d.adaptive]
        for size in plan.sizes if adaptive else ():
            try:
                calibrate_all(
                    ctx, pool, adaptive, [size],
                    runs=plan.calibration_runs, alpha=plan.alpha,
                    seed=derive_seed(plan.seed, name, "calibration"),
                )
            except errors.InsufficientRows as exc:
                calibration_errors[f"{name}@{size}"] = str(exc)
        calibrated[name] = dict(ctx.calibrated_levels)
        tasks = []
        for run_idx in range(plan.n_runs):
            src_split, tgt_split = _run_split(plan, name, pool, run_idx)
            for shift_spec in plan.shifts:
                tasks.append((shift_spec, run_idx, src_split, tgt_split))
        if log:
            log(f"dataset {name}: scoring {len(tasks)} shift tasks")
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
                futures = [
                    pool_exec.submit(_shift_task, plan, ctx, name, src, tgt, sspec, run_idx)
                    for sspec, run_idx, src, tgt in tasks
                ]
                for fut in futures:
                    all_cells.extend(fut.result())
        else:
            for sspec, run_idx, src, tgt in tasks:
                all_cells.extend(_shift_task(plan, ctx, name, src, tgt, sspec, run_idx))

    all_cells.sort(key=lambda c: (c.dataset, c.shift_key, c.size, c.detector, c.run))
    report = BenchmarkReport(plan, all_cells, calibrated, calibration_errors)
    report.tables = compute_tables(report)
    return report


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _seed_mean_decisions(report: BenchmarkReport) -> dict:
    """(dataset, shift_key, size, detector) -> mean p over runs and decision.

    Error cells are excluded from the mean and counted separately.
    """
    grouped: dict = {}
    for c in report.cells:
        grouped.setdefault((c.dataset, c.shift_key, c.size, c.detector), []).append(c)
    out = {}
    for key, cells in grouped.items():
        ok = [c for c in cells if c.error is None]
        n_err = len(cells) - len(ok)
        if not ok:
            out[key] = {"mean_p": None, "level": None, "detected": None,
                        "kind": cells[0].shift_kind, "n_runs": 0, "n_errors": n_err}
            continue
        mean_p = float(np.mean([c.p_value for c in ok]))
        level = ok[0].level
        out[key] = {
            "mean_p": mean_p,
            "level": level,
            "detected": detection_decision(mean_p, level),
            "kind": ok[0].shift_kind,
            "n_runs": len(ok),
            "n_errors": n_err,
        }
    return out


def _mean_or_none(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def compute_tables(report: BenchmarkReport) -> dict:
    """Derive TPR, accuracy, efficiency and rank-comparison tables."""
    plan = report.plan
    decisions = _seed_mean_decisions(report)
    datasets = sorted({d.name for d in plan.datasets})
    det_labels = [d.label for d in plan.detectors]
    sizes = list(plan.sizes)
    shift_rows = [s for s in plan.shifts if s.kind != "no_shift"]
    types_present = sorted({s.type_label for s in shift_rows})
    rows_by_type: dict = {}
    for s in shift_rows:
        rows_by_type.setdefault(s.type_label, []).append(s.param_key)
    has_negative = any(s.kind == "no_shift" for s in plan.shifts)

    def _decision(ds, key, size, det):
        entry = decisions.get((ds, key, size, det))
        if entry is None or entry["detected"] is None:
            return None
        return 1.0 if entry["detected"] else 0.0

    typed_rate: dict = {}
    for ds in datasets:
        for typ, keys in rows_by_type.items():
            for size in sizes:
                for det in det_labels:
                    vals = [_decision(ds, k, size, det) for k in keys]
                    vals = [v for v in vals if v is not None]
                    typed_rate[(ds, typ, size, det)] = (
                        float(np.mean(vals)) if vals else None
                    )

    tpr_by_shift_by_size = {
        det: {
            typ: {
                str(size): _mean_or_none(
                    [typed_rate[(ds, typ, size, det)] for ds in datasets]
                )
                for size in sizes
            }
            for typ in types_present
        }
        for det in det_labels
    }
    ref_size = 1000 if 1000 in sizes else sizes[-1]
    tpr_by_shift = {
        det: {typ: tpr_by_shift_by_size[det][typ][str(ref_size)] for typ in types_present}
        for det in det_labels
    }

    accuracy_by_size: dict = {det: {} for det in det_labels}
    for det in det_labels:
        for size in sizes:
            vals = []
            for ds in datasets:
                for typ in types_present:
                    rate = typed_rate[(ds, typ, size, det)]
                    if rate is not None:
                        vals.append(rate)
                if has_negative:
                    neg = _decision(ds, "no_shift", size, det)
                    if neg is not None:
                        vals.append(1.0 - neg)
            accuracy_by_size[det][str(size)] = _mean_or_none(vals)

    efficiency: dict = {}
    for ds in datasets:
        efficiency[ds] = {}
        for det in det_labels:
            efficiency[ds][det] = {}
            for typ in types_present:
                flags = {}
                for size in sizes:
                    rate = typed_rate[(ds, typ, size, det)]
                    flags[size] = (rate is not None) and rate >= 0.5
                efficiency[ds][det][typ] = efficiency_score(flags, sizes)

    counts = {
        "cells": len(report.cells),
        "errors": sum(1 for c in report.cells if c.error is not None),
        "accuracy_scenarios_per_size": len(datasets) * (
            len(types_present) + (1 if has_negative else 0)
        ),
    }
    tables = {
        "tpr_reference_size": ref_size,
        "tpr_by_shift": tpr_by_shift,
        "tpr_by_shift_by_size": tpr_by_shift_by_size,
        "accuracy_by_size": accuracy_by_size,
        "efficiency": efficiency,
        "counts": counts,
    }
    if len(datasets) >= 2 and len(det_labels) >= 2 and types_present:
        tables["rank_comparisons"] = {
            typ: compare_detectors_from_tables(tables, datasets, det_labels, typ)
            for typ in types_present
        }
    return tables


def compare_detectors_from_tables(tables, datasets, det_labels, shift_type, alpha=0.05):
    """Friedman + Nemenyi comparison over per-dataset efficiency scores.

    Nemenyi groups are only emitted when the Friedman test rejects.
    """
    scores = np.array(
        [[tables["efficiency"][ds][det][shift_type] for det in det_labels] for ds in datasets],
        dtype=np.float64,
    )
    ranks, mean_ranks = stats.average_ranks(scores, higher_is_better=True)
    fried = stats.friedman_test(ranks)
    out = {
        "shift_type": shift_type,
        "detectors": list(det_labels),
        "mean_ranks": [float(r) for r in mean_ranks],
        "friedman_statistic": fried.statistic,
        "friedman_p": fried.p_value,
        "significant": bool(fried.p_value < alpha),
    }
    if out["significant"]:
        cd = stats.nemenyi_cd(len(det_labels), len(datasets), 0.05)
        out["critical_distance"] = cd
        order = np.argsort(mean_ranks, kind="stable")
        groups = []
        for i in range(len(order)):
            j = i
            while j + 1 < len(order) and mean_ranks[order[j + 1]] - mean_ranks[order[i]] <= cd:
                j += 1
            groups.append(tuple(det_labels[int(g)] for g in order[i : j + 1]))
        maximal = []
        for g in groups:
            if not any(set(g) < set(h) for h in groups) and g not in maximal:
                maximal.append(g)
        out["groups"] = [list(g) for g in maximal]
        out["different_pairs"] = [
            [det_labels[i1], det_labels[i2]]
            for i1 in range(len(det_labels))
            for i2 in range(i1 + 1, len(det_labels))
            if abs(mean_ranks[i1] - mean_ranks[i2]) > cd
        ]
    return out


def compare_detectors(report: BenchmarkReport, shift_type: str, alpha: float = 0.05) -> dict:
    """Rank comparison for one shift type from a finished report."""
    datasets = sorted({d.name for d in report.plan.datasets})
    det_labels = [d.label for d in report.plan.detectors]
    if len(datasets) < 2 or len(det_labels) < 2:
        raise errors.InvalidShape("need at least 2 datasets and 2 detectors")
    if shift_type not in POSITIVE_TYPES:
        raise errors.InvalidArgument(f"unknown shift type {shift_type!r}")
    return compare_detectors_from_tables(report.tables, datasets, det_labels, shift_type, alpha)


# ---------------------------------------------------------------------------
# Model-quality experiment
# ---------------------------------------------------------------------------

DEFAULT_QUALITIES = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def quality_to_corruption(quality: float) -> float:
    """Corruption probability for a model-quality knob in [0.5, 1].

    Quality is the retained share of binary accuracy: quality 1 keeps the
    model intact, quality 0.5 randomizes every prediction (p = 2 (1 - q)).
    """
    if not (0.0 <= quality <= 1.0):
        raise errors.InvalidArgument("quality must lie in [0, 1]")
    return float(min(1.0, max(0.0, 2.0 * (1.0 - quality))))


def model_quality_experiment(
    plan: ExperimentPlan,
    qualities=DEFAULT_QUALITIES,
    size: int = 1000,
    log=None,
) -> dict:
    """Rerun the soft black-box detector with a perturbed primary model.

    For each quality q the primary model is wrapped so predictions become a
    uniformly random class with probability 2(1-q); detection runs at `size`
    across all positive shifts and run seeds. With q = 1 the wrapper is a
    no-op and the cells reproduce plain BBSDs bit-exactly. Returns the
    quality x shift-type TPR table.
    """
    if size not in plan.sizes:
        raise errors.InvalidSpec(f"size {size} not in plan.sizes")
    bbsds = DetectorSpec("BBSDs", alpha=plan.alpha)
    positive = tuple(s for s in plan.shifts if s.kind != "no_shift")
    sub_plan = replace(plan, sizes=(size,), detectors=(bbsds,), shifts=positive)
    tpr: dict = {}
    accuracy: dict = {}
    for q in qualities:
        p_corrupt = quality_to_corruption(q)
        cells: list[CellResult] = []
        acc_vals = []
        for source in plan.datasets:
            name = source.name
            if log:
                log(f"quality {q}: dataset {name}")
            train, pool, ctx = _dataset_environment(plan, source)
            model = perturb(
                ctx.primary_model, p_corrupt,
                seed=derive_seed(plan.seed, name, "quality-perturb"),
            )
            enc_pool = ctx.preprocessor.transform(pool)
            acc_vals.append(float(np.mean(model.predict(enc_pool) == pool.labels)))
            for run_idx in range(plan.n_runs):
                src_split, tgt_split = _run_split(plan, name, pool, run_idx)
                for shift_spec in positive:
                    cells.extend(_shift_task(
                        sub_plan, ctx, name, src_split, tgt_split, shift_spec, run_idx,
                        model_override=model,
                    ))
        cells.sort(key=lambda c: (c.dataset, c.shift_key, c.size, c.detector, c.run))
        rep = BenchmarkReport(sub_plan, cells, {}, {})
        tables = compute_tables(rep)
        tpr[str(q)] = dict(tables["tpr_by_shift"][bbsds.label])
        accuracy[str(q)] = float(np.mean(acc_vals))
    return {
        "detector": bbsds.label,
        "size": size,
        "qualities": [float(q) for q in qualities],
        "corruption": {str(q): quality_to_corruption(q) for q in qualities},
        "mean_model_accuracy": accuracy,
        "tpr": tpr,
    }


# ---------------------------------------------------------------------------
# Eigen-shift experiment (prior shifts hidden from prediction-based detection)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenShiftResult:
    confusion: ConfusionMatrix
    lambda_min: float
    v_min: np.ndarray
    alpha_min: float
    alpha_max: float
    records: tuple

    def to_json(self) -> dict:
        return {
            "confusion_matrix": self.confusion.matrix.tolist(),
            "lambda_min": self.lambda_min,
            "v_min": self.v_min.tolist(),
            "alpha_range": [self.alpha_min, self.alpha_max],
            "records": [dict(r) for r in self.records],
        }


def eigen_alpha_range(p_source: np.ndarray, v_min: np.ndarray) -> tuple[float, float]:
    """Largest [alpha_min, alpha_max] keeping p_source + alpha v_min in [0,1].

    alpha_min is always non-positive and alpha_max non-negative because
    alpha = 0 is feasible.
    """
    lo, hi = -np.inf, np.inf
    for p_i, v_i in zip(p_source, v_min):
        if abs(v_i) < 1e-15:
            continue
        bound_a = -p_i / v_i
        bound_b = (1.0 - p_i) / v_i
        lo = max(lo, min(bound_a, bound_b))
        hi = min(hi, max(bound_a, bound_b))
    if not np.isfinite(lo) or not np.isfinite(hi) or (lo == 0.0 and hi == 0.0):
        raise errors.InfeasibleShift("no nonzero prior shift along v_min is feasible")
    return float(min(lo, 0.0)), float(max(hi, 0.0))


def _largest_remainder(n: int, weights: np.ndarray) -> np.ndarray:
    raw = weights * n
    base = np.floor(raw).astype(np.int64)
    rem = n - int(base.sum())
    if rem > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:rem]] += 1
    return base


def eigen_shift_experiment(
    model,
    eval_encoded,
    labels,
    alphas: int = 11,
    seed: int = 0,
    require_binary: bool = True,
) -> EigenShiftResult:
    """Construct prior shifts along the confusion matrix's minimum eigenvector
    and measure how visible they are to prediction-based detection.

    For each alpha on a uniform grid over the feasible range, the target
    label distribution p_T = p_S + alpha v_min is realized by per-class
    resampling (with replacement) of the evaluation rows. Each record stores
    the exact predicted-distribution gap ||C (p_T - p_S)||_2 (equal to
    |alpha lambda_min| by the eigenpair identity), the empirically observed
    prediction-histogram gap, and the per-class-KS detector p-value.
    """
    x = np.asarray(getattr(eval_encoded, "values", eval_encoded), dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).ravel()
    if require_binary and model.k != 2:
        raise errors.InvalidArgument(
            "the eigen-shift experiment is restricted to binary models by default"
        )
    conf = confusion_matrix(model, x, y)
    lam, v = min_eigenpair(conf.matrix)
    k = model.k
    # p_S + alpha v is a distribution only when v sums to zero. That holds
    # automatically when lambda_min != 1; for degenerate eigenspaces (e.g. a
    # perfect model, C = I) project v onto the zero-sum hyperplane, which is
    # valid only if the projection is still an eigenvector.
    if abs(float(v.sum())) > 1e-8:
        v_proj = v - v.sum() / k
        norm = float(np.linalg.norm(v_proj))
        if norm < 1e-12:
            raise errors.InfeasibleShift(
                "v_min is parallel to the all-ones vector; no feasible prior shift"
            )
        v_proj /= norm
        if float(np.linalg.norm(conf.matrix @ v_proj - lam * v_proj)) > 1e-8:
            raise errors.InfeasibleShift(
                "v_min does not preserve total probability and cannot be adjusted"
            )
        v = v_proj
        for comp in v:
            if abs(comp) > 1e-12:
                if comp < 0:
                    v = -v
                break
    p_s = np.bincount(y, minlength=k).astype(np.float64)
    p_s /= p_s.sum()
    a_min, a_max = eigen_alpha_range(p_s, v)
    grid = np.linspace(a_min, a_max, int(alphas))
    class_rows = {c: np.where(y == c)[0] for c in range(k)}
    probs_src = model.predict_proba(x)
    pred_src = np.argmax(probs_src, axis=1)
    hist_src = np.bincount(pred_src, minlength=k) / y.size

    records = []
    n = y.size
    for gi, a in enumerate(grid):
        p_t = np.clip(p_s + a * v, 0.0, 1.0)
        exact_gap = float(np.linalg.norm(conf.matrix @ (a * v)))
        counts = _largest_remainder(n, p_t / p_t.sum())
        rng = make_rng(seed, "eigen", gi)
        chosen = []
        for c in range(k):
            if counts[c] == 0:
                continue
            rows_c = class_rows[c]
            if rows_c.size == 0:
                raise errors.InfeasibleShift(f"no evaluation rows of class {c} to resample")
            chosen.append(rng.choice(rows_c, size=int(counts[c]), replace=True))
        idx = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
        probs_tgt = model.predict_proba(x[idx])
        pred_tgt = np.argmax(probs_tgt, axis=1)
        hist_tgt = np.bincount(pred_tgt, minlength=k) / max(1, idx.size)
        comp = [stats.ks_two_sample(probs_src[:, c], probs_tgt[:, c]).p_value for c in range(k)]
        bbsds_p = stats.bonferroni(comp).aggregated_p
        records.append({
            "alpha": float(a),
            "true_gap": float(abs(a)),
            "predicted_gap_exact": exact_gap,
            "predicted_gap_eigen": float(abs(a * lam)),
            "predicted_gap_empirical": float(np.linalg.norm(hist_src - hist_tgt)),
            "bbsds_p": float(bbsds_p),
        })
    return EigenShiftResult(conf, lam, v, a_min, a_max, tuple(records))


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def write_cells_csv(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CELL_CSV_COLUMNS)
        for c in report.cells:
            row = c.to_json()
            writer.writerow(["" if row[col] is None else row[col] for col in CELL_CSV_COLUMNS])


def write_report_json(report: BenchmarkReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def _fmt(v, digits=2):
    if v is None:
        return "-"
    return f"{v:.{digits}f}"


def write_tables_md(report: BenchmarkReport, path) -> None:
    """Markdown rendering of the accuracy / TPR / average-rank tables."""
    t = report.tables
    det_labels = [d.label for d in report.plan.detectors]
    lines = ["# Benchmark tables", ""]
    lines.append("## Accuracy across datasets by size")
    lines.append("")
    lines.append("| Size | " + " | ".join(det_labels) + " |")
    lines.append("|" + "---|" * (len(det_labels) + 1))
    for size in report.plan.sizes:
        row = [str(size)] + [_fmt(t["accuracy_by_size"][d][str(size)]) for d in det_labels]
        lines.append("| " + " | ".join(row) + " |")
    lines.append("")
    lines.append(f"## TPR by shift type at size {t['tpr_reference_size']}")
    lines.append("")
    lines.append("| Shift type | " + " | ".join(det_labels) + " |")
    lines.append("|" + "---|" * (len(det_labels) + 1))
    for typ in sorted(next(iter(t["tpr_by_shift"].values()), {})):
        row = [typ] + [_fmt(t["tpr_by_shift"][d][typ]) for d in det_labels]
        lines.append("| " + " | ".join(row) + " |")
    if "rank_comparisons" in t:
        lines.append("")
        lines.append("## Average ranks by shift type (efficiency score)")
        lines.append("")
        lines.append("| Shift type | " + " | ".join(det_labels) + " | Friedman p | CD |")
        lines.append("|" + "---|" * (len(det_labels) + 3))
        for typ, comp in sorted(t["rank_comparisons"].items()):
            row = [typ] + [_fmt(r) for r in comp["mean_ranks"]]
            row.append(_fmt(comp["friedman_p"], 4))
            row.append(_fmt(comp.get("critical_distance"), 3) if comp["significant"] else "n.s.")
            lines.append("| " + " | ".join(row) + " |")
    lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
