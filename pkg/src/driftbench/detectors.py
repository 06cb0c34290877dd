"""Shift detectors: six base detectors, three ensembles, adaptive calibration.

Every detector maps an encoded (source, target) pair to a DetectionResult
holding the detector's aggregated p-value. Detectors built from several
univariate tests aggregate them with Bonferroni (min(1, k * min p)) and
compare the aggregated p-value against the significance level: the fixed
level alpha, or a dataset-adaptive level equal to the alpha-quantile of the
detector's p-values over repeated null source-vs-source splits.

Labels follow the benchmark convention: BBSDs, BBSDh, Test_X, Test_PCA,
Test_SRP, DC, DC*, BBSDs+X, BBSDs+DC, with an " (adapt)" suffix for the
adaptive variants.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import errors, forest, projections, stats
from .errors import DegenerateNullWarning
from .forest import ForestConfig
from .rng import derive_seed, make_rng
from .tabular import Dataset, Preprocessor, preprocess

BASE_DETECTORS = ("BBSDs", "BBSDh", "Test_X", "Test_PCA", "Test_SRP", "DC")
ENSEMBLE_DETECTORS = ("DC*", "BBSDs+X", "BBSDs+DC")
ALL_DETECTORS = BASE_DETECTORS + ENSEMBLE_DETECTORS

_ALIASES = {
    "bbsds": "BBSDs",
    "bbsdh": "BBSDh",
    "test_x": "Test_X",
    "test_pca": "Test_PCA",
    "test_srp": "Test_SRP",
    "dc": "DC",
    "dc*": "DC*",
    "dcstar": "DC*",
    "dc_star": "DC*",
    "bbsds+x": "BBSDs+X",
    "bbsds_plus_x": "BBSDs+X",
    "bbsds+dc": "BBSDs+DC",
    "bbsds_plus_dc": "BBSDs+DC",
}


def canonical_name(name: str) -> str:
    """Resolve a detector name case-insensitively to its canonical label."""
    key = name.strip()
    if key.endswith(" (adapt)"):
        key = key[: -len(" (adapt)")]
    resolved = _ALIASES.get(key.lower())
    if resolved is None:
        raise errors.InvalidArgument(
            f"unknown detector {name!r}; expected one of {', '.join(ALL_DETECTORS)}"
        )
    return resolved


@dataclass(frozen=True)
class DetectorSpec:
    """A detector choice: canonical name, adaptive flag, base alpha."""

    name: str
    adaptive: bool = False
    alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "name", canonical_name(self.name))
        if not (0.0 < self.alpha < 1.0):
            raise errors.InvalidArgument("alpha must lie in (0, 1)")

    @property
    def label(self) -> str:
        return self.name + (" (adapt)" if self.adaptive else "")

    def to_json(self) -> dict:
        return {"name": self.name, "adaptive": self.adaptive, "alpha": self.alpha}

    @staticmethod
    def from_json(obj: dict) -> "DetectorSpec":
        return DetectorSpec(
            obj["name"], bool(obj.get("adaptive", False)), float(obj.get("alpha", 0.05))
        )


@dataclass
class DetectorContext:
    """Artifacts fitted on the training split, shared by all detectors.

    `calibrated_levels` maps (detector name, sample size) to the adaptive
    significance level; it is written by calibration before any adaptive
    detection reads it, and detection calls never mutate the context.
    """

    preprocessor: Preprocessor
    primary_model: forest.RandomForestClassifier | None = None
    pca: projections.PcaModel | None = None
    srp: projections.SrpModel | None = None
    dc_config: ForestConfig = field(default_factory=ForestConfig)
    calibrated_levels: dict = field(default_factory=dict)


def fit_context(
    train: Dataset,
    *,
    forest_config: ForestConfig | None = None,
    dc_config: ForestConfig | None = None,
    variance_retention: float = 0.8,
    srp_density: float | None = None,
    seed: int = 0,
    fit_primary: bool | None = None,
) -> DetectorContext:
    """Fit encoder, primary model, PCA and SRP on the training split.

    The SRP output dimension is set to the PCA dimension. The primary model
    is fitted when labels are present (or when `fit_primary` forces it).
    """
    encs, prep = preprocess(train)
    enc = encs[0]
    if fit_primary is None:
        fit_primary = train.labels is not None
    primary = None
    if fit_primary:
        if train.labels is None:
            raise errors.MissingLabels("fitting the primary model requires labels")
        cfg = forest_config or ForestConfig(seed=derive_seed(seed, "primary-forest"))
        primary = forest.fit(enc, train.labels, cfg, compute_oob=True)
    pca = projections.fit_pca(enc, variance_retention)
    density = srp_density if srp_density is not None else projections.default_srp_density(enc.width)
    srp = projections.fit_srp(enc.width, pca.r, density, derive_seed(seed, "srp"))
    dcc = dc_config or ForestConfig(seed=derive_seed(seed, "dc-forest"))
    return DetectorContext(prep, primary, pca, srp, dcc)


@dataclass(frozen=True)
class DetectionResult:
    """One detector verdict: aggregated p-value vs significance level."""

    detector: DetectorSpec
    p_value: float
    significance_level: float
    shift_detected: bool
    components: tuple[float, ...] | None = None
    dc_accuracy: float | None = None

    def to_json(self) -> dict:
        out = {
            "detector": self.detector.name,
            "adaptive": self.detector.adaptive,
            "p_value": self.p_value,
            "level": self.significance_level,
            "detected": self.shift_detected,
            "components": list(self.components) if self.components is not None else [],
        }
        if self.dc_accuracy is not None:
            out["dc_accuracy"] = self.dc_accuracy
        return out


def resolve_level(ctx: DetectorContext, spec: DetectorSpec, size: int) -> float:
    """Fixed alpha, or the calibrated level stored for (detector, size)."""
    if not spec.adaptive:
        return spec.alpha
    key = (spec.name, int(size))
    if key not in ctx.calibrated_levels:
        raise errors.InvalidArgument(
            f"no calibrated level for {spec.name!r} at size {size}; run calibration first"
        )
    return float(ctx.calibrated_levels[key])


def _values(x) -> np.ndarray:
    arr = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if arr.ndim != 2:
        raise errors.WidthMismatch("expected 2-D encoded matrices")
    return arr


def _check_pair(source, target) -> tuple[np.ndarray, np.ndarray]:
    xs, xt = _values(source), _values(target)
    if xs.shape[0] == 0 or xt.shape[0] == 0:
        raise errors.EmptySample("both source and target must be non-empty")
    if xs.shape[1] != xt.shape[1]:
        raise errors.WidthMismatch(f"widths differ: {xs.shape[1]} vs {xt.shape[1]}")
    return xs, xt


def _ks_bonferroni(xs: np.ndarray, xt: np.ndarray) -> tuple[float, tuple[float, ...]]:
    """Per-column KS tests aggregated with Bonferroni.

    Columns constant across both samples contribute component p = 1 and are
    excluded from the correction factor, so they cannot dilute the aggregate.
    """
    comps = []
    active = []
    for j in range(xs.shape[1]):
        a, b = xs[:, j], xt[:, j]
        lo = min(a.min(), b.min())
        hi = max(a.max(), b.max())
        if lo == hi:
            comps.append(1.0)
            continue
        p = stats.ks_two_sample(a, b).p_value
        comps.append(p)
        active.append(p)
    if not active:
        return 1.0, tuple(comps)
    agg = stats.bonferroni(active).aggregated_p
    return agg, tuple(comps)


def _result(spec, p, level, components=None, dc_accuracy=None) -> DetectionResult:
    return DetectionResult(spec, float(p), float(level), bool(p < level), components, dc_accuracy)


def detect_test_x(ctx, source, target, spec: DetectorSpec, seed: int = 0, level: float | None = None) -> DetectionResult:
    """Univariate KS test per encoded feature column, Bonferroni-aggregated."""
    xs, xt = _check_pair(source, target)
    if level is None:
        level = resolve_level(ctx, spec, xs.shape[0])
    p, comps = _ks_bonferroni(xs, xt)
    return _result(spec, p, level, comps)


def detect_test_pca(ctx, source, target, spec: DetectorSpec, seed: int = 0, level: float | None = None) -> DetectionResult:
    """KS tests on PCA-projected features."""
    if ctx.pca is None:
        raise errors.UnfittedProjection("context has no fitted PCA model")
    xs, xt = _check_pair(source, target)
    if level is None:
        level = resolve_level(ctx, spec, xs.shape[0])
    p, comps = _ks_bonferroni(
        projections.transform_pca(ctx.pca, xs), projections.transform_pca(ctx.pca, xt)
    )
    return _result(spec, p, level, comps)


def detect_test_srp(ctx, source, target, spec: DetectorSpec, seed: int = 0, level: float | None = None) -> DetectionResult:
    """KS tests on sparse-random-projected features."""
    if ctx.srp is None:
        raise errors.UnfittedProjection("context has no fitted SRP model")
    xs, xt = _check_pair(source, target)
    if level is None:
        level = resolve_level(ctx, spec, xs.shape[0])
    p, comps = _ks_bonferroni(
        projections.transform_srp(ctx.srp, xs), projections.transform_srp(ctx.srp, xt)
    )
    return _result(spec, p, level, comps)


def _require_model(ctx) -> forest.RandomForestClassifier:
    if ctx.primary_model is None:
        raise errors.UnfittedModel("context has no fitted primary model")
    return ctx.primary_model


def detect_bbsds(ctx, source, target, spec: DetectorSpec, seed: int = 0, level: float | None = None, model=None) -> DetectionResult:
    """Soft black-box shift detection: per-class KS on predicted probabilities."""
    model = model if model is not None else _require_model(ctx)
    xs, xt = _check_pair(source, target)
    if xs.shape[1] != model.feature_count:
        raise errors.ModelMismatch(
            f"model expects {model.feature_count} features, got {xs.shape[1]}"
        )
    if level is None:
        level = resolve_level(ctx, spec, xs.shape[0])
    p, comps = _ks_bonferroni(model.predict_proba(xs), model.predict_proba(xt))
    return _result(spec, p, level, comps)


def detect_bbsdh(ctx, source, target, spec: DetectorSpec, seed: int = 0, level: float | None = None, model=None) -> DetectionResult:
    """Hard black-box shift detection: chi-square test on predicted classes."""
    model = model if model is not None else _require_model(ctx)
    xs, xt = _check_pair(source, target)
    if xs.shape[1] != model.feature_count:
        raise errors.ModelMismatch(
            f"model expects {model.feature_count} features, got {xs.shape[1]}"
        )
    if level is None:
        level = resolve_level(ctx, spec, xs.shape[0])
    cs = np.bincount(model.predict(xs), minlength=model.k)
    ct = np.bincount(model.predict(xt), minlength=model.k)
    res = stats.chi2_homogeneity(cs, ct)
    return _result(spec, res.p_value, level, (res.p_value,))


def detect_dc(
    ctx,
    source,
    target,
    spec: DetectorSpec,
    seed: int = 0,
    level: float | None = None,
    use_predictions: bool = False,
    model=None,
) -> DetectionResult:
    """Domain classifier: train a fresh forest to tell source from target.

    Rows are labelled 0 (source) / 1 (target), split stratified 50/50 into
    train and holdout, and the holdout accuracy feeds a one-sided binomial
    test against chance. With `use_predictions` the primary model's class
    probabilities are appended to the features (the DC* ensemble).
    """
    xs, xt = _check_pair(source, target)
    n = xs.shape[0]
    if n != xt.shape[0]:
        raise errors.UnbalancedInput(f"DC needs balanced sides, got {n} vs {xt.shape[0]}")
    if n < 4:
        raise errors.TooFewSamples("DC needs at least 4 rows per side")
    if level is None:
        level = resolve_level(ctx, spec, n)
    if use_predictions:
        model = model if model is not None else _require_model(ctx)
        xs = np.hstack([xs, model.predict_proba(xs)])
        xt = np.hstack([xt, model.predict_proba(xt)])
    x = np.vstack([xs, xt])
    y = np.concatenate([np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)])
    rng = make_rng(seed, "dc-split")
    perm_s = rng.permutation(n)
    perm_t = rng.permutation(n) + n
    half = n // 2
    train_idx = np.concatenate([perm_s[:half], perm_t[:half]])
    hold_idx = np.concatenate([perm_s[half:], perm_t[half:]])
    cfg = replace(ctx.dc_config, seed=derive_seed(seed, ctx.dc_config.seed, "dc-fit"))
    clf = forest.fit(x[train_idx], y[train_idx], cfg)
    pred = clf.predict(x[hold_idx])
    correct = int((pred == y[hold_idx]).sum())
    res = stats.binomial_test_greater(correct, hold_idx.size, 0.5)
    acc = correct / hold_idx.size
    return _result(spec, res.p_value, level, (res.p_value,), acc)


_ENSEMBLE_MEMBERS = {
    "BBSDs+X": ("BBSDs", "Test_X"),
    "BBSDs+DC": ("BBSDs", "DC"),
}


def detect_ensemble_pair(ctx, source, target, spec: DetectorSpec, seed: int = 0, level: float | None = None) -> DetectionResult:
    """Bonferroni pair of complementary detectors: p = min(1, 2 min(pa, pb))."""
    if spec.name not in _ENSEMBLE_MEMBERS:
        raise errors.InvalidArgument(f"{spec.name!r} is not a pair ensemble")
    xs, _ = _check_pair(source, target)
    if level is None:
        level = resolve_level(ctx, spec, xs.shape[0])
    members = _ENSEMBLE_MEMBERS[spec.name]
    member_results = []
    for name in members:
        member_spec = DetectorSpec(name, adaptive=False, alpha=spec.alpha)
        res = run_detector(
            ctx, member_spec, source, target,
            seed=derive_seed(seed, "member", name),
            level=member_spec.alpha,
        )
        member_results.append(res)
    pa, pb = (r.p_value for r in member_results)
    p = min(1.0, 2.0 * min(pa, pb))
    dc_acc = next((r.dc_accuracy for r in member_results if r.dc_accuracy is not None), None)
    return _result(spec, p, level, (member_results[0].p_value, member_results[1].p_value), dc_acc)


def run_detector(ctx, spec: DetectorSpec, source, target, seed: int = 0, level: float | None = None) -> DetectionResult:
    """Dispatch a (source, target) comparison to the named detector."""
    name = spec.name
    if name == "Test_X":
        return detect_test_x(ctx, source, target, spec, seed, level)
    if name == "Test_PCA":
        return detect_test_pca(ctx, source, target, spec, seed, level)
    if name == "Test_SRP":
        return detect_test_srp(ctx, source, target, spec, seed, level)
    if name == "BBSDs":
        return detect_bbsds(ctx, source, target, spec, seed, level)
    if name == "BBSDh":
        return detect_bbsdh(ctx, source, target, spec, seed, level)
    if name == "DC":
        return detect_dc(ctx, source, target, spec, seed, level)
    if name == "DC*":
        return detect_dc(ctx, source, target, spec, seed, level, use_predictions=True)
    return detect_ensemble_pair(ctx, source, target, spec, seed, level)


# ---------------------------------------------------------------------------
# Dataset-adaptive significance calibration
# ---------------------------------------------------------------------------

def calibration_null_pvalues(
    ctx: DetectorContext,
    source: Dataset,
    specs,
    runs: int,
    size: int,
    seed: int = 0,
) -> dict[str, list[float]]:
    """Null p-values per detector from `runs` source-vs-source comparisons.

    Each run draws two disjoint uniform subsets of `size` rows from the
    source dataset (per-run seeds split from the master seed by run index);
    all detectors in `specs` score the same pair.
    """
    if isinstance(specs, DetectorSpec):
        specs = [specs]
    n = source.n_rows
    if 2 * size > n:
        raise errors.InsufficientRows(
            f"calibration at size {size} needs {2 * size} rows, source has {n}"
        )
    out: dict[str, list[float]] = {spec.name: [] for spec in specs}
    for r in range(runs):
        rng = make_rng(seed, "calibration", r)
        idx = rng.permutation(n)[: 2 * size]
        enc_a = ctx.preprocessor.transform(source.take(idx[:size]))
        enc_b = ctx.preprocessor.transform(source.take(idx[size:]))
        for spec in specs:
            res = run_detector(
                ctx,
                replace(spec, adaptive=False),
                enc_a,
                enc_b,
                seed=derive_seed(seed, "calibration", r, spec.name),
                level=spec.alpha,
            )
            out[spec.name].append(res.p_value)
    return out


def calibrate_significance_level(
    ctx: DetectorContext,
    source: Dataset,
    spec: DetectorSpec,
    size: int,
    runs: int = 100,
    alpha: float = 0.05,
    seed: int = 0,
) -> float:
    """Set the detector's significance level to the alpha-quantile of its
    null p-value distribution, estimated from repeated source-only splits.

    The level is stored in ctx.calibrated_levels[(name, size)]. A warning is
    emitted when the null distribution is degenerate (most p-values at 1),
    which happens for heavily imbalanced datasets.
    """
    ps = calibration_null_pvalues(ctx, source, spec, runs, size, seed)[spec.name]
    level = stats.empirical_quantile(ps, alpha)
    if sum(1 for p in ps if p >= 1.0) > 0.5 * len(ps):
        warnings.warn(
            f"{spec.name}: more than half of the null p-values equal 1; "
            "the null distribution is degenerate and the calibrated level is unreliable",
            DegenerateNullWarning,
            stacklevel=2,
        )
    ctx.calibrated_levels[(spec.name, int(size))] = float(level)
    return float(level)


def calibrate_all(
    ctx: DetectorContext,
    source: Dataset,
    specs,
    sizes,
    runs: int = 100,
    alpha: float = 0.05,
    seed: int = 0,
) -> dict:
    """Calibrate every adaptive spec at every size, sharing null pairs.

    Returns {(name, size): level}; the levels are also stored in the context.
    """
    adaptive = [s for s in specs if s.adaptive]
    levels: dict = {}
    for size in sizes:
        if not adaptive:
            break
        null_ps = calibration_null_pvalues(ctx, source, adaptive, runs, size, derive_seed(seed, size))
        for spec in adaptive:
            ps = null_ps[spec.name]
            level = stats.empirical_quantile(ps, alpha)
            if sum(1 for p in ps if p >= 1.0) > 0.5 * len(ps):
                warnings.warn(
                    f"{spec.name} (size {size}): degenerate null p-value distribution",
                    DegenerateNullWarning,
                    stacklevel=2,
                )
            ctx.calibrated_levels[(spec.name, int(size))] = float(level)
            levels[(spec.name, int(size))] = float(level)
    return levels
