"""Synthetic shift generators applied to a clean test split.

Ten shift kinds grouped in four families:
  prior shift        - knock_out, only_one
  covariate shift    - gaussian_small/medium, adv_zoo, adv_boundary
  selection bias     - joint_subsampling, subsampling, under_sampling,
                       over_sampling
  control            - no_shift

Every generator is deterministic per (input, spec) and never mutates its
input; surviving original rows are bit-identical to the source rows, and the
target schema always equals the source schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import errors
from .rng import derive_seed, make_rng
from .tabular import Dataset, Preprocessor

# kind -> required Table-1 parameters
_KIND_PARAMS = {
    "knock_out": ("s",),
    "only_one": (),
    "gaussian_small": ("s", "f"),
    "gaussian_medium": ("s", "f"),
    "adv_zoo": ("s",),
    "adv_boundary": ("s",),
    "joint_subsampling": (),
    "subsampling": ("f",),
    "under_sampling": ("s",),
    "over_sampling": ("s",),
    "no_shift": (),
}

# Display names used in report tables.
SHIFT_TYPE_LABELS = {
    "knock_out": "Knock-Out",
    "only_one": "Only-One",
    "gaussian_small": "Small Gaussian",
    "gaussian_medium": "Medium Gaussian",
    "adv_zoo": "Adv. ZOO",
    "adv_boundary": "Adv. Boundary",
    "joint_subsampling": "Subsampling Joint",
    "subsampling": "Subsampling",
    "under_sampling": "Under-sampling",
    "over_sampling": "Over-sampling",
    "no_shift": "No Shift",
}

SHIFT_KINDS = tuple(_KIND_PARAMS)


@dataclass(frozen=True)
class ShiftSpec:
    """One parameterized drift: kind plus its severity parameters."""

    kind: str
    s: float | None = None
    f: float | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KIND_PARAMS:
            raise errors.UnknownShiftKind(f"unknown shift kind {self.kind!r}")
        required = _KIND_PARAMS[self.kind]
        for p in ("s", "f"):
            val = getattr(self, p)
            if p in required and val is None:
                raise errors.InvalidSpec(f"{self.kind} requires parameter {p!r}")
            if p not in required and val is not None:
                raise errors.InvalidSpec(f"{self.kind} does not take parameter {p!r}")
            if val is not None and not (0.0 <= val <= 1.0):
                raise errors.InvalidSpec(f"parameter {p!r} must lie in [0, 1]")

    @property
    def type_label(self) -> str:
        return SHIFT_TYPE_LABELS[self.kind]

    @property
    def param_key(self) -> str:
        """Stable identifier of the parameterized drift, e.g. knock_out[s=0.4]."""
        parts = []
        if self.s is not None:
            parts.append(f"s={self.s:g}")
        if self.f is not None:
            parts.append(f"f={self.f:g}")
        return self.kind + (f"[{','.join(parts)}]" if parts else "")

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind, "seed": self.seed}
        if self.s is not None:
            out["s"] = self.s
        if self.f is not None:
            out["f"] = self.f
        if self.extra:
            out["extra"] = dict(self.extra)
        return out

    @staticmethod
    def from_json(obj: dict) -> "ShiftSpec":
        return ShiftSpec(
            kind=obj["kind"],
            s=obj.get("s"),
            f=obj.get("f"),
            seed=int(obj.get("seed", 0)),
            extra=dict(obj.get("extra", {})),
        )


@dataclass(frozen=True)
class ShiftOutcome:
    """Shifted target dataset plus bookkeeping about what was touched."""

    target: Dataset
    applied: ShiftSpec
    affected_rows: np.ndarray
    attack_failures: int = 0


def table1_shift_specs(seed: int = 0, include_no_shift: bool = False) -> list[ShiftSpec]:
    """The 19 parameterized drifts of the benchmark (plus optional no-shift)."""
    specs = [
        ShiftSpec("knock_out", s=0.25, seed=seed),
        ShiftSpec("knock_out", s=0.40, seed=seed),
        ShiftSpec("only_one", seed=seed),
    ]
    for kind in ("gaussian_small", "gaussian_medium"):
        for s, f in ((0.5, 0.5), (0.5, 1.0), (1.0, 0.5), (1.0, 1.0)):
            specs.append(ShiftSpec(kind, s=s, f=f, seed=seed))
    for kind in ("adv_zoo", "adv_boundary"):
        for s in (0.25, 0.5):
            specs.append(ShiftSpec(kind, s=s, seed=seed))
    specs.extend(
        [
            ShiftSpec("joint_subsampling", seed=seed),
            ShiftSpec("subsampling", f=1.0, seed=seed),
            ShiftSpec("under_sampling", s=0.5, seed=seed),
            ShiftSpec("over_sampling", s=0.5, seed=seed),
        ]
    )
    if include_no_shift:
        specs.append(ShiftSpec("no_shift", seed=seed))
    return specs


def _require_labels(ds: Dataset):
    if ds.labels is None:
        raise errors.MissingLabels("this shift requires a labeled dataset")


def _class_counts(ds: Dataset) -> np.ndarray:
    k = max(ds.n_classes, int(ds.labels.max()) + 1 if ds.labels.size else 1)
    return np.bincount(ds.labels, minlength=k)


def _keep(ds: Dataset, keep_mask: np.ndarray, spec: ShiftSpec) -> ShiftOutcome:
    keep_idx = np.where(keep_mask)[0]
    dropped = np.where(~keep_mask)[0]
    return ShiftOutcome(ds.take(keep_idx), spec, dropped)


# ---------------------------------------------------------------------------
# Prior shift
# ---------------------------------------------------------------------------

def knock_out(ds: Dataset, s: float, seed: int) -> ShiftOutcome:
    """Remove a fraction s of the majority class, uniformly at random."""
    _require_labels(ds)
    spec = ShiftSpec("knock_out", s=s, seed=seed)
    counts = _class_counts(ds)
    majority = int(np.argmax(counts))
    maj_rows = np.where(ds.labels == majority)[0]
    n_remove = int(math.floor(s * maj_rows.size))
    keep = np.ones(ds.n_rows, dtype=bool)
    if n_remove > 0:
        rng = make_rng(seed, "knock_out")
        removed = maj_rows[rng.permutation(maj_rows.size)[:n_remove]]
        keep[removed] = False
    return _keep(ds, keep, spec)


def only_one(ds: Dataset, seed: int) -> ShiftOutcome:
    """Keep only the smallest (minority) class; ties resolve to the lowest id."""
    _require_labels(ds)
    counts = _class_counts(ds)
    if np.count_nonzero(counts) < 2:
        raise errors.MissingLabels("only_one requires at least two populated classes")
    masked = np.where(counts > 0, counts, np.iinfo(np.int64).max)
    minority = int(np.argmin(masked))
    keep = ds.labels == minority
    return _keep(ds, keep, ShiftSpec("only_one", seed=seed))


# ---------------------------------------------------------------------------
# Gaussian covariate shift
# ---------------------------------------------------------------------------

def gaussian_noise(
    ds: Dataset,
    s: float,
    f: float,
    level: str,
    seed: int,
    scale: float | None = None,
) -> ShiftOutcome:
    """Add N(0, (c * sigma_j)^2) noise to s% of rows and f% of numeric features.

    c is 0.1 for the small level and 1.0 for the medium level; `scale`
    overrides it. sigma_j is the per-feature standard deviation of the clean
    split. Missing cells are left missing.
    """
    num = ds.numeric_matrix()
    if num.shape[1] == 0:
        raise errors.NoNumericFeatures("gaussian noise requires numeric features")
    if level not in ("small", "medium"):
        raise errors.InvalidSpec("level must be 'small' or 'medium'")
    c = scale if scale is not None else (0.1 if level == "small" else 1.0)
    kind = "gaussian_small" if level == "small" else "gaussian_medium"
    spec = ShiftSpec(kind, s=s, f=f, seed=seed, extra={"scale": scale} if scale is not None else {})
    n, d = num.shape
    n_rows = int(math.floor(s * n))
    n_feats = int(math.floor(f * d))
    if n_rows == 0 or n_feats == 0:
        return ShiftOutcome(ds.take(np.arange(n)), spec, np.empty(0, dtype=np.int64))
    rng = make_rng(seed, "gaussian")
    rows = np.sort(rng.permutation(n)[:n_rows])
    feats = np.sort(rng.permutation(d)[:n_feats])
    with np.errstate(invalid="ignore"):
        sigma = np.nanstd(num, axis=0, ddof=1) if n > 1 else np.zeros(d)
    sigma = np.nan_to_num(sigma, nan=0.0)
    noise = rng.standard_normal((n_rows, n_feats)) * (c * sigma[feats])
    out = num.copy()
    block = out[np.ix_(rows, feats)]
    mask = ~np.isnan(block)
    block[mask] += noise[mask]
    out[np.ix_(rows, feats)] = block
    return ShiftOutcome(ds.with_numeric(out), spec, rows)


# ---------------------------------------------------------------------------
# Adversarial covariate shift (black-box attacks on the primary model)
# ---------------------------------------------------------------------------

def _attack_setup(ds: Dataset, model, preprocessor: Preprocessor):
    if model is None:
        raise errors.UnfittedModel("adversarial shifts require a fitted primary model")
    num_positions = preprocessor.numeric_feature_positions()
    if not num_positions:
        raise errors.NoNumericFeatures("adversarial shifts require numeric features")
    enc = preprocessor.transform(ds).values
    coords = np.asarray(num_positions, dtype=np.int64)
    sigma = enc[:, coords].std(axis=0, ddof=1) if enc.shape[0] > 1 else np.zeros(coords.size)
    movable = sigma > 0
    return enc, coords[movable], sigma[movable]


def _margin(probs: np.ndarray, cls: np.ndarray) -> np.ndarray:
    """p(original class) minus the best other-class probability."""
    own = probs[np.arange(probs.shape[0]), cls]
    rest = probs.copy()
    rest[np.arange(probs.shape[0]), cls] = -np.inf
    return own - rest.max(axis=1)


def _writeback_numeric(ds: Dataset, enc: np.ndarray, coords: np.ndarray,
                       rows: np.ndarray, new_rows: np.ndarray,
                       preprocessor: Preprocessor) -> Dataset:
    """Copy attacked encoded numeric coordinates back into raw dataset cells."""
    all_positions = preprocessor.numeric_feature_positions()
    pos_to_numcol = {p: j for j, p in enumerate(all_positions)}
    num = ds.numeric_matrix()
    for i, row in enumerate(rows):
        for c_i, pos in enumerate(coords):
            num[row, pos_to_numcol[int(pos)]] = new_rows[i, c_i]
    return ds.with_numeric(num)


def adversarial_zoo(
    ds: Dataset,
    model,
    preprocessor: Preprocessor,
    s: float,
    seed: int,
    max_iters: int | None = None,
    step: float = 0.05,
    max_l2: float = 3.0,
) -> ShiftOutcome:
    """Coordinate-wise zeroth-order attack on s% of rows.

    Each iteration estimates the margin gradient along one random coordinate
    with central finite differences (h = 0.01 sigma_j) and moves by
    step * sigma_j against it; a row stops when its predicted class flips or
    the sigma-normalized l2 budget is spent. Failed rows are left unchanged.
    """
    spec = ShiftSpec("adv_zoo", s=s, seed=seed)
    enc, coords, sigma = _attack_setup(ds, model, preprocessor)
    n = ds.n_rows
    n_sel = int(math.floor(s * n))
    rng = make_rng(seed, "adv_zoo")
    rows = np.sort(rng.permutation(n)[:n_sel])
    if n_sel == 0 or coords.size == 0:
        return ShiftOutcome(ds.take(np.arange(n)), spec, rows, attack_failures=n_sel)
    if max_iters is None:
        max_iters = 200 * coords.size
    orig = enc[np.ix_(rows, coords)].copy()
    cur = orig.copy()
    full = enc[rows].copy()
    base_cls = model.predict(full)
    flipped = np.zeros(n_sel, dtype=bool)
    active = np.ones(n_sel, dtype=bool)
    # Rows stuck on a probability plateau (every probe flat and no movement)
    # for this many iterations have exhausted their useful budget.
    stall_limit = max(50, 20 * coords.size)
    stall = np.zeros(n_sel, dtype=np.int64)

    def _predict_at(idx, pts):
        batch = full[idx].copy()
        batch[:, coords] = pts
        return batch

    for _ in range(max_iters):
        act = np.where(active)[0]
        if act.size == 0:
            break
        jsel = rng.integers(0, coords.size, act.size)
        h = 0.01 * sigma[jsel]
        plus = cur[act].copy()
        plus[np.arange(act.size), jsel] += h
        minus = cur[act].copy()
        minus[np.arange(act.size), jsel] -= h
        batch = np.vstack([_predict_at(act, plus), _predict_at(act, minus)])
        probs = model.predict_proba(batch)
        l_plus = _margin(probs[: act.size], base_cls[act])
        l_minus = _margin(probs[act.size :], base_cls[act])
        grad = (l_plus - l_minus) / (2.0 * h)
        move = -step * sigma[jsel] * np.sign(grad)
        cand = cur[act].copy()
        cand[np.arange(act.size), jsel] += move
        norms = np.linalg.norm((cand - orig[act]) / sigma, axis=1)
        ok = (norms <= max_l2) & (move != 0.0)
        stall[act] += 1
        if ok.any():
            upd = act[ok]
            stall[upd] = 0
            cur[upd] = cand[ok]
            pred = model.predict(_predict_at(upd, cur[upd]))
            newly = pred != base_cls[upd]
            if newly.any():
                flipped[upd[newly]] = True
                active[upd[newly]] = False
        active[stall > stall_limit] = False

    final = np.where(flipped[:, None], cur, orig)
    target = _writeback_numeric(ds.take(np.arange(n)), enc, coords, rows, final, preprocessor)
    return ShiftOutcome(target, spec, rows, attack_failures=int((~flipped).sum()))


def adversarial_boundary(
    ds: Dataset,
    model,
    preprocessor: Preprocessor,
    s: float,
    seed: int,
    max_steps: int = 500,
    init_tries: int = 50,
) -> ShiftOutcome:
    """Decision-based boundary attack on s% of rows.

    Starting from another dataset row predicted differently, binary search
    along the segment toward the original row keeps the adversarial side,
    interleaved with small orthogonal Gaussian steps accepted only while
    still adversarial. The closest adversarial point found replaces the row;
    rows with no adversarial start or no flip are left unchanged.
    """
    spec = ShiftSpec("adv_boundary", s=s, seed=seed)
    enc, coords, sigma = _attack_setup(ds, model, preprocessor)
    n = ds.n_rows
    n_sel = int(math.floor(s * n))
    rng = make_rng(seed, "adv_boundary")
    rows = np.sort(rng.permutation(n)[:n_sel])
    if n_sel == 0 or coords.size == 0:
        return ShiftOutcome(ds.take(np.arange(n)), spec, rows, attack_failures=n_sel)
    full = enc[rows].copy()
    base_cls = model.predict(full)
    orig_z = np.zeros((n_sel, coords.size))
    d_c = coords.size

    def _predict_z(idx, z):
        batch = full[idx].copy()
        batch[:, coords] = enc[np.ix_(rows[idx], coords)] + z * sigma
        return model.predict(batch)

    # Initialization: random pool rows with a different predicted class,
    # hybridized with the original row's non-numeric blocks.
    hi_z = np.zeros((n_sel, d_c))
    found = np.zeros(n_sel, dtype=bool)
    pool_vals = enc[:, coords]
    for _ in range(init_tries):
        todo = np.where(~found)[0]
        if todo.size == 0:
            break
        cand_rows = rng.integers(0, n, todo.size)
        cand_z = (pool_vals[cand_rows] - enc[np.ix_(rows[todo], coords)]) / sigma
        pred = _predict_z(todo, cand_z)
        good = pred != base_cls[todo]
        hi_z[todo[good]] = cand_z[good]
        found[todo[good]] = True

    active = found.copy()
    lo_z = np.zeros_like(hi_z)
    best_z = hi_z.copy()
    best_d = np.where(found, np.linalg.norm(hi_z, axis=1), np.inf)
    for it in range(max_steps):
        act = np.where(active)[0]
        if act.size == 0:
            break
        if it % 2 == 0:
            mid = 0.5 * (lo_z[act] + hi_z[act])
            pred = _predict_z(act, mid)
            adv = pred != base_cls[act]
            hi_z[act[adv]] = mid[adv]
            lo_z[act[~adv]] = mid[~adv]
        else:
            u = hi_z[act]
            unorm = np.linalg.norm(u, axis=1, keepdims=True)
            unorm[unorm == 0] = 1.0
            eta = 0.1 * unorm / math.sqrt(d_c)
            noise = rng.standard_normal((act.size, d_c)) * eta
            noise -= (noise * u / unorm).sum(axis=1, keepdims=True) * (u / unorm)
            cand = u + noise
            pred = _predict_z(act, cand)
            adv = pred != base_cls[act]
            hi_z[act[adv]] = cand[adv]
            lo_z[act[adv]] = 0.0
        dist = np.linalg.norm(hi_z[act], axis=1)
        better = dist < best_d[act]
        best_z[act[better]] = hi_z[act[better]]
        best_d[act[better]] = dist[better]

    final = enc[np.ix_(rows, coords)] + np.where(found[:, None], best_z, 0.0) * sigma
    target = _writeback_numeric(ds.take(np.arange(n)), enc, coords, rows, final, preprocessor)
    return ShiftOutcome(target, spec, rows, attack_failures=int((~found).sum()))


# ---------------------------------------------------------------------------
# Selection bias
# ---------------------------------------------------------------------------

def _impute_for_distance(num: np.ndarray) -> np.ndarray:
    out = num.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nan = np.isnan(col)
        if nan.any():
            med = np.nanmedian(col) if not nan.all() else 0.0
            col[nan] = med
    return out


def joint_subsampling(ds: Dataset, seed: int, gamma: float = 1.0) -> ShiftOutcome:
    """Keep each row with probability exp(-gamma d^2 / M): d^2 is its squared
    distance to the sample mean in numeric space, M the median of those."""
    num = ds.numeric_matrix()
    if num.shape[1] == 0:
        raise errors.NoNumericFeatures("joint subsampling requires numeric features")
    spec = ShiftSpec("joint_subsampling", seed=seed, extra={"gamma": gamma} if gamma != 1.0 else {})
    x = _impute_for_distance(num)
    d2 = ((x - x.mean(axis=0)) ** 2).sum(axis=1)
    med = float(np.median(d2))
    keep_p = np.exp(-gamma * d2 / med) if med > 0 else np.ones(ds.n_rows)
    for attempt_seed in (seed, derive_seed(seed, "retry")):
        rng = make_rng(attempt_seed, "joint_subsampling")
        keep = rng.random(ds.n_rows) < keep_p
        if keep.any():
            return _keep(ds, keep, spec)
    raise errors.EmptyResult("joint subsampling kept no rows after a retry")


def feature_subsampling(ds: Dataset, f: float, seed: int, p_low: float = 0.2) -> ShiftOutcome:
    """Below-median rows survive with probability p_low, independently for
    each of the floor(f * d_num) selected numeric features; a row survives
    only if it survives every selected feature's filter."""
    num = ds.numeric_matrix()
    if num.shape[1] == 0:
        raise errors.NoNumericFeatures("feature subsampling requires numeric features")
    spec = ShiftSpec("subsampling", f=f, seed=seed, extra={"p_low": p_low} if p_low != 0.2 else {})
    d = num.shape[1]
    n_feats = int(math.floor(f * d))
    if n_feats == 0:
        return ShiftOutcome(ds.take(np.arange(ds.n_rows)), spec, np.empty(0, dtype=np.int64))
    sel_rng = make_rng(seed, "subsampling-features")
    feats = np.sort(sel_rng.permutation(d)[:n_feats])
    for attempt_seed in (seed, derive_seed(seed, "retry")):
        rng = make_rng(attempt_seed, "subsampling")
        keep = np.ones(ds.n_rows, dtype=bool)
        for j in feats:
            col = num[:, j]
            med = np.nanmedian(col)
            below = col < med
            below &= ~np.isnan(col)
            u = rng.random(ds.n_rows)
            keep &= ~below | (u < p_low)
        if keep.any():
            return _keep(ds, keep, spec)
    raise errors.EmptyResult("feature subsampling kept no rows after a retry")


def _local_encoding(ds: Dataset) -> np.ndarray:
    return Preprocessor().fit(ds).transform(ds).values


def under_sampling_nearmiss3(
    ds: Dataset, s: float = 0.5, seed: int = 0, neighbors: int = 3
) -> ShiftOutcome:
    """Keep ceil(s * n) rows: all minority rows plus the non-minority rows
    closest (mean distance to their `neighbors` nearest minority rows) first.

    The ranking is deterministic; the seed only participates in the spec.
    """
    _require_labels(ds)
    spec = ShiftSpec("under_sampling", s=s, seed=seed,
                     extra={"neighbors": neighbors} if neighbors != 3 else {})
    counts = _class_counts(ds)
    masked = np.where(counts > 0, counts, np.iinfo(np.int64).max)
    minority = int(np.argmin(masked))
    min_rows = np.where(ds.labels == minority)[0]
    other_rows = np.where(ds.labels != minority)[0]
    target_total = int(math.ceil(s * ds.n_rows))
    if min_rows.size >= target_total:
        kept = min_rows[:target_total]
    else:
        enc = _local_encoding(ds)
        dists = np.linalg.norm(
            enc[other_rows][:, None, :] - enc[min_rows][None, :, :], axis=2
        )
        k_n = min(neighbors, min_rows.size)
        nearest = np.partition(dists, k_n - 1, axis=1)[:, :k_n]
        score = nearest.mean(axis=1)
        order = np.argsort(score, kind="stable")
        take = other_rows[order[: target_total - min_rows.size]]
        kept = np.concatenate([min_rows, take])
    keep_mask = np.zeros(ds.n_rows, dtype=bool)
    keep_mask[kept] = True
    return _keep(ds, keep_mask, spec)


def over_sampling_interpolation(
    ds: Dataset, s: float = 0.5, seed: int = 0, neighbors: int = 5
) -> ShiftOutcome:
    """Replace floor(s * n) random rows with interpolations x + u (x' - x) of
    retained same-class pairs (x' one of x's nearest same-class rows).

    Retained rows keep their original order; synthetic rows are appended, so
    the output size equals the input size. Categorical cells are copied from
    the interpolation base row x.
    """
    _require_labels(ds)
    spec = ShiftSpec("over_sampling", s=s, seed=seed,
                     extra={"neighbors": neighbors} if neighbors != 5 else {})
    n = ds.n_rows
    n_replace = int(math.floor(s * n))
    if n_replace == 0:
        return ShiftOutcome(ds.take(np.arange(n)), spec, np.empty(0, dtype=np.int64))
    rng = make_rng(seed, "over_sampling")
    removed = rng.permutation(n)[:n_replace]
    keep_mask = np.ones(n, dtype=bool)
    keep_mask[removed] = False
    retained = np.where(keep_mask)[0]
    present = np.unique(ds.labels)
    retained_counts = np.bincount(ds.labels[retained], minlength=int(present.max()) + 1)
    for c in present:
        if retained_counts[int(c)] < 2:
            raise errors.ClassTooSmall(
                f"class {int(c)} keeps {retained_counts[int(c)]} rows after removal; need >= 2"
            )
    base = ds.take(retained)
    enc = _local_encoding(base)
    num = base.numeric_matrix()
    classes = [int(c) for c in present]
    class_rows = {c: np.where(base.labels == c)[0] for c in classes}
    class_dist: dict[int, np.ndarray] = {}

    new_num_rows = []
    new_cat_cells = []  # (source retained row index) per synthetic row
    new_labels = []
    num_positions = base.numeric_positions()
    for _ in range(n_replace):
        c = classes[int(rng.integers(0, len(classes)))]
        rows_c = class_rows[c]
        xi_local = int(rows_c[int(rng.integers(0, rows_c.size))])
        if c not in class_dist:
            block = enc[rows_c]
            class_dist[c] = np.linalg.norm(block[:, None, :] - block[None, :, :], axis=2)
        d_row = class_dist[c][np.where(rows_c == xi_local)[0][0]].copy()
        d_row[np.where(rows_c == xi_local)[0][0]] = np.inf
        k_n = min(neighbors, rows_c.size - 1)
        nearest_local = np.argpartition(d_row, k_n - 1)[:k_n]
        xj_local = int(rows_c[nearest_local[int(rng.integers(0, k_n))]])
        u = float(rng.random())
        xi_num = num[xi_local]
        xj_num = num[xj_local]
        interp = xi_num + u * (xj_num - xi_num)
        nan = np.isnan(xi_num) | np.isnan(xj_num)
        interp[nan] = xi_num[nan]
        new_num_rows.append(interp)
        new_cat_cells.append(xi_local)
        new_labels.append(c)

    cols = []
    for pos, cs in enumerate(ds.schema):
        base_col = base.columns[pos]
        if cs.kind == "numeric":
            j = num_positions.index(pos)
            synth = np.array([row[j] for row in new_num_rows], dtype=np.float64)
            cols.append(np.concatenate([base_col, synth]))
        else:
            synth = np.array([base_col[i] for i in new_cat_cells], dtype=object)
            cols.append(np.concatenate([base_col, synth]))
    labels = np.concatenate([base.labels, np.asarray(new_labels, dtype=np.int64)])
    target = replace(ds, columns=tuple(cols), labels=labels)
    affected = np.arange(retained.size, n, dtype=np.int64)
    return ShiftOutcome(target, spec, affected)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def apply(ds: Dataset, spec: ShiftSpec, ctx=None) -> ShiftOutcome:
    """Apply one parameterized shift; adversarial kinds need a fitted context."""
    kind = spec.kind
    extra = spec.extra or {}
    if kind == "no_shift":
        return ShiftOutcome(ds.take(np.arange(ds.n_rows)), spec, np.empty(0, dtype=np.int64))
    if kind == "knock_out":
        return knock_out(ds, spec.s, spec.seed)
    if kind == "only_one":
        return only_one(ds, spec.seed)
    if kind in ("gaussian_small", "gaussian_medium"):
        return gaussian_noise(
            ds, spec.s, spec.f,
            "small" if kind == "gaussian_small" else "medium",
            spec.seed, scale=extra.get("scale"),
        )
    if kind in ("adv_zoo", "adv_boundary"):
        if ctx is None or ctx.primary_model is None:
            raise errors.UnfittedModel(f"{kind} requires a context with a primary model")
        if kind == "adv_zoo":
            return adversarial_zoo(
                ds, ctx.primary_model, ctx.preprocessor, spec.s, spec.seed,
                max_iters=extra.get("max_iters"),
                step=extra.get("step", 0.05),
                max_l2=extra.get("max_l2", 3.0),
            )
        return adversarial_boundary(
            ds, ctx.primary_model, ctx.preprocessor, spec.s, spec.seed,
            max_steps=extra.get("max_steps", 500),
            init_tries=extra.get("init_tries", 50),
        )
    if kind == "joint_subsampling":
        return joint_subsampling(ds, spec.seed, gamma=extra.get("gamma", 1.0))
    if kind == "subsampling":
        return feature_subsampling(ds, spec.f, spec.seed, p_low=extra.get("p_low", 0.2))
    if kind == "under_sampling":
        return under_sampling_nearmiss3(
            ds, spec.s, spec.seed, neighbors=extra.get("neighbors", 3)
        )
    if kind == "over_sampling":
        return over_sampling_interpolation(
            ds, spec.s, spec.seed, neighbors=extra.get("neighbors", 5)
        )
    raise errors.UnknownShiftKind(f"unknown shift kind {kind!r}")
