"""Tabular dataset representation, CSV ingestion, preprocessing and splitting.

Datasets are immutable columnar containers: numeric columns are float64 arrays
(NaN marks a missing cell), categorical columns are object arrays of strings
(None marks a missing cell). All preprocessing statistics (imputation medians,
modes, one-hot category order) are fitted on the training split only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import errors
from .rng import derive_seed, make_rng

NUMERIC = "numeric"
CATEGORICAL = "categorical"

MISSING_TOKENS = ("", "NA")


@dataclass(frozen=True)
class ColumnSchema:
    """Schema of one column: name, kind, and (for categoricals) level order."""

    name: str
    kind: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise errors.InvalidSpec(f"unknown column kind: {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.categories:
                raise errors.InvalidSpec(f"categorical column {self.name!r} needs categories")
            if len(set(self.categories)) != len(self.categories):
                raise errors.InvalidSpec(f"duplicate categories in column {self.name!r}")
        elif self.categories:
            raise errors.InvalidSpec(f"numeric column {self.name!r} cannot carry categories")

    def to_json(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.kind == CATEGORICAL:
            out["categories"] = list(self.categories)
        return out

    @staticmethod
    def from_json(obj: dict) -> "ColumnSchema":
        return ColumnSchema(obj["name"], obj["kind"], tuple(obj.get("categories", ())))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature table with per-column schema and optional labels."""

    schema: tuple[ColumnSchema, ...]
    columns: tuple[np.ndarray, ...]
    labels: np.ndarray | None = None
    class_names: tuple[str, ...] | None = None
    label_name: str | None = None

    def __post_init__(self):
        if len(self.schema) != len(self.columns):
            raise errors.InvalidSpec("schema/columns length mismatch")
        n = self.n_rows
        for col, cs in zip(self.columns, self.schema):
            if col.shape != (n,):
                raise errors.InvalidSpec(f"column {cs.name!r} has wrong length")
        if self.labels is not None:
            if self.labels.shape != (n,):
                raise errors.InvalidSpec("labels length mismatch")
            if self.class_names is not None and n > 0 and self.labels.size:
                if int(self.labels.max()) >= len(self.class_names):
                    raise errors.InvalidSpec("label id exceeds class count")

    @property
    def n_rows(self) -> int:
        return int(self.columns[0].shape[0]) if self.columns else 0

    @property
    def n_cols(self) -> int:
        return len(self.schema)

    @property
    def n_classes(self) -> int:
        return len(self.class_names) if self.class_names is not None else 0

    def take(self, indices) -> "Dataset":
        """Row subset (copying); preserves schema and label metadata."""
        idx = np.asarray(indices, dtype=np.int64)
        cols = tuple(c[idx].copy() for c in self.columns)
        labels = self.labels[idx].copy() if self.labels is not None else None
        return replace(self, columns=cols, labels=labels)

    def numeric_positions(self) -> list[int]:
        return [i for i, cs in enumerate(self.schema) if cs.kind == NUMERIC]

    def numeric_matrix(self) -> np.ndarray:
        """n x d_num float matrix of the numeric columns (NaN = missing)."""
        pos = self.numeric_positions()
        if not pos:
            return np.empty((self.n_rows, 0), dtype=np.float64)
        return np.column_stack([self.columns[i].astype(np.float64) for i in pos])

    def with_numeric(self, matrix: np.ndarray) -> "Dataset":
        """Copy of the dataset with numeric columns replaced by `matrix`."""
        pos = self.numeric_positions()
        if matrix.shape != (self.n_rows, len(pos)):
            raise errors.InvalidSpec("numeric matrix shape mismatch")
        cols = list(self.columns)
        for j, i in enumerate(pos):
            cols[i] = matrix[:, j].astype(np.float64).copy()
        return replace(self, columns=tuple(cols))


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Bit-level equality of two datasets (NaN == NaN for numeric cells)."""
    if a.schema != b.schema or a.n_rows != b.n_rows:
        return False
    for ca, cb, cs in zip(a.columns, b.columns, a.schema):
        if cs.kind == NUMERIC:
            if not np.array_equal(ca, cb, equal_nan=True):
                return False
        else:
            if not all(x == y for x, y in zip(ca.tolist(), cb.tolist())):
                return False
    if (a.labels is None) != (b.labels is None):
        return False
    if a.labels is not None and not np.array_equal(a.labels, b.labels):
        return False
    return a.class_names == b.class_names


@dataclass(frozen=True)
class SplitSpec:
    """Sizes and seed for a deterministic train/source/target partition."""

    train_size: int
    source_size: int
    target_size: int
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "train_size": self.train_size,
            "source_size": self.source_size,
            "target_size": self.target_size,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "SplitSpec":
        return SplitSpec(
            int(obj["train_size"]),
            int(obj["source_size"]),
            int(obj["target_size"]),
            int(obj.get("seed", 0)),
        )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _parse_numeric(token: str) -> float | None:
    try:
        v = float(token)
    except ValueError:
        return None
    return v


def load_csv(path, label_column: str | None = None) -> Dataset:
    """Load an RFC-4180 CSV (UTF-8, header required) into a Dataset.

    Columns containing any non-numeric token other than the missing markers
    ("" or "NA") become categorical; the rest are numeric. The label column,
    when named, is removed from the features and encoded as class ids in
    order of first appearance.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise errors.IoError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise errors.EmptyDataset(f"{path} is empty")
    header = rows[0]
    data = rows[1:]
    if not data:
        raise errors.EmptyDataset(f"{path} has a header but no data rows")
    width = len(header)
    for lineno, row in enumerate(data, start=2):
        if len(row) != width:
            raise errors.ParseError(
                f"{path}:{lineno}: expected {width} cells, found {len(row)}"
            )
    label_idx = None
    if label_column is not None:
        if label_column not in header:
            raise errors.ParseError(f"label column {label_column!r} not in header")
        label_idx = header.index(label_column)

    schema: list[ColumnSchema] = []
    columns: list[np.ndarray] = []
    for j, name in enumerate(header):
        if j == label_idx:
            continue
        tokens = [row[j] for row in data]
        parsed: list[float | None] = []
        is_numeric = True
        for tok in tokens:
            if tok in MISSING_TOKENS:
                parsed.append(None)
                continue
            v = _parse_numeric(tok)
            if v is None:
                is_numeric = False
                break
            parsed.append(None if math.isnan(v) else v)
        if is_numeric:
            arr = np.array([np.nan if v is None else v for v in parsed], dtype=np.float64)
            schema.append(ColumnSchema(name, NUMERIC))
            columns.append(arr)
        else:
            levels: list[str] = []
            seen = set()
            vals = []
            for tok in tokens:
                if tok in MISSING_TOKENS:
                    vals.append(None)
                    continue
                if tok not in seen:
                    seen.add(tok)
                    levels.append(tok)
                vals.append(tok)
            if not levels:
                # Entirely missing: keep as numeric-with-NaN; preprocess will
                # reject it as AllMissingColumn.
                schema.append(ColumnSchema(name, NUMERIC))
                columns.append(np.full(len(tokens), np.nan, dtype=np.float64))
            else:
                schema.append(ColumnSchema(name, CATEGORICAL, tuple(levels)))
                columns.append(np.array(vals, dtype=object))

    labels = None
    class_names = None
    label_name = None
    if label_idx is not None:
        toks = [row[label_idx] for row in data]
        if any(t in MISSING_TOKENS for t in toks):
            raise errors.ParseError(f"missing value in label column {label_column!r}")
        order: list[str] = []
        seen = set()
        for t in toks:
            if t not in seen:
                seen.add(t)
                order.append(t)
        mapping = {t: i for i, t in enumerate(order)}
        labels = np.array([mapping[t] for t in toks], dtype=np.int64)
        class_names = tuple(order)
        label_name = label_column
    return Dataset(tuple(schema), tuple(columns), labels, class_names, label_name)


def write_csv(ds: Dataset, path) -> None:
    """Write a dataset (and its label column, when present) as UTF-8 CSV."""
    header = [cs.name for cs in ds.schema]
    if ds.labels is not None:
        header.append(ds.label_name or "label")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(ds.n_rows):
                row = []
                for col, cs in zip(ds.columns, ds.schema):
                    v = col[i]
                    if cs.kind == NUMERIC:
                        row.append("" if math.isnan(v) else repr(float(v)))
                    else:
                        row.append("" if v is None else str(v))
                if ds.labels is not None:
                    names = ds.class_names or tuple(str(c) for c in range(int(ds.labels.max()) + 1))
                    row.append(names[int(ds.labels[i])])
                writer.writerow(row)
    except OSError as exc:
        raise errors.IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Preprocessing: imputation + one-hot encoding, fitted on the train split only
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncodedMatrix:
    """Dense numeric design matrix with no missing values."""

    values: np.ndarray
    feature_names: tuple[str, ...]
    source_schema: tuple[ColumnSchema, ...]

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


def _schema_compatible(a: tuple[ColumnSchema, ...], b: tuple[ColumnSchema, ...]) -> bool:
    # Category sets may differ between files; names, kinds and order must match.
    return len(a) == len(b) and all(
        x.name == y.name and x.kind == y.kind for x, y in zip(a, b)
    )


@dataclass
class Preprocessor:
    """Median/mode imputer plus one-hot encoder, fitted on a training split.

    Numeric missing values are replaced by the train median of the column;
    categorical missing values by the train mode. Categorical levels are
    one-hot encoded in train first-appearance order; levels unseen in the
    train split map to the all-zeros block.
    """

    schema: tuple[ColumnSchema, ...] = ()
    medians: dict = field(default_factory=dict)
    modes: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)
    feature_names: tuple[str, ...] = ()

    def fit(self, train: Dataset) -> "Preprocessor":
        if train.n_rows == 0:
            raise errors.EmptyDataset("cannot fit preprocessor on an empty dataset")
        self.schema = train.schema
        medians: dict = {}
        modes: dict = {}
        levels: dict = {}
        names: list[str] = []
        for cs, col in zip(train.schema, train.columns):
            if cs.kind == NUMERIC:
                vals = col[~np.isnan(col)]
                if vals.size == 0:
                    raise errors.AllMissingColumn(f"train column {cs.name!r} entirely missing")
                medians[cs.name] = float(np.median(vals))
                names.append(cs.name)
            else:
                observed = [v for v in col.tolist() if v is not None]
                if not observed:
                    raise errors.AllMissingColumn(f"train column {cs.name!r} entirely missing")
                order: list[str] = []
                seen = set()
                for v in observed:
                    if v not in seen:
                        seen.add(v)
                        order.append(v)
                counts = {lv: 0 for lv in order}
                for v in observed:
                    counts[v] += 1
                best = max(counts.values())
                mode = next(lv for lv in order if counts[lv] == best)
                levels[cs.name] = order
                modes[cs.name] = mode
                names.extend(f"{cs.name}={lv}" for lv in order)
        self.medians = medians
        self.modes = modes
        self.levels = levels
        self.feature_names = tuple(names)
        return self

    @property
    def width(self) -> int:
        return len(self.feature_names)

    def numeric_feature_positions(self) -> list[int]:
        """Positions of the (single-column) numeric features in the encoding."""
        pos = []
        i = 0
        for cs in self.schema:
            if cs.kind == NUMERIC:
                pos.append(i)
                i += 1
            else:
                i += len(self.levels[cs.name])
        return pos

    def transform(self, ds: Dataset) -> EncodedMatrix:
        if not self.feature_names:
            raise errors.InvalidSpec("preprocessor is not fitted")
        if not _schema_compatible(self.schema, ds.schema):
            raise errors.SchemaMismatch("dataset schema differs from the fitted schema")
        n = ds.n_rows
        out = np.zeros((n, self.width), dtype=np.float64)
        j = 0
        for cs, col in zip(ds.schema, ds.columns):
            if cs.kind == NUMERIC:
                vals = col.astype(np.float64).copy()
                vals[np.isnan(vals)] = self.medians[cs.name]
                out[:, j] = vals
                j += 1
            else:
                order = self.levels[cs.name]
                index = {lv: i for i, lv in enumerate(order)}
                mode_idx = index[self.modes[cs.name]]
                for r, v in enumerate(col.tolist()):
                    if v is None:
                        out[r, j + mode_idx] = 1.0
                    else:
                        pos = index.get(v)
                        if pos is not None:
                            out[r, j + pos] = 1.0
                        # unseen level: all-zeros block
                j += len(order)
        return EncodedMatrix(out, self.feature_names, ds.schema)

    def to_json(self) -> dict:
        return {
            "schema": [cs.to_json() for cs in self.schema],
            "medians": dict(self.medians),
            "modes": dict(self.modes),
            "levels": {k: list(v) for k, v in self.levels.items()},
            "feature_names": list(self.feature_names),
        }

    @staticmethod
    def from_json(obj: dict) -> "Preprocessor":
        prep = Preprocessor()
        prep.schema = tuple(ColumnSchema.from_json(c) for c in obj["schema"])
        prep.medians = {k: float(v) for k, v in obj["medians"].items()}
        prep.modes = dict(obj["modes"])
        prep.levels = {k: list(v) for k, v in obj["levels"].items()}
        prep.feature_names = tuple(obj["feature_names"])
        return prep


def preprocess(train: Dataset, others=()) -> tuple[list[EncodedMatrix], Preprocessor]:
    """Fit imputation/encoding on `train` and encode train plus `others`.

    Returns ([encoded_train, encoded_other_0, ...], fitted_preprocessor).
    """
    for other in others:
        if not _schema_compatible(train.schema, other.schema):
            raise errors.SchemaMismatch("all inputs must share one schema")
    prep = Preprocessor().fit(train)
    encoded = [prep.transform(train)] + [prep.transform(o) for o in others]
    return encoded, prep


# ---------------------------------------------------------------------------
# Splitting and subsampling
# ---------------------------------------------------------------------------

def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint uniform random (train, source, target) subsets, seeded."""
    total = spec.train_size + spec.source_size + spec.target_size
    if spec.train_size < 0 or spec.source_size < 0 or spec.target_size < 0:
        raise errors.InvalidSpec("split sizes must be non-negative")
    if total > ds.n_rows:
        raise errors.InsufficientRows(
            f"split needs {total} rows, dataset has {ds.n_rows}"
        )
    perm = make_rng(spec.seed).permutation(ds.n_rows)
    a = perm[: spec.train_size]
    b = perm[spec.train_size : spec.train_size + spec.source_size]
    c = perm[spec.train_size + spec.source_size : total]
    return ds.take(a), ds.take(b), ds.take(c)


def subsample(ds: Dataset, size: int, seed: int) -> Dataset:
    """Uniform random subset without replacement, deterministic per seed."""
    if size < 0:
        raise errors.InvalidSpec("size must be non-negative")
    if size > ds.n_rows:
        raise errors.InsufficientRows(f"requested {size} of {ds.n_rows} rows")
    perm = make_rng(seed).permutation(ds.n_rows)
    return ds.take(perm[:size])


# ---------------------------------------------------------------------------
# Synthetic data (desk-scale stand-in for real benchmark datasets)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian-mixture generator spec.

    Post-sampling column transforms mimic common real-data traits:
    `abs_columns` take absolute values (one-sided support), `round_columns`
    round to integers (count-valued features), `spike_columns` are zeroed
    with probability `spike_prob` (zero-inflated features). Transforms apply
    in that order.
    """

    n: int
    k: int = 2
    d: int = 2
    separation: float = 3.0
    centers: tuple | None = None
    covariances: tuple | None = None
    class_weights: tuple | None = None
    abs_columns: tuple[int, ...] = ()
    round_columns: tuple[int, ...] = ()
    spike_columns: tuple[int, ...] = ()
    spike_prob: float = 0.6
    seed: int = 0
    name: str = "synthetic"

    def to_json(self) -> dict:
        out = {
            "type": "synthetic",
            "name": self.name,
            "n": self.n,
            "k": self.k,
            "d": self.d,
            "separation": self.separation,
            "seed": self.seed,
        }
        if self.centers is not None:
            out["centers"] = [list(c) for c in self.centers]
        if self.covariances is not None:
            out["covariances"] = np.asarray(self.covariances).tolist()
        if self.class_weights is not None:
            out["class_weights"] = list(self.class_weights)
        if self.abs_columns:
            out["abs_columns"] = list(self.abs_columns)
        if self.round_columns:
            out["round_columns"] = list(self.round_columns)
        if self.spike_columns:
            out["spike_columns"] = list(self.spike_columns)
            out["spike_prob"] = self.spike_prob
        return out

    @staticmethod
    def from_json(obj: dict) -> "SyntheticSpec":
        return SyntheticSpec(
            n=int(obj["n"]),
            k=int(obj.get("k", 2)),
            d=int(obj.get("d", 2)),
            separation=float(obj.get("separation", 3.0)),
            centers=tuple(tuple(c) for c in obj["centers"]) if "centers" in obj else None,
            covariances=tuple(np.asarray(obj["covariances"]).tolist())
            if "covariances" in obj
            else None,
            class_weights=tuple(obj["class_weights"]) if "class_weights" in obj else None,
            abs_columns=tuple(obj.get("abs_columns", ())),
            round_columns=tuple(obj.get("round_columns", ())),
            spike_columns=tuple(obj.get("spike_columns", ())),
            spike_prob=float(obj.get("spike_prob", 0.6)),
            seed=int(obj.get("seed", 0)),
            name=str(obj.get("name", "synthetic")),
        )


def _largest_remainder_counts(n: int, weights: np.ndarray) -> np.ndarray:
    raw = weights * n
    base = np.floor(raw).astype(np.int64)
    rem = n - int(base.sum())
    if rem > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:rem]] += 1
    return base


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    """Gaussian-mixture class-conditional dataset with labels, seeded."""
    if spec.k < 2 or spec.d < 1 or spec.n < 0:
        raise errors.InvalidSpec("need k >= 2, d >= 1, n >= 0")
    if spec.class_weights is not None:
        w = np.asarray(spec.class_weights, dtype=np.float64)
        if w.shape != (spec.k,) or np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-9:
            raise errors.InvalidSpec("class_weights must be a length-k simplex vector")
    else:
        w = np.full(spec.k, 1.0 / spec.k)
    if spec.centers is not None:
        centers = np.asarray(spec.centers, dtype=np.float64)
        if centers.shape != (spec.k, spec.d):
            raise errors.InvalidSpec("centers must have shape (k, d)")
    else:
        offs = (np.arange(spec.k) / max(spec.k - 1, 1) - 0.5) * spec.separation
        centers = np.outer(offs, np.ones(spec.d) / math.sqrt(spec.d))
    if spec.covariances is None:
        chols = [np.eye(spec.d)] * spec.k
    else:
        cov = np.asarray(spec.covariances, dtype=np.float64)
        if cov.shape == (spec.d, spec.d):
            cov = np.broadcast_to(cov, (spec.k, spec.d, spec.d))
        if cov.shape != (spec.k, spec.d, spec.d):
            raise errors.InvalidSpec("covariances must be (d,d) or (k,d,d)")
        try:
            chols = [np.linalg.cholesky(cov[i]) for i in range(spec.k)]
        except np.linalg.LinAlgError as exc:
            raise errors.InvalidSpec(f"covariance not positive definite: {exc}") from exc
    transform_cols = spec.abs_columns + spec.round_columns + spec.spike_columns
    if any(i < 0 or i >= spec.d for i in transform_cols):
        raise errors.InvalidSpec("abs/round/spike column index out of range")
    if not (0.0 <= spec.spike_prob <= 1.0):
        raise errors.InvalidSpec("spike_prob must lie in [0, 1]")

    rng = make_rng(spec.seed)
    counts = _largest_remainder_counts(spec.n, w)
    blocks = []
    labels = []
    for c in range(spec.k):
        z = rng.standard_normal((int(counts[c]), spec.d))
        blocks.append(centers[c] + z @ chols[c].T)
        labels.append(np.full(int(counts[c]), c, dtype=np.int64))
    if spec.n > 0:
        x = np.vstack(blocks)
        y = np.concatenate(labels)
        perm = rng.permutation(spec.n)
        x, y = x[perm], y[perm]
    else:
        x = np.empty((0, spec.d), dtype=np.float64)
        y = np.empty(0, dtype=np.int64)
    for j in spec.abs_columns:
        x[:, j] = np.abs(x[:, j])
    for j in spec.round_columns:
        x[:, j] = np.round(x[:, j])
    for j in spec.spike_columns:
        x[rng.random(spec.n) < spec.spike_prob, j] = 0.0
    schema = tuple(ColumnSchema(f"f{j}", NUMERIC) for j in range(spec.d))
    cols = tuple(x[:, j].copy() for j in range(spec.d))
    class_names = tuple(f"c{c}" for c in range(spec.k))
    return Dataset(schema, cols, y, class_names, "label")
