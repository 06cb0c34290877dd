"""From-scratch random-forest classifier and confusion-matrix utilities.

CART-style trees grown on bootstrap resamples with Gini-impurity splits over a
random feature subset per node; leaves store class-frequency vectors. The
grow/predict kernels are numba-compiled when numba is available and run as
plain Python otherwise; both paths consume the same pre-generated PCG64
random stream, so results are identical either way.

Determinism rules: argmax ties and split-score ties resolve to the lowest
index; split thresholds are midpoints between consecutive distinct sorted
values; rows with feature value <= threshold go left.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import errors
from .rng import make_rng, seed_sequence

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


@dataclass(frozen=True)
class ForestConfig:
    """Hyperparameters mirroring the common library defaults: 100 trees,
    unlimited depth, min_samples_split=2, sqrt feature subsets, bootstrap."""

    n_trees: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    features_per_split: str | int = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise errors.InvalidSpec("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise errors.InvalidSpec("min_samples_split must be >= 2")
        if isinstance(self.features_per_split, str):
            if self.features_per_split not in ("sqrt", "all"):
                raise errors.InvalidSpec("features_per_split must be 'sqrt', 'all' or an int")
        elif int(self.features_per_split) < 1:
            raise errors.InvalidSpec("fixed features_per_split must be >= 1")

    def resolve_mtry(self, m: int) -> int:
        if self.features_per_split == "sqrt":
            return max(1, int(math.sqrt(m)))
        if self.features_per_split == "all":
            return m
        return min(m, int(self.features_per_split))

    def to_json(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "features_per_split": self.features_per_split,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "ForestConfig":
        return ForestConfig(
            n_trees=int(obj.get("n_trees", 100)),
            max_depth=obj.get("max_depth"),
            min_samples_split=int(obj.get("min_samples_split", 2)),
            features_per_split=obj.get("features_per_split", "sqrt"),
            bootstrap=bool(obj.get("bootstrap", True)),
            seed=int(obj.get("seed", 0)),
        )


# ---------------------------------------------------------------------------
# Tree growth kernel
# ---------------------------------------------------------------------------
# Node arrays: feature[i] >= 0 for internal nodes (-1 for leaves), threshold,
# left/right child ids, probs[i] = class-frequency vector (leaves only).
# The random stream supplies one uint64 per lazily drawn feature candidate
# (partial Fisher-Yates), pre-generated outside the kernel.

@njit(cache=True, nogil=True)
def _grow_tree_kernel(
    x,
    y,
    idx,
    k,
    max_depth,
    min_split,
    mtry,
    rand,
    feat,
    thr,
    left,
    right,
    probs,
):
    m = x.shape[1]
    cap = feat.shape[0]
    # DFS stack over [start, end) segments of idx.
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    stack_node = np.empty(cap, dtype=np.int64)
    n_nodes = 1
    top = 0
    stack_start[0] = 0
    stack_end[0] = idx.shape[0]
    stack_depth[0] = 0
    stack_node[0] = 0
    cursor = 0

    cnt = np.empty(k, dtype=np.int64)
    perm = np.empty(m, dtype=np.int64)
    scratch = np.empty(idx.shape[0], dtype=np.int64)

    while top >= 0:
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        node = stack_node[top]
        top -= 1
        nv = end - start

        for c in range(k):
            cnt[c] = 0
        for i in range(start, end):
            cnt[y[idx[i]]] += 1
        maxc = 0
        for c in range(k):
            if cnt[c] > maxc:
                maxc = cnt[c]

        make_leaf = nv < min_split or maxc == nv or (max_depth >= 0 and depth >= max_depth)

        best_score = -1.0
        best_f = -1
        best_thr = 0.0
        if not make_leaf:
            for j in range(m):
                perm[j] = j
            evaluated = 0
            for t in range(m):
                r = t + int(rand[cursor] % np.uint64(m - t))
                cursor += 1
                tmp = perm[t]
                perm[t] = perm[r]
                perm[r] = tmp
                f = perm[t]
                # Sort node rows by feature f.
                vals = np.empty(nv, dtype=np.float64)
                for i in range(nv):
                    vals[i] = x[idx[start + i], f]
                order = np.argsort(vals)
                # Linear scan maintaining left/right sums of squared counts.
                lcnt = np.zeros(k, dtype=np.int64)
                ssl = 0.0
                ssr = 0.0
                for c in range(k):
                    ssr += float(cnt[c]) * float(cnt[c])
                f_best_score = -1.0
                f_best_pos = -1
                for i in range(nv - 1):
                    c = y[idx[start + order[i]]]
                    ssl += 2.0 * lcnt[c] + 1.0
                    ssr -= 2.0 * (cnt[c] - lcnt[c]) - 1.0
                    lcnt[c] += 1
                    if vals[order[i]] < vals[order[i + 1]]:
                        score = ssl / (i + 1.0) + ssr / (nv - i - 1.0)
                        if score > f_best_score:
                            f_best_score = score
                            f_best_pos = i
                if f_best_pos >= 0:
                    if f_best_score > best_score or (
                        f_best_score == best_score and f < best_f
                    ):
                        best_score = f_best_score
                        best_f = f
                        best_thr = 0.5 * (
                            vals[order[f_best_pos]] + vals[order[f_best_pos + 1]]
                        )
                evaluated += 1
                if evaluated >= mtry and best_f >= 0:
                    break
            if best_f < 0:
                make_leaf = True

        if make_leaf:
            feat[node] = -1
            thr[node] = 0.0
            left[node] = -1
            right[node] = -1
            for c in range(k):
                probs[node, c] = cnt[c] / nv
            continue

        # Stable partition of idx[start:end] by the chosen split.
        nl = 0
        for i in range(start, end):
            if x[idx[i], best_f] <= best_thr:
                scratch[nl] = idx[i]
                nl += 1
        nr = nl
        for i in range(start, end):
            if not (x[idx[i], best_f] <= best_thr):
                scratch[nr] = idx[i]
                nr += 1
        for i in range(nv):
            idx[start + i] = scratch[i]

        feat[node] = best_f
        thr[node] = best_thr
        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        left[node] = left_id
        right[node] = right_id
        top += 1
        stack_start[top] = start + nl
        stack_end[top] = end
        stack_depth[top] = depth + 1
        stack_node[top] = right_id
        top += 1
        stack_start[top] = start
        stack_end[top] = start + nl
        stack_depth[top] = depth + 1
        stack_node[top] = left_id
    return n_nodes


@njit(cache=True, nogil=True)
def _predict_kernel(x, feat, thr, left, right, probs, offsets, out):
    n = x.shape[0]
    k = out.shape[1]
    n_trees = offsets.shape[0] - 1
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = base
            while feat[node] >= 0:
                if x[i, feat[node]] <= thr[node]:
                    node = base + left[node]
                else:
                    node = base + right[node]
            for c in range(k):
                out[i, c] += probs[node, c]
    inv = 1.0 / n_trees
    for i in range(n):
        for c in range(k):
            out[i, c] *= inv


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    probs: np.ndarray


def _as_matrix(X) -> np.ndarray:
    values = getattr(X, "values", X)
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    if arr.ndim != 2:
        raise errors.DimensionMismatch("expected a 2-D feature matrix")
    return arr


@dataclass
class RandomForestClassifier:
    """Fitted forest: immutable after construction, safe for concurrent use."""

    trees: list[_Tree]
    k: int
    feature_count: int
    config: ForestConfig
    oob_or_holdout_accuracy: float | None = None
    _flat: tuple | None = field(default=None, repr=False, compare=False)

    def _flatten(self):
        if self._flat is None:
            offsets = np.zeros(len(self.trees) + 1, dtype=np.int64)
            for i, t in enumerate(self.trees):
                offsets[i + 1] = offsets[i] + t.feature.shape[0]
            feat = np.concatenate([t.feature for t in self.trees])
            thr = np.concatenate([t.threshold for t in self.trees])
            left = np.concatenate([t.left for t in self.trees])
            right = np.concatenate([t.right for t in self.trees])
            probs = np.vstack([t.probs for t in self.trees])
            self._flat = (feat, thr, left, right, probs, offsets)
        return self._flat

    def predict_proba(self, X) -> np.ndarray:
        """Mean of leaf class-frequency vectors across trees; rows sum to 1."""
        x = _as_matrix(X)
        if x.shape[1] != self.feature_count:
            raise errors.DimensionMismatch(
                f"expected {self.feature_count} features, got {x.shape[1]}"
            )
        feat, thr, left, right, probs, offsets = self._flatten()
        out = np.zeros((x.shape[0], self.k), dtype=np.float64)
        if x.shape[0]:
            _predict_kernel(x, feat, thr, left, right, probs, offsets, out)
        return out

    def predict(self, X) -> np.ndarray:
        """Argmax of predict_proba, ties to the lowest class id."""
        return np.argmax(self.predict_proba(X), axis=1).astype(np.int64)

    def to_json(self) -> dict:
        return {
            "format": "driftbench.forest",
            "version": 1,
            "k": self.k,
            "feature_count": self.feature_count,
            "config": self.config.to_json(),
            "oob_or_holdout_accuracy": self.oob_or_holdout_accuracy,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "probs": t.probs.tolist(),
                }
                for t in self.trees
            ],
        }

    @staticmethod
    def from_json(obj: dict) -> "RandomForestClassifier":
        if obj.get("format") != "driftbench.forest" or int(obj.get("version", 0)) != 1:
            raise errors.InvalidSpec("unrecognized forest document")
        trees = [
            _Tree(
                np.asarray(t["feature"], dtype=np.int64),
                np.asarray(t["threshold"], dtype=np.float64),
                np.asarray(t["left"], dtype=np.int64),
                np.asarray(t["right"], dtype=np.int64),
                np.asarray(t["probs"], dtype=np.float64),
            )
            for t in obj["trees"]
        ]
        return RandomForestClassifier(
            trees,
            int(obj["k"]),
            int(obj["feature_count"]),
            ForestConfig.from_json(obj["config"]),
            obj.get("oob_or_holdout_accuracy"),
        )


def save_model(model: RandomForestClassifier, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh)


def load_model(path) -> RandomForestClassifier:
    with open(path, encoding="utf-8") as fh:
        return RandomForestClassifier.from_json(json.load(fh))


def fit(
    train,
    labels,
    cfg: ForestConfig | None = None,
    compute_oob: bool = False,
) -> RandomForestClassifier:
    """Grow a forest on (train, labels); deterministic per cfg.seed."""
    cfg = cfg or ForestConfig()
    x = _as_matrix(train)
    y = np.asarray(labels, dtype=np.int64).ravel()
    n, m = x.shape
    if n == 0:
        raise errors.EmptyTrainingSet("no training rows")
    if y.shape[0] != n:
        raise errors.DimensionMismatch("labels length mismatch")
    classes = np.unique(y)
    if classes.size < 2:
        raise errors.SingleClass("training labels contain a single class")
    k = int(y.max()) + 1
    mtry = cfg.resolve_mtry(m)
    max_depth = -1 if cfg.max_depth is None else int(cfg.max_depth)

    children = seed_sequence(cfg.seed, "forest").spawn(cfg.n_trees)
    trees: list[_Tree] = []
    oob_sum = np.zeros((n, k), dtype=np.float64) if compute_oob else None
    oob_votes = np.zeros(n, dtype=np.int64) if compute_oob else None
    for t in range(cfg.n_trees):
        rng = np.random.Generator(np.random.PCG64(children[t]))
        if cfg.bootstrap:
            rows = rng.integers(0, n, n).astype(np.int64)
        else:
            rows = np.arange(n, dtype=np.int64)
        cap = 2 * n + 1
        # One uint64 per candidate feature draw; a node inspects at most m.
        rand = rng.integers(0, 2**64, size=cap * m + 1, dtype=np.uint64)
        feat = np.empty(cap, dtype=np.int64)
        thr = np.empty(cap, dtype=np.float64)
        left = np.empty(cap, dtype=np.int64)
        right = np.empty(cap, dtype=np.int64)
        probs = np.zeros((cap, k), dtype=np.float64)
        idx = rows.copy()
        n_nodes = _grow_tree_kernel(
            x, y, idx, k, max_depth, cfg.min_samples_split, mtry, rand,
            feat, thr, left, right, probs,
        )
        tree = _Tree(
            feat[:n_nodes].copy(),
            thr[:n_nodes].copy(),
            left[:n_nodes].copy(),
            right[:n_nodes].copy(),
            probs[:n_nodes].copy(),
        )
        trees.append(tree)
        if compute_oob and cfg.bootstrap:
            mask = np.ones(n, dtype=bool)
            mask[rows] = False
            if mask.any():
                single = RandomForestClassifier([tree], k, m, cfg)
                oob_sum[mask] += single.predict_proba(x[mask])
                oob_votes[mask] += 1

    oob_acc = None
    if compute_oob and cfg.bootstrap:
        seen = oob_votes > 0
        if seen.any():
            pred = np.argmax(oob_sum[seen], axis=1)
            oob_acc = float(np.mean(pred == y[seen]))
    return RandomForestClassifier(trees, k, m, cfg, oob_acc)


# ---------------------------------------------------------------------------
# Confusion matrix and its minimum-magnitude eigenpair
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    """Column-normalized confusion matrix: C[i, j] = P(pred=i | true=j)."""

    matrix: np.ndarray
    support: np.ndarray

    @property
    def k(self) -> int:
        return int(self.matrix.shape[0])


def confusion_matrix(model, X, y_true) -> ConfusionMatrix:
    y = np.asarray(y_true, dtype=np.int64).ravel()
    pred = model.predict(X)
    k = model.k
    if y.size == 0:
        raise errors.EmptyClassColumn("no evaluation rows")
    if int(y.max()) >= k or int(y.min()) < 0:
        raise errors.ModelMismatch("labels outside the model's class range")
    counts = np.zeros((k, k), dtype=np.float64)
    for p, t in zip(pred, y):
        counts[int(p), int(t)] += 1.0
    support = counts.sum(axis=0)
    if np.any(support == 0):
        missing = [int(j) for j in np.where(support == 0)[0]]
        raise errors.EmptyClassColumn(f"true classes absent from evaluation set: {missing}")
    return ConfusionMatrix(counts / support, support.astype(np.int64))


def min_eigenpair(c_matrix, tol: float = 1e-10, max_iter: int = 10000):
    """Eigenpair of smallest |lambda| via inverse power iteration with LU solves.

    The eigenvector is unit-norm with its first nonzero component positive.
    Raises NoConvergence when the iteration fails to settle (e.g. a complex
    dominant small eigenvalue).
    """
    c = np.asarray(c_matrix, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise errors.InvalidShape("confusion matrix must be square")
    det = float(np.linalg.det(c))
    if abs(det) <= 1e-12:
        raise errors.SingularMatrix(f"matrix is numerically singular (det={det:.3e})")
    k = c.shape[0]
    lu = lu_factor(c)
    x = np.zeros(k)
    x[0] = 1.0
    converged = False
    for _ in range(max_iter):
        y = lu_solve(lu, x)
        norm = float(np.linalg.norm(y))
        if norm == 0.0 or not np.isfinite(norm):
            raise errors.SingularMatrix("inverse iteration produced a zero/overflow vector")
        y = y / norm
        if float(np.dot(y, x)) < 0:
            y = -y
        if float(np.linalg.norm(y - x)) < tol:
            x = y
            converged = True
            break
        x = y
    if not converged:
        raise errors.NoConvergence(
            "inverse power iteration did not converge; "
            "a complex minimum-magnitude eigenvalue is likely"
        )
    lam = float(x @ (c @ x))
    residual = float(np.linalg.norm(c @ x - lam * x))
    if residual > 1e-8:
        raise errors.NoConvergence(f"eigenpair residual {residual:.2e} too large")
    for v in x:
        if abs(v) > 1e-12:
            if v < 0:
                x = -x
            break
    return lam, x


# ---------------------------------------------------------------------------
# Prediction-corrupting wrapper used by the model-quality experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbedModel:
    """Wraps a model: with probability p_corrupt a row's prediction becomes a
    uniformly random class (one-hot probability vector); otherwise the base
    output is returned. The draw depends only on (row index, seed)."""

    base: RandomForestClassifier
    p_corrupt: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p_corrupt <= 1.0):
            raise errors.InvalidArgument("p_corrupt must lie in [0, 1]")

    @property
    def k(self) -> int:
        return self.base.k

    @property
    def feature_count(self) -> int:
        return self.base.feature_count

    def predict_proba(self, X) -> np.ndarray:
        probs = self.base.predict_proba(X)
        n = probs.shape[0]
        if n == 0 or self.p_corrupt == 0.0:
            return probs
        rng = make_rng(self.seed, "perturb")
        u = rng.random(n)
        cls = rng.integers(0, self.k, n)
        corrupt = u < self.p_corrupt
        if corrupt.any():
            probs = probs.copy()
            one_hot = np.zeros((int(corrupt.sum()), self.k), dtype=np.float64)
            one_hot[np.arange(one_hot.shape[0]), cls[corrupt]] = 1.0
            probs[corrupt] = one_hot
        return probs

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1).astype(np.int64)


def perturb(model: RandomForestClassifier, p_corrupt: float, seed: int = 0) -> PerturbedModel:
    """Wrap `model` so each prediction is randomized with probability p_corrupt."""
    return PerturbedModel(model, float(p_corrupt), int(seed))
