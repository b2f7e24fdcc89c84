"""From-scratch CART trees and a bagged random forest.

Splits minimize Gini impurity greedily over a per-node random feature
subset; candidate thresholds sit at midpoints of adjacent sorted unique
values, and ties break toward the lowest feature index, then the lowest
threshold, so training is reproducible bit-for-bit. The forest aggregates
by soft vote: the mean of per-tree leaf probabilities, which keeps the
score continuous enough for threshold tuning and ROC analysis.

Trees are stored flattened (parallel node arrays), which makes scoring a
few vectorized gathers per depth level and the model file a fixed header
plus raw little-endian arrays.
"""

import json
from dataclasses import dataclass

import numpy as np

MAGIC = b"TOFGRASP-FOREST"
FORMAT_VERSION = 1

FEATURES_PER_SPLIT = ("sqrt_d", "fraction", "all")


@dataclass(frozen=True)
class Hyperparams:
    """Defaults are the tuned configuration: 60 trees, min split 5, depth 16.

    `feature_fraction` only applies when features_per_split == "fraction".
    `max_depth` may be None for unlimited depth.
    """

    n_trees: int = 60
    min_samples_split: int = 5
    max_depth: int | None = 16
    features_per_split: str = "sqrt_d"
    feature_fraction: float = 1.0 / 3.0
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")
        if self.features_per_split not in FEATURES_PER_SPLIT:
            raise ValueError(f"features_per_split must be one of {FEATURES_PER_SPLIT}")
        if not 0.0 < self.feature_fraction <= 1.0:
            raise ValueError("feature_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees,
                "min_samples_split": self.min_samples_split,
                "max_depth": self.max_depth,
                "features_per_split": self.features_per_split,
                "feature_fraction": self.feature_fraction,
                "bootstrap": self.bootstrap,
                "seed": self.seed}

    @staticmethod
    def from_dict(doc: dict) -> "Hyperparams":
        return Hyperparams(
            n_trees=int(doc["n_trees"]),
            min_samples_split=int(doc["min_samples_split"]),
            max_depth=None if doc["max_depth"] is None else int(doc["max_depth"]),
            features_per_split=str(doc["features_per_split"]),
            feature_fraction=float(doc["feature_fraction"]),
            bootstrap=bool(doc["bootstrap"]),
            seed=int(doc["seed"]))


@dataclass(frozen=True, eq=False)
class Tree:
    """Flattened nodes: feature[i] == -1 marks a leaf, children by index."""

    feature: np.ndarray  # int32
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    n_pos: np.ndarray  # int64
    n_neg: np.ndarray  # int64


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple
    hyperparams: Hyperparams
    layout: str
    n_features: int

    @property
    def seed(self) -> int:
        return self.hyperparams.seed


def gini(n_pos: int, n_neg: int) -> float:
    if n_pos + n_neg < 1:
        raise ValueError("empty node has no impurity")
    p = n_pos / (n_pos + n_neg)
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def _feature_subset(d: int, hp: Hyperparams, rng) -> np.ndarray:
    if hp.features_per_split == "all":
        return np.arange(d)
    if hp.features_per_split == "sqrt_d":
        k = max(1, int(round(np.sqrt(d))))
    else:
        k = max(1, int(round(hp.feature_fraction * d)))
    return np.sort(rng.choice(d, size=min(k, d), replace=False))


def _best_split(Xn: np.ndarray, yn: np.ndarray):
    """Best (column, threshold, gain) for one node's feature-subset matrix.

    Vectorized across all candidate boundaries of all columns at once.
    Ties break toward the first column (= lowest feature index, columns
    being sorted) and then the lowest threshold.
    """
    n, k = Xn.shape
    total_pos = int(yn.sum())
    parent = gini(total_pos, n - total_pos)
    order = np.argsort(Xn, axis=0, kind="stable")
    vs = np.take_along_axis(Xn, order, axis=0)
    pos = np.cumsum(yn[order], axis=0, dtype=np.int64)

    left_n = np.arange(1, n, dtype=np.int64)[:, None]
    left_pos = pos[:-1]
    right_n = n - left_n
    right_pos = total_pos - left_pos
    pl = left_pos / left_n
    pr = right_pos / right_n
    g_left = 1.0 - pl * pl - (1.0 - pl) * (1.0 - pl)
    g_right = 1.0 - pr * pr - (1.0 - pr) * (1.0 - pr)
    child = (left_n * g_left + right_n * g_right) / n
    child[vs[1:] <= vs[:-1]] = np.inf  # not a boundary between distinct values

    rows = np.argmin(child, axis=0)  # first minimum -> lowest threshold
    gains = parent - child[rows, np.arange(k)]
    col = int(np.argmax(gains))  # first maximum -> lowest feature index
    gain = float(gains[col])
    if not gain > 0.0:
        return None
    i = int(rows[col])
    a, b = float(vs[i, col]), float(vs[i + 1, col])
    thr = (a + b) / 2.0
    if thr >= b:  # adjacent floats: keep the boundary separating a from b
        thr = a
    return col, thr, gain


def fit_tree(X: np.ndarray, y: np.ndarray, hp: Hyperparams, rng) -> Tree:
    """Grow one CART tree on (X, y) with hp's stopping rules."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=bool)
    if X.ndim != 2 or len(X) < 1:
        raise ValueError("X must be a non-empty 2-d matrix")
    d = X.shape[1]
    max_depth = np.inf if hp.max_depth is None else hp.max_depth

    feature, threshold, left, right, n_pos, n_neg = [], [], [], [], [], []

    # explicit preorder stack (left child first) so deep trees cannot blow
    # the recursion limit; rng consumption order matches the traversal
    stack = [(np.arange(len(X)), 0, -1, 0)]
    while stack:
        idxs, depth, parent, side = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if side == 0 else right)[parent] = node
        npos = int(y[idxs].sum())
        nneg = len(idxs) - npos
        found = None
        if (depth < max_depth and len(idxs) >= hp.min_samples_split
                and npos > 0 and nneg > 0):
            feats = _feature_subset(d, hp, rng)
            found = _best_split(X[np.ix_(idxs, feats)], y[idxs])
        if found is None:
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            n_pos.append(npos)
            n_neg.append(nneg)
            continue
        col, thr, _ = found
        f = int(feats[col])
        feature.append(f)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        n_pos.append(npos)
        n_neg.append(nneg)
        mask = X[idxs, f] <= thr
        stack.append((idxs[~mask], depth + 1, node, 1))
        stack.append((idxs[mask], depth + 1, node, 0))
    return Tree(feature=np.array(feature, dtype=np.int32),
                threshold=np.array(threshold, dtype=np.float64),
                left=np.array(left, dtype=np.int32),
                right=np.array(right, dtype=np.int32),
                n_pos=np.array(n_pos, dtype=np.int64),
                n_neg=np.array(n_neg, dtype=np.int64))


def fit_forest(X: np.ndarray, y: np.ndarray, hp: Hyperparams,
               layout: str = "") -> ForestModel:
    """Bag `n_trees` trees; tree t draws from its own (seed, t) rng stream,
    so the result never depends on scheduling order."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=bool)
    if y.all() or not y.any():
        raise ValueError("training labels must contain both classes")
    n = len(X)
    trees = []
    for t in range(hp.n_trees):
        rng = np.random.default_rng([hp.seed, t])
        idxs = rng.integers(0, n, size=n) if hp.bootstrap else np.arange(n)
        trees.append(fit_tree(X[idxs], y[idxs], hp, rng))
    return ForestModel(tuple(trees), hp, layout, X.shape[1])


def _leaf_probs(tree: Tree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(len(X), dtype=np.int32)
    rows = np.arange(len(X))
    while True:
        feats = tree.feature[node]
        active = feats >= 0
        if not active.any():
            break
        r = rows[active]
        cur = node[active]
        go_left = X[r, feats[active]] <= tree.threshold[cur]
        node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
    pos = tree.n_pos[node].astype(float)
    neg = tree.n_neg[node].astype(float)
    return pos / (pos + neg)


def _coerce(model: ForestModel, features):
    from .features import FeatureVector

    if isinstance(features, FeatureVector):
        if features.layout != model.layout:
            raise ValueError(
                f"feature layout {features.layout!r} does not match the "
                f"model's {model.layout!r}")
        values = features.values
    else:
        values = np.asarray(features, dtype=float)
    single = values.ndim == 1
    X = values[None, :] if single else values
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    return X, single


def predict_proba(model: ForestModel, features):
    """Mean of per-tree leaf probabilities, in [0, 1]."""
    X, single = _coerce(model, features)
    acc = np.zeros(len(X))
    for tree in model.trees:
        acc += _leaf_probs(tree, X)
    probs = acc / len(model.trees)
    return float(probs[0]) if single else probs


def predict(model: ForestModel, features, threshold: float = 0.6):
    """Success iff probability >= threshold (0.59 vs 0.6 predicts failure)."""
    probs = predict_proba(model, features)
    if isinstance(probs, float):
        return bool(probs >= threshold)
    return probs >= threshold


# --- model file -----------------------------------------------------------

_ARRAY_SPEC = (("feature", "<i4"), ("threshold", "<f8"), ("left", "<i4"),
               ("right", "<i4"), ("n_pos", "<i8"), ("n_neg", "<i8"))


def model_to_bytes(model: ForestModel) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "hyperparams": model.hyperparams.to_dict(),
        "layout": model.layout,
        "n_features": model.n_features,
        "tree_sizes": [int(len(t.feature)) for t in model.trees],
        "arrays": [[name, dtype] for name, dtype in _ARRAY_SPEC],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob = [MAGIC,
            np.uint32(FORMAT_VERSION).tobytes(),
            np.uint32(len(head)).tobytes(),
            head]
    for tree in model.trees:
        for name, dtype in _ARRAY_SPEC:
            blob.append(np.ascontiguousarray(getattr(tree, name), dtype=dtype).tobytes())
    return b"".join(blob)


def model_from_bytes(data: bytes) -> ForestModel:
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError("not a forest model file (bad magic)")
    off = len(MAGIC)
    version = int(np.frombuffer(data, "<u4", count=1, offset=off)[0])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    off += 4
    head_len = int(np.frombuffer(data, "<u4", count=1, offset=off)[0])
    off += 4
    header = json.loads(data[off:off + head_len].decode())
    off += head_len
    trees = []
    for size in header["tree_sizes"]:
        fields = {}
        for name, dtype in header["arrays"]:
            arr = np.frombuffer(data, dtype, count=size, offset=off).copy()
            off += arr.nbytes
            fields[name] = arr
        trees.append(Tree(**fields))
    if off != len(data):
        raise ValueError("trailing bytes after tree arrays")
    return ForestModel(tuple(trees), Hyperparams.from_dict(header["hyperparams"]),
                       str(header["layout"]), int(header["n_features"]))


def save_model(model: ForestModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> ForestModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
