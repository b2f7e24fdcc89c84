"""Metrics (ROC/AUC, confusion, per-object rates) and grid-search selection.

AUC is computed two independent ways: trapezoidal integration of the
tie-grouped ROC curve (the primary route) and the Mann-Whitney pairwise
concordance count with half credit for ties. They are mathematically equal;
each serves as the oracle for the other and both ship.

Model selection follows the unseen-validation protocol: every grid config
trains on the training fold with the same seed, and the config with the
highest AUC on the unseen-validation objects wins (ties: fewer trees, then
smaller depth).
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .forest import Hyperparams, fit_forest, predict_proba

DEFAULT_GRID = {
    "n_trees": [20, 60, 120],
    "min_samples_split": [2, 5, 10],
    "max_depth": [8, 16, None],
}


@dataclass(frozen=True)
class RocCurve:
    points: tuple  # ((fpr, tpr), ...) from (0,0) to (1,1)
    thresholds: tuple  # score cutoff per point; +inf at (0,0)

    def __post_init__(self):
        if len(self.points) != len(self.thresholds):
            raise ValueError("one threshold per curve point")
        for (f, t) in self.points:
            if not (0.0 <= f <= 1.0 and 0.0 <= t <= 1.0):
                raise ValueError("curve coordinates must lie in [0, 1]")


def _check_scores(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be aligned 1-d sequences")
    return scores, labels


def roc_and_auc(scores, labels) -> tuple:
    """Tie-grouped ROC curve and its trapezoidal AUC."""
    scores, labels = _check_scores(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    points = [(0.0, 0.0)]
    thresholds = [math.inf]
    tp = fp = 0
    i = 0
    auc = 0.0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        dtp = int(y[i:j].sum())
        dfp = (j - i) - dtp
        prev = (fp / n_neg, tp / n_pos)
        tp += dtp
        fp += dfp
        cur = (fp / n_neg, tp / n_pos)
        auc += (cur[0] - prev[0]) * (cur[1] + prev[1]) / 2.0
        points.append(cur)
        thresholds.append(float(s[i]))
        i = j
    return RocCurve(tuple(points), tuple(thresholds)), auc


def concordance_auc(scores, labels) -> float:
    """Pairwise Mann-Whitney AUC: P(pos > neg) + 0.5 P(pos == neg)."""
    scores, labels = _check_scores(scores, labels)
    pos = scores[labels]
    neg = scores[~labels]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both classes must be present")
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


# --- confusion ------------------------------------------------------------

def _cell_counts(scores, labels, threshold):
    pred = scores >= threshold
    return {"tp": int((labels & pred).sum()),
            "fn": int((labels & ~pred).sum()),
            "fp": int((~labels & pred).sum()),
            "tn": int((~labels & ~pred).sum())}


def _rates(counts):
    pos = counts["tp"] + counts["fn"]
    neg = counts["fp"] + counts["tn"]
    return {"tp": 100.0 * counts["tp"] / pos if pos else 0.0,
            "fn": 100.0 * counts["fn"] / pos if pos else 0.0,
            "fp": 100.0 * counts["fp"] / neg if neg else 0.0,
            "tn": 100.0 * counts["tn"] / neg if neg else 0.0}


@dataclass(frozen=True)
class ConfusionReport:
    """Rows are the TRUE class: (tp, fn) row-normalize over true successes,
    (fp, tn) over true failures, as percentages."""

    threshold: float
    counts: dict
    rates: dict
    per_object: dict

    def total(self) -> int:
        return sum(self.counts.values())


def confusion(scores, labels, object_ids, threshold: float = 0.6) -> ConfusionReport:
    scores, labels = _check_scores(scores, labels)
    if len(scores) == 0:
        raise ValueError("empty input")
    if len(object_ids) != len(scores):
        raise ValueError("object_ids must align with scores")
    object_ids = np.asarray(object_ids)
    counts = _cell_counts(scores, labels, threshold)
    per_object = {}
    for oid in sorted(set(object_ids.tolist())):
        mask = object_ids == oid
        c = _cell_counts(scores[mask], labels[mask], threshold)
        per_object[oid] = {"counts": c, "rates": _rates(c)}
    return ConfusionReport(threshold=threshold, counts=counts,
                           rates=_rates(counts), per_object=per_object)


def per_object_report(scores, labels, object_ids, threshold: float = 0.6) -> tuple:
    """One record per object (Fig.-5-style bar data), sorted by object id."""
    rep = confusion(scores, labels, object_ids, threshold)
    return tuple({"object_id": oid, **cells}
                 for oid, cells in rep.per_object.items())


def accuracy(scores, labels, threshold: float = 0.6) -> float:
    scores, labels = _check_scores(scores, labels)
    if len(scores) == 0:
        raise ValueError("empty input")
    return float(np.mean((scores >= threshold) == labels))


# --- grid search ------------------------------------------------------------

@dataclass(frozen=True)
class GridEntry:
    hyperparams: Hyperparams
    val_auc: float
    train_acc: float
    val_acc: float


@dataclass(frozen=True)
class GridSearchResult:
    entries: tuple
    chosen: int
    tie_break_note: str

    @property
    def best(self) -> GridEntry:
        return self.entries[self.chosen]


def expand_grid(grid: dict = None) -> list:
    """Cartesian product of the grid axes, in documented (row-major) order."""
    grid = dict(DEFAULT_GRID if grid is None else grid)
    configs = []
    for n_trees in grid["n_trees"]:
        for min_split in grid["min_samples_split"]:
            for depth in grid["max_depth"]:
                configs.append(Hyperparams(
                    n_trees=int(n_trees), min_samples_split=int(min_split),
                    max_depth=None if depth is None else int(depth)))
    return configs


def _fit_and_eval(args):
    hp, X_train, y_train, X_val, y_val, threshold = args
    model = fit_forest(X_train, y_train, hp)
    train_scores = predict_proba(model, X_train)
    val_scores = predict_proba(model, X_val)
    _, val_auc = roc_and_auc(val_scores, y_val)
    return GridEntry(hyperparams=hp,
                     val_auc=float(val_auc),
                     train_acc=accuracy(train_scores, y_train, threshold),
                     val_acc=accuracy(val_scores, y_val, threshold))


def _depth_key(hp: Hyperparams) -> float:
    return math.inf if hp.max_depth is None else hp.max_depth


def grid_search(grid, X_train, y_train, train_objects, X_val, y_val,
                val_objects, seed: int, *, threshold: float = 0.6,
                processes: int | None = None) -> GridSearchResult:
    """Train every config (same seed) and pick the best unseen-validation AUC.

    `grid` is either a dict of axis lists or an explicit Hyperparams list.
    `train_objects` / `val_objects` are the per-row object ids; their sets
    must be disjoint or the search refuses to run.
    """
    overlap = set(train_objects) & set(val_objects)
    if overlap:
        raise ValueError(f"train/validation rosters overlap: {sorted(overlap)}")
    configs = expand_grid(grid) if isinstance(grid, (dict, type(None))) else list(grid)
    configs = [replace(hp, seed=seed) for hp in configs]
    tasks = [(hp, X_train, y_train, X_val, y_val, threshold) for hp in configs]
    if processes and processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            entries = tuple(pool.map(_fit_and_eval, tasks))
    else:
        entries = tuple(_fit_and_eval(t) for t in tasks)
    chosen = min(range(len(entries)), key=lambda i: (
        -entries[i].val_auc,
        entries[i].hyperparams.n_trees,
        _depth_key(entries[i].hyperparams),
        entries[i].hyperparams.min_samples_split,
        i))
    return GridSearchResult(
        entries=entries, chosen=chosen,
        tie_break_note="max val_auc; ties: fewer trees, then smaller depth "
                       "(None = unlimited), then smaller min_samples_split, "
                       "then grid order")


# --- end-to-end experiment ----------------------------------------------------

@dataclass(frozen=True)
class SplitEval:
    """Scores and headline metrics for one evaluation split."""

    scores: np.ndarray
    labels: np.ndarray
    object_ids: tuple
    auc: float
    acc: float


@dataclass(frozen=True)
class ExperimentResult:
    preset_name: str
    seed: int
    grid: GridSearchResult
    model: object
    holdout: SplitEval
    validation: SplitEval
    test: SplitEval

    def split(self, name: str) -> SplitEval:
        if name not in ("holdout", "validation", "test"):
            raise KeyError(name)
        return getattr(self, name)


_REBALANCE_STREAM = 10
_SPLIT_STREAM = 11


def run_experiment(preset, *, two_readings: bool = False,
                   feature_config=None, threshold: float = 0.6,
                   holdout_ratio: float = 0.8,
                   processes: int | None = None) -> ExperimentResult:
    """Run the whole protocol on a preset and return the selected model.

    Generate -> rebalance -> train/holdout split -> featurize -> grid
    search (selection by unseen-validation AUC) -> refit the winner ->
    score holdout, unseen-validation, and unseen-test. All randomness
    hangs off the preset seed, so a given preset always reproduces the
    same result, bit for bit.
    """
    from .dataset import generate_from_preset, rebalance, split
    from .features import FeatureConfig, featurize_set

    if feature_config is None:
        mode = "two_readings" if two_readings else "single_reading"
        cfg = FeatureConfig(mode=mode)
    else:
        cfg = feature_config
    ts = generate_from_preset(preset, two_readings=two_readings)
    balanced = rebalance(ts, np.random.default_rng([preset.seed, _REBALANCE_STREAM]))
    train_set, holdout_set = split(balanced, holdout_ratio,
                                   np.random.default_rng([preset.seed, _SPLIT_STREAM]))

    def prep(trials):
        X, y = featurize_set(trials, cfg)
        return X, y, tuple(t.object_id for t in trials)

    X_train, y_train, obj_train = prep(train_set.trials)
    X_hold, y_hold, obj_hold = prep(holdout_set.trials)
    val_trials = tuple(t for t in ts.trials if ts.role_of(t.object_id) == "validation")
    test_trials = tuple(t for t in ts.trials if ts.role_of(t.object_id) == "test")
    X_val, y_val, obj_val = prep(val_trials)
    X_test, y_test, obj_test = prep(test_trials)

    result = grid_search(preset.grid, X_train, y_train, obj_train,
                         X_val, y_val, obj_val, seed=preset.seed,
                         threshold=threshold, processes=processes)
    model = fit_forest(X_train, y_train, result.best.hyperparams)

    def evaluate(X, y, objs):
        scores = predict_proba(model, X)
        _, auc = roc_and_auc(scores, y)
        return SplitEval(scores=scores, labels=np.asarray(y, dtype=bool),
                         object_ids=objs, auc=float(auc),
                         acc=accuracy(scores, y, threshold))

    return ExperimentResult(
        preset_name=preset.name, seed=preset.seed, grid=result, model=model,
        holdout=evaluate(X_hold, y_hold, obj_hold),
        validation=evaluate(X_val, y_val, obj_val),
        test=evaluate(X_test, y_test, obj_test))


def reading_ablation(preset, *, threshold: float = 0.6,
                     processes: int | None = None) -> dict:
    """Re-run the protocol with one and with two readings per trial.

    Returns both results plus the signed and absolute change in
    unseen-validation and unseen-test AUC attributable to the second
    (mid-close) frame.
    """
    single = run_experiment(preset, two_readings=False, threshold=threshold,
                            processes=processes)
    double = run_experiment(preset, two_readings=True, threshold=threshold,
                            processes=processes)
    return {
        "single": single,
        "double": double,
        "delta_val_auc": double.validation.auc - single.validation.auc,
        "delta_test_auc": double.test.auc - single.test.auc,
        "abs_delta_val_auc": abs(double.validation.auc - single.validation.auc),
        "abs_delta_test_auc": abs(double.test.auc - single.test.auc),
    }


# --- report writers -----------------------------------------------------------

def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w") as fh:
        fh.write("threshold,fpr,tpr\n")
        for thr, (f, t) in zip(curve.thresholds, curve.points):
            fh.write(f"{'inf' if math.isinf(thr) else repr(thr)},{f!r},{t!r}\n")


def write_confusion_table(path, report: ConfusionReport) -> None:
    def row(name, counts, rates):
        return (f"{name},{counts['tp']},{counts['fn']},{counts['fp']},"
                f"{counts['tn']},{rates['tp']:.1f},{rates['fn']:.1f},"
                f"{rates['fp']:.1f},{rates['tn']:.1f}\n")

    with open(path, "w") as fh:
        fh.write(f"# threshold={report.threshold!r}; rows are the true class\n")
        fh.write("scope,tp,fn,fp,tn,tp_pct,fn_pct,fp_pct,tn_pct\n")
        fh.write(row("all", report.counts, report.rates))
        for oid, cells in report.per_object.items():
            fh.write(row(oid, cells["counts"], cells["rates"]))


def write_grid_table(path, result: GridSearchResult) -> None:
    order = sorted(range(len(result.entries)),
                   key=lambda i: -result.entries[i].val_auc)
    with open(path, "w") as fh:
        fh.write("rank,chosen,n_trees,min_samples_split,max_depth,"
                 "val_auc,train_acc,val_acc\n")
        for rank, i in enumerate(order):
            e = result.entries[i]
            hp = e.hyperparams
            depth = "none" if hp.max_depth is None else hp.max_depth
            fh.write(f"{rank},{'*' if i == result.chosen else ''},"
                     f"{hp.n_trees},{hp.min_samples_split},{depth},"
                     f"{e.val_auc!r},{e.train_acc!r},{e.val_acc!r}\n")


def write_roc_svg(path, curves: dict) -> None:
    """Fig.-4-style ROC plot, one labeled curve per evaluation set.

    Metadata that varies between runs (creation date, hash salt) is pinned
    so the output bytes are deterministic.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with plt.rc_context({"svg.hashsalt": "tofgrasp"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.plot([0, 1], [0, 1], linestyle="--", color="0.7", linewidth=1)
        for label, curve in curves.items():
            xs = [p[0] for p in curve.points]
            ys = [p[1] for p in curve.points]
            ax.plot(xs, ys, label=label)
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
