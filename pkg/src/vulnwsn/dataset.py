"""Labelled feature datasets, under-sampling and repeated stratified CV."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import clone

from .evalstats import confusion
from .learners import classify
from .netmetrics import METRIC_NAMES

log = logging.getLogger(__name__)

DATASET_HEADER = ("class_id",) + METRIC_NAMES + ("label",)
_MASK64 = (1 << 64) - 1


class DatasetError(ValueError):
    pass


def splitmix64(x: int) -> int:
    """One splitmix64 output for state ``x``; used to derive sub-seeds."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *path: int) -> int:
    """Seed for a position in the run tree, e.g. ``derive_seed(s, repeat, fold)``."""
    seed = master & _MASK64
    for p in path:
        seed = splitmix64((seed + p) & _MASK64)
    return seed


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    class_ids: tuple
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float).reshape(len(self.class_ids), -1)
        y = np.asarray(self.y, dtype=int).ravel()
        if len(set(self.class_ids)) != len(self.class_ids):
            raise DatasetError("class ids must be unique")
        if y.shape[0] != X.shape[0]:
            raise DatasetError("features and labels differ in length")
        if not np.all(np.isfinite(X)):
            raise DatasetError("features must be finite")
        if not set(np.unique(y).tolist()) <= {0, 1}:
            raise DatasetError("labels must be 0/1")
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.class_ids)

    def __eq__(self, other):
        return (
            isinstance(other, LabeledDataset)
            and self.class_ids == other.class_ids
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return LabeledDataset(tuple(self.class_ids[i] for i in idx), self.X[idx], self.y[idx])

    def sorted(self):
        order = sorted(range(len(self)), key=lambda i: self.class_ids[i])
        return self.subset(order)


def join(features, labels) -> LabeledDataset:
    """Inner join of FeatureVectors with a ``class_id -> label`` mapping."""
    feats = {f.class_id: f for f in features}
    common = sorted(set(feats) & set(labels))
    if not common:
        raise DatasetError("features and labels share no class ids")
    for cid in sorted(set(feats) - set(labels)):
        log.warning("class %s has features but no label; excluded", cid)
    for cid in sorted(set(labels) - set(feats)):
        log.warning("class %s has a label but no features; excluded", cid)
    X = np.array([feats[c].values() for c in common], dtype=float)
    y = np.array([int(labels[c]) for c in common])
    return LabeledDataset(tuple(common), X, y)


def undersample(ds: LabeledDataset, seed: int) -> LabeledDataset:
    """Keep every minority row; draw as many majority rows without replacement."""
    pos = np.flatnonzero(ds.y == 1)
    neg = np.flatnonzero(ds.y == 0)
    if pos.size == 0 or neg.size == 0:
        raise DatasetError("under-sampling needs rows of both labels")
    minority, majority = (pos, neg) if pos.size <= neg.size else (neg, pos)
    # sample from class-id order so the draw does not depend on input row order
    majority = np.array(sorted(majority, key=lambda i: ds.class_ids[i]), dtype=int)
    rng = np.random.default_rng(seed)
    keep = rng.choice(majority, size=minority.size, replace=False)
    return ds.subset(np.concatenate([minority, keep])).sorted()


@dataclass(frozen=True)
class FoldPlan:
    assignments: np.ndarray
    k: int

    def test_indices(self, fold):
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.assignments != fold)


def stratified_folds(y, k: int, seed: int) -> FoldPlan:
    """Shuffle each label's rows and deal them round-robin across ``k`` folds.

    Dealing continues from label to label, so fold sizes differ by at most one
    overall and per label.
    """
    y = np.asarray(getattr(y, "y", y), dtype=int)
    if k < 2:
        raise DatasetError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    assignments = np.empty(y.size, dtype=int)
    dealt = 0
    for label in (0, 1):
        idx = np.flatnonzero(y == label)
        if idx.size < k:
            raise DatasetError(f"label {label} has {idx.size} rows, fewer than {k} folds")
        idx = rng.permutation(idx)
        assignments[idx] = (dealt + np.arange(idx.size)) % k
        dealt += idx.size
    return FoldPlan(assignments, k)


class StratifiedFolds:
    """scikit-learn style splitter over :func:`stratified_folds`."""

    def __init__(self, n_splits=10, random_state=0):
        self.n_splits = n_splits
        self.random_state = random_state

    def get_n_splits(self, X=None, y=None, groups=None):
        return self.n_splits

    def split(self, X, y, groups=None):
        plan = stratified_folds(y, self.n_splits, self.random_state)
        for f in range(self.n_splits):
            yield plan.train_indices(f), plan.test_indices(f)


class CVError(RuntimeError):
    pass


def _fit_fold(ds, learner, plan, repeat, fold, seed):
    train, test = plan.train_indices(fold), plan.test_indices(fold)
    model = clone(learner)
    if "random_state" in model.get_params():
        model.set_params(random_state=derive_seed(seed, repeat, fold) & 0xFFFFFFFF)
    try:
        model.fit(ds.X[train], ds.y[train])
        p = model.predict_proba(ds.X[test])[:, 1]
    except Exception as exc:
        raise CVError(f"repeat {repeat}, fold {fold}: {exc}") from exc
    return confusion(classify(p), ds.y[test])


def run_cv(ds: LabeledDataset, learner, repeats=10, k=10, seed=0, n_jobs=1):
    """Confusion matrices for ``repeats`` x ``k`` stratified CV, in (repeat, fold) order.

    Repeat ``r`` deals folds with ``derive_seed(seed, r)``; each fold's learner
    gets ``derive_seed(seed, r, f)`` as its ``random_state``.
    """
    plans = [stratified_folds(ds.y, k, derive_seed(seed, r)) for r in range(repeats)]
    jobs = [(r, f) for r in range(repeats) for f in range(k)]
    if n_jobs == 1:
        return [_fit_fold(ds, learner, plans[r], r, f, seed) for r, f in jobs]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(lambda rf: _fit_fold(ds, learner, plans[rf[0]], rf[0], rf[1], seed), jobs))


def _fmt(v):
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def dumps_dataset(ds: LabeledDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DATASET_HEADER)
    for cid, row, label in zip(ds.class_ids, ds.X, ds.y):
        w.writerow([cid] + [_fmt(v) for v in row] + [int(label)])
    return buf.getvalue()


def save_dataset(ds, path) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def load_dataset(path) -> LabeledDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != DATASET_HEADER:
            raise DatasetError(f"{path}: expected header {','.join(DATASET_HEADER)}")
        ids, rows, labels = [], [], []
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if len(rec) != len(DATASET_HEADER):
                raise DatasetError(f"{path}: line {lineno}: expected {len(DATASET_HEADER)} columns")
            try:
                vals = [float(v) for v in rec[1:-1]]
                label = int(rec[-1])
            except ValueError:
                raise DatasetError(f"{path}: line {lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetError(f"{path}: line {lineno}: non-finite feature")
            ids.append(rec[0])
            rows.append(vals)
            labels.append(label)
    return LabeledDataset(tuple(ids), np.array(rows, dtype=float).reshape(len(ids), len(METRIC_NAMES)), np.array(labels))
