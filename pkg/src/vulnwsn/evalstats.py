"""Confusion-matrix measures, run averaging and the Wilcoxon rank-sum test."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

MEASURES = ("acc", "pr", "fp_rate", "re")
TABLE_HEADER = ("Technique", "Acc(%)", "Pr(%)", "FP(%)", "Re(%)")
EXACT_MAX_N = 12
ALPHA = 0.05


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError(f"negative cell in {self}")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class MeasureSet:
    """Acc, Pr, FP rate and Re; ``None`` marks an undefined measure."""

    acc: float | None
    pr: float | None
    fp_rate: float | None
    re: float | None

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Aggregate:
    mean: MeasureSet
    excluded: dict
    n: int


@dataclass(frozen=True)
class WilcoxonResult:
    u_statistic: float
    p_value: float
    method: str
    significant_at_0_05: bool


def confusion(predictions, actuals) -> ConfusionMatrix:
    pred = np.asarray(predictions).astype(int).ravel()
    act = np.asarray(actuals).astype(int).ravel()
    if pred.shape != act.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {act.size} actuals")
    if pred.size == 0:
        raise ValueError("confusion matrix needs at least one row")
    return ConfusionMatrix(
        tp=int(np.sum((pred == 1) & (act == 1))),
        fp=int(np.sum((pred == 1) & (act == 0))),
        tn=int(np.sum((pred == 0) & (act == 0))),
        fn=int(np.sum((pred == 0) & (act == 1))),
    )


def _ratio(num, den):
    return num / den if den > 0 else None


def measures(cm: ConfusionMatrix) -> MeasureSet:
    return MeasureSet(
        acc=_ratio(cm.tp + cm.tn, cm.total),
        pr=_ratio(cm.tp, cm.tp + cm.fp),
        fp_rate=_ratio(cm.fp, cm.fp + cm.tn),
        re=_ratio(cm.tp, cm.tp + cm.fn),
    )


def aggregate(matrices) -> Aggregate:
    """Macro-average of per-matrix measures; undefined cells are skipped and counted."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("cannot aggregate an empty list of matrices")
    per = [measures(cm) for cm in matrices]
    means, excluded = {}, {}
    for name in MEASURES:
        vals = [getattr(m, name) for m in per if getattr(m, name) is not None]
        excluded[name] = len(per) - len(vals)
        means[name] = math.fsum(vals) / len(vals) if vals else None
    return Aggregate(MeasureSet(**means), excluded, len(matrices))


def _pct(v):
    return "undefined" if v is None else f"{100 * v:.2f}"


def table_rows(results):
    """``results`` is a list of (technique, MeasureSet); adds an Average row when > 1."""
    rows = [[name] + [_pct(getattr(m, k)) for k in MEASURES] for name, m in results]
    if len(results) > 1:
        avg = []
        for k in MEASURES:
            vals = [getattr(m, k) for _, m in results if getattr(m, k) is not None]
            avg.append(_pct(math.fsum(vals) / len(vals) if vals else None))
        rows.append(["Average"] + avg)
    return rows


def render_table(results) -> str:
    rows = [list(TABLE_HEADER)] + table_rows(results)
    widths = [max(len(r[c]) for r in rows) for c in range(len(TABLE_HEADER))]
    lines = []
    for r in rows:
        cells = [r[0].ljust(widths[0])] + [r[c].rjust(widths[c]) for c in range(1, len(r))]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def render_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    w.writerows(table_rows(results))
    return buf.getvalue()


def _midranks(values):
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=float)
    sorted_vals = values[order]
    i = 0
    tie_sizes = []
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        if j > i:
            tie_sizes.append(j - i + 1)
        i = j + 1
    return ranks, tie_sizes


@lru_cache(maxsize=None)
def _u_counts(n, m):
    """Number of rank arrangements giving each U, for n x-values and m y-values."""
    # counts[a][b][u]: arrangements of a x's and b y's with U = u
    table = {(0, b): [1] for b in range(m + 1)}
    for a in range(1, n + 1):
        table[a, 0] = [1]
        for b in range(1, m + 1):
            # largest value is an x (beats all b y's) or a y
            with_x = table[a - 1, b]
            with_y = table[a, b - 1]
            out = [0] * (a * b + 1)
            for u, c in enumerate(with_x):
                out[u + b] += c
            for u, c in enumerate(with_y):
                out[u] += c
            table[a, b] = out
    return tuple(table[n, m])


def exact_p_two_sided(u, n, m):
    counts = _u_counts(n, m)
    mu = n * m / 2
    dev = abs(u - mu)
    extreme = sum(c for k, c in enumerate(counts) if abs(k - mu) >= dev - 1e-9)
    return min(1.0, extreme / math.comb(n + m, n))


def normal_p_two_sided(u, n, m, tie_sizes=()):
    big_n = n + m
    tie_term = sum(t ** 3 - t for t in tie_sizes) / (big_n * (big_n - 1)) if big_n > 1 else 0.0
    var = n * m / 12.0 * ((big_n + 1) - tie_term)
    if var <= 0:
        return 1.0
    z = max(abs(u - n * m / 2) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, max(0.0, math.erfc(z / math.sqrt(2))))


def wilcoxon_rank_sum(xs, ys, method="auto") -> WilcoxonResult:
    """Two-sided Mann-Whitney U test; U is reported for ``xs``.

    ``method`` is ``auto`` (exact when tie-free and n + m <= 12), ``exact``
    or ``normal-approx``.
    """
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if x.size == 0 or y.size == 0:
        raise ValueError("both samples must be non-empty")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples must be finite")
    n, m = x.size, y.size
    ranks, ties = _midranks(np.concatenate([x, y]))
    u = float(ranks[:n].sum() - n * (n + 1) / 2)
    if method == "auto":
        method = "exact" if not ties and n + m <= EXACT_MAX_N else "normal-approx"
    if method == "exact":
        if ties:
            raise ValueError("exact p-value requires tie-free samples")
        p = exact_p_two_sided(u, n, m)
    elif method == "normal-approx":
        p = normal_p_two_sided(u, n, m, ties)
    else:
        raise ValueError(f"unknown method {method!r}")
    return WilcoxonResult(u, p, method, p < ALPHA)
