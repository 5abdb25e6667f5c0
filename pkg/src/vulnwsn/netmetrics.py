"""Per-class metrics over a weighted software network.

Size metrics come from the facts; graph metrics from the network:

* ``IntofIn`` / ``IntofOut``: sum of incoming / outgoing edge weights.
* ``ClusCoeofNode``: directed edges among the node's (undirected) neighbours,
  divided by ``k * (k - 1)``.
* ``BetwofNode``: over every ordered pair ``(s, t)`` with ``s != i != t``, the
  number of shortest ``s -> t`` paths through ``i``. Path length is the sum of
  edge weights.
"""

from __future__ import annotations

import csv
import heapq
import io
import logging
import math
from dataclasses import astuple, dataclass
from fractions import Fraction
from pathlib import Path

from .facts import CodeFacts
from .wsn import Wsn

log = logging.getLogger(__name__)

METRIC_NAMES = ("NumofLn", "NumofFn", "AveCCofFn", "IntofIn", "IntofOut", "ClusCoeofNode", "BetwofNode")
CSV_HEADER = ("class_id",) + METRIC_NAMES
TIE_RTOL = 1e-9


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class NeighborhoodStats:
    k: int
    m: int


@dataclass(frozen=True)
class FeatureVector:
    class_id: str
    num_of_ln: int
    num_of_fn: int
    ave_cc_of_fn: float
    int_of_in: float
    int_of_out: float
    clus_coe: float
    betw: float

    def values(self):
        return astuple(self)[1:]


def _check_node(wsn, node):
    if node not in wsn.out_edges:
        raise MetricsError(f"unknown node {node!r}")


def size_metrics(facts: CodeFacts, class_id: str):
    cls = facts.class_by_id.get(class_id)
    if cls is None:
        raise MetricsError(f"unknown class id {class_id!r}")
    fns = facts.functions_of[class_id]
    if not fns:
        return cls.loc, 0, 0.0
    return cls.loc, len(fns), sum(f.cyclomatic for f in fns) / len(fns)


def int_of_in(wsn: Wsn, node: str):
    _check_node(wsn, node)
    return sum((e.weight for e in wsn.in_edges[node]), Fraction(0))


def int_of_out(wsn: Wsn, node: str):
    _check_node(wsn, node)
    return sum((e.weight for e in wsn.out_edges[node]), Fraction(0))


def neighborhood(wsn: Wsn, node: str) -> NeighborhoodStats:
    _check_node(wsn, node)
    nbrs = {e.target for e in wsn.out_edges[node]} | {e.source for e in wsn.in_edges[node]}
    nbrs.discard(node)
    m = sum(1 for u in nbrs for e in wsn.out_edges[u] if e.target in nbrs)
    return NeighborhoodStats(len(nbrs), m)


def clustering_coefficient(wsn: Wsn, node: str):
    s = neighborhood(wsn, node)
    if s.k <= 1:
        return Fraction(0)
    return Fraction(s.m, s.k * (s.k - 1))


def _same(a, b):
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return math.isclose(a, b, rel_tol=TIE_RTOL, abs_tol=0.0)


def _shortest_path_dag(wsn, source):
    """Dijkstra from ``source`` keeping every tied predecessor.

    Returns (settle order, path counts, predecessor lists).
    """
    dist = {source: 0}
    sigma = {source: 1}
    preds = {source: []}
    order = []
    done = set()
    heap = [(0, 0, source)]
    tick = 1
    while heap:
        d, _, v = heapq.heappop(heap)
        if v in done or d != dist[v]:
            continue
        done.add(v)
        order.append(v)
        for e in wsn.out_edges[v]:
            w = e.target
            if w in done:
                continue
            nd = dist[v] + e.weight
            if w not in dist or (nd < dist[w] and not _same(nd, dist[w])):
                dist[w] = nd
                sigma[w] = sigma[v]
                preds[w] = [v]
                heapq.heappush(heap, (nd, tick, w))
                tick += 1
            elif _same(nd, dist[w]):
                sigma[w] += sigma[v]
                preds[w].append(v)
    return order, sigma, preds


def betweenness_all(wsn: Wsn) -> dict:
    """Unnormalized shortest-path counts through each node.

    For a fixed source ``s``, the number of shortest ``s -> t`` paths through
    ``v`` is ``sigma_sv * sigma_vt`` where ``sigma_vt`` counts paths from ``v``
    to ``t`` inside the shortest-path DAG of ``s``. Summing over ``t`` gives
    ``reach(v) = sum over successors w of (1 + reach(w))``, accumulated in
    reverse settle order.
    """
    for e in wsn.edges:
        if not e.weight > 0:
            raise MetricsError(f"non-positive weight on {e.source!r} -> {e.target!r}")
    betw = {n: 0 for n in wsn.nodes}
    for s in wsn.nodes:
        order, sigma, preds = _shortest_path_dag(wsn, s)
        reach = dict.fromkeys(order, 0)
        for w in reversed(order):
            for v in preds[w]:
                reach[v] += 1 + reach[w]
            if w != s:
                betw[w] += sigma[w] * reach[w]
    return betw


def feature_table(wsn: Wsn, facts: CodeFacts):
    class_ids = sorted(c.id for c in facts.classes)
    if set(class_ids) != set(wsn.nodes):
        missing = sorted(set(class_ids) ^ set(wsn.nodes))
        raise MetricsError(f"network nodes do not match fact classes: {missing[:5]}")
    betw = betweenness_all(wsn)
    rows = []
    for cid in class_ids:
        loc, nfn, avecc = size_metrics(facts, cid)
        if nfn == 0:
            log.warning("class %s has no functions; AveCCofFn reported as 0", cid)
        rows.append(FeatureVector(
            class_id=cid,
            num_of_ln=loc,
            num_of_fn=nfn,
            ave_cc_of_fn=float(avecc),
            int_of_in=float(int_of_in(wsn, cid)),
            int_of_out=float(int_of_out(wsn, cid)),
            clus_coe=float(clustering_coefficient(wsn, cid)),
            betw=float(betw[cid]),
        ))
    return rows


def functionless_classes(facts: CodeFacts):
    return sorted(cid for cid, fns in facts.functions_of.items() if not fns)


def dumps_features(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.class_id, r.num_of_ln, r.num_of_fn] + [f"{v:.6f}" for v in r.values()[2:]])
    return buf.getvalue()


def save_features(rows, path) -> None:
    Path(path).write_text(dumps_features(rows), encoding="utf-8")


def load_features(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise MetricsError(f"{path}: expected header {','.join(CSV_HEADER)}")
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            try:
                cid, ln, nfn, *reals = rec
                vals = [float(x) for x in reals]
                if len(vals) != 5 or not all(math.isfinite(v) for v in vals):
                    raise ValueError("expected 5 finite reals")
                rows.append(FeatureVector(cid, int(ln), int(nfn), *vals))
            except ValueError as exc:
                raise MetricsError(f"{path}: line {lineno}: {exc}") from exc
    return rows
