"""Weighted software network: one node per class, weighted dependency edges.

An edge ``i -> j`` exists when some function of class ``i`` calls a function
of class ``j``. Its weight is::

    w_ij = (deps_from_i / fns_i) * (deps_into_j / fns_j)

where ``deps_from_i`` counts distinct functions of ``i`` calling into ``j``
and ``deps_into_j`` counts distinct functions of ``j`` called from ``i``.
Weights are kept as exact fractions until serialized.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path

from .facts import CodeFacts


class WsnError(ValueError):
    pass


@dataclass(frozen=True)
class DependencyTally:
    vf_i: int
    vf_ij: int
    vf_j: int
    vf_ji: int


@dataclass(frozen=True)
class WsnEdge:
    source: str
    target: str
    weight: Fraction | float

    def __post_init__(self):
        if self.source == self.target:
            raise WsnError(f"self-loop on {self.source!r}")
        if not 0 < self.weight <= 1:
            raise WsnError(f"edge {self.source!r} -> {self.target!r} weight {self.weight} outside (0, 1]")


@dataclass(frozen=True)
class Wsn:
    nodes: tuple
    edges: tuple

    def __post_init__(self):
        nodes = tuple(sorted(set(self.nodes)))
        edges = tuple(sorted(self.edges, key=lambda e: (e.source, e.target)))
        known = set(nodes)
        pairs = set()
        for e in edges:
            if e.source not in known or e.target not in known:
                raise WsnError(f"edge {e.source!r} -> {e.target!r} has an endpoint outside the node set")
            if (e.source, e.target) in pairs:
                raise WsnError(f"duplicate edge {e.source!r} -> {e.target!r}")
            pairs.add((e.source, e.target))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

    @cached_property
    def out_edges(self):
        out = {n: [] for n in self.nodes}
        for e in self.edges:
            out[e.source].append(e)
        return out

    @cached_property
    def in_edges(self):
        inc = {n: [] for n in self.nodes}
        for e in self.edges:
            inc[e.target].append(e)
        return inc

    def weight(self, source, target):
        for e in self.out_edges[source]:
            if e.target == target:
                return e.weight
        return None

    def to_json(self):
        return {
            "nodes": list(self.nodes),
            "edges": [{"from": e.source, "to": e.target, "weight": float(e.weight)} for e in self.edges],
        }

    @classmethod
    def from_json(cls, obj):
        try:
            edges = [WsnEdge(e["from"], e["to"], e["weight"]) for e in obj["edges"]]
            return cls(tuple(obj["nodes"]), tuple(edges))
        except (KeyError, TypeError) as exc:
            raise WsnError(f"malformed WSN document: {exc!r}") from exc


def _class_of(facts):
    return {f.id: f.class_id for f in facts.functions}


def tally_dependencies(facts: CodeFacts, i: str, j: str) -> DependencyTally:
    if i not in facts.class_by_id:
        raise WsnError(f"unknown class id {i!r}")
    if j not in facts.class_by_id:
        raise WsnError(f"unknown class id {j!r}")
    if i == j:
        raise WsnError("tally requires two distinct classes")
    owner = _class_of(facts)
    sources, targets = set(), set()
    for d in facts.deps:
        if owner[d.from_fn] == i and owner[d.to_fn] == j:
            sources.add(d.from_fn)
            targets.add(d.to_fn)
    return DependencyTally(len(facts.functions_of[i]), len(sources), len(facts.functions_of[j]), len(targets))


def edge_weight(t: DependencyTally) -> Fraction:
    if t.vf_i <= 0 or t.vf_j <= 0:
        raise WsnError(f"zero function count in tally {t}")
    return Fraction(t.vf_ij, t.vf_i) * Fraction(t.vf_ji, t.vf_j)


def build_wsn(facts: CodeFacts) -> Wsn:
    owner = _class_of(facts)
    sources = defaultdict(set)
    targets = defaultdict(set)
    for d in facts.deps:
        ci, cj = owner[d.from_fn], owner[d.to_fn]
        if ci == cj:
            continue
        sources[ci, cj].add(d.from_fn)
        targets[ci, cj].add(d.to_fn)
    nfn = {c: len(fns) for c, fns in facts.functions_of.items()}
    edges = []
    for (ci, cj), src in sources.items():
        t = DependencyTally(nfn[ci], len(src), nfn[cj], len(targets[ci, cj]))
        edges.append(WsnEdge(ci, cj, edge_weight(t)))
    return Wsn(tuple(c.id for c in facts.classes), tuple(edges))


def dumps_wsn(wsn: Wsn) -> str:
    return json.dumps(wsn.to_json(), indent=2) + "\n"


def save_wsn(wsn: Wsn, path) -> None:
    Path(path).write_text(dumps_wsn(wsn), encoding="utf-8")


def load_wsn(path) -> Wsn:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise WsnError(f"{path}: malformed JSON ({exc.msg})") from exc
    return Wsn.from_json(obj)
