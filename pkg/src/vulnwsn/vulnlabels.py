"""Vulnerability labels from local advisory, bug and patch records.

Walks advisory -> bug -> patch diff -> changed file -> classes and adds one to
each touched class per (advisory, bug) traversal. Records are JSON Lines::

    {"kind":"advisory","id":"mfsa2015-01","bugs":["1001","1002"]}
    {"kind":"bug","id":"1001","diffs":["1001.diff"]}

Diff references name files inside a diff directory.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

from .facts import CodeFacts

log = logging.getLogger(__name__)

LABELS_HEADER = ("class_id", "vuln_count", "label")

_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


class LabelError(ValueError):
    pass


class DiffError(LabelError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class AdvisoryRecord:
    advisory_id: str
    bug_ids: tuple

    def __post_init__(self):
        if not self.bug_ids:
            raise LabelError(f"advisory {self.advisory_id!r} lists no bugs")


@dataclass(frozen=True)
class BugRecord:
    bug_id: str
    diff_paths: tuple


class Resolution(NamedTuple):
    classes: set
    unmatched: list


class VulnCountTable(NamedTuple):
    counts: dict
    warnings: list


def _header_path(line, prefix):
    path = line[len(prefix):].split("\t", 1)[0].rstrip()
    if path.startswith('"') and path.endswith('"') and len(path) >= 2:
        path = path[1:-1]
    return path


def parse_unified_diff(text: str) -> set:
    """New-side paths of every file section; deleted files are skipped."""
    paths = set()
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        lineno = i + 1
        if line.startswith("--- "):
            if i + 1 >= len(lines) or not lines[i + 1].startswith("+++ "):
                raise DiffError(lineno, "'---' header not followed by '+++' header")
            new = _header_path(lines[i + 1], "+++ ")
            if not new:
                raise DiffError(lineno + 1, "empty path in '+++' header")
            if new != "/dev/null":
                paths.add(new[2:] if new.startswith("b/") else new)
            i += 2
            continue
        if line.startswith("+++ "):
            raise DiffError(lineno, "'+++' header without preceding '---' header")
        if line.startswith("@@"):
            m = _HUNK_RE.match(line)
            if m is None:
                raise DiffError(lineno, f"malformed hunk header {line!r}")
            old_left = int(m.group(2) or 1)
            new_left = int(m.group(4) or 1)
            i += 1
            while old_left > 0 or new_left > 0:
                if i >= len(lines):
                    raise DiffError(lineno, "hunk ends before its declared line counts are consumed")
                body = lines[i]
                tag = body[:1]
                if tag == " " or body == "":
                    old_left -= 1
                    new_left -= 1
                elif tag == "-":
                    old_left -= 1
                elif tag == "+":
                    new_left -= 1
                elif tag != "\\":
                    raise DiffError(i + 1, f"unexpected line inside hunk: {body!r}")
                if old_left < 0 or new_left < 0:
                    raise DiffError(i + 1, "hunk has more lines than its header declares")
                i += 1
            if i < len(lines) and lines[i][:1] in ("+", "-", " ") and not lines[i].startswith(("--- ", "+++ ")):
                raise DiffError(i + 1, "hunk has more lines than its header declares")
            continue
        i += 1
    return paths


def resolve_classes(paths, facts: CodeFacts) -> Resolution:
    by_file = {}
    for c in facts.classes:
        by_file.setdefault(c.file, set()).add(c.id)
    found, unmatched = set(), []
    for p in sorted(paths):
        if p in by_file:
            found |= by_file[p]
        else:
            unmatched.append(p)
    return Resolution(found, unmatched)


def count_vulnerabilities(advisories, bugs, diff_store, facts: CodeFacts) -> VulnCountTable:
    """Per-class counts; each (advisory, bug, class) incidence adds one.

    ``bugs`` maps bug id to BugRecord (a list of records is also accepted);
    ``diff_store`` maps diff reference to unified-diff text.
    """
    if not isinstance(bugs, dict):
        bugs = {b.bug_id: b for b in bugs}
    counts = {c.id: 0 for c in facts.classes}
    warnings = []
    touched_by_bug = {}
    for adv in sorted(advisories, key=lambda a: a.advisory_id):
        for bug_id in dict.fromkeys(adv.bug_ids):
            bug = bugs.get(bug_id)
            if bug is None:
                raise LabelError(f"advisory {adv.advisory_id} -> bug {bug_id}: no such bug record")
            if bug_id not in touched_by_bug:
                classes = set()
                for ref in bug.diff_paths:
                    chain = f"advisory {adv.advisory_id} -> bug {bug_id} -> diff {ref}"
                    try:
                        text = diff_store[ref]
                    except KeyError:
                        raise LabelError(f"{chain}: diff not found") from None
                    try:
                        changed = parse_unified_diff(text)
                    except DiffError as exc:
                        raise LabelError(f"{chain}: {exc}") from exc
                    res = resolve_classes(changed, facts)
                    classes |= res.classes
                    for p in res.unmatched:
                        warnings.append(f"{chain}: path {p} matches no class")
                touched_by_bug[bug_id] = classes
            for cid in touched_by_bug[bug_id]:
                counts[cid] += 1
    for w in warnings:
        log.warning("%s", w)
    return VulnCountTable(counts, warnings)


def to_labels(counts, facts: CodeFacts) -> dict:
    return {c.id: int(counts.get(c.id, 0) >= 1) for c in facts.classes}


def load_records(path, kind):
    """Load advisory or bug JSONL records."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LabelError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from exc
            field = {"advisory": "bugs", "bug": "diffs"}[kind]
            if not isinstance(obj, dict) or obj.get("kind") != kind:
                raise LabelError(f"{path}: line {lineno}: expected a {kind!r} record")
            rid, refs = obj.get("id"), obj.get(field)
            if not isinstance(rid, str) or not rid or not isinstance(refs, list) or not all(isinstance(r, str) for r in refs):
                raise LabelError(f"{path}: line {lineno}: {kind} needs a string 'id' and a list of strings '{field}'")
            if rid in out:
                raise LabelError(f"{path}: line {lineno}: duplicate {kind} id {rid!r}")
            try:
                out[rid] = AdvisoryRecord(rid, tuple(refs)) if kind == "advisory" else BugRecord(rid, tuple(refs))
            except LabelError as exc:
                raise LabelError(f"{path}: line {lineno}: {exc}") from exc
    return list(out.values())


class DiffDirectory:
    """Read-only mapping from diff reference to the text of ``root/ref``."""

    def __init__(self, root):
        self.root = Path(root).resolve()
        if not self.root.is_dir():
            raise FileNotFoundError(f"diff directory not found: {root}")

    def __getitem__(self, ref):
        p = (self.root / ref).resolve()
        if self.root not in p.parents or not p.is_file():
            raise KeyError(ref)
        return p.read_text(encoding="utf-8")


def dumps_labels(table: VulnCountTable, facts: CodeFacts) -> str:
    labels = to_labels(table.counts, facts)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LABELS_HEADER)
    for cid in sorted(labels):
        w.writerow([cid, table.counts.get(cid, 0), labels[cid]])
    return buf.getvalue()


def save_labels(table, facts, path) -> None:
    Path(path).write_text(dumps_labels(table, facts), encoding="utf-8")


def load_labels(path) -> dict:
    """class id -> (vuln_count, label)."""
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != LABELS_HEADER:
            raise LabelError(f"{path}: expected header {','.join(LABELS_HEADER)}")
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            try:
                cid, count, label = rec
                count, label = int(count), int(label)
            except ValueError:
                raise LabelError(f"{path}: line {lineno}: expected class_id,vuln_count,label") from None
            if count < 0 or label not in (0, 1):
                raise LabelError(f"{path}: line {lineno}: invalid count or label")
            if cid in out:
                raise LabelError(f"{path}: line {lineno}: duplicate class id {cid!r}")
            out[cid] = (count, label)
    return out
