"""Code facts: the class/function/dependency records extracted from source.

Facts are stored as JSON Lines, one record per line, discriminated by ``kind``::

    {"kind":"class","id":"...","name":"...","file":"...","loc":N}
    {"kind":"function","id":"...","class_id":"...","name":"...","loc":N,"cyclomatic":N}
    {"kind":"dep","from_fn":"...","to_fn":"..."}

Ids are opaque strings. Consumers must not parse them.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path


class FactsError(ValueError):
    """Invalid facts; ``diagnostics`` holds one message per violation."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(self.diagnostics))


@dataclass(frozen=True)
class ClassRecord:
    id: str
    name: str
    file: str
    loc: int

    def to_json(self):
        return {"kind": "class", "id": self.id, "name": self.name, "file": self.file, "loc": self.loc}


@dataclass(frozen=True)
class FunctionRecord:
    id: str
    class_id: str
    name: str
    loc: int
    cyclomatic: int

    def to_json(self):
        return {
            "kind": "function",
            "id": self.id,
            "class_id": self.class_id,
            "name": self.name,
            "loc": self.loc,
            "cyclomatic": self.cyclomatic,
        }


@dataclass(frozen=True)
class DepRecord:
    from_fn: str
    to_fn: str

    def to_json(self):
        return {"kind": "dep", "from_fn": self.from_fn, "to_fn": self.to_fn}


@dataclass(frozen=True, eq=False)
class CodeFacts:
    """Immutable bundle of fact records.

    Records keep the order they were given in (the extractor emits path then
    declaration order); equality ignores order.
    """

    classes: tuple = ()
    functions: tuple = ()
    deps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "functions", tuple(self.functions))
        object.__setattr__(self, "deps", tuple(self.deps))

    def __eq__(self, other):
        if not isinstance(other, CodeFacts):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __hash__(self):
        return hash(self.canonical())

    def canonical(self):
        return (
            tuple(sorted(self.classes, key=lambda c: c.id)),
            tuple(sorted(self.functions, key=lambda f: f.id)),
            tuple(sorted(self.deps, key=lambda d: (d.from_fn, d.to_fn))),
        )

    def records(self):
        return [*self.classes, *self.functions, *self.deps]

    @cached_property
    def class_by_id(self):
        return {c.id: c for c in self.classes}

    @cached_property
    def function_by_id(self):
        return {f.id: f for f in self.functions}

    @cached_property
    def functions_of(self):
        """class id -> tuple of its FunctionRecords."""
        out = defaultdict(list)
        for f in self.functions:
            out[f.class_id].append(f)
        return {c.id: tuple(out.get(c.id, ())) for c in self.classes}

    def validate(self):
        errors = _integrity_errors(
            [(None, c) for c in self.classes]
            + [(None, f) for f in self.functions]
            + [(None, d) for d in self.deps]
        )
        if errors:
            raise FactsError(errors)
        return self


def _where(lineno):
    return f"line {lineno}: " if lineno is not None else ""


def _integrity_errors(numbered):
    """Referential/uniqueness checks over ``(lineno, record)`` pairs."""
    errors = []
    seen_ids = {}
    class_ids = set()
    fn_ids = set()
    for lineno, rec in numbered:
        if isinstance(rec, (ClassRecord, FunctionRecord)):
            if rec.id in seen_ids:
                first = seen_ids[rec.id]
                suffix = f" (first on line {first})" if first is not None else ""
                errors.append(f"{_where(lineno)}duplicate id {rec.id!r}{suffix}")
                continue
            seen_ids[rec.id] = lineno
            (class_ids if isinstance(rec, ClassRecord) else fn_ids).add(rec.id)
    seen_pairs = set()
    for lineno, rec in numbered:
        if isinstance(rec, FunctionRecord) and rec.class_id not in class_ids:
            errors.append(f"{_where(lineno)}function {rec.id!r} references missing class {rec.class_id!r}")
        elif isinstance(rec, DepRecord):
            for end in (rec.from_fn, rec.to_fn):
                if end not in fn_ids:
                    errors.append(f"{_where(lineno)}dep {rec.from_fn!r} -> {rec.to_fn!r} references missing function {end!r}")
            if rec.from_fn == rec.to_fn:
                errors.append(f"{_where(lineno)}dep from {rec.from_fn!r} to itself")
            pair = (rec.from_fn, rec.to_fn)
            if pair in seen_pairs:
                errors.append(f"{_where(lineno)}duplicate dep {rec.from_fn!r} -> {rec.to_fn!r}")
            seen_pairs.add(pair)
    return errors


_FIELDS = {
    "class": (ClassRecord, {"id": str, "name": str, "file": str, "loc": int}),
    "function": (FunctionRecord, {"id": str, "class_id": str, "name": str, "loc": int, "cyclomatic": int}),
    "dep": (DepRecord, {"from_fn": str, "to_fn": str}),
}


def record_from_json(obj):
    """Build one record from a decoded JSON object; raises ValueError on bad shape."""
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    kind = obj.get("kind")
    if kind not in _FIELDS:
        raise ValueError(f"unknown kind {kind!r}")
    cls, schema = _FIELDS[kind]
    extra = set(obj) - set(schema) - {"kind"}
    if extra:
        raise ValueError(f"unexpected field(s) {sorted(extra)}")
    values = {}
    for name, typ in schema.items():
        if name not in obj:
            raise ValueError(f"{kind} record missing field {name!r}")
        val = obj[name]
        # bool is an int subclass; reject it explicitly
        if not isinstance(val, typ) or isinstance(val, bool):
            raise ValueError(f"field {name!r} must be {typ.__name__}")
        if typ is str and not val:
            raise ValueError(f"field {name!r} must be non-empty")
        values[name] = val
    if kind == "class" and values["loc"] < 1:
        raise ValueError("class loc must be >= 1")
    if kind == "function" and (values["loc"] < 1 or values["cyclomatic"] < 1):
        raise ValueError("function loc and cyclomatic must be >= 1")
    return cls(**values)


def parse_facts_lines(lines):
    """Parse and validate JSONL lines into CodeFacts, collecting every diagnostic."""
    errors = []
    numbered = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            numbered.append((lineno, record_from_json(json.loads(line))))
        except json.JSONDecodeError as exc:
            errors.append(f"line {lineno}: malformed JSON ({exc.msg})")
        except ValueError as exc:
            errors.append(f"line {lineno}: {exc}")
    errors.extend(_integrity_errors(numbered))
    if errors:
        raise FactsError(errors)
    recs = [r for _, r in numbered]
    return CodeFacts(
        classes=[r for r in recs if isinstance(r, ClassRecord)],
        functions=[r for r in recs if isinstance(r, FunctionRecord)],
        deps=[r for r in recs if isinstance(r, DepRecord)],
    )


def load_facts(path) -> CodeFacts:
    with open(path, encoding="utf-8") as fh:
        return parse_facts_lines(fh)


def dumps_facts(facts: CodeFacts) -> str:
    classes, functions, deps = facts.canonical()
    lines = [json.dumps(r.to_json(), separators=(",", ":")) for r in (*classes, *functions, *deps)]
    return "".join(line + "\n" for line in lines)


def save_facts(facts: CodeFacts, path) -> None:
    facts.validate()
    Path(path).write_text(dumps_facts(facts), encoding="utf-8")
