"""Fact extraction for MiniLang, a small class-based source language.

Grammar::

    program  := class*
    class    := 'class' Ident [':' Ident] '{' member* '}'
    member   := 'fn' Ident '(' [Ident (',' Ident)*] ')' block
    block    := '{' <any tokens with balanced (), [], {}> '}'

Inside a function body, ``Cls.fn(...)`` is a call into class ``Cls`` and
``self.fn(...)`` a call into the enclosing class or, failing that, its nearest
ancestor defining ``fn``. ``//`` starts a comment. Cyclomatic complexity is
1 + the number of ``if``/``while``/``for``/``case``/``&&``/``||`` tokens.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .facts import ClassRecord, CodeFacts, DepRecord, FunctionRecord

log = logging.getLogger(__name__)

DECISION_TOKENS = frozenset({"if", "while", "for", "case", "&&", "||"})
_RESERVED = frozenset({"class", "fn", "self", "if", "while", "for", "case"})

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<op>&&|\|\||==|!=|<=|>=|->|[{}()\[\],.:;=+\-*/<>!%&|?])
    """,
    re.VERBOSE,
)
_CLOSERS = {")": "(", "]": "[", "}": "{"}


@dataclass(frozen=True)
class SourceUnit:
    path: str
    content: str

    def __post_init__(self):
        if not self.path or "\\" in self.path:
            raise ValueError(f"source path must be non-empty and use '/' separators: {self.path!r}")


@dataclass(frozen=True)
class Diagnostic:
    path: str
    line: int
    message: str

    def __str__(self):
        return f"{self.path}:{self.line}: {self.message}"


class ExtractionError(ValueError):
    """One or more parse/resolution errors; see ``diagnostics``."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class UnresolvedCall:
    path: str
    line: int
    caller: str
    target: str
    reason: str

    def __str__(self):
        return f"{self.path}:{self.line}: unresolved {self.target} in {self.caller}: {self.reason}"


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int


@dataclass
class _Call:
    receiver: str
    name: str
    line: int


@dataclass
class _Function:
    name: str
    line: int
    loc: int
    cyclomatic: int
    calls: list


@dataclass
class _Class:
    name: str
    parent: str | None
    path: str
    line: int
    loc: int
    functions: list = field(default_factory=list)

    @property
    def id(self):
        return f"{self.path}#{self.name}"

    def fn_id(self, fn_name):
        return f"{self.id}::{fn_name}"


@dataclass
class Extraction:
    """Result of an extraction run: the facts plus every unresolved reference."""

    facts: CodeFacts
    unresolved: list

    def records(self):
        return self.facts.records()


def tokenize(unit: SourceUnit):
    tokens = []
    line = 1
    pos = 0
    text = unit.content
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExtractionError([Diagnostic(unit.path, line, f"unexpected character {text[pos]!r}")])
        kind = m.lastgroup
        if kind == "nl":
            line += 1
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line))
        pos = m.end()
    return tokens


def compute_cyclomatic(body) -> int:
    """1 + count of decision tokens; ``body`` holds Tokens or plain strings."""
    return 1 + sum(1 for t in body if getattr(t, "text", t) in DECISION_TOKENS)


def _span_loc(tokens, start, end):
    return len({tokens[k].line for k in range(start, end + 1)})


class _Parser:
    def __init__(self, unit):
        self.unit = unit
        self.toks = tokenize(unit)
        self.i = 0

    def error(self, message, tok=None):
        if tok is None:
            tok = self.toks[self.i] if self.i < len(self.toks) else None
        line = tok.line if tok else (self.toks[-1].line if self.toks else 1)
        return ExtractionError([Diagnostic(self.unit.path, line, message)])

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def expect(self, text=None, kind=None, what=None):
        tok = self.peek()
        if tok is None:
            raise self.error(f"unexpected end of file, expected {what or text or kind}")
        if (text is not None and tok.text != text) or (kind is not None and tok.kind != kind):
            raise self.error(f"expected {what or text or kind}, found {tok.text!r}")
        self.i += 1
        return tok

    def ident(self, what):
        tok = self.expect(kind="ident", what=what)
        if tok.text in _RESERVED:
            raise self.error(f"reserved word {tok.text!r} cannot be used as {what}", tok)
        return tok

    def parse(self):
        classes = []
        while self.peek() is not None:
            classes.append(self.parse_class())
        return classes

    def parse_class(self):
        start = self.i
        kw = self.expect("class", what="'class'")
        name = self.ident("a class name").text
        parent = None
        if self.peek() is not None and self.peek().text == ":":
            self.i += 1
            parent = self.ident("a parent class name").text
        self.expect("{")
        cls = _Class(name, parent, self.unit.path, kw.line, 0)
        seen = {}
        while True:
            tok = self.peek()
            if tok is None:
                raise self.error(f"unterminated class {name!r} (opened on line {kw.line})")
            if tok.text == "}":
                break
            fn = self.parse_function()
            if fn.name in seen:
                raise self.error(f"duplicate function {name}.{fn.name} (first on line {seen[fn.name]})", tok)
            seen[fn.name] = fn.line
            cls.functions.append(fn)
        end = self.i
        self.i += 1
        cls.loc = _span_loc(self.toks, start, end)
        return cls

    def parse_function(self):
        start = self.i
        kw = self.expect("fn", what="'fn' or '}'")
        name = self.ident("a function name").text
        self.expect("(")
        if self.peek() is not None and self.peek().text != ")":
            self.ident("a parameter name")
            while self.peek() is not None and self.peek().text == ",":
                self.i += 1
                self.ident("a parameter name")
        self.expect(")", what="')' or ','")
        self.expect("{")
        body_start = self.i
        stack = [self.toks[body_start - 1]]
        while stack:
            tok = self.peek()
            if tok is None:
                raise self.error(f"unterminated body of function {name!r} (opened on line {kw.line})")
            if tok.text in ("class", "fn"):
                raise self.error(f"unexpected {tok.text!r} inside body of function {name!r}")
            if tok.text in ("(", "[", "{"):
                stack.append(tok)
            elif tok.text in _CLOSERS:
                if stack[-1].text != _CLOSERS[tok.text]:
                    raise self.error(f"mismatched {tok.text!r} (open {stack[-1].text!r} on line {stack[-1].line})")
                stack.pop()
            self.i += 1
        body = self.toks[body_start:self.i - 1]
        return _Function(
            name=name,
            line=kw.line,
            loc=_span_loc(self.toks, start, self.i - 1),
            cyclomatic=compute_cyclomatic(body),
            calls=_find_calls(body),
        )


def _find_calls(body):
    calls = []
    for k in range(len(body) - 3):
        recv, dot, name, paren = body[k:k + 4]
        if (
            recv.kind == "ident"
            and dot.text == "."
            and name.kind == "ident"
            and paren.text == "("
            and (k == 0 or body[k - 1].text != ".")
        ):
            calls.append(_Call(recv.text, name.text, recv.line))
    return calls


def _parse_unit(unit):
    return _Parser(unit).parse()


def _resolve(classes):
    """Cross-file resolution over parsed classes, in the given order."""
    by_name = {}
    errors = []
    for cls in classes:
        prev = by_name.get(cls.name)
        if prev is not None:
            errors.append(Diagnostic(
                cls.path, cls.line,
                f"duplicate class {cls.name!r}: defined in {prev.path}:{prev.line} and {cls.path}:{cls.line}",
            ))
            continue
        by_name[cls.name] = cls
    if errors:
        raise ExtractionError(errors)

    unresolved = []
    parents = {}
    for cls in classes:
        if cls.parent is None:
            continue
        if cls.parent not in by_name:
            unresolved.append(UnresolvedCall(cls.path, cls.line, cls.id, cls.parent, "unknown parent class"))
        else:
            parents[cls.name] = by_name[cls.parent]
    for cls in classes:
        seen = {cls.name}
        cur = parents.get(cls.name)
        while cur is not None:
            if cur.name in seen:
                errors.append(Diagnostic(cls.path, cls.line, f"inheritance cycle through class {cls.name!r}"))
                break
            seen.add(cur.name)
            cur = parents.get(cur.name)
    if errors:
        raise ExtractionError(errors)

    def lookup(cls, fn_name):
        while cls is not None:
            if any(f.name == fn_name for f in cls.functions):
                return cls
            cls = parents.get(cls.name)
        return None

    crecs, frecs, drecs = [], [], []
    for cls in classes:
        crecs.append(ClassRecord(cls.id, cls.name, cls.path, cls.loc))
        for fn in cls.functions:
            frecs.append(FunctionRecord(cls.fn_id(fn.name), cls.id, fn.name, fn.loc, fn.cyclomatic))
    for cls in classes:
        for fn in cls.functions:
            caller = cls.fn_id(fn.name)
            seen = set()
            for call in fn.calls:
                target_text = f"{call.receiver}.{call.name}"
                if call.receiver == "self":
                    owner = lookup(cls, call.name)
                elif call.receiver in by_name:
                    owner = lookup(by_name[call.receiver], call.name)
                else:
                    unresolved.append(UnresolvedCall(cls.path, call.line, caller, target_text, "unknown class"))
                    continue
                if owner is None:
                    unresolved.append(UnresolvedCall(cls.path, call.line, caller, target_text, "unknown function"))
                    continue
                callee = owner.fn_id(call.name)
                # direct recursion is not a dependency between functions
                if callee == caller or callee in seen:
                    continue
                seen.add(callee)
                drecs.append(DepRecord(caller, callee))
    for u in unresolved:
        log.warning("%s", u)
    return Extraction(CodeFacts(crecs, frecs, drecs), unresolved)


def parse_source(unit: SourceUnit) -> Extraction:
    """Parse one unit and resolve calls against the classes it declares."""
    return _resolve(_parse_unit(unit))


def extract_units(units) -> Extraction:
    """Parse every unit, then resolve calls across all of them.

    Units are processed in path order so output does not depend on the order
    they were supplied in. All parse errors are collected before raising.
    """
    units = sorted(units, key=lambda u: u.path)
    parsed, errors = [], []
    for unit in units:
        try:
            parsed.extend(_parse_unit(unit))
        except ExtractionError as exc:
            errors.extend(exc.diagnostics)
    if errors:
        raise ExtractionError(errors)
    return _resolve(parsed)


def read_tree(root, ext=".ml"):
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"source root not found: {root}")
    units = []
    for p in root.rglob(f"*{ext}"):
        if p.is_file():
            rel = p.relative_to(root).as_posix()
            units.append(SourceUnit(rel, p.read_text(encoding="utf-8")))
    return units


def extract_tree(root, ext=".ml") -> Extraction:
    return extract_units(read_tree(root, ext))
