import pytest

from conftest import ALL_CALLERS
from vulnwsn.extractor import (
    ExtractionError,
    SourceUnit,
    compute_cyclomatic,
    extract_tree,
    extract_units,
    parse_source,
    tokenize,
)
from vulnwsn.facts import ClassRecord, DepRecord, FunctionRecord, dumps_facts


def parse(text, path="m.ml"):
    return parse_source(SourceUnit(path, text))


def test_minimal_program():
    ex = parse("class B { fn c(x) { } }")
    assert ex.facts.classes == (ClassRecord("m.ml#B", "B", "m.ml", 1),)
    assert ex.facts.functions == (FunctionRecord("m.ml#B::c", "m.ml#B", "c", 1, 1),)
    assert ex.facts.deps == ()
    assert ex.unresolved == []


def test_three_functions_depend_on_one():
    ex = parse(ALL_CALLERS)
    pairs = {(d.from_fn, d.to_fn) for d in ex.facts.deps}
    assert pairs == {
        ("m.ml#A::a", "m.ml#B::c"),
        ("m.ml#A::x", "m.ml#B::c"),
        ("m.ml#A::b", "m.ml#B::c"),
    }


def test_cyclomatic_counts_decision_tokens():
    ex = parse("class A { fn f(a, b) { if (a) { } if (b && a) { } } }")
    assert ex.facts.functions[0].cyclomatic == 4


@pytest.mark.parametrize("body,expected", [
    ("", 1),
    ("while (x) { switch (x) { case 1: } }", 3),
    ("if (a && b || c) { }", 4),
    ("for (i) { } x = \"if while\"", 2),
    ("// if while for\n y = 1", 1),
])
def test_compute_cyclomatic(body, expected):
    toks = tokenize(SourceUnit("t.ml", body))
    assert compute_cyclomatic(toks) == expected


def test_compute_cyclomatic_accepts_plain_strings():
    assert compute_cyclomatic(["if", "(", "a", "||", "b", ")"]) == 3


def test_line_counts_skip_blank_and_comment_lines():
    src = """// header comment
class A {

  // explain f
  fn f() {
    x = 1

  }
}
"""
    ex = parse(src)
    assert ex.facts.classes[0].loc == 5
    assert ex.facts.functions[0].loc == 3


def test_self_call_resolves_to_parent():
    src = """
class Base { fn helper() { } }
class Child : Base {
  fn run() { self.helper() self.local() }
  fn local() { }
}
"""
    deps = {(d.from_fn, d.to_fn) for d in parse(src).facts.deps}
    assert deps == {
        ("m.ml#Child::run", "m.ml#Base::helper"),
        ("m.ml#Child::run", "m.ml#Child::local"),
    }


def test_override_shadows_parent():
    src = """
class Base { fn helper() { } }
class Child : Base { fn helper() { } fn run() { self.helper() } }
"""
    deps = {(d.from_fn, d.to_fn) for d in parse(src).facts.deps}
    assert deps == {("m.ml#Child::run", "m.ml#Child::helper")}


def test_inheritance_without_calls_has_no_dep():
    ex = parse("class Base { fn f() { } } class Child : Base { fn g() { } }")
    assert ex.facts.deps == ()


def test_repeated_call_sites_collapse():
    ex = parse("class A { fn f() { B.g() B.g() if (x) { B.g() } } } class B { fn g() { } }")
    assert ex.facts.deps == (DepRecord("m.ml#A::f", "m.ml#B::g"),)


def test_recursion_is_not_a_dep():
    ex = parse("class A { fn f() { self.f() A.f() } }")
    assert ex.facts.deps == ()


def test_unresolved_calls_are_reported():
    ex = parse("class A { fn f() { Nope.g() self.missing() A.absent() } }")
    reasons = [(u.target, u.reason) for u in ex.unresolved]
    assert reasons == [
        ("Nope.g", "unknown class"),
        ("self.missing", "unknown function"),
        ("A.absent", "unknown function"),
    ]
    assert ex.facts.deps == ()


def test_unknown_parent_is_reported():
    ex = parse("class A : Ghost { fn f() { } }")
    assert [u.reason for u in ex.unresolved] == ["unknown parent class"]


def test_chained_member_access_is_not_a_class_call():
    ex = parse("class A { fn f() { x.B.g() } } class B { fn g() { } }")
    assert ex.facts.deps == ()
    assert ex.unresolved == []


@pytest.mark.parametrize("src,line,fragment", [
    ("class A {\n fn f( {\n}", 2, "expected"),
    ("class A {\n fn f() {\n  if (x {\n }\n}\n}", 5, "mismatched"),
    ("class A {\n fn f() { }\n", 2, "unterminated class"),
    ("class {\n}", 1, "class name"),
    ("class A { x }", 1, "'fn' or '}'"),
    ("class A {\n fn f() { }\n fn f() { }\n}", 3, "duplicate function"),
    ("class A { fn f() {\n class B { } } }", 2, "unexpected 'class'"),
    ("class A { fn f() { x = 1 @ 2 } }", 1, "unexpected character"),
    ("class if { }", 1, "reserved word"),
])
def test_syntax_errors_carry_line_numbers(src, line, fragment):
    with pytest.raises(ExtractionError) as err:
        parse(src)
    diag = err.value.diagnostics[0]
    assert diag.line == line
    assert fragment in diag.message


def test_duplicate_class_names_both_files():
    units = [SourceUnit("a.ml", "class A { }"), SourceUnit("b.ml", "class A { }")]
    with pytest.raises(ExtractionError) as err:
        extract_units(units)
    msg = str(err.value)
    assert "a.ml" in msg and "b.ml" in msg


def test_inheritance_cycle_rejected():
    with pytest.raises(ExtractionError, match="cycle"):
        parse("class A : B { } class B : A { }")


def test_source_unit_path_rules():
    with pytest.raises(ValueError):
        SourceUnit("", "class A { }")
    with pytest.raises(ValueError):
        SourceUnit("dir\\a.ml", "class A { }")


def test_extract_empty_directory(tmp_path):
    ex = extract_tree(tmp_path)
    assert ex.facts.records() == []


def test_cross_file_dependency(tmp_path):
    (tmp_path / "A.ml").write_text("class A { fn a() { B.c() } }")
    (tmp_path / "B.ml").write_text("class B { fn c() { } }")
    (tmp_path / "notes.txt").write_text("class Ignored { }")
    ex = extract_tree(tmp_path, ".ml")
    assert [c.id for c in ex.facts.classes] == ["A.ml#A", "B.ml#B"]
    assert ex.facts.deps == (DepRecord("A.ml#A::a", "B.ml#B::c"),)


def test_all_file_errors_are_collected(tmp_path):
    (tmp_path / "a.ml").write_text("class A {")
    (tmp_path / "b.ml").write_text("class B { fn }")
    with pytest.raises(ExtractionError) as err:
        extract_tree(tmp_path)
    assert sorted(d.path for d in err.value.diagnostics) == ["a.ml", "b.ml"]


def test_extraction_is_deterministic(fixture6):
    first = dumps_facts(extract_tree(fixture6 / "src").facts)
    second = dumps_facts(extract_tree(fixture6 / "src").facts)
    assert first == second


def test_unit_order_does_not_matter():
    units = [SourceUnit("z.ml", "class Z { fn f() { A.g() } }"), SourceUnit("a.ml", "class A { fn g() { } }")]
    assert extract_units(units).records() == extract_units(units[::-1]).records()


def test_fixture_extraction_matches_oracle(fixture6, oracle6):
    ex = extract_tree(fixture6 / "src")
    for cid, row in oracle6["features"].items():
        fns = ex.facts.functions_of[cid]
        assert ex.facts.class_by_id[cid].loc == row["NumofLn"]
        assert len(fns) == row["NumofFn"]
    assert [f"{u.path}:{u.line} {u.target}" for u in ex.unresolved] == oracle6["unresolved"]


def test_invariants_on_fixture(fixture6):
    facts = extract_tree(fixture6 / "src").facts
    facts.validate()
    fn_ids = {f.id for f in facts.functions}
    assert all(d.from_fn in fn_ids and d.to_fn in fn_ids for d in facts.deps)
    assert len({(d.from_fn, d.to_fn) for d in facts.deps}) == len(facts.deps)
    assert all(f.loc >= 1 for f in facts.functions)
    assert all(c.loc >= 1 for c in facts.classes)
