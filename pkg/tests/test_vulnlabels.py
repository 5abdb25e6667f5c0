import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vulnwsn.extractor import extract_tree
from vulnwsn.facts import ClassRecord, CodeFacts
from vulnwsn.vulnlabels import (
    AdvisoryRecord,
    BugRecord,
    DiffDirectory,
    DiffError,
    LabelError,
    count_vulnerabilities,
    dumps_labels,
    load_labels,
    load_records,
    parse_unified_diff,
    resolve_classes,
    save_labels,
    to_labels,
)


def diff_for(*paths, deleted=()):
    parts = []
    for p in paths:
        parts.append(f"diff --git a/{p} b/{p}\n--- a/{p}\n+++ b/{p}\n@@ -1,2 +1,2 @@\n x\n-y\n+z\n")
    for p in deleted:
        parts.append(f"--- a/{p}\n+++ /dev/null\n@@ -1 +0,0 @@\n-gone\n")
    return "".join(parts)


def facts_with(files):
    """One class per (file, name) pair."""
    return CodeFacts([ClassRecord(f"{f}#{n}", n, f, 1) for f, n in files], [])


FACTS = facts_with([("a.ml", "C"), ("a.ml", "C2"), ("b.ml", "D"), ("c.ml", "E")])


def test_single_section():
    assert parse_unified_diff(diff_for("dom/x.cpp")) == {"dom/x.cpp"}


def test_two_sections_and_deletion():
    assert parse_unified_diff(diff_for("x.cpp", "y.cpp", deleted=["z.cpp"])) == {"x.cpp", "y.cpp"}


def test_duplicate_sections_are_deduplicated():
    assert parse_unified_diff(diff_for("x.cpp", "x.cpp")) == {"x.cpp"}


def test_timestamps_and_no_newline_marker():
    text = "--- a/x.c\t2015-01-01\n+++ b/x.c\t2015-01-02\n@@ -1 +1 @@\n-a\n\\ No newline at end of file\n+b\n"
    assert parse_unified_diff(text) == {"x.c"}


def test_hunk_body_lines_that_look_like_headers():
    # a removed line starting with "-- " must not be read as a file header
    text = "--- a/x.c\n+++ b/x.c\n@@ -1,2 +1,1 @@\n--- not a header\n keep\n"
    assert parse_unified_diff(text) == {"x.c"}


@pytest.mark.parametrize("text,line", [
    ("--- a/x.c\n@@ -1 +1 @@\n", 1),
    ("junk\n+++ b/x.c\n", 2),
    ("--- a/x.c\n+++ b/x.c\n@@ bogus @@\n", 3),
    ("--- a/x.c\n+++ b/x.c\n@@ -1,3 +1,3 @@\n a\n", 3),
    ("--- a/x.c\n+++ b/x.c\n@@ -1 +1 @@\n-a\n+b\n+c\n", 6),
    ("--- a/x.c\n+++ \n", 2),
])
def test_malformed_diffs_carry_line_numbers(text, line):
    with pytest.raises(DiffError) as err:
        parse_unified_diff(text)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_resolve_classes():
    assert resolve_classes({"a.ml"}, FACTS).classes == {"a.ml#C", "a.ml#C2"}
    res = resolve_classes({"nope.ml"}, FACTS)
    assert res.classes == set() and res.unmatched == ["nope.ml"]
    assert resolve_classes({"a.ml", "b.ml"}, FACTS).classes == {"a.ml#C", "a.ml#C2", "b.ml#D"}


def test_single_chain():
    t = count_vulnerabilities([AdvisoryRecord("A1", ("1",))], [BugRecord("1", ("1.diff",))], {"1.diff": diff_for("b.ml")}, FACTS)
    assert t.counts == {"a.ml#C": 0, "a.ml#C2": 0, "b.ml#D": 1, "c.ml#E": 0}


def test_shared_bug_counts_once_per_advisory():
    advs = [AdvisoryRecord("A1", ("1",)), AdvisoryRecord("A2", ("1",))]
    t = count_vulnerabilities(advs, [BugRecord("1", ("1.diff",))], {"1.diff": diff_for("b.ml")}, FACTS)
    assert t.counts["b.ml#D"] == 2


def test_bug_with_two_diffs_counts_once():
    store = {"p1": diff_for("b.ml"), "p2": diff_for("b.ml", "c.ml")}
    t = count_vulnerabilities([AdvisoryRecord("A1", ("1",))], [BugRecord("1", ("p1", "p2"))], store, FACTS)
    assert t.counts["b.ml#D"] == 1 and t.counts["c.ml#E"] == 1


def test_unmatched_paths_warn():
    store = {"p": diff_for("b.ml", "vendor/z.c")}
    t = count_vulnerabilities([AdvisoryRecord("A1", ("1",))], {"1": BugRecord("1", ("p",))}, store, FACTS)
    assert len(t.warnings) == 1 and "vendor/z.c" in t.warnings[0] and "A1" in t.warnings[0]


def test_dangling_bug_names_chain():
    with pytest.raises(LabelError, match="advisory A1 -> bug 9"):
        count_vulnerabilities([AdvisoryRecord("A1", ("9",))], [], {}, FACTS)


def test_dangling_diff_names_chain():
    with pytest.raises(LabelError, match="advisory A1 -> bug 1 -> diff missing.diff"):
        count_vulnerabilities([AdvisoryRecord("A1", ("1",))], [BugRecord("1", ("missing.diff",))], {}, FACTS)


def test_malformed_diff_names_chain():
    with pytest.raises(LabelError, match="advisory A1 -> bug 1 -> diff p: line 1"):
        count_vulnerabilities([AdvisoryRecord("A1", ("1",))], [BugRecord("1", ("p",))], {"p": "--- a/x\n"}, FACTS)


def test_advisory_needs_bugs():
    with pytest.raises(LabelError):
        AdvisoryRecord("A1", ())


def test_to_labels():
    facts = facts_with([("f", "C"), ("f", "D"), ("f", "E")])
    assert to_labels({"f#C": 2, "f#D": 0}, facts) == {"f#C": 1, "f#D": 0, "f#E": 0}
    assert to_labels({}, facts) == {"f#C": 0, "f#D": 0, "f#E": 0}


def test_six_of_sixty():
    facts = facts_with([(f"m{i:02d}.ml", f"K{i:02d}") for i in range(60)])
    hit = [3, 11, 17, 29, 42, 58]
    store = {f"d{i}": diff_for(f"m{i:02d}.ml") for i in hit}
    bugs = [BugRecord(f"b{i}", (f"d{i}",)) for i in hit]
    advs = [AdvisoryRecord("A1", ("b3", "b11", "b17")), AdvisoryRecord("A2", ("b29", "b42", "b58", "b3"))]
    labels = to_labels(count_vulnerabilities(advs, bugs, store, facts).counts, facts)
    assert sum(labels.values()) == 6
    assert len(labels) == 60


def test_fixture_counts(fixture6, oracle6):
    facts = extract_tree(fixture6 / "src").facts
    rec = fixture6 / "records"
    t = count_vulnerabilities(
        load_records(rec / "advisories.jsonl", "advisory"),
        load_records(rec / "bugs.jsonl", "bug"),
        DiffDirectory(rec / "diffs"),
        facts,
    )
    assert t.counts == oracle6["vuln_counts"]


# random record universes for the property tests
def _universe(seed):
    rnd = random.Random(seed)
    files = [f"f{i}.ml" for i in range(6)]
    facts = facts_with([(f, n) for f in files for n in ("P", "Q") if rnd.random() < 0.7] or [("f0.ml", "P")])
    store = {f"d{i}": diff_for(*rnd.sample(files + ["x.ml"], rnd.randint(1, 3))) for i in range(6)}
    bugs = [BugRecord(f"b{i}", tuple(rnd.sample(sorted(store), rnd.randint(1, 2)))) for i in range(5)]
    advs = [AdvisoryRecord(f"a{i}", tuple(rnd.sample([b.bug_id for b in bugs], rnd.randint(1, 3)))) for i in range(4)]
    return rnd, facts, store, bugs, advs


def _triples(advs, bugs, store, facts):
    bugs = {b.bug_id: b for b in bugs}
    out = set()
    for a in advs:
        for b in a.bug_ids:
            for d in bugs[b].diff_paths:
                for cid in resolve_classes(parse_unified_diff(store[d]), facts).classes:
                    out.add((a.advisory_id, b, cid))
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_sum_equals_incidence_triples(seed):
    _, facts, store, bugs, advs = _universe(seed)
    t = count_vulnerabilities(advs, bugs, store, facts)
    assert sum(t.counts.values()) == len(_triples(advs, bugs, store, facts))
    assert set(t.counts) == {c.id for c in facts.classes}
    assert all(v >= 0 for v in t.counts.values())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_adding_an_advisory_is_monotone(seed):
    rnd, facts, store, bugs, advs = _universe(seed)
    before = count_vulnerabilities(advs[:-1], bugs, store, facts).counts
    after = count_vulnerabilities(advs, bugs, store, facts).counts
    assert all(after[c] >= before[c] for c in before)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_record_order_does_not_matter(seed):
    rnd, facts, store, bugs, advs = _universe(seed)
    t1 = count_vulnerabilities(advs, bugs, store, facts)
    rnd.shuffle(advs)
    rnd.shuffle(bugs)
    t2 = count_vulnerabilities(advs, bugs, store, facts)
    assert t1.counts == t2.counts
    assert sorted(t1.warnings) == sorted(t2.warnings)


def test_load_records_errors(tmp_path):
    p = tmp_path / "a.jsonl"
    p.write_text('{"kind":"advisory","id":"A","bugs":["1"]}\n{"kind":"advisory","id":"A","bugs":["2"]}\n')
    with pytest.raises(LabelError, match="line 2: duplicate"):
        load_records(p, "advisory")
    p.write_text('{"kind":"bug","id":"1","diffs":["x"]}\n')
    with pytest.raises(LabelError, match="line 1"):
        load_records(p, "advisory")
    p.write_text('{"kind":"advisory","id":"A","bugs":[]}\n')
    with pytest.raises(LabelError, match="no bugs"):
        load_records(p, "advisory")
    p.write_text("{oops\n")
    with pytest.raises(LabelError, match="malformed JSON"):
        load_records(p, "bug")


def test_diff_directory_refuses_escape(tmp_path):
    (tmp_path / "d").mkdir()
    (tmp_path / "secret").write_text("x")
    store = DiffDirectory(tmp_path / "d")
    with pytest.raises(KeyError):
        store["../secret"]
    with pytest.raises(FileNotFoundError):
        DiffDirectory(tmp_path / "missing")


def test_labels_csv_round_trip(tmp_path):
    t = count_vulnerabilities([AdvisoryRecord("A1", ("1",))], [BugRecord("1", ("p",))], {"p": diff_for("a.ml")}, FACTS)
    text = dumps_labels(t, FACTS)
    assert text.splitlines() == [
        "class_id,vuln_count,label",
        "a.ml#C,1,1",
        "a.ml#C2,1,1",
        "b.ml#D,0,0",
        "c.ml#E,0,0",
    ]
    p = tmp_path / "l.csv"
    save_labels(t, FACTS, p)
    assert load_labels(p)["a.ml#C"] == (1, 1)
    p.write_text("class_id,vuln_count,label\nx,1,2\n")
    with pytest.raises(LabelError, match="line 2"):
        load_labels(p)
