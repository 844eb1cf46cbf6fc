from __future__ import annotations

import random
import re

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from _gen import random_model
from fairadapt import data
from fairadapt.dsl import (
    DiagnosticError,
    load_model,
    merge_fragment,
    parse_decls,
    parse_model,
    retire_requirement,
    serialize,
)
from fairadapt.dsl.serialize import HEADER
from fairadapt.model import Decomposition

SHOP = data.read(data.FULL_MODEL)

PRELUDE = """\
stakeholder S kind = group
resource Shopper { age: integer; status: enum(active, gone); }
"""


def _codes(result):
    return [d.code for d in result.diagnostics]


def _split_decls(text: str) -> list[str]:
    """Top-level declarations of a model file, comments dropped."""
    lines = [ln for ln in text.splitlines() if not ln.lstrip().startswith("#")]
    blocks = re.split(r"\n(?=stakeholder |resource |requirement |operation )", "\n".join(lines).strip())
    return [b.strip() for b in blocks if b.strip()]


# -- examples -------------------------------------------------------------------


def test_bundled_model_inventory():
    result = parse_model(SHOP, "supermarket.frm")
    assert result.ok and result.diagnostics == []
    b = result.value
    assert {"FR0", "FR1", "FR2", "FR3"} <= set(b.frm.nodes)
    assert {"OR1_1", "OR1_2", "OR2_1", "OR3_1"} <= set(b.opm.operations)
    assert b.frm.nodes["FR1"].decomposition is Decomposition.OR
    assert b.frm.nodes["FR3"].priority == 0
    assert b.frm.nodes["FR2"].priority == 10


def test_empty_file_warns():
    result = parse_model("", "empty.frm")
    assert result.ok
    assert [(d.severity, d.code, d.message) for d in result.diagnostics] == [("warning", "W001", "no declarations")]
    assert result.value.frm.nodes == {}
    assert serialize(result.value) == HEADER


def test_comment_only_file_is_empty():
    assert _codes(parse_model("# nothing here\n")) == ["W001"]


def test_unknown_type_span_covers_misspelling():
    src = PRELUDE + """
requirement A "a" specified_by = S affects = [S] leaf OA
operation P for OA {
  rule: Shoper.age < 65;
  action: redirect_out() writes [Shopper];
}
"""
    result = parse_model(src, "m.frm")
    assert not result.ok
    assert _codes(result) == ["E021"]
    span = result.errors[0].span
    assert span.text_in(src) == "Shoper"
    assert (span.line, span.column) == (6, 9)
    assert str(result.errors[0]).startswith("m.frm:6:9: error E021:")


@pytest.mark.parametrize(
    "body, code, culprit",
    [
        ('requirement A "a" specified_by = Nobody affects = [S] leaf OA', "E020", "Nobody"),
        ('requirement A "a" specified_by = S affects = [S] leaf OA\n'
         "operation P for OA { rule: Shopper.agee < 3; action: redirect_out() writes [Shopper]; }", "E022", "agee"),
        ('requirement A "a" specified_by = S affects = [S] leaf OA\n'
         "operation P for OA { rule: Shopper.age < 3; action: redirect_out() writes [Shoppr]; }", "E021", "Shoppr"),
        ('requirement A "a" specified_by = S affects = [S] decompose AND { B }', "E025", "B"),
    ],
)
def test_resolution_errors_cover_identifier(body, code, culprit):
    src = PRELUDE + body + "\n"
    result = parse_model(src)
    assert code in _codes(result)
    d = next(d for d in result.errors if d.code == code)
    assert d.span.text_in(src) == culprit


@pytest.mark.parametrize(
    "body, code",
    [
        ("resource X { a integer; }", "E001"),
        ("resource Shopper { a: integer; }", "E005"),
        ("resource X { a: integer; a: boolean; }", "E006"),
        ("resource X { a: float; }", "E011"),
        ("stakeholder Q kind = alien", "E009"),
        ('requirement A "a" specified_by = S affects = [S] leaf OA\n'
         "operation P for OA { rule: Shopper.age < 3; action: explode() writes [Shopper]; }", "E007"),
        ('requirement A "a" specified_by = S affects = [S] leaf OA\n'
         "operation P for OA { rule: Shopper.age < 3; action: cap_basket() writes [Shopper]; }", "E008"),
        ('requirement A "a" specified_by = S affects = [S] leaf OA\n'
         "operation P for OA { rule: Shopper.status < active; action: redirect_out() writes [Shopper]; }", "E024"),
        ('requirement A "a" specified_by = S affects = [S] leaf OA\n'
         "operation P for OA { rule: Shopper.status == absent; action: redirect_out() writes [Shopper]; }", "E027"),
        ('requirement A "a" specified_by = S affects = [S] leaf OA\n'
         "operation P for OA { rule: Shopper.age < 3; action: set_field(Shopper.age, 1) writes []; }", "E029"),
        ('requirement A "a" specified_by = S affects = [S] leaf OA resources [Shopper]\n'
         "operation P for OA { rule: Shopper.age < 3; action: block_checkout() writes []; }\n"
         "resource Basket { n: integer; }\n"
         'requirement B "b" specified_by = S affects = [S] leaf OB resources [Basket]\n'
         "operation Q for OB { rule: Shopper.age < 3; action: block_checkout() writes []; }", "E040"),
        ('requirement A "a" specified_by = S affects = [S] decompose AND { B }\n'
         'requirement B "b" specified_by = S affects = [S] decompose OR { A }', "E041"),
        ('requirement A "a" specified_by = S affects = [S] leaf OA', "E042"),
        ('requirement A "a" specified_by = S affects = [S] decompose AND { C }\n'
         'requirement B "b" specified_by = S affects = [S] decompose OR { C }\n'
         'requirement C "c" specified_by = S affects = [S] leaf OC\n'
         "operation P for OC { rule: Shopper.age < 3; action: redirect_out() writes [Shopper]; }", "E043"),
        ('requirement A "a" specified_by = S affects = [S] leaf OA\n'
         'requirement B "b" specified_by = S affects = [S] leaf OA\n'
         "operation P for OA { rule: Shopper.age < 3; action: redirect_out() writes [Shopper]; }", "E044"),
        ('requirement A "a', "E002"),
        ("operation P for OA { rule: Shopper.age < 25:00; }", "E003"),
        ("stakeholder Q @ kind = group", "E004"),
    ],
)
def test_error_codes(body, code):
    src = PRELUDE + body + "\n"
    result = parse_model(src)
    assert not result.ok
    assert code in _codes(result), result.diagnostics
    assert all(d.span.within(src) for d in result.diagnostics)


def test_load_model_raises_with_diagnostics(tmp_path):
    bad = tmp_path / "bad.frm"
    bad.write_text("resource X { a integer; }\n")
    with pytest.raises(DiagnosticError) as exc:
        load_model(bad)
    assert exc.value.diagnostics[0].code == "E001"


def test_parsing_is_deterministic():
    src = PRELUDE + "requirement A \"a\" specified_by = S affects = [S] leaf OA\n"
    assert parse_model(src).diagnostics == parse_model(src).diagnostics
    assert parse_model(SHOP).value == parse_model(SHOP).value


# -- serialization --------------------------------------------------------------


def test_bundled_model_round_trip():
    b = parse_model(SHOP).value
    text = serialize(b)
    assert text.startswith(HEADER)
    again = parse_model(text)
    assert again.ok and again.value == b
    assert serialize(again.value) == text


def test_scrambled_declarations_serialize_canonically():
    blocks = _split_decls(SHOP)
    canonical = serialize(parse_model(SHOP).value)
    rng = random.Random(7)
    for _ in range(10):
        rng.shuffle(blocks)
        scrambled = parse_model("\n\n".join(blocks) + "\n")
        assert scrambled.ok, scrambled.diagnostics
        assert serialize(scrambled.value) == canonical
    heads = [ln.split()[0] + " " + ln.split()[1] for ln in canonical.splitlines() if ln and ln[0].isalpha()]
    kinds = [h.split()[0] for h in heads]
    assert kinds == sorted(kinds, key=["stakeholder", "resource", "requirement", "operation"].index)
    for kind in set(kinds):
        ids = [h.split()[1] for h in heads if h.startswith(kind + " ")]
        assert ids == sorted(ids)


@pytest.mark.parametrize("seed", range(500))
def test_round_trip_fuzzed(seed):
    b = random_model(seed).bundle
    text = serialize(b)
    again = parse_model(text, "canonical.frm")
    assert again.ok, again.diagnostics
    assert again.value == b
    assert serialize(again.value) == text


# -- error locality under arbitrary damage ---------------------------------------


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(
    seed=st.integers(0, 400),
    edits=st.lists(
        st.tuples(st.floats(0, 1, exclude_max=True), st.sampled_from(["del", "ins", "dup"]), st.text(min_size=1, max_size=3)),
        min_size=1,
        max_size=4,
    ),
)
def test_diagnostic_spans_resolve_inside_damaged_input(seed, edits):
    src = random_model(seed).source
    for pos, op, txt in edits:
        i = int(pos * len(src))
        if op == "del":
            src = src[:i] + src[i + len(txt) :]
        elif op == "ins":
            src = src[:i] + txt + src[i:]
        else:
            src = src[:i] + src[i : i + 12] + src[i:]
    result = parse_model(src, "damaged.frm")
    assert result.ok != bool(result.errors)
    for d in result.diagnostics:
        assert d.message
        assert d.span.within(src), (d, src)


# -- snapshot edits ---------------------------------------------------------------


def test_merge_fragment_replaces_and_adds():
    base = parse_model(data.read(data.INITIAL_MODEL)).value
    fragment, diags = parse_decls(
        'requirement FR2 "cap" specified_by = Supermarket affects = [Shoppers] leaf OFR2_1\n'
        "operation OR2_1 for OFR2_1 { rule: count(Order.items) > 20; action: cap_basket(20) writes [Order]; }\n"
    )
    assert diags == []
    merged = merge_fragment(base, tuple(fragment))
    assert merged.ok
    assert set(merged.value.frm.nodes) == {"FairAccess", "FR0", "FR2"}
    assert "OR2_1" in merged.value.opm.operations
    # the base snapshot is untouched
    assert "FR2" not in base.frm.nodes


def test_retire_requirement_removes_subtree_and_operations():
    full = parse_model(SHOP).value
    result = retire_requirement(full, "FR1")
    assert result.ok
    b = result.value
    assert not {"FR1", "FR1_1", "FR1_2"} & set(b.frm.nodes)
    assert not {"OR1_1", "OR1_2"} & set(b.opm.operations)
    assert b.frm.nodes["FairAccess"].children == ("FR0",)
    assert not retire_requirement(full, "Nope").ok
