from __future__ import annotations

import json
import random
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from fairadapt import data
from fairadapt.cli import main

GOLDEN = Path(__file__).parent / "golden" / "pandemic.ndjson"
FULL = str(data.path(data.FULL_MODEL))
INITIAL = str(data.path(data.INITIAL_MODEL))
SCENARIO = str(data.path(data.SCENARIO))


@pytest.fixture(autouse=True)
def _no_color(monkeypatch):
    monkeypatch.setenv("FAIRADAPT_COLOR", "0")


def cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _ndjson(text):
    return [json.loads(line) for line in text.splitlines()]


# -- validate ---------------------------------------------------------------------


def test_validate_bundled_model(capsys):
    assert cli(capsys, "validate", FULL) == (0, "", "")


def test_validate_unknown_type(capsys, tmp_path):
    bad = tmp_path / "bad.frm"
    bad.write_text(data.read(data.FULL_MODEL).replace("rule: Shopper.status == active", "rule: Shoper.status == active"))
    code, out, _ = cli(capsys, "validate", str(bad))
    assert code == 1
    lines = out.splitlines()
    assert len(lines) == 1
    assert lines[0].startswith(f"{bad}:") and " error E021: " in lines[0]


def test_validate_ndjson(capsys, tmp_path):
    bad = tmp_path / "bad.frm"
    bad.write_text("resource X { a integer; }\n")
    code, out, _ = cli(capsys, "validate", "--format", "ndjson", str(bad))
    assert code == 1
    (record,) = _ndjson(out)
    assert record["code"] == "E001" and record["line"] == 1


def test_validate_unreadable(capsys, tmp_path):
    code, out, err = cli(capsys, "validate", str(tmp_path / "missing.frm"))
    assert (code, out) == (2, "")
    assert "cannot read" in err


# -- analyze ----------------------------------------------------------------------


def test_analyze_bundled_model(capsys):
    code, out, _ = cli(capsys, "analyze", "--format", "ndjson", FULL)
    assert code == 0
    edges = {tuple(r["frs"]): r for r in _ndjson(out)}
    for pair in (("FR1", "FR3"), ("FR2", "FR3")):
        assert edges[pair]["severity"] == "Likely"
        assert edges[pair]["shared"] == ["Order"]
        assert edges[pair]["overlap"] == ["Shoppers"]


def test_analyze_human(capsys):
    code, out, _ = cli(capsys, "analyze", FULL)
    assert code == 0
    assert "FR1 <-> FR3  Likely  shared [Order]  overlap [Shoppers]" in out.splitlines()
    assert out.splitlines()[-1].endswith("conflict edges")


def test_analyze_single_requirement(capsys, tmp_path):
    one = tmp_path / "one.frm"
    one.write_text(
        "stakeholder S kind = group\nresource T { x: integer; }\n"
        'requirement A "a" specified_by = S affects = [S] leaf OA\n'
        "operation P for OA { rule: T.x > 1; action: set_field(T.x, 0) writes [T]; }\n"
    )
    assert cli(capsys, "analyze", "--format", "ndjson", str(one)) == (0, "", "")
    assert cli(capsys, "analyze", str(one))[1] == "0 conflict edges\n"


def test_analyze_independent_of_declaration_order(capsys, tmp_path):
    text = data.read(data.FULL_MODEL)
    blocks = [b for b in text.split("\n\n") if b.strip() and not b.lstrip().startswith("#")]
    random.Random(3).shuffle(blocks)
    shuffled = tmp_path / "shuffled.frm"
    shuffled.write_text("\n\n".join(blocks) + "\n")
    _, a, _ = cli(capsys, "analyze", "--format", "ndjson", FULL)
    _, b, _ = cli(capsys, "analyze", "--format", "ndjson", str(shuffled))
    assert a == b and a


def test_analyze_invalid_model(capsys, tmp_path):
    bad = tmp_path / "bad.frm"
    bad.write_text("resource X { a integer; }\n")
    code, out, err = cli(capsys, "analyze", str(bad))
    assert (code, out) == (1, "") and "E001" in err


# -- run ------------------------------------------------------------------------------


def test_run_bundled_scenario(capsys, tmp_path):
    trace = tmp_path / "trace.ndjson"
    code, out, _ = cli(capsys, "run", INITIAL, SCENARIO, "--trace-out", str(trace))
    assert code == 0
    lines = out.splitlines()
    assert lines[-1] == "23 iterations"
    beat = lines[lines.index(next(ln for ln in lines if ln.startswith("#17 "))) + 1]
    assert beat.startswith("  plan FairAccess:") and "OR1_2" in beat.split(";")[0]
    assert "rejected OR1_1 (score 2)" in beat
    assert trace.read_bytes() == GOLDEN.read_bytes()


def test_run_is_byte_identical(capsys, tmp_path):
    a, b = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
    cli(capsys, "run", INITIAL, SCENARIO, "--trace-out", str(a))
    cli(capsys, "--seed", "42", "run", INITIAL, SCENARIO, "--trace-out", str(b))
    assert a.read_bytes() == b.read_bytes()


def test_run_ndjson_to_stdout(capsys):
    code, out, _ = cli(capsys, "run", "--format", "ndjson", INITIAL, SCENARIO)
    assert code == 0
    assert out.encode() == GOLDEN.read_bytes()


def test_run_empty_scenario(capsys, tmp_path):
    empty = tmp_path / "empty.scn"
    empty.write_text("")
    assert cli(capsys, "run", FULL, str(empty)) == (0, "0 iterations\n", "")


def test_run_invalid_scenario(capsys, tmp_path):
    bad = tmp_path / "bad.scn"
    bad.write_text("at mon 10:00 tick\nat mon 09:00 tick\n")
    code, out, err = cli(capsys, "run", FULL, str(bad))
    assert (code, out) == (1, "") and "E060" in err


def test_run_missing_scenario(capsys, tmp_path):
    code, out, _ = cli(capsys, "run", FULL, str(tmp_path / "nope.scn"))
    assert (code, out) == (2, "")


def test_run_unwritable_trace(capsys, tmp_path):
    code, out, err = cli(capsys, "run", INITIAL, SCENARIO, "--trace-out", str(tmp_path / "no" / "dir" / "t.ndjson"))
    assert (code, out) == (2, "") and "cannot write" in err


# -- explain --------------------------------------------------------------------------------


def test_explain_conflict_explained(capsys):
    code, out, _ = cli(capsys, "explain", str(GOLDEN), "FR2", "21")
    assert code == 0
    assert out.splitlines()[0].endswith(": CONFLICT_EXPLAINED")
    assert "OR2_1 = true" in out
    assert "OR2_1 Failed (exempt)" in out
    assert "Likely conflict with FR3 (priority 0, own priority 10) over [Order]" in out


def test_explain_ndjson(capsys):
    code, out, _ = cli(capsys, "explain", "--format", "ndjson", str(GOLDEN), "FR2", "21")
    (record,) = _ndjson(out)
    assert record["status"] == "CONFLICT_EXPLAINED"
    assert any(e["with"] == "FR3" and e["priority"] == 0 for e in record["explained_by"])


def test_explain_idle(capsys):
    code, out, _ = cli(capsys, "explain", str(GOLDEN), "FR1", "4")
    assert code == 0
    assert out.splitlines()[0].endswith(": IDLE")
    assert "no rule bound this iteration" in out


def test_explain_unknown_fr(capsys):
    code, out, err = cli(capsys, "explain", str(GOLDEN), "FR9", "21")
    assert (code, out) == (1, "")
    assert "available: FR0, FR1, FR1_1, FR1_2, FR2, FR3, FairAccess" in err


def test_explain_unknown_iteration(capsys):
    code, _, err = cli(capsys, "explain", str(GOLDEN), "FR2", "99")
    assert code == 1 and "1..23" in err


def test_explain_not_a_trace(capsys, tmp_path):
    junk = tmp_path / "junk.ndjson"
    junk.write_text("{not json\n")
    assert cli(capsys, "explain", str(junk), "FR2", "1")[0] == 1


# -- presentation ---------------------------------------------------------------------------


def test_color_only_on_terminals(capsys, monkeypatch):
    monkeypatch.setattr(sys.stdout, "isatty", lambda: True, raising=False)
    monkeypatch.delenv("FAIRADAPT_COLOR")
    _, colored, _ = cli(capsys, "explain", str(GOLDEN), "FR2", "21")
    monkeypatch.setenv("FAIRADAPT_COLOR", "0")
    _, plain, _ = cli(capsys, "explain", str(GOLDEN), "FR2", "21")
    assert "\x1b[" in colored and "\x1b[" not in plain


def test_executable_entry_point(tmp_path):
    exe = shutil.which("fairadapt")
    argv = [exe] if exe else [sys.executable, "-m", "fairadapt.cli"]
    proc = subprocess.run([*argv, "validate", str(tmp_path / "missing.frm")], capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stdout == ""
