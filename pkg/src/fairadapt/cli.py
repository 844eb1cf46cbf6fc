"""``fairadapt`` command-line front end.

Exit codes: 0 success, 1 validation or domain failure, 2 I/O failure.
Output is assembled in full before anything is written, so a failing
command never leaves a partial line behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from .dsl import Diagnostic, parse_model, parse_scenario
from .engine import AdaptationTrace, Engine, detect_conflicts

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2

_COLORS = {"FULFILLED": "32", "VIOLATED": "31", "CONFLICT_EXPLAINED": "33", "Applied": "32", "Failed": "31"}


class _Fail(Exception):
    def __init__(self, code: int, message: str = ""):
        super().__init__(message)
        self.code = code
        self.message = message


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _color_enabled(stream) -> bool:
    if os.environ.get("FAIRADAPT_COLOR") == "0":
        return False
    return hasattr(stream, "isatty") and stream.isatty()


class _Out:
    def __init__(self, color: bool):
        self.lines: list[str] = []
        self.color = color

    def __call__(self, line: str = "") -> None:
        self.lines.append(line)

    def paint(self, word: str) -> str:
        code = _COLORS.get(word)
        return f"\x1b[{code}m{word}\x1b[0m" if self.color and code else word

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise _Fail(EXIT_IO, f"fairadapt: cannot read {path}: {exc}") from exc


def _diag_lines(diags: Sequence[Diagnostic], fmt: str) -> list[str]:
    if fmt == "ndjson":
        return [
            _dumps(
                {
                    "severity": d.severity,
                    "code": d.code,
                    "message": d.message,
                    "file": d.span.file,
                    "line": d.span.line,
                    "column": d.span.column,
                }
            )
            for d in diags
        ]
    return [str(d) for d in diags]


def _load_bundle(path: str, err: list[str]):
    result = parse_model(_read(path), path)
    if not result.ok:
        err.extend(str(d) for d in result.diagnostics)
        raise _Fail(EXIT_DOMAIN)
    return result.value, result.diagnostics


# -- commands ---------------------------------------------------------------


def cmd_validate(args, out: _Out, err: list[str]) -> int:
    result = parse_model(_read(args.model), args.model)
    for line in _diag_lines(result.diagnostics, args.format):
        out(line)
    return EXIT_OK if result.ok else EXIT_DOMAIN


def cmd_analyze(args, out: _Out, err: list[str]) -> int:
    bundle, _ = _load_bundle(args.model, err)
    edges = detect_conflicts(bundle)
    if args.format == "ndjson":
        for e in edges:
            out(_dumps(e.to_json()))
        return EXIT_OK
    for e in edges:
        out(
            f"{e.fr_a} <-> {e.fr_b}  {e.severity.value}  shared [{', '.join(sorted(e.shared))}]"
            f"  overlap [{', '.join(sorted(e.stakeholder_overlap))}]"
        )
    out(f"{len(edges)} conflict edge{'' if len(edges) == 1 else 's'}")
    return EXIT_OK


def _event_label(event: dict) -> str:
    keys = " ".join(f"{k}={v}" for k, v in sorted(event["payload"].items()) if k != "text")
    return f"{event['kind']} {keys}".rstrip()


def _summarize(record: dict, out: _Out) -> None:
    t = record["time"]
    ev = record["event_outcome"]
    status = out.paint(ev["status"])
    reason = f" ({ev['reason']})" if "reason" in ev else ""
    out(f"#{record['iteration']} {t['day']} {t['clock']} {_event_label(record['event'])}: {status}{reason}")
    violated = [fr for fr, s in record["statuses"].items() if s == "VIOLATED"]
    if violated:
        out(f"  violated: {', '.join(violated)}")
    for p in record["plans"]:
        chosen = ", ".join(f"{o} (score {p['scores'][o]})" for o in p["chosen"]) or "nothing"
        line = f"  plan {p['target']}: {chosen}"
        if p["rejected"]:
            line += "; rejected " + ", ".join(f"{r['operation']} (score {r['score']})" for r in p["rejected"])
        out(line)
    if record["executed"]:
        acts = ", ".join(
            f"{o['subject']} {out.paint(o['status'])}" + (f" ({o['reason']})" if "reason" in o else "")
            for o in record["executed"]
        )
        out(f"  executed: {acts}")
    for fr, edges in record["explained"].items():
        by = ", ".join(e["with"] for e in edges)
        out(f"  {fr} {out.paint('CONFLICT_EXPLAINED')} by {by}")
    for msg in record["errors"]:
        out(f"  error: {msg}")


def cmd_run(args, out: _Out, err: list[str]) -> int:
    bundle, _ = _load_bundle(args.model, err)
    result = parse_scenario(_read(args.scenario), bundle, args.scenario)
    if not result.ok:
        err.extend(str(d) for d in result.diagnostics)
        return EXIT_DOMAIN
    scenario = result.value
    engine = Engine(bundle, scenario.world(bundle))
    for event in scenario:
        engine.step(event)
    trace = engine.trace
    if args.trace_out:
        try:
            Path(args.trace_out).write_text(trace.to_ndjson(), encoding="utf-8")
        except OSError as exc:
            raise _Fail(EXIT_IO, f"fairadapt: cannot write {args.trace_out}: {exc}") from exc
    if args.format == "ndjson":
        for record in trace:
            out(_dumps(record))
        return EXIT_OK
    for record in trace:
        _summarize(record, out)
    out(f"{len(trace)} iteration{'' if len(trace) == 1 else 's'}")
    return EXIT_OK


def explain(record: dict, fr: str, out: _Out) -> None:
    """Causal account of ``fr``'s status in one trace record."""
    status = record["statuses"][fr]
    t = record["time"]
    out(f"{fr} at iteration {record['iteration']} ({t['day']} {t['clock']}, {_event_label(record['event'])}): {out.paint(status)}")
    ops = set(record["operations_of"].get(fr, ()))
    evals = [e for e in record["evaluations"] if e["operation"] in ops]
    if not evals:
        out("  no rule bound this iteration")
    else:
        out("  rule evaluations:")
        for e in evals:
            binds = ", ".join(f"{k}={v}" for k, v in e["bindings"].items())
            out(f"    {e['operation']} = {str(e['result']).lower()} ({binds})")
    acts = [o for o in record["executed"] if o["subject"] in ops]
    if acts:
        out("  actions:")
        for o in acts:
            reason = f" ({o['reason']})" if "reason" in o else ""
            out(f"    {o['subject']} {out.paint(o['status'])}{reason}")
    for p in record["plans"]:
        rejected = [r for r in p["rejected"] if r["operation"] in ops]
        for r in rejected:
            out(f"  {r['operation']} passed over in plan for {p['target']}: {r['reason']}")
    for e in record["explained"].get(fr, ()):
        out(
            f"  {e['severity']} conflict with {e['with']} (priority {e['priority']}, own priority {e['own_priority']})"
            f" over [{', '.join(e['shared'])}], shared stakeholders [{', '.join(e['overlap'])}]"
        )
        out(f"  {e['with']} is FULFILLED and at least as authoritative, so the violation is explained")


def cmd_explain(args, out: _Out, err: list[str]) -> int:
    text = _read(args.trace)
    try:
        trace = AdaptationTrace.from_ndjson(text)
    except json.JSONDecodeError as exc:
        err.append(f"fairadapt: {args.trace} is not an ndjson trace: {exc}")
        return EXIT_DOMAIN
    record = next((r for r in trace if r.get("iteration") == args.iteration), None)
    if record is None:
        err.append(f"fairadapt: iteration {args.iteration} not in trace (has 1..{len(trace)})")
        return EXIT_DOMAIN
    if args.fr not in record["statuses"]:
        err.append(f"fairadapt: unknown requirement {args.fr!r}; available: {', '.join(sorted(record['statuses']))}")
        return EXIT_DOMAIN
    if args.format == "ndjson":
        ops = set(record["operations_of"].get(args.fr, ()))
        out(
            _dumps(
                {
                    "fr": args.fr,
                    "iteration": args.iteration,
                    "status": record["statuses"][args.fr],
                    "evaluations": [e for e in record["evaluations"] if e["operation"] in ops],
                    "executed": [o for o in record["executed"] if o["subject"] in ops],
                    "explained_by": record["explained"].get(args.fr, []),
                }
            )
        )
    else:
        explain(record, args.fr, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairadapt", description="Adaptive fairness requirements at runtime.")
    parser.add_argument("--seed", type=int, default=None, help="reserved; the engine is deterministic")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("human", "ndjson"), default="human")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a model file")
    p.add_argument("model")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("analyze", parents=[common], help="static conflict report")
    p.add_argument("model")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", parents=[common], help="run a scenario through the adaptation loop")
    p.add_argument("model")
    p.add_argument("scenario")
    p.add_argument("--trace-out", metavar="PATH")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("explain", parents=[common], help="explain one requirement's status from a trace")
    p.add_argument("trace")
    p.add_argument("fr")
    p.add_argument("iteration", type=int)
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = _Out(_color_enabled(sys.stdout))
    err: list[str] = []
    try:
        code = args.func(args, out, err)
    except _Fail as exc:
        code = exc.code
        if exc.message:
            err.append(exc.message)
        out.lines.clear()
    sys.stdout.write(out.text())
    if err:
        sys.stderr.write("".join(line + "\n" for line in err))
    return code


if __name__ == "__main__":
    sys.exit(main())
