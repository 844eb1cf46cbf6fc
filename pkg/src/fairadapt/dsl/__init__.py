"""Text formats: ``.frm`` model files and ``.scn`` scenario timelines."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from ..model import ModelBundle, empty_bundle
from .build import build_bundle
from .diagnostics import Diagnostic, DiagnosticError, SourceSpan, warning
from .lexer import tokenize
from .serialize import serialize
from .syntax import DECL_KIND, Decl, Parser, RequirementDecl

__all__ = [
    "Diagnostic",
    "DiagnosticError",
    "ParseResult",
    "SourceSpan",
    "load_model",
    "merge_fragment",
    "parse_model",
    "parse_scenario",
    "retire_requirement",
    "Scenario",
    "serialize",
]


@dataclass(frozen=True)
class ParseResult:
    """Outcome of parsing: a value when there are no errors, else None."""

    value: object
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.value is not None

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.is_error]


def parse_decls(text: str, file: str = "<input>") -> tuple[list[Decl], list[Diagnostic]]:
    tokens, diags = tokenize(text, file)
    parser = Parser(tokens)
    decls = parser.parse_decls()
    return decls, diags + parser.diags


def parse_model(text: str, file: str = "<input>") -> ParseResult:
    """Parse and validate a model file.

    On success ``value`` is a ModelBundle (possibly with warnings); on failure
    it is None and ``diagnostics`` holds at least one error.
    """
    decls, diags = parse_decls(text, file)
    if any(d.is_error for d in diags):
        return ParseResult(None, diags)
    if not decls:
        eof = SourceSpan(file, 1, 1, 0, 0)
        return ParseResult(empty_bundle(), [warning("W001", "no declarations", eof)])
    bundle, more = build_bundle(decls)
    return ParseResult(bundle, diags + more)


def load_model(path: str | Path) -> ModelBundle:
    """Read and parse a model file, raising DiagnosticError on errors."""
    path = Path(path)
    result = parse_model(path.read_text(encoding="utf-8"), str(path))
    if not result.ok:
        raise DiagnosticError(result.errors)
    return result.value


def decls_of(bundle: ModelBundle) -> tuple[Decl, ...]:
    if bundle.decls:
        return bundle.decls
    return tuple(parse_decls(serialize(bundle), "<canonical>")[0])


def _key(d: Decl) -> tuple[str, str]:
    return DECL_KIND[type(d)], d.id.text


def merge_decls(base: tuple[Decl, ...], fragment: tuple[Decl, ...]) -> list[Decl]:
    """Declarations of ``fragment`` replace same-kind, same-id ones in ``base``."""
    incoming = {_key(d): d for d in fragment}
    merged = [incoming.pop(_key(d), d) for d in base]
    merged.extend(d for d in fragment if _key(d) in incoming)
    return merged


def merge_fragment(bundle: ModelBundle, fragment: tuple[Decl, ...]) -> ParseResult:
    """New model snapshot with an injected fragment folded in."""
    merged, diags = build_bundle(merge_decls(decls_of(bundle), fragment))
    return ParseResult(merged, diags)


def retire_decls(base: tuple[Decl, ...], fr_id: str) -> list[Decl] | None:
    reqs = {d.id.text: d for d in base if isinstance(d, RequirementDecl)}
    if fr_id not in reqs:
        return None
    removed, ofrs, stack = set(), set(), [fr_id]
    while stack:
        cur = reqs.get(stack.pop())
        if cur is None or cur.id.text in removed:
            continue
        removed.add(cur.id.text)
        if cur.decomposition == "LEAF":
            ofrs.add(cur.children[0].text)
        else:
            stack.extend(c.text for c in cur.children)
    out = []
    for d in base:
        kind, did = _key(d)
        if kind == "requirement" and did in removed:
            continue
        if kind == "operation" and d.ofr.text in ofrs:
            continue
        if kind == "requirement" and d.decomposition != "LEAF":
            kept = tuple(c for c in d.children if c.text not in removed)
            if len(kept) != len(d.children):
                d = replace(d, children=kept)
        out.append(d)
    return out


def retire_requirement(bundle: ModelBundle, fr_id: str) -> ParseResult:
    """Snapshot without ``fr_id`` and its subtree."""
    decls = retire_decls(decls_of(bundle), fr_id)
    if decls is None:
        return ParseResult(None, [])
    merged, diags = build_bundle(decls)
    return ParseResult(merged, diags)


from .scenario import Scenario, parse_scenario  # noqa: E402
