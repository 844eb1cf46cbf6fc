"""Recursive-descent parser for model declarations.

Grammar (``#`` starts a comment)::

    model        := { stakeholder | resource | requirement | operation }
    stakeholder  := "stakeholder" ID [STRING] "kind" "=" KIND
    resource     := "resource" ID "{" { ID ":" kind ";" } "}"
    kind         := "integer" | "boolean" | "text" | "time"
                  | "enum" "(" ID {"," ID} ")" | "ref" "(" ID ")" | "set" "(" ID ")"
    requirement  := "requirement" ID STRING "specified_by" "=" ID
                    "affects" "=" "[" ID {"," ID} "]" ["priority" "=" INT]
                    ( "decompose" ("AND"|"OR") "{" ID {"," ID} "}"
                    | "leaf" ID ["resources" "[" [ID {"," ID}] "]"] )
    operation    := "operation" ID "for" ID "{"
                      "rule" ":" condition {"and" condition} ";"
                      "action" ":" ID "(" [arg {"," arg}] ")" "writes" "[" [ID {"," ID}] "]" ";"
                    "}"
    condition    := operand CMP operand
    operand      := path | "count" "(" path ")" | INT | TIME | STRING | "true" | "false" | ID
    path         := ID "." ID {"." ID}
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .diagnostics import Diagnostic, SourceSpan, error
from .lexer import CMP, EOF, ID, INT, PUNCT, STRING, TIME, Token

TOP_LEVEL = ("stakeholder", "resource", "requirement", "operation")


@dataclass(frozen=True)
class Name:
    text: str
    span: SourceSpan


@dataclass(frozen=True)
class PathAst:
    parts: tuple[Name, ...]
    count: bool
    span: SourceSpan


@dataclass(frozen=True)
class LiteralAst:
    kind: str  # int | time | string | bool | symbol
    value: object
    span: SourceSpan


@dataclass(frozen=True)
class ConditionAst:
    lhs: PathAst | LiteralAst
    op: str
    rhs: PathAst | LiteralAst
    span: SourceSpan


@dataclass(frozen=True)
class KindAst:
    kind: str
    values: tuple[str, ...]
    target: Name | None
    span: SourceSpan


@dataclass(frozen=True)
class StakeholderDecl:
    id: Name
    name: str | None
    kind: Name
    span: SourceSpan


@dataclass(frozen=True)
class ResourceDecl:
    id: Name
    fields: tuple[tuple[Name, KindAst], ...]
    span: SourceSpan


@dataclass(frozen=True)
class RequirementDecl:
    id: Name
    description: str
    specified_by: Name
    affects: tuple[Name, ...]
    priority: int | None
    decomposition: str  # AND | OR | LEAF
    children: tuple[Name, ...]
    resources: tuple[Name, ...] | None
    span: SourceSpan


@dataclass(frozen=True)
class OperationDecl:
    id: Name
    ofr: Name
    conditions: tuple[ConditionAst, ...]
    verb: Name
    args: tuple[PathAst | LiteralAst, ...]
    writes: tuple[Name, ...]
    span: SourceSpan


Decl = StakeholderDecl | ResourceDecl | RequirementDecl | OperationDecl

DECL_KIND = {
    StakeholderDecl: "stakeholder",
    ResourceDecl: "resource",
    RequirementDecl: "requirement",
    OperationDecl: "operation",
}


class _Abort(Exception):
    pass


def _join(a: SourceSpan, b: SourceSpan) -> SourceSpan:
    if b.line != a.line:
        return a
    return SourceSpan(a.file, a.line, a.column, b.offset + b.length - a.offset, a.offset)


@dataclass
class Parser:
    tokens: list[Token]
    pos: int = 0
    diags: list[Diagnostic] = field(default_factory=list)

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != EOF:
            self.pos += 1
        return t

    def fail(self, expected: str) -> None:
        t = self.tok
        got = "end of input" if t.kind == EOF else repr(t.text)
        self.diags.append(error("E001", f"expected {expected}, found {got}", t.span))
        raise _Abort

    def expect(self, kind: str, text: str | None = None, what: str | None = None) -> Token:
        if not self.tok.is_(kind, text):
            self.fail(what or (repr(text) if text else kind.lower()))
        return self.advance()

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        if self.tok.is_(kind, text):
            return self.advance()
        return None

    def name(self, what: str = "identifier") -> Name:
        t = self.expect(ID, what=what)
        return Name(t.text, t.span)

    def name_list(self, open_: str, close: str, allow_empty: bool = False) -> tuple[Name, ...]:
        self.expect(PUNCT, open_)
        out: list[Name] = []
        if allow_empty and self.accept(PUNCT, close):
            return ()
        out.append(self.name())
        while self.accept(PUNCT, ","):
            out.append(self.name())
        self.expect(PUNCT, close)
        return tuple(out)

    # -- model --------------------------------------------------------------

    def parse_decls(self, stop: str | None = None) -> list[Decl]:
        decls: list[Decl] = []
        while self.tok.kind != EOF and not (stop and self.tok.is_(PUNCT, stop)):
            start = self.pos
            try:
                kw = self.tok.text if self.tok.kind == ID else None
                if kw == "stakeholder":
                    decls.append(self.stakeholder())
                elif kw == "resource":
                    decls.append(self.resource())
                elif kw == "requirement":
                    decls.append(self.requirement())
                elif kw == "operation":
                    decls.append(self.operation())
                else:
                    self.fail("a declaration (stakeholder, resource, requirement, operation)")
            except _Abort:
                self.recover(start, stop)
        return decls

    def recover(self, start: int, stop: str | None) -> None:
        if self.pos == start:
            self.advance()
        depth = 0
        while self.tok.kind != EOF:
            t = self.tok
            if t.is_(PUNCT, "{"):
                depth += 1
            elif t.is_(PUNCT, "}"):
                if depth == 0 and stop == "}":
                    return
                depth = max(0, depth - 1)
            elif depth == 0 and t.kind == ID and t.text in TOP_LEVEL:
                return
            self.advance()

    def stakeholder(self) -> StakeholderDecl:
        kw = self.advance()
        sid = self.name("stakeholder id")
        label = None
        if self.tok.kind == STRING:
            label = self.advance().value
        self.expect(ID, "kind")
        self.expect(PUNCT, "=")
        kind = self.name("stakeholder kind")
        return StakeholderDecl(sid, label, kind, _join(kw.span, kind.span))

    def resource(self) -> ResourceDecl:
        kw = self.advance()
        rid = self.name("resource type name")
        self.expect(PUNCT, "{")
        fields = []
        while not self.tok.is_(PUNCT, "}"):
            fname = self.name("field name or '}'")
            self.expect(PUNCT, ":")
            fields.append((fname, self.kind()))
            self.expect(PUNCT, ";")
        self.advance()
        return ResourceDecl(rid, tuple(fields), _join(kw.span, rid.span))

    def kind(self) -> KindAst:
        t = self.expect(ID, what="field kind")
        if t.text in ("integer", "boolean", "text", "time"):
            return KindAst(t.text, (), None, t.span)
        if t.text == "enum":
            values = self.name_list("(", ")")
            return KindAst("enum", tuple(v.text for v in values), None, t.span)
        if t.text in ("ref", "set"):
            self.expect(PUNCT, "(")
            target = self.name("resource type name")
            self.expect(PUNCT, ")")
            return KindAst(t.text, (), target, t.span)
        self.diags.append(error("E011", f"unknown field kind {t.text!r}", t.span))
        raise _Abort

    def requirement(self) -> RequirementDecl:
        kw = self.advance()
        rid = self.name("requirement id")
        desc = self.expect(STRING, what="description string").value
        self.expect(ID, "specified_by")
        self.expect(PUNCT, "=")
        spec_by = self.name("stakeholder id")
        self.expect(ID, "affects")
        self.expect(PUNCT, "=")
        affects = self.name_list("[", "]")
        priority = None
        if self.accept(ID, "priority"):
            self.expect(PUNCT, "=")
            priority = self.expect(INT, what="integer priority").value
        resources = None
        if self.accept(ID, "decompose"):
            mode = self.tok
            if not (mode.is_(ID, "AND") or mode.is_(ID, "OR")):
                self.fail("AND or OR")
            self.advance()
            decomposition = mode.text
            children = self.name_list("{", "}")
        elif self.accept(ID, "leaf"):
            decomposition = "LEAF"
            children = (self.name("OFR id"),)
            if self.accept(ID, "resources"):
                resources = self.name_list("[", "]", allow_empty=True)
        else:
            self.fail("'decompose' or 'leaf'")
        return RequirementDecl(
            rid, desc, spec_by, affects, priority, decomposition, children, resources, _join(kw.span, rid.span)
        )

    def operation(self) -> OperationDecl:
        kw = self.advance()
        oid = self.name("operation id")
        self.expect(ID, "for")
        ofr = self.name("OFR id")
        self.expect(PUNCT, "{")
        self.expect(ID, "rule")
        self.expect(PUNCT, ":")
        conds = [self.condition()]
        while self.accept(ID, "and"):
            conds.append(self.condition())
        self.expect(PUNCT, ";")
        self.expect(ID, "action")
        self.expect(PUNCT, ":")
        verb = self.name("action verb")
        self.expect(PUNCT, "(")
        args: list[PathAst | LiteralAst] = []
        if not self.accept(PUNCT, ")"):
            args.append(self.operand())
            while self.accept(PUNCT, ","):
                args.append(self.operand())
            self.expect(PUNCT, ")")
        self.expect(ID, "writes")
        writes = self.name_list("[", "]", allow_empty=True)
        self.expect(PUNCT, ";")
        self.expect(PUNCT, "}")
        return OperationDecl(oid, ofr, tuple(conds), verb, tuple(args), writes, _join(kw.span, oid.span))

    def condition(self) -> ConditionAst:
        lhs = self.operand()
        op = self.expect(CMP, what="comparison operator").text
        rhs = self.operand()
        return ConditionAst(lhs, op, rhs, _join(lhs.span, rhs.span))

    def operand(self) -> PathAst | LiteralAst:
        t = self.tok
        if t.kind == INT:
            self.advance()
            return LiteralAst("int", t.value, t.span)
        if t.kind == TIME:
            self.advance()
            return LiteralAst("time", t.value, t.span)
        if t.kind == STRING:
            self.advance()
            return LiteralAst("string", t.value, t.span)
        if t.kind != ID:
            self.fail("a field path or literal")
        if t.text == "count" and self.peek().is_(PUNCT, "("):
            self.advance()
            self.advance()
            inner = self.path()
            close = self.expect(PUNCT, ")")
            return PathAst(inner.parts, True, _join(t.span, close.span))
        if self.peek().is_(PUNCT, "."):
            return self.path()
        self.advance()
        if t.text in ("true", "false"):
            return LiteralAst("bool", t.text == "true", t.span)
        return LiteralAst("symbol", t.text, t.span)

    def path(self) -> PathAst:
        parts = [self.name("resource type name")]
        self.expect(PUNCT, ".")
        parts.append(self.name("field name"))
        while self.accept(PUNCT, "."):
            parts.append(self.name("field name"))
        return PathAst(tuple(parts), False, _join(parts[0].span, parts[-1].span))
