"""Resolve parsed declarations into a validated ModelBundle.

Error codes:

    E005 duplicate declaration          E006 duplicate field
    E007 unknown action verb            E008 wrong number of action arguments
    E009 unknown stakeholder kind       E010 field named like a resource type
    E020 unknown stakeholder            E021 unknown resource type
    E022 unknown field                  E023 path does not end in a comparable value
    E024 operands not comparable        E025 unknown requirement
    E026 operation for an OFR no leaf references
    E027 enum literal not among the field's values
    E028 bad action argument            E029 set_field target type not in writes
    E040 OFR resource set mismatch      E041 cycle in the requirement forest
    E042 leaf without operation         E043 requirement with several parents
    E044 OFR referenced by several leaves   E045 AND/OR requirement without children
"""

from __future__ import annotations

from collections import defaultdict

from ..model import (
    AUTHORITY_PRIORITY,
    DEFAULT_PRIORITY,
    VERB_PARAMS,
    ActionSpec,
    Condition,
    Decomposition,
    FairnessRequirement,
    FieldKind,
    FieldPath,
    FRModel,
    ModelBundle,
    NonScalarTerminal,
    Operation,
    OperationalFairnessRequirement,
    OperationalisationModel,
    Policy,
    ResourceModel,
    ResourceType,
    Rule,
    Stakeholder,
    StakeholderKind,
    Symbol,
    Time,
    UnknownField,
    UnknownType,
    Verb,
    check_invariants,
    ofr_resources,
    operation_links,
    path_types,
    resolve_path,
)
from .diagnostics import Diagnostic, SourceSpan, error
from .syntax import (
    DECL_KIND,
    Decl,
    LiteralAst,
    OperationDecl,
    PathAst,
    RequirementDecl,
    ResourceDecl,
    StakeholderDecl,
)

_LITERAL_KIND = {"int": "integer", "time": "time", "string": "text", "bool": "boolean", "symbol": "enum"}


def _literal(lit: LiteralAst):
    if lit.kind == "time":
        return Time(lit.value)
    if lit.kind == "symbol":
        return Symbol(lit.value)
    return lit.value


def _path(ast: PathAst) -> FieldPath:
    return FieldPath(ast.parts[0].text, tuple(p.text for p in ast.parts[1:]), ast.count)


class _Builder:
    def __init__(self, decls: list[Decl]):
        self.decls = decls
        self.diags: list[Diagnostic] = []

    def err(self, code: str, msg: str, span: SourceSpan) -> None:
        self.diags.append(error(code, msg, span))

    # -- entry --------------------------------------------------------------

    def build(self) -> ModelBundle | None:
        seen: dict[tuple[str, str], Decl] = {}
        by_kind: dict[str, list] = defaultdict(list)
        for d in self.decls:
            key = (DECL_KIND[type(d)], d.id.text)
            if key in seen:
                self.err("E005", f"duplicate {key[0]} {key[1]!r} (first declared at {seen[key].id.span})", d.id.span)
                continue
            seen[key] = d
            by_kind[key[0]].append(d)

        stakeholders = self.stakeholders(by_kind["stakeholder"])
        resources = self.resources(by_kind["resource"])
        reqs = by_kind["requirement"]
        leaf_ofrs = {r.children[0].text: r for r in reqs if r.decomposition == "LEAF"}
        nodes = self.requirements(reqs, stakeholders)
        operations = self.operations(by_kind["operation"], resources, leaf_ofrs)
        if any(d.is_error for d in self.diags):
            return None
        frm = self.forest(reqs, nodes, operations, resources)
        if frm is None:
            return None
        spans = {key: d.id.span for key, d in seen.items()}
        bundle = ModelBundle(
            stakeholders, resources, frm, OperationalisationModel(operations), spans, tuple(self.decls)
        )
        check_invariants(bundle)
        return bundle

    # -- declarations ---------------------------------------------------------

    def stakeholders(self, decls: list[StakeholderDecl]) -> dict[str, Stakeholder]:
        out = {}
        for d in decls:
            try:
                kind = StakeholderKind(d.kind.text)
            except ValueError:
                valid = ", ".join(k.value for k in StakeholderKind)
                self.err("E009", f"unknown stakeholder kind {d.kind.text!r} (expected one of {valid})", d.kind.span)
                continue
            out[d.id.text] = Stakeholder(d.id.text, d.name or d.id.text, kind)
        return out

    def resources(self, decls: list[ResourceDecl]) -> ResourceModel:
        names = {d.id.text for d in decls}
        types = {}
        for d in decls:
            fields, seen = [], set()
            for fname, kast in d.fields:
                if fname.text in seen:
                    self.err("E006", f"duplicate field {d.id.text}.{fname.text}", fname.span)
                    continue
                seen.add(fname.text)
                if fname.text in names:
                    self.err("E010", f"field {fname.text!r} is named like a resource type", fname.span)
                if kast.target is not None and kast.target.text not in names:
                    self.err("E021", f"unknown resource type {kast.target.text!r}", kast.target.span)
                target = kast.target.text if kast.target else None
                fields.append((fname.text, FieldKind(kast.kind, kast.values, target)))
            types[d.id.text] = ResourceType(d.id.text, tuple(fields))
        return ResourceModel(types)

    def requirements(self, decls: list[RequirementDecl], stakeholders) -> dict[str, FairnessRequirement]:
        known = {d.id.text for d in decls}
        out = {}
        for d in decls:
            for ref in (d.specified_by, *d.affects):
                if ref.text not in stakeholders:
                    self.err("E020", f"unknown stakeholder {ref.text!r}", ref.span)
            if d.decomposition != "LEAF":
                if not d.children:
                    self.err("E045", f"{d.decomposition} requirement {d.id.text!r} has no children", d.id.span)
                for c in d.children:
                    if c.text not in known:
                        self.err("E025", f"unknown requirement {c.text!r}", c.span)
            priority = d.priority
            if priority is None:
                spec = stakeholders.get(d.specified_by.text)
                authority = spec is not None and spec.kind is StakeholderKind.AUTHORITY
                priority = AUTHORITY_PRIORITY if authority else DEFAULT_PRIORITY
            out[d.id.text] = FairnessRequirement(
                d.id.text,
                d.description,
                d.specified_by.text,
                frozenset(a.text for a in d.affects),
                Decomposition(d.decomposition),
                tuple(c.text for c in d.children),
                priority,
            )
        return out

    def resolve(self, resources: ResourceModel, ast: PathAst) -> FieldKind | None:
        path = _path(ast)
        try:
            return resolve_path(resources, path)
        except UnknownType as e:
            self.err("E021", f"unknown resource type {e.name!r}", ast.parts[0].span)
        except UnknownField as e:
            self.err("E022", str(e), ast.parts[e.segment].span)
        except NonScalarTerminal as e:
            self.err("E023", f"{path} has kind {e.kind}, which cannot be compared", ast.span)
        return None

    def operand_kind(self, resources, ast, other: FieldKind | None) -> FieldKind | None:
        if isinstance(ast, PathAst):
            return self.resolve(resources, ast)
        if ast.kind == "symbol" and other is not None and other.kind == "enum":
            if ast.value not in other.values:
                self.err("E027", f"{ast.value!r} is not one of {', '.join(other.values)}", ast.span)
                return None
            return other
        return FieldKind(_LITERAL_KIND[ast.kind])

    def condition(self, resources, c) -> Condition | None:
        if not isinstance(c.lhs, PathAst):
            self.err("E024", "the left side of a condition must be a field path", c.lhs.span)
            return None
        lk = self.resolve(resources, c.lhs)
        rk = self.operand_kind(resources, c.rhs, lk)
        if lk is None or rk is None:
            return None
        same = lk.kind == rk.kind and (lk.kind != "ref" or lk.target == rk.target)
        if lk.kind == "enum" and rk.kind == "enum" and isinstance(c.rhs, PathAst):
            same = lk.values == rk.values
        if not same:
            self.err("E024", f"cannot compare {lk} with {rk}", c.span)
            return None
        if c.op not in ("==", "!=") and not lk.ordered:
            self.err("E024", f"operator {c.op} needs integer or time operands, got {lk}", c.span)
            return None
        rhs = _path(c.rhs) if isinstance(c.rhs, PathAst) else _literal(c.rhs)
        return Condition(_path(c.lhs), c.op, rhs)

    def action(self, resources, d: OperationDecl) -> ActionSpec | None:
        try:
            verb = Verb(d.verb.text)
        except ValueError:
            self.err("E007", f"unknown action verb {d.verb.text!r}", d.verb.span)
            return None
        names = VERB_PARAMS[verb]
        if len(d.args) != len(names):
            self.err("E008", f"{verb.value} takes {len(names)} argument(s), got {len(d.args)}", d.verb.span)
            return None
        writes = set()
        for w in d.writes:
            if w.text not in resources:
                self.err("E021", f"unknown resource type {w.text!r}", w.span)
            writes.add(w.text)
        params, reads = [], set()
        ok = True
        for pname, arg in zip(names, d.args):
            if isinstance(arg, PathAst):
                if self.resolve(resources, arg) is None:
                    ok = False
                    continue
                reads.update(path_types(resources, _path(arg)))
                params.append((pname, _path(arg)))
            else:
                params.append((pname, _literal(arg)))
        if not ok:
            return None
        if verb is Verb.CAP_BASKET:
            n = d.args[0]
            if not (isinstance(n, LiteralAst) and n.kind == "int" and n.value >= 0):
                self.err("E028", "cap_basket expects a non-negative integer", n.span)
                return None
        if verb is Verb.SET_FIELD:
            target, value = d.args
            if not isinstance(target, PathAst) or target.count:
                self.err("E028", "set_field expects a field path as its first argument", target.span)
                return None
            tk = resolve_path(resources, _path(target))
            vk = self.operand_kind(resources, value, tk)
            if vk is None:
                return None
            if isinstance(value, PathAst) or vk.kind != tk.kind or tk.kind == "ref":
                self.err("E028", f"set_field value must be a {tk} literal", value.span)
                return None
            if target.parts[0].text not in writes:
                self.err("E029", f"set_field writes {target.parts[0].text} but it is not in writes", target.parts[0].span)
                return None
        return ActionSpec(verb.value, verb, tuple(params), frozenset(reads), frozenset(writes))

    def operations(self, decls: list[OperationDecl], resources, leaf_ofrs) -> dict[str, Operation]:
        out = {}
        for d in decls:
            if d.ofr.text not in leaf_ofrs:
                self.err("E026", f"no leaf requirement references OFR {d.ofr.text!r}", d.ofr.span)
            conds = [self.condition(resources, c) for c in d.conditions]
            action = self.action(resources, d)
            if action is None or any(c is None for c in conds):
                continue
            rule = Rule(tuple(conds))
            out[d.id.text] = Operation(d.id.text, d.ofr.text, rule, action, operation_links(resources, rule, action))
        return out

    # -- consistency ----------------------------------------------------------

    def forest(self, decls, nodes, operations, resources) -> FRModel | None:
        span_of = {d.id.text: d for d in decls}
        parent: dict[str, str] = {}
        leaf_of: dict[str, str] = {}
        for d in decls:
            if d.decomposition == "LEAF":
                ofr = d.children[0]
                if ofr.text in leaf_of:
                    self.err("E044", f"OFR {ofr.text!r} is already referenced by leaf {leaf_of[ofr.text]!r}", ofr.span)
                leaf_of[ofr.text] = d.id.text
                continue
            for c in d.children:
                if c.text in parent:
                    self.err("E043", f"{c.text!r} already has parent {parent[c.text]!r}", c.span)
                else:
                    parent[c.text] = d.id.text
        for start in sorted(nodes):
            path, cur = [start], parent.get(start)
            while cur is not None and cur not in path:
                path.append(cur)
                cur = parent.get(cur)
            if cur == start:
                self.err("E041", "cycle in requirement forest: " + " -> ".join(path + [start]), span_of[start].id.span)
        by_ofr: dict[str, list[Operation]] = defaultdict(list)
        for op in sorted(operations.values(), key=lambda o: o.id):
            by_ofr[op.ofr].append(op)
        ofrs = {}
        for d in decls:
            if d.decomposition != "LEAF":
                continue
            ofr = d.children[0]
            ops = by_ofr.get(ofr.text, [])
            if not ops:
                self.err("E042", f"leaf {d.id.text!r} has no operation for OFR {ofr.text!r}", d.id.span)
                continue
            policies = tuple(Policy(op.rule, (op.action,)) for op in ops)
            used = ofr_resources(resources, policies)
            if d.resources is not None:
                declared = {n.text for n in d.resources}
                if declared != used:
                    self.err(
                        "E040",
                        f"OFR {ofr.text} declares resources [{', '.join(sorted(declared))}] "
                        f"but its operations use [{', '.join(sorted(used))}]",
                        ofr.span,
                    )
                    continue
            node = nodes[d.id.text]
            ofrs[ofr.text] = OperationalFairnessRequirement(ofr.text, node.specified_by, node.affects, policies, used)
        if any(x.is_error for x in self.diags):
            return None
        return FRModel(nodes, ofrs)


def build_bundle(decls: list[Decl]) -> tuple[ModelBundle | None, list[Diagnostic]]:
    b = _Builder(decls)
    bundle = b.build()
    return bundle, b.diags
