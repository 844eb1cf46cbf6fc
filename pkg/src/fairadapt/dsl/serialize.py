"""Canonical text form of a ModelBundle.

Declarations are grouped (stakeholders, resources, requirements, operations)
and sorted by id inside each group, so two bundles that compare equal always
serialize to the same bytes.
"""

from __future__ import annotations

from ..model import Condition, FieldPath, ModelBundle, Symbol, Time

HEADER = "# fairadapt model (canonical form)\n"


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (Time, Symbol, FieldPath, int)):
        return str(v)
    return _quote(v)


def _condition(c: Condition) -> str:
    return f"{c.lhs} {c.op} {_value(c.rhs)}"


def serialize(bundle: ModelBundle) -> str:
    out = [HEADER]
    for sid in sorted(bundle.stakeholders):
        s = bundle.stakeholders[sid]
        out.append(f"\nstakeholder {s.id} {_quote(s.name)} kind = {s.kind.value}\n")
    for name in sorted(bundle.resources.types):
        rt = bundle.resources.types[name]
        out.append(f"\nresource {name} {{\n")
        for fname, kind in rt.fields:
            out.append(f"  {fname}: {kind};\n")
        out.append("}\n")
    frm = bundle.frm
    for nid in sorted(frm.nodes):
        n = frm.nodes[nid]
        out.append(
            f"\nrequirement {n.id} {_quote(n.description)}\n"
            f"  specified_by = {n.specified_by} affects = [{', '.join(sorted(n.affects))}] priority = {n.priority}\n"
        )
        if n.is_leaf:
            ofr = frm.ofrs[n.children[0]]
            out.append(f"  leaf {ofr.id} resources [{', '.join(sorted(ofr.resources))}]\n")
        else:
            out.append(f"  decompose {n.decomposition.value} {{ {', '.join(n.children)} }}\n")
    ops = bundle.opm.operations
    for oid in sorted(ops):
        op = ops[oid]
        rule = " and ".join(_condition(c) for c in op.rule.conditions)
        args = ", ".join(_value(v) for _, v in op.action.params)
        writes = ", ".join(sorted(op.action.writes))
        out.append(
            f"\noperation {op.id} for {op.ofr} {{\n"
            f"  rule: {rule};\n"
            f"  action: {op.action.verb.value}({args}) writes [{writes}];\n"
            "}\n"
        )
    return "".join(out)
