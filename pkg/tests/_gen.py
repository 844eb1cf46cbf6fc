"""Random, always-valid model sources for property and oracle tests."""

from __future__ import annotations

import random
from dataclasses import dataclass

from fairadapt.dsl import parse_model
from fairadapt.model import ModelBundle

SCALAR_KINDS = ("integer", "boolean", "time", "text", "enum(lo, hi)")
KINDS = ("organization", "group", "individual", "authority")


@dataclass
class GenModel:
    source: str
    bundle: ModelBundle
    fr_count: int
    op_count: int


def _literal(rng: random.Random, kind: str) -> str:
    if kind == "integer":
        return str(rng.randint(-5, 30))
    if kind == "boolean":
        return rng.choice(("true", "false"))
    if kind == "time":
        return f"{rng.randint(0, 23):02d}:{rng.choice((0, 15, 30, 45)):02d}"
    if kind == "text":
        return rng.choice(('"a"', '"b \\" q"', '"x\\\\y"'))
    return rng.choice(("lo", "hi"))


def random_source(rng: random.Random, max_frs: int = 8, max_ops: int = 12, max_types: int = 6) -> str:
    out: list[str] = []
    stakeholders = [f"S{i}" for i in range(rng.randint(1, 3))]
    for s in stakeholders:
        name = rng.choice(("", ' "Some name"'))
        out.append(f"stakeholder {s}{name} kind = {rng.choice(KINDS)}")

    types = [f"T{i}" for i in range(rng.randint(1, max_types))]
    scalars: dict[str, list[tuple[str, str]]] = {}
    refs: dict[str, list[tuple[str, str]]] = {}
    for t in types:
        fields = [(f"f{j}", rng.choice(SCALAR_KINDS)) for j in range(rng.randint(1, 3))]
        scalars[t] = fields
        body = [f"  {n}: {k};" for n, k in fields]
        refs[t] = []
        if rng.random() < 0.4:
            target = rng.choice(types)
            refs[t].append(("r", target))
            body.append(f"  r: ref({target});")
        if rng.random() < 0.3:
            body.append(f"  s: set({rng.choice(types)});")
        out.append(f"resource {t} {{\n" + "\n".join(body) + "\n}")

    # forest: nodes are attached to earlier composite nodes or start a new root
    n_frs = rng.randint(1, max_frs)
    kinds = ["LEAF"] * n_frs
    children: dict[int, list[int]] = {}
    for i in range(n_frs):
        hosts = [j for j in range(i) if kinds[j] != "LEAF"]
        if hosts and rng.random() < 0.75:
            p = rng.choice(hosts)
            children[p].append(i)
        if i < n_frs - 1 and rng.random() < 0.45:
            kinds[i] = rng.choice(("AND", "OR"))
            children[i] = []
    # composites that ended up childless become leaves
    for i in range(n_frs):
        if kinds[i] != "LEAF" and not children[i]:
            kinds[i] = "LEAF"
    leaves = [i for i in range(n_frs) if kinds[i] == "LEAF"]
    n_ops = rng.randint(len(leaves), max(len(leaves), max_ops))
    owner = leaves + [rng.choice(leaves) for _ in range(n_ops - len(leaves))]
    rng.shuffle(owner)

    decls = []
    for i in range(n_frs):
        affects = rng.sample(stakeholders, rng.randint(1, len(stakeholders)))
        head = f'requirement G{i} "goal {i}"\n  specified_by = {rng.choice(stakeholders)} affects = [{", ".join(affects)}]'
        if rng.random() < 0.3:
            head += f" priority = {rng.randint(0, 20)}"
        if kinds[i] == "LEAF":
            head += f"\n  leaf O{i}"
        else:
            head += f"\n  decompose {kinds[i]} {{ {', '.join(f'G{c}' for c in children[i])} }}"
        decls.append(head)

    for k, leaf in enumerate(owner):
        conds = []
        for _ in range(rng.randint(1, 2)):
            t = rng.choice(types)
            if refs[t] and rng.random() < 0.3:
                fname, target = refs[t][0]
                fn, fk = rng.choice(scalars[target])
                path = f"{t}.{fname}.{fn}"
            else:
                fn, fk = rng.choice(scalars[t])
                path = f"{t}.{fn}"
            ops = ("<", "<=", ">", ">=", "==", "!=") if fk in ("integer", "time") else ("==", "!=")
            conds.append(f"{path} {rng.choice(ops)} {_literal(rng, fk)}")
        writes = sorted(set(rng.sample(types, rng.randint(0, min(2, len(types))))))
        verb = rng.choice(("set_field", "remove_item", "redirect_out", "cap_basket", "exempt_item", "block_checkout"))
        if verb == "set_field":
            t = rng.choice(types)
            fn, fk = rng.choice(scalars[t])
            writes = sorted(set(writes) | {t})
            call = f"set_field({t}.{fn}, {_literal(rng, fk)})"
        elif verb == "cap_basket":
            call = f"cap_basket({rng.randint(0, 30)})"
        else:
            call = f"{verb}()"
        decls.append(
            f"operation P{k} for O{leaf} {{\n  rule: {' and '.join(conds)};\n"
            f"  action: {call} writes [{', '.join(writes)}];\n}}"
        )
    rng.shuffle(decls)
    return "\n\n".join(out + decls) + "\n"


def random_model(seed: int, **kw) -> GenModel:
    rng = random.Random(seed)
    src = random_source(rng, **kw)
    result = parse_model(src, f"gen{seed}.frm")
    if not result.ok:
        raise AssertionError(f"generator produced an invalid model (seed {seed}):\n{src}\n" + "\n".join(map(str, result.diagnostics)))
    b = result.value
    return GenModel(src, b, len(b.frm.nodes), len(b.opm.operations))


def random_tree_source(rng: random.Random, max_depth: int = 6, fanout: int = 4, max_leaves: int = 8) -> str:
    """A single goal tree (depth and fanout bounded) with one operation per leaf."""
    decls: list[str] = []
    leaves: list[str] = []
    counter = [0]

    def node(depth: int, budget: int) -> str:
        nid = f"N{counter[0]}"
        counter[0] += 1
        if depth >= max_depth or budget <= 1 or rng.random() < 0.35:
            leaves.append(nid)
            decls.append(f'requirement {nid} "n" specified_by = S affects = [S]\n  leaf L{nid}')
            return nid
        n_children = rng.randint(1, min(fanout, budget))
        shares = [1] * n_children
        for _ in range(budget - n_children):
            shares[rng.randrange(n_children)] += 1
        kids = [node(depth + 1, rng.randint(1, s)) for s in shares]
        kind = rng.choice(("AND", "OR"))
        decls.append(f'requirement {nid} "n" specified_by = S affects = [S]\n  decompose {kind} {{ {", ".join(kids)} }}')
        return nid

    node(1, max_leaves)
    ops = [
        f"operation P{leaf} for L{leaf} {{\n  rule: T.x > 0;\n  action: set_field(T.x, 1) writes [T];\n}}"
        for leaf in leaves
    ]
    head = ["stakeholder S kind = group", "resource T {\n  x: integer;\n}"]
    return "\n\n".join(head + decls + ops) + "\n"
