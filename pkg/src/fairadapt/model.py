"""Runtime models: stakeholders, resources, fairness requirements, operations.

The three models (FR model, operationalisation model, resources model) are
immutable once built. Every query in this module is a pure function of them,
which is what lets the engine treat them as the shared Knowledge of its loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Union


class ModelError(Exception):
    """Base class for model-core errors."""


class UnknownType(ModelError):
    def __init__(self, name: str, segment: int = 0):
        super().__init__(f"unknown resource type {name!r}")
        self.name = name
        self.segment = segment


class UnknownField(ModelError):
    def __init__(self, owner: str, name: str, segment: int):
        super().__init__(f"{owner} has no field {name!r}")
        self.owner = owner
        self.name = name
        self.segment = segment


class NonScalarTerminal(ModelError):
    def __init__(self, path: "FieldPath", kind: "FieldKind"):
        super().__init__(f"path {path} ends in non-scalar kind {kind}")
        self.path = path
        self.kind = kind


class DanglingLeaf(ModelError):
    def __init__(self, node: str):
        super().__init__(f"leaf {node!r} has no operation")
        self.node = node


class UnknownNode(ModelError):
    def __init__(self, node: str):
        super().__init__(f"unknown requirement {node!r}")
        self.node = node


class InvariantViolation(ModelError):
    """A loaded model breaks one of its structural invariants."""


# -- literals -----------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Time:
    """Time of day as minutes since midnight, in [0, 1440)."""

    minutes: int

    def __post_init__(self):
        if not 0 <= self.minutes < 24 * 60:
            raise ValueError(f"time of day out of range: {self.minutes}")

    @classmethod
    def parse(cls, text: str) -> "Time":
        hh, mm = text.split(":")
        if len(mm) != 2 or not 0 <= int(mm) < 60:
            raise ValueError(f"bad time literal {text!r}")
        return cls(int(hh) * 60 + int(mm))

    def __str__(self) -> str:
        return f"{self.minutes // 60:02d}:{self.minutes % 60:02d}"


@dataclass(frozen=True)
class Symbol:
    """A bare enum literal such as ``health`` or ``active``."""

    name: str

    def __str__(self) -> str:
        return self.name


Literal = Union[int, bool, str, Time, Symbol]


def literal_value(lit: Literal):
    """Plain runtime value of a literal, as stored in world instances."""
    if isinstance(lit, Time):
        return lit.minutes
    if isinstance(lit, Symbol):
        return lit.name
    return lit


# -- stakeholders and resources -----------------------------------------------


class StakeholderKind(str, Enum):
    INDIVIDUAL = "individual"
    GROUP = "group"
    ORGANIZATION = "organization"
    AUTHORITY = "authority"


@dataclass(frozen=True)
class Stakeholder:
    id: str
    name: str
    kind: StakeholderKind

    def __post_init__(self):
        if not self.name:
            raise InvariantViolation(f"stakeholder {self.id} has an empty name")


SCALAR_KINDS = ("integer", "boolean", "text", "enum", "time", "ref")


@dataclass(frozen=True)
class FieldKind:
    kind: str  # integer | boolean | text | enum | time | ref | set
    values: tuple[str, ...] = ()
    target: str | None = None

    @property
    def scalar(self) -> bool:
        return self.kind in SCALAR_KINDS

    @property
    def ordered(self) -> bool:
        return self.kind in ("integer", "time")

    def __str__(self) -> str:
        if self.kind == "enum":
            return f"enum({', '.join(self.values)})"
        if self.kind in ("ref", "set"):
            return f"{self.kind}({self.target})"
        return self.kind


INTEGER = FieldKind("integer")
BOOLEAN = FieldKind("boolean")
TEXT = FieldKind("text")
TIME = FieldKind("time")


@dataclass(frozen=True)
class ResourceType:
    name: str
    fields: tuple[tuple[str, FieldKind], ...]

    def field_kind(self, name: str) -> FieldKind | None:
        for fname, kind in self.fields:
            if fname == name:
                return kind
        return None

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(f for f, _ in self.fields)


@dataclass(frozen=True)
class ResourceModel:
    types: Mapping[str, ResourceType]

    def __contains__(self, name: str) -> bool:
        return name in self.types

    def check(self) -> None:
        for rt in self.types.values():
            names = rt.field_names
            if len(set(names)) != len(names):
                raise InvariantViolation(f"duplicate field in {rt.name}")
            for fname, kind in rt.fields:
                if fname in self.types:
                    raise InvariantViolation(f"field {rt.name}.{fname} is named like a type")
                if kind.target is not None and kind.target not in self.types:
                    raise InvariantViolation(f"{rt.name}.{fname} references unknown type {kind.target}")


# -- rules, actions, policies -------------------------------------------------


@dataclass(frozen=True)
class FieldPath:
    root: str
    segments: tuple[str, ...] = ()
    count: bool = False

    def __str__(self) -> str:
        dotted = ".".join((self.root,) + self.segments)
        return f"count({dotted})" if self.count else dotted


def resolve_path(model: ResourceModel, path: FieldPath) -> FieldKind:
    """Return the terminal kind of ``path``.

    ``count(...)`` paths must end in a set field and resolve to integer.
    Errors carry the index of the failing segment (0 is the root).
    """
    rt = model.types.get(path.root)
    if rt is None:
        raise UnknownType(path.root, 0)
    kind: FieldKind | None = None
    owner = rt
    for i, seg in enumerate(path.segments, start=1):
        if owner is None:
            # previous segment was a scalar: it has no fields
            raise UnknownField(str(kind), seg, i)
        kind = owner.field_kind(seg)
        if kind is None:
            raise UnknownField(owner.name, seg, i)
        owner = model.types.get(kind.target) if kind.kind == "ref" else None
    if kind is None:
        raise NonScalarTerminal(path, FieldKind("ref", target=path.root))
    if path.count:
        if kind.kind != "set":
            raise NonScalarTerminal(path, kind)
        return INTEGER
    if not kind.scalar:
        raise NonScalarTerminal(path, kind)
    return kind


def path_types(model: ResourceModel, path: FieldPath) -> list[str]:
    """Resource types a path reads: its root plus every reference it follows."""
    out = [path.root]
    rt = model.types.get(path.root)
    for seg in path.segments[:-1]:
        kind = rt.field_kind(seg) if rt else None
        if kind is None or kind.kind != "ref":
            break
        out.append(kind.target)
        rt = model.types.get(kind.target)
    return out


COMPARATORS = ("<", "<=", ">", ">=", "==", "!=")


@dataclass(frozen=True)
class Condition:
    lhs: FieldPath
    op: str
    rhs: Union[Literal, FieldPath]

    def __str__(self) -> str:
        rhs = self.rhs
        if isinstance(rhs, bool):
            rhs = "true" if rhs else "false"
        elif isinstance(rhs, str):
            rhs = '"' + rhs.replace("\\", "\\\\").replace('"', '\\"') + '"'
        return f"{self.lhs} {self.op} {rhs}"


@dataclass(frozen=True)
class Rule:
    conditions: tuple[Condition, ...]

    def paths(self) -> list[FieldPath]:
        out = []
        for c in self.conditions:
            out.append(c.lhs)
            if isinstance(c.rhs, FieldPath):
                out.append(c.rhs)
        return out

    def roots(self) -> set[str]:
        return {p.root for p in self.paths()}


class Verb(str, Enum):
    REMOVE_ITEM = "remove_item"
    REDIRECT_OUT = "redirect_out"
    CAP_BASKET = "cap_basket"
    EXEMPT_ITEM = "exempt_item"
    SET_FIELD = "set_field"
    BLOCK_CHECKOUT = "block_checkout"


# positional parameter names per verb
VERB_PARAMS: dict[Verb, tuple[str, ...]] = {
    Verb.REMOVE_ITEM: (),
    Verb.REDIRECT_OUT: (),
    Verb.CAP_BASKET: ("n",),
    Verb.EXEMPT_ITEM: (),
    Verb.SET_FIELD: ("target", "value"),
    Verb.BLOCK_CHECKOUT: (),
}

# verbs whose effect makes the bound instance unusable for later actions
INVALIDATING_VERBS = frozenset({Verb.REMOVE_ITEM, Verb.REDIRECT_OUT})


@dataclass(frozen=True)
class ActionSpec:
    name: str
    verb: Verb
    params: tuple[tuple[str, Union[Literal, FieldPath]], ...]
    reads: frozenset[str]
    writes: frozenset[str]

    def param(self, name: str):
        for k, v in self.params:
            if k == name:
                return v
        raise KeyError(name)


@dataclass(frozen=True)
class Policy:
    rule: Rule
    actions: tuple[ActionSpec, ...]

    def __post_init__(self):
        if not self.actions:
            raise InvariantViolation("policy without actions")


class Access(str, Enum):
    READ = "read"
    WRITE = "write"


Link = tuple[str, Access]


def operation_links(model: ResourceModel, rule: Rule, action: ActionSpec) -> frozenset[Link]:
    """Links of an operation: rule and action reads, action writes.

    A type both read and written appears once, as a write.
    """
    reads: set[str] = set(action.reads)
    for p in rule.paths():
        reads.update(path_types(model, p))
    writes = set(action.writes)
    return frozenset({(t, Access.WRITE) for t in writes} | {(t, Access.READ) for t in reads - writes})


@dataclass(frozen=True)
class Operation:
    id: str
    ofr: str
    rule: Rule
    action: ActionSpec
    links: frozenset[Link]

    @property
    def write_types(self) -> frozenset[str]:
        return frozenset(t for t, a in self.links if a is Access.WRITE)

    @property
    def types(self) -> frozenset[str]:
        return frozenset(t for t, _ in self.links)


@dataclass(frozen=True)
class OperationalFairnessRequirement:
    """The (stakeholder, policies, resources) tuple at a leaf of the FR forest.

    Each alternative operation contributes one policy.
    """

    id: str
    specified_by: str
    affects: frozenset[str]
    policies: tuple[Policy, ...]
    resources: frozenset[str]


def ofr_resources(model: ResourceModel, policies: Iterable[Policy]) -> frozenset[str]:
    out: set[str] = set()
    for pol in policies:
        for p in pol.rule.paths():
            out.update(path_types(model, p))
        for a in pol.actions:
            out |= a.reads | a.writes
    return frozenset(out)


class Decomposition(str, Enum):
    AND = "AND"
    OR = "OR"
    LEAF = "LEAF"


DEFAULT_PRIORITY = 10
AUTHORITY_PRIORITY = 0


@dataclass(frozen=True)
class FairnessRequirement:
    id: str
    description: str
    specified_by: str
    affects: frozenset[str]
    decomposition: Decomposition
    children: tuple[str, ...]  # FR ids, or the single OFR id of a LEAF
    priority: int = DEFAULT_PRIORITY

    @property
    def is_leaf(self) -> bool:
        return self.decomposition is Decomposition.LEAF


@dataclass(frozen=True)
class FRModel:
    nodes: Mapping[str, FairnessRequirement]
    ofrs: Mapping[str, OperationalFairnessRequirement]
    _parent: dict = field(init=False, compare=False, repr=False)
    _leaf_of: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        parent: dict[str, str] = {}
        leaf_of: dict[str, str] = {}
        for node in self.nodes.values():
            if node.is_leaf:
                if len(node.children) != 1:
                    raise InvariantViolation(f"leaf {node.id} must reference exactly one OFR")
                if node.children[0] in leaf_of:
                    raise InvariantViolation(f"OFR {node.children[0]} is referenced by two leaves")
                leaf_of[node.children[0]] = node.id
                continue
            if not node.children:
                raise InvariantViolation(f"{node.decomposition.value} node {node.id} has no children")
            for c in node.children:
                if c not in self.nodes:
                    raise UnknownNode(c)
                if c in parent:
                    raise InvariantViolation(f"{c} has two parents ({parent[c]}, {node.id})")
                parent[c] = node.id
        object.__setattr__(self, "_parent", parent)
        object.__setattr__(self, "_leaf_of", leaf_of)
        for nid in self.nodes:
            seen = {nid}
            cur = parent.get(nid)
            while cur is not None:
                if cur in seen:
                    raise InvariantViolation(f"cycle through {nid}")
                seen.add(cur)
                cur = parent.get(cur)

    def node_id(self, ref: str) -> str:
        """Map an FR id or an OFR id to its node in the forest."""
        if ref in self.nodes:
            return ref
        if ref in self._leaf_of:
            return self._leaf_of[ref]
        raise UnknownNode(ref)

    def parent(self, nid: str) -> str | None:
        return self._parent.get(nid)

    def leaf_for(self, ofr_id: str) -> str:
        return self._leaf_of[ofr_id]

    def ancestors(self, nid: str) -> list[str]:
        """``nid`` followed by its ancestors up to the root."""
        out = [nid]
        while (p := self._parent.get(out[-1])) is not None:
            out.append(p)
        return out

    def roots(self) -> list[str]:
        return sorted(n for n in self.nodes if n not in self._parent)

    def subtree(self, nid: str) -> list[str]:
        out, stack = [], [nid]
        while stack:
            cur = stack.pop()
            out.append(cur)
            node = self.nodes[cur]
            if not node.is_leaf:
                stack.extend(reversed(node.children))
        return out

    def leaves_under(self, nid: str) -> list[str]:
        return [n for n in self.subtree(nid) if self.nodes[n].is_leaf]

    def root_of(self, nid: str) -> str:
        return self.ancestors(nid)[-1]


@dataclass(frozen=True)
class OperationalisationModel:
    operations: Mapping[str, Operation]
    _by_ofr: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        by_ofr: dict[str, list[Operation]] = {}
        for op in sorted(self.operations.values(), key=lambda o: o.id):
            by_ofr.setdefault(op.ofr, []).append(op)
        object.__setattr__(self, "_by_ofr", by_ofr)

    def for_ofr(self, ofr_id: str) -> list[Operation]:
        return list(self._by_ofr.get(ofr_id, ()))


@dataclass(frozen=True)
class ModelBundle:
    """The three models plus stakeholders, loaded as one unit."""

    stakeholders: Mapping[str, Stakeholder]
    resources: ResourceModel
    frm: FRModel
    opm: OperationalisationModel
    spans: Mapping = field(default_factory=dict, compare=False, repr=False)
    decls: tuple = field(default=(), compare=False, repr=False)

    def operations_of(self, nid: str) -> list[Operation]:
        """All operations of all OFR leaves under node ``nid``."""
        ops = []
        for leaf in self.frm.leaves_under(self.frm.node_id(nid)):
            ops.extend(self.opm.for_ofr(self.frm.nodes[leaf].children[0]))
        return ops

    def node_of_operation(self, op_id: str) -> str:
        return self.frm.leaf_for(self.opm.operations[op_id].ofr)

    def priority_of_operation(self, op_id: str) -> int:
        return self.frm.nodes[self.node_of_operation(op_id)].priority


def empty_bundle() -> ModelBundle:
    return ModelBundle({}, ResourceModel({}), FRModel({}, {}), OperationalisationModel({}))


def check_invariants(bundle: ModelBundle) -> None:
    """Re-check the load invariants; raise InvariantViolation on the first breach."""
    bundle.resources.check()
    frm = bundle.frm
    for node in frm.nodes.values():
        for sid in (node.specified_by, *node.affects):
            if sid not in bundle.stakeholders:
                raise InvariantViolation(f"{node.id} names unknown stakeholder {sid}")
        if node.is_leaf:
            ofr_id = node.children[0]
            if ofr_id not in frm.ofrs:
                raise InvariantViolation(f"leaf {node.id} references unknown OFR {ofr_id}")
            if not bundle.opm.for_ofr(ofr_id):
                raise DanglingLeaf(node.id)
    for ofr in frm.ofrs.values():
        if ofr.id not in frm._leaf_of:
            raise InvariantViolation(f"OFR {ofr.id} is not referenced by any leaf")
        if ofr.specified_by not in bundle.stakeholders:
            raise InvariantViolation(f"OFR {ofr.id} names unknown stakeholder {ofr.specified_by}")
        expected = ofr_resources(bundle.resources, ofr.policies)
        if ofr.resources != expected:
            raise InvariantViolation(
                f"OFR {ofr.id} declares {sorted(ofr.resources)} but its policies use {sorted(expected)}"
            )
    for op in bundle.opm.operations.values():
        if op.ofr not in frm.ofrs:
            raise InvariantViolation(f"operation {op.id} belongs to unknown OFR {op.ofr}")
        if op.links != operation_links(bundle.resources, op.rule, op.action):
            raise InvariantViolation(f"operation {op.id} links do not match its rule and action")


# -- queries --------------------------------------------------------------------


def resources_of(nid: str, bundle: ModelBundle) -> dict[str, Access]:
    """Resource types used by the operations under ``nid``.

    Access is WRITE when any contributing operation writes the type.
    """
    frm = bundle.frm
    nid = frm.node_id(nid)
    out: dict[str, Access] = {}
    for leaf in frm.leaves_under(nid):
        ops = bundle.opm.for_ofr(frm.nodes[leaf].children[0])
        if not ops:
            raise DanglingLeaf(leaf)
        for op in ops:
            for rtype, access in op.links:
                if access is Access.WRITE or rtype not in out:
                    out[rtype] = access
    return out


class NodeStatus(str, Enum):
    FULFILLED = "FULFILLED"
    VIOLATED = "VIOLATED"
    IDLE = "IDLE"
    CONFLICT_EXPLAINED = "CONFLICT_EXPLAINED"


def combine(decomposition: Decomposition, children: list[NodeStatus]) -> NodeStatus:
    fulfilled = NodeStatus.FULFILLED in children
    if decomposition is Decomposition.AND:
        if NodeStatus.VIOLATED in children:
            return NodeStatus.VIOLATED
    elif children and all(c is NodeStatus.VIOLATED for c in children):
        return NodeStatus.VIOLATED
    return NodeStatus.FULFILLED if fulfilled else NodeStatus.IDLE


def propagate_satisfaction(frm: FRModel, leaf_statuses: Mapping[str, NodeStatus]) -> dict[str, NodeStatus]:
    """Lift OFR statuses to every node of the forest.

    Nodes are visited children-first; OFRs missing from ``leaf_statuses`` count
    as IDLE.
    """
    out: dict[str, NodeStatus] = {}
    for root in frm.roots():
        for nid in reversed(frm.subtree(root)):
            node = frm.nodes[nid]
            if node.is_leaf:
                out[nid] = NodeStatus(leaf_statuses.get(node.children[0], NodeStatus.IDLE))
            else:
                out[nid] = combine(node.decomposition, [out[c] for c in node.children])
    return out


class Relation(str, Enum):
    SAME_BRANCH = "SameBranch"
    DIVERGES_AT_AND = "DivergesAtAND"
    DIVERGES_AT_OR = "DivergesAtOR"
    UNRELATED = "Unrelated"


SAME_GOAL = frozenset({Relation.SAME_BRANCH, Relation.DIVERGES_AT_AND})


def relation(a: str, b: str, frm: FRModel) -> Relation:
    """Classify how two nodes (FR or OFR ids) sit in the goal forest."""
    a, b = frm.node_id(a), frm.node_id(b)
    up_a = frm.ancestors(a)
    up_b = frm.ancestors(b)
    if a in up_b or b in up_a:
        return Relation.SAME_BRANCH
    on_b = set(up_b)
    lca = next((n for n in up_a if n in on_b), None)
    if lca is None:
        return Relation.UNRELATED
    if frm.nodes[lca].decomposition is Decomposition.OR:
        return Relation.DIVERGES_AT_OR
    return Relation.DIVERGES_AT_AND


def affected_overlap(a: str, b: str, frm: FRModel) -> frozenset[str]:
    return frm.nodes[frm.node_id(a)].affects & frm.nodes[frm.node_id(b)].affects
