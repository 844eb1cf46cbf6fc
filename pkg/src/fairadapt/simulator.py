"""Discrete-event online supermarket: shoppers, items, orders and a clock.

The world is a plain mapping of ``(type, id)`` to field values. Events and
actions never mutate a world in place; each returns a new world together with
an :class:`Outcome` that lists the field-level diff.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

from .model import FieldPath, ModelBundle, ResourceModel, Verb, literal_value

DAYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")
WEEKEND = ("sat", "sun")
CLOCK_ID = "clock"
GLOBAL_TYPES = ("Clock",)

# fields the verbs and events below rely on
REQUIRED_SCHEMA = {
    "Shopper": {"age": "integer", "status": "enum", "order": "ref"},
    "Item": {"category": "enum", "stock": "integer"},
    "Order": {"owner": "ref", "items": "set", "exempt": "set", "open": "boolean"},
    "Clock": {"time": "time", "day": "enum", "workday": "boolean"},
}


class SimulationError(Exception):
    pass


class UnknownInstance(SimulationError):
    def __init__(self, rtype: str, iid: str):
        super().__init__(f"no {rtype} instance {iid!r}")
        self.rtype = rtype
        self.iid = iid


class NegativeStock(SimulationError):
    pass


class WorldCorrupted(SimulationError):
    """A world invariant no longer holds; always a bug, never a scenario fact."""


class EventKind(str, Enum):
    ENTER_SYSTEM = "EnterSystem"
    ADD_ITEM = "AddItem"
    REMOVE_ITEM = "RemoveItem"
    CHECKOUT = "Checkout"
    STOCK_CHANGE = "StockChange"
    INJECT_REQUIREMENT = "InjectRequirement"
    RETIRE_REQUIREMENT = "RetireRequirement"
    TICK = "Tick"


@dataclass(frozen=True)
class Event:
    id: str
    day: str
    minute: int
    kind: EventKind
    payload: Mapping[str, Any] = field(default_factory=dict)
    # parsed model declarations carried by InjectRequirement
    fragment: tuple = field(default=(), compare=False, repr=False)

    @property
    def when(self) -> tuple[int, int]:
        return DAYS.index(self.day), self.minute

    @property
    def clock(self) -> str:
        return f"{self.minute // 60:02d}:{self.minute % 60:02d}"

    def to_json(self) -> dict:
        return {"id": self.id, "day": self.day, "minute": self.minute, "kind": self.kind.value, "payload": dict(self.payload)}


class Status(str, Enum):
    APPLIED = "Applied"
    FAILED = "Failed"


@dataclass(frozen=True)
class Outcome:
    """Result of applying one event or one action to the world.

    Failed outcomes never carry a diff.
    """

    subject: str
    status: Status
    reason: str | None = None
    diff: tuple = ()

    @property
    def applied(self) -> bool:
        return self.status is Status.APPLIED

    def to_json(self) -> dict:
        out = {"subject": self.subject, "status": self.status.value, "diff": list(self.diff)}
        if self.reason is not None:
            out["reason"] = self.reason
        return out


def _key(rtype: str, iid: str) -> str:
    return f"{rtype}:{iid}"


@dataclass
class WorldState:
    resources: ResourceModel
    instances: dict[tuple[str, str], dict[str, Any]] = field(default_factory=dict)
    day: str = "mon"
    minute: int = 0

    def copy(self) -> "WorldState":
        return WorldState(self.resources, copy.deepcopy(self.instances), self.day, self.minute)

    def get(self, rtype: str, iid: str) -> dict[str, Any]:
        try:
            return self.instances[(rtype, iid)]
        except KeyError:
            raise UnknownInstance(rtype, iid) from None

    def has(self, rtype: str, iid: str) -> bool:
        return (rtype, iid) in self.instances

    def of_type(self, rtype: str) -> list[str]:
        return sorted(i for t, i in self.instances if t == rtype)

    def to_records(self) -> list[dict]:
        return [
            {"type": t, "id": i, "fields": self.instances[(t, i)]}
            for t, i in sorted(self.instances)
        ]

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.to_records())

    def __eq__(self, other) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        return (self.instances, self.day, self.minute) == (other.instances, other.day, other.minute)


def check_schema(resources: ResourceModel) -> None:
    for rtype, fields in REQUIRED_SCHEMA.items():
        rt = resources.types.get(rtype)
        if rt is None:
            raise SimulationError(f"the supermarket world needs a {rtype} resource type")
        for fname, kind in fields.items():
            fk = rt.field_kind(fname)
            if fk is None or fk.kind != kind:
                raise SimulationError(f"{rtype}.{fname} must be declared with kind {kind}")


def default_value(kind) -> Any:
    return {
        "integer": 0,
        "boolean": False,
        "text": "",
        "time": 0,
        "ref": None,
        "set": [],
    }.get(kind.kind, kind.values[0] if kind.values else None)


def new_instance(resources: ResourceModel, rtype: str, values: Mapping[str, Any] | None = None) -> dict[str, Any]:
    rt = resources.types[rtype]
    inst = {fname: default_value(kind) for fname, kind in rt.fields}
    for k, v in (values or {}).items():
        if k not in inst:
            raise SimulationError(f"{rtype} has no field {k!r}")
        inst[k] = v
    return inst


def new_world(bundle_or_resources, instances: Mapping[tuple[str, str], Mapping[str, Any]] = ()) -> WorldState:
    """World with a clock at Monday 00:00 plus the given instances."""
    resources = bundle_or_resources.resources if isinstance(bundle_or_resources, ModelBundle) else bundle_or_resources
    check_schema(resources)
    world = WorldState(resources)
    world.instances[("Clock", CLOCK_ID)] = new_instance(resources, "Clock")
    for (rtype, iid), values in dict(instances).items():
        world.instances[(rtype, iid)] = new_instance(resources, rtype, values)
    _sync_clock(world)
    return world


def _sync_clock(world: WorldState) -> None:
    clock = world.instances[("Clock", CLOCK_ID)]
    clock.update(time=world.minute, day=world.day, workday=world.day not in WEEKEND)


def set_clock(world: WorldState, day: str, minute: int) -> WorldState:
    w = world.copy()
    w.day, w.minute = day, minute
    _sync_clock(w)
    return w


def check_world(world: WorldState) -> None:
    """Referential integrity and stock bounds; raises WorldCorrupted."""
    for (rtype, iid), inst in world.instances.items():
        rt = world.resources.types[rtype]
        for fname, kind in rt.fields:
            value = inst.get(fname)
            if kind.kind == "ref" and value is not None and not world.has(kind.target, value):
                raise WorldCorrupted(f"{rtype}:{iid}.{fname} points to missing {kind.target}:{value}")
            if kind.kind == "set":
                for v in value:
                    if not world.has(kind.target, v):
                        raise WorldCorrupted(f"{rtype}:{iid}.{fname} holds missing {kind.target}:{v}")
        if rtype == "Item" and inst["stock"] < 0:
            raise WorldCorrupted(f"Item:{iid} has negative stock")


class _Tx:
    """Copy-on-write world with a change log."""

    def __init__(self, world: WorldState):
        self.world = world.copy()
        self.diff: list[dict] = []

    def set(self, rtype: str, iid: str, fname: str, value) -> None:
        inst = self.world.get(rtype, iid)
        old = inst[fname]
        if old != value:
            inst[fname] = value
            self.diff.append({"instance": _key(rtype, iid), "field": fname, "old": old, "new": value})

    def append(self, rtype: str, iid: str, fname: str, value) -> None:
        seq = self.world.get(rtype, iid)[fname]
        seq.append(value)
        self.diff.append({"instance": _key(rtype, iid), "field": fname, "index": len(seq) - 1, "old": None, "new": value})

    def remove_at(self, rtype: str, iid: str, fname: str, index: int) -> None:
        seq = self.world.get(rtype, iid)[fname]
        value = seq.pop(index)
        self.diff.append({"instance": _key(rtype, iid), "field": fname, "index": index, "old": value, "new": None})

    def create(self, rtype: str, iid: str, values: Mapping[str, Any]) -> None:
        inst = new_instance(self.world.resources, rtype, values)
        self.world.instances[(rtype, iid)] = inst
        self.diff.append({"instance": _key(rtype, iid), "created": copy.deepcopy(inst)})

    def done(self, subject: str) -> tuple[WorldState, Outcome]:
        return self.world, Outcome(subject, Status.APPLIED, None, tuple(self.diff))


def _failed(world: WorldState, subject: str, reason: str) -> tuple[WorldState, Outcome]:
    return world, Outcome(subject, Status.FAILED, reason)


def open_order(world: WorldState, shopper: str) -> str | None:
    oid = world.get("Shopper", shopper)["order"]
    if oid is not None and world.get("Order", oid)["open"]:
        return oid
    return None


def _last_index(seq: list, value) -> int | None:
    for i in range(len(seq) - 1, -1, -1):
        if seq[i] == value:
            return i
    return None


# -- events -----------------------------------------------------------------


def apply_event(world: WorldState, event: Event) -> tuple[WorldState, Outcome]:
    """Apply an environment event; the clock is moved to the event's time first.

    Raises UnknownInstance for references to missing instances and
    NegativeStock for a stock change below zero. A redirected shopper's
    AddItem/RemoveItem/Checkout fails instead of raising.
    """
    world = set_clock(world, event.day, event.minute)
    tx = _Tx(world)
    p = event.payload
    kind = event.kind
    if kind is EventKind.ENTER_SYSTEM:
        sid = p["shopper"]
        if not world.has("Shopper", sid):
            if "age" not in p:
                raise UnknownInstance("Shopper", sid)
            tx.create("Shopper", sid, {"age": p["age"], "status": "active"})
        else:
            if "age" in p:
                tx.set("Shopper", sid, "age", p["age"])
            tx.set("Shopper", sid, "status", "active")
        return tx.done(event.id)

    if kind is EventKind.STOCK_CHANGE:
        world.get("Item", p["item"])
        if p["stock"] < 0:
            raise NegativeStock(f"stock of {p['item']} cannot become {p['stock']}")
        tx.set("Item", p["item"], "stock", p["stock"])
        return tx.done(event.id)

    if kind in (EventKind.TICK, EventKind.INJECT_REQUIREMENT, EventKind.RETIRE_REQUIREMENT):
        return tx.done(event.id)

    sid = p["shopper"]
    shopper = world.get("Shopper", sid)
    if "item" in p:
        world.get("Item", p["item"])
    if shopper["status"] == "redirected":
        return _failed(world, event.id, "redirected")

    if kind is EventKind.ADD_ITEM:
        oid = open_order(world, sid)
        if oid is None:
            n = sum(1 for o in world.of_type("Order") if world.get("Order", o)["owner"] == sid)
            oid = f"{sid}-{n + 1}"
            tx.create("Order", oid, {"owner": sid, "open": True})
            tx.set("Shopper", sid, "order", oid)
        for _ in range(p.get("qty", 1)):
            tx.append("Order", oid, "items", p["item"])
        return tx.done(event.id)

    oid = open_order(world, sid)
    if oid is None:
        return _failed(world, event.id, "no_open_order")
    order = world.get("Order", oid)

    if kind is EventKind.REMOVE_ITEM:
        idx = _last_index(order["items"], p["item"])
        if idx is None:
            return _failed(world, event.id, "item_not_in_order")
        tx.remove_at("Order", oid, "items", idx)
        return tx.done(event.id)

    if kind is EventKind.CHECKOUT:
        counts: dict[str, int] = {}
        for it in order["items"]:
            counts[it] = counts.get(it, 0) + 1
        for it, n in sorted(counts.items()):
            if world.get("Item", it)["stock"] < n:
                return _failed(world, event.id, f"insufficient_stock:{it}")
        for it, n in sorted(counts.items()):
            tx.set("Item", it, "stock", world.get("Item", it)["stock"] - n)
        tx.set("Order", oid, "open", False)
        return tx.done(event.id)

    raise SimulationError(f"unhandled event kind {kind}")


def event_bindings(world: WorldState, event: Event) -> dict[str, str]:
    """Instances an event exposes to rules, besides the global clock.

    Only shopping interactions bind instances; environment changes, ticks and
    requirement changes bind nothing.
    """
    if event.kind not in (EventKind.ADD_ITEM, EventKind.REMOVE_ITEM, EventKind.CHECKOUT):
        return {}
    sid = event.payload["shopper"]
    out = {"Shopper": sid}
    oid = open_order(world, sid)
    if oid is not None:
        out["Order"] = oid
    if event.kind is EventKind.ADD_ITEM:
        out["Item"] = event.payload["item"]
    return out


# -- actions ----------------------------------------------------------------


@dataclass(frozen=True)
class ActionInstance:
    """An operation's action bound to the instances of one event."""

    operation: str
    verb: Verb
    params: Mapping[str, Any]
    bindings: Mapping[str, str]


@dataclass
class IterationContext:
    pending_checkout: str | None = None
    checkout_blocked: bool = False


def resolve_target(world: WorldState, bindings: Mapping[str, str], path: FieldPath) -> tuple[str, str, str]:
    """Follow ``path`` to the instance owning its last field."""
    rtype, iid = path.root, bindings[path.root]
    rt = world.resources.types[rtype]
    for seg in path.segments[:-1]:
        kind = rt.field_kind(seg)
        iid = world.get(rtype, iid)[seg]
        rtype = kind.target
        rt = world.resources.types[rtype]
    return rtype, iid, path.segments[-1]


def apply_action(
    world: WorldState, action: ActionInstance, ctx: IterationContext | None = None
) -> tuple[WorldState, Outcome]:
    ctx = ctx if ctx is not None else IterationContext()
    b = action.bindings
    subject = action.operation
    verb = action.verb

    def need(*types: str) -> str | None:
        missing = [t for t in types if t not in b]
        return f"unbound:{','.join(missing)}" if missing else None

    if verb is Verb.REDIRECT_OUT:
        if reason := need("Shopper"):
            return _failed(world, subject, reason)
        if world.get("Shopper", b["Shopper"])["status"] == "redirected":
            return _failed(world, subject, "already_redirected")
        tx = _Tx(world)
        tx.set("Shopper", b["Shopper"], "status", "redirected")
        return tx.done(subject)

    if verb is Verb.SET_FIELD:
        target: FieldPath = action.params["target"]
        if reason := need(target.root):
            return _failed(world, subject, reason)
        rtype, iid, fname = resolve_target(world, b, target)
        if iid is None:
            return _failed(world, subject, "dangling_reference")
        tx = _Tx(world)
        tx.set(rtype, iid, fname, literal_value(action.params["value"]))
        return tx.done(subject)

    if verb is Verb.BLOCK_CHECKOUT:
        if reason := need("Order"):
            return _failed(world, subject, reason)
        if ctx.pending_checkout != b["Order"]:
            return _failed(world, subject, "no_pending_checkout")
        ctx.checkout_blocked = True
        return world, Outcome(subject, Status.APPLIED, None, ())

    if reason := need("Order") if verb is Verb.CAP_BASKET else need("Order", "Item"):
        return _failed(world, subject, reason)
    oid = b["Order"]
    order = world.get("Order", oid)
    if not order["open"]:
        return _failed(world, subject, "no_open_order")
    item = b.get("Item")

    if verb is Verb.EXEMPT_ITEM:
        tx = _Tx(world)
        if item not in order["exempt"]:
            tx.append("Order", oid, "exempt", item)
        return tx.done(subject)

    if item is not None and item in order["exempt"]:
        return _failed(world, subject, "exempt")

    if verb is Verb.REMOVE_ITEM:
        idx = _last_index(order["items"], item)
        if idx is None:
            return _failed(world, subject, "item_not_in_order")
        tx = _Tx(world)
        tx.remove_at("Order", oid, "items", idx)
        return tx.done(subject)

    if verb is Verb.CAP_BASKET:
        limit = action.params["n"]
        tx = _Tx(world)
        items = order["items"]
        size = len(items)
        for idx in range(len(items) - 1, -1, -1):
            if size <= limit:
                break
            if items[idx] in order["exempt"]:
                continue
            tx.remove_at("Order", oid, "items", idx)
            size -= 1
        if size > limit:
            return _failed(world, subject, "exempt")
        return tx.done(subject)

    raise SimulationError(f"unhandled verb {verb}")


def run(timeline, bundle: ModelBundle, world0: WorldState):
    """Fold the MAPE-K loop over ``timeline``; returns (trace, final world)."""
    from .engine import Engine

    engine = Engine(bundle, world0)
    for event in timeline:
        engine.step(event)
    return engine.trace, engine.world
