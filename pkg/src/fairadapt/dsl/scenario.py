"""Scenario timelines (``.scn``).

::

    scenario := { instance | event }
    instance := "instance" TYPE ID { KEY "=" VALUE }
    event    := "at" DAY HH:MM KIND { KEY "=" VALUE } [ "{" model declarations "}" ]

Event kinds and their keys:

    enter_system        shopper [age]
    add_item            shopper item [qty]
    remove_item         shopper item
    checkout            shopper
    stock_change        item stock
    inject_requirement  (model declarations in braces)
    retire_requirement  fr
    tick

Error codes: E060 timestamps out of order, E061 unknown instance,
E062 unknown event kind or day, E063 missing or invalid key,
E064 bad instance declaration, E065 requirement change cannot apply.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Mapping

from ..model import ModelBundle
from ..simulator import DAYS, Event, EventKind, WorldState, new_world
from .build import build_bundle
from .diagnostics import SourceSpan, error
from .lexer import EOF, ID, INT, PUNCT, STRING, TIME, Token, tokenize
from .syntax import Parser, _Abort

if TYPE_CHECKING:
    from . import ParseResult

EVENT_KINDS = {
    "enter_system": EventKind.ENTER_SYSTEM,
    "add_item": EventKind.ADD_ITEM,
    "remove_item": EventKind.REMOVE_ITEM,
    "checkout": EventKind.CHECKOUT,
    "stock_change": EventKind.STOCK_CHANGE,
    "inject_requirement": EventKind.INJECT_REQUIREMENT,
    "retire_requirement": EventKind.RETIRE_REQUIREMENT,
    "tick": EventKind.TICK,
}

# key -> (required, value kind); "shopper"/"item" values are instance ids
EVENT_KEYS: dict[EventKind, dict[str, tuple[bool, str]]] = {
    EventKind.ENTER_SYSTEM: {"shopper": (True, "id"), "age": (False, "int")},
    EventKind.ADD_ITEM: {"shopper": (True, "id"), "item": (True, "id"), "qty": (False, "int")},
    EventKind.REMOVE_ITEM: {"shopper": (True, "id"), "item": (True, "id")},
    EventKind.CHECKOUT: {"shopper": (True, "id")},
    EventKind.STOCK_CHANGE: {"item": (True, "id"), "stock": (True, "int")},
    EventKind.INJECT_REQUIREMENT: {},
    EventKind.RETIRE_REQUIREMENT: {"fr": (True, "id")},
    EventKind.TICK: {},
}


@dataclass(frozen=True)
class Scenario:
    """Initial instances plus a time-ordered event list."""

    instances: Mapping[tuple[str, str], Mapping[str, Any]] = field(default_factory=dict)
    events: tuple[Event, ...] = ()

    def world(self, bundle: ModelBundle) -> WorldState:
        return new_world(bundle, self.instances)

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)


class _ScenarioParser(Parser):
    def __init__(self, tokens: list[Token], source: str, bundle: ModelBundle):
        super().__init__(tokens)
        self.source = source
        self.bundle = bundle
        self.instances: dict[tuple[str, str], dict[str, Any]] = {}
        self.events: list[Event] = []
        self.shoppers: set[str] = set()
        self.last: tuple[tuple[int, int], SourceSpan] | None = None

    def err(self, code: str, msg: str, span: SourceSpan) -> None:
        self.diags.append(error(code, msg, span))

    def parse(self) -> None:
        while self.tok.kind != EOF:
            start = self.pos
            try:
                if self.tok.is_(ID, "instance"):
                    self.instance()
                elif self.tok.is_(ID, "at"):
                    self.event()
                else:
                    self.fail("'instance' or 'at'")
            except _Abort:
                if self.pos == start:
                    self.advance()
                while self.tok.kind != EOF and not (self.tok.is_(ID, "at") or self.tok.is_(ID, "instance")):
                    self.advance()

    def pairs(self) -> list[tuple[Token, Token]]:
        out = []
        while self.tok.kind == ID and self.peek().is_(PUNCT, "="):
            if self.tok.text in ("at", "instance"):
                break
            key = self.advance()
            self.advance()
            if self.tok.kind not in (ID, INT, TIME, STRING):
                self.fail(f"a value for {key.text}")
            out.append((key, self.advance()))
        return out

    def instance(self) -> None:
        self.advance()
        rtype = self.name("resource type")
        iid = self.name("instance id")
        pairs = self.pairs()
        rt = self.bundle.resources.types.get(rtype.text)
        if rt is None:
            self.err("E021", f"unknown resource type {rtype.text!r}", rtype.span)
            return
        if (rtype.text, iid.text) in self.instances:
            self.err("E064", f"duplicate instance {rtype.text} {iid.text}", iid.span)
            return
        values = {}
        for key, val in pairs:
            kind = rt.field_kind(key.text)
            if kind is None:
                self.err("E022", f"{rtype.text} has no field {key.text!r}", key.span)
                continue
            value = self.typed(kind, val)
            if value is not _BAD:
                values[key.text] = value
        self.instances[(rtype.text, iid.text)] = values
        if rtype.text == "Shopper":
            self.shoppers.add(iid.text)

    def typed(self, kind, tok: Token):
        k = kind.kind
        if k == "integer" and tok.kind == INT:
            return tok.value
        if k == "time" and tok.kind == TIME:
            return tok.value
        if k == "text" and tok.kind == STRING:
            return tok.value
        if k == "boolean" and tok.kind == ID and tok.text in ("true", "false"):
            return tok.text == "true"
        if k == "enum" and tok.kind == ID and tok.text in kind.values:
            return tok.text
        if k == "ref" and tok.kind == ID:
            if (kind.target, tok.text) not in self.instances:
                self.err("E061", f"no {kind.target} instance {tok.text!r} declared before this point", tok.span)
                return _BAD
            return tok.text
        self.err("E064", f"{tok.text!r} is not a valid {kind} value", tok.span)
        return _BAD

    def event(self) -> None:
        at = self.advance()
        day = self.expect(ID, what="day (mon..sun)")
        if day.text not in DAYS:
            self.err("E062", f"unknown day {day.text!r}", day.span)
            raise _Abort
        when_tok = self.expect(TIME, what="time HH:MM")
        kind_tok = self.expect(ID, what="event kind")
        kind = EVENT_KINDS.get(kind_tok.text)
        if kind is None:
            self.err("E062", f"unknown event kind {kind_tok.text!r}", kind_tok.span)
            raise _Abort
        pairs = self.pairs()
        fragment, text = (), None
        if kind is EventKind.INJECT_REQUIREMENT:
            open_ = self.expect(PUNCT, "{")
            fragment = tuple(self.parse_decls(stop="}"))
            close = self.expect(PUNCT, "}")
            text = self.source[open_.span.offset + 1 : close.span.offset].strip("\n")
        when = (DAYS.index(day.text), when_tok.value)
        if self.last is not None and when < self.last[0]:
            self.err("E060", f"event at {day.text} {when_tok.text} is earlier than the previous event at {self.last[1]}", when_tok.span)
        self.last = (when, SourceSpan(day.span.file, day.span.line, day.span.column, 0, day.span.offset))
        payload = self.payload(kind, kind_tok, pairs)
        if payload is None:
            return
        if kind is EventKind.INJECT_REQUIREMENT:
            payload["text"] = text
            result_bundle, diags = build_bundle(_merge(self.bundle, fragment))
            self.diags.extend(diags)
            if result_bundle is None:
                if not diags:
                    self.err("E065", "injected requirements do not form a valid model", kind_tok.span)
                return
            self.bundle = result_bundle
        elif kind is EventKind.RETIRE_REQUIREMENT:
            from . import retire_requirement

            result = retire_requirement(self.bundle, payload["fr"])
            if not result.ok:
                detail = "; ".join(d.message for d in result.errors) or "unknown requirement"
                self.err("E065", f"cannot retire {payload['fr']!r}: {detail}", at.span)
                return
            self.bundle = result.value
        eid = f"e{len(self.events) + 1}"
        self.events.append(Event(eid, day.text, when_tok.value, kind, payload, fragment))

    def payload(self, kind: EventKind, kind_tok: Token, pairs) -> dict | None:
        spec = EVENT_KEYS[kind]
        payload: dict[str, Any] = {}
        ok = True
        for key, val in pairs:
            if key.text not in spec:
                self.err("E063", f"{kind_tok.text} takes no key {key.text!r}", key.span)
                ok = False
                continue
            want = spec[key.text][1]
            if want == "int" and val.kind != INT or want == "id" and val.kind != ID:
                self.err("E063", f"{key.text} expects {'an integer' if want == 'int' else 'an identifier'}", val.span)
                ok = False
                continue
            payload[key.text] = val.value
            if key.text in ("stock", "age") and val.value < 0 or key.text == "qty" and val.value < 1:
                self.err("E063", f"{key.text}={val.value} is out of range", val.span)
                ok = False
        for key, (required, _) in spec.items():
            if required and key not in payload and ok:
                self.err("E063", f"{kind_tok.text} requires {key}=", kind_tok.span)
                ok = False
        if not ok:
            return None
        spans = {k.text: v.span for k, v in pairs}
        if "item" in payload and ("Item", payload["item"]) not in self.instances:
            self.err("E061", f"no Item instance {payload['item']!r}", spans["item"])
            ok = False
        if "shopper" in payload:
            sid = payload["shopper"]
            if kind is EventKind.ENTER_SYSTEM:
                if sid not in self.shoppers and "age" not in payload:
                    self.err("E063", f"new shopper {sid!r} needs age=", spans["shopper"])
                    ok = False
                self.shoppers.add(sid)
            elif sid not in self.shoppers:
                self.err("E061", f"no Shopper {sid!r} has entered the system", spans["shopper"])
                ok = False
        return payload if ok else None


_BAD = object()


def _merge(bundle: ModelBundle, fragment):
    from . import decls_of, merge_decls

    return merge_decls(decls_of(bundle), fragment)


def parse_scenario(text: str, bundle: ModelBundle, file: str = "<input>") -> ParseResult:
    """Parse a timeline against ``bundle``.

    Injected fragments are validated against the model snapshot in force at
    that point of the timeline.
    """
    from . import ParseResult

    tokens, diags = tokenize(text, file)
    p = _ScenarioParser(tokens, text, bundle)
    if not diags:
        p.parse()
    diags = diags + p.diags
    if any(d.is_error for d in diags):
        return ParseResult(None, diags)
    return ParseResult(Scenario(p.instances, tuple(p.events)), diags)
