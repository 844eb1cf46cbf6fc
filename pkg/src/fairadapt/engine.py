"""The MAPE-K loop over the three runtime models.

One iteration handles one event:

1. Monitor evaluates the rule of every operation whose root types the event
   binds.
2. Analyse derives OFR statuses (a triggered operation whose action was not
   applied is a violation), lifts them through the goal forest and marks
   violations explained by a conflicting, more authoritative fulfilled FR.
3. Plan picks, at every OR choice point under a violated root, the option
   touching the fewest other fulfilled requirements.
4. Execute deduplicates OR alternatives, orders actions so none runs on an
   instance another action has already invalidated, and applies them.

Analyse runs twice per iteration: before execution it yields the remediation
targets, after execution it yields the statuses recorded in the trace.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

from .model import (
    INVALIDATING_VERBS,
    SAME_GOAL,
    Access,
    FieldPath,
    ModelBundle,
    ModelError,
    NodeStatus,
    Operation,
    Relation,
    Rule,
    Verb,
    affected_overlap,
    literal_value,
    propagate_satisfaction,
    relation,
    resources_of,
)
from .simulator import (
    CLOCK_ID,
    GLOBAL_TYPES,
    ActionInstance,
    Event,
    EventKind,
    IterationContext,
    Outcome,
    SimulationError,
    Status,
    WorldState,
    apply_action,
    apply_event,
    check_world,
    event_bindings,
    open_order,
    set_clock,
)


class EngineError(Exception):
    pass


class UnboundRootType(EngineError):
    def __init__(self, operation: str, missing: list[str]):
        super().__init__(f"operation {operation} needs {', '.join(missing)}, which the event does not bind")
        self.operation = operation
        self.missing = missing


class NoOperationalisation(EngineError):
    def __init__(self, node: str):
        super().__init__(f"leaf {node} has no operation to plan with")
        self.node = node


# -- Monitor ------------------------------------------------------------------


@dataclass(frozen=True)
class RuleEvaluation:
    operation: str
    event: str
    day: str
    minute: int
    result: bool
    bindings: Mapping[str, str]

    def to_json(self) -> dict:
        return {
            "operation": self.operation,
            "event": self.event,
            "day": self.day,
            "minute": self.minute,
            "result": self.result,
            "bindings": dict(sorted(self.bindings.items())),
        }


def path_value(world: WorldState, bindings: Mapping[str, str], path: FieldPath):
    """Runtime value of ``path``; None when a reference along it is unset."""
    rtype, iid = path.root, bindings[path.root]
    inst = world.get(rtype, iid)
    rt = world.resources.types[rtype]
    for seg in path.segments[:-1]:
        target = rt.field_kind(seg).target
        iid = inst[seg]
        if iid is None:
            return None
        inst = world.get(target, iid)
        rt = world.resources.types[target]
    value = inst[path.segments[-1]]
    return len(value) if path.count else value


_COMPARE = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def evaluate_rule(rule: Rule, world: WorldState, bindings: Mapping[str, str]) -> bool:
    """Conjunction of the rule's conditions. Unset references make a condition false."""
    for cond in rule.conditions:
        lhs = path_value(world, bindings, cond.lhs)
        rhs = path_value(world, bindings, cond.rhs) if isinstance(cond.rhs, FieldPath) else literal_value(cond.rhs)
        if lhs is None or rhs is None or not _COMPARE[cond.op](lhs, rhs):
            return False
    return True


def context_bindings(event: Event, world: WorldState) -> dict[str, str]:
    out = {t: CLOCK_ID for t in GLOBAL_TYPES}
    out.update(event_bindings(world, event))
    return out


def monitor(event: Event, world: WorldState, bundle: ModelBundle, strict: bool = False) -> list[RuleEvaluation]:
    """Evaluate every operation whose rule roots are bound by the event.

    Operations with unbound roots are skipped, or raise UnboundRootType when
    ``strict`` is set.
    """
    bindings = context_bindings(event, world)
    out = []
    for oid in sorted(bundle.opm.operations):
        op = bundle.opm.operations[oid]
        roots = op.rule.roots()
        missing = sorted(roots - bindings.keys())
        if missing:
            if strict:
                raise UnboundRootType(oid, missing)
            continue
        used = {t: bindings[t] for t in sorted(roots)}
        result = evaluate_rule(op.rule, world, bindings)
        out.append(RuleEvaluation(oid, event.id, event.day, event.minute, result, used))
    return out


def unbound_operations(event: Event, world: WorldState, bundle: ModelBundle) -> list[str]:
    bound = context_bindings(event, world).keys()
    return sorted(oid for oid, op in bundle.opm.operations.items() if not op.rule.roots() <= bound)


# -- Analyse ------------------------------------------------------------------


class Severity(str, Enum):
    LIKELY = "Likely"
    DISCOUNTED = "Discounted"


@dataclass(frozen=True)
class ConflictEdge:
    fr_a: str
    fr_b: str
    shared: frozenset[str]
    stakeholder_overlap: frozenset[str]
    severity: Severity
    evidence: tuple[tuple[str, str, str], ...]

    def other(self, fr: str) -> str:
        return self.fr_b if fr == self.fr_a else self.fr_a

    def to_json(self) -> dict:
        return {
            "frs": [self.fr_a, self.fr_b],
            "shared": sorted(self.shared),
            "overlap": sorted(self.stakeholder_overlap),
            "severity": self.severity.value,
            "evidence": [list(e) for e in self.evidence],
        }


def detect_conflicts(bundle: ModelBundle, statuses: Mapping[str, NodeStatus] | None = None) -> list[ConflictEdge]:
    """Pairs of requirements whose operations share a resource one of them writes.

    Without ``statuses`` every pair is examined (static analysis). With them,
    pairs involving an IDLE requirement are left out.
    """
    frm = bundle.frm
    nodes = sorted(frm.nodes)
    if statuses is not None:
        nodes = [n for n in nodes if statuses.get(n, NodeStatus.IDLE) is not NodeStatus.IDLE]
    used = {n: resources_of(n, bundle) for n in nodes}
    writes = {n: {t for t, a in used[n].items() if a is Access.WRITE} for n in nodes}
    edges = []
    for i, a in enumerate(nodes):
        for b in nodes[i + 1 :]:
            shared = (writes[a] & used[b].keys()) | (writes[b] & used[a].keys())
            if not shared:
                continue
            evidence = set()
            for op_a in bundle.operations_of(a):
                for op_b in bundle.operations_of(b):
                    for r in shared & op_a.types & op_b.types:
                        if r in op_a.write_types or r in op_b.write_types:
                            evidence.add((op_a.id, op_b.id, r))
            severity = Severity.DISCOUNTED if relation(a, b, frm) in SAME_GOAL else Severity.LIKELY
            edges.append(
                ConflictEdge(a, b, frozenset(shared), affected_overlap(a, b, frm), severity, tuple(sorted(evidence)))
            )
    return edges


@dataclass(frozen=True)
class Analysis:
    statuses: Mapping[str, NodeStatus]
    leaf_statuses: Mapping[str, NodeStatus]
    conflicts: tuple[ConflictEdge, ...]
    explained: Mapping[str, tuple[ConflictEdge, ...]]
    targets: tuple[str, ...]
    changes: Mapping[str, tuple[str, str]] = field(default_factory=dict)


def analyse(
    evaluations: Iterable[RuleEvaluation],
    executed: Iterable[Outcome],
    bundle: ModelBundle,
    prior: Mapping[str, NodeStatus] | None = None,
    passed_over: Iterable[str] = (),
) -> Analysis:
    """Statuses, conflicts and remediation targets for one iteration.

    ``passed_over`` names triggered operations the planner deliberately left
    out in favour of an OR alternative; they do not count as violations.
    ``prior`` holds the last known status of each requirement; it only feeds
    the reported status changes, never the classification itself.
    """
    triggered = {e.operation for e in evaluations if e.result} - set(passed_over)
    applied = {o.subject for o in executed if o.status is Status.APPLIED}
    leaf: dict[str, NodeStatus] = {}
    for ofr_id in bundle.frm.ofrs:
        ops = [op.id for op in bundle.opm.for_ofr(ofr_id) if op.id in triggered]
        if any(o in applied for o in ops):
            leaf[ofr_id] = NodeStatus.FULFILLED
        elif ops:
            leaf[ofr_id] = NodeStatus.VIOLATED
        else:
            leaf[ofr_id] = NodeStatus.IDLE
    statuses = propagate_satisfaction(bundle.frm, leaf)
    conflicts = detect_conflicts(bundle, statuses)
    frm = bundle.frm
    explained: dict[str, tuple[ConflictEdge, ...]] = {}
    for fr in sorted(statuses):
        if statuses[fr] is not NodeStatus.VIOLATED:
            continue
        prio = frm.nodes[fr].priority
        hits = tuple(
            e
            for e in conflicts
            if fr in (e.fr_a, e.fr_b)
            and e.severity is Severity.LIKELY
            and statuses[e.other(fr)] is NodeStatus.FULFILLED
            and frm.nodes[e.other(fr)].priority <= prio
        )
        if hits:
            explained[fr] = hits
    final = {fr: NodeStatus.CONFLICT_EXPLAINED if fr in explained else s for fr, s in statuses.items()}
    targets = tuple(r for r in frm.roots() if final[r] is NodeStatus.VIOLATED)
    changes = {}
    if prior is not None:
        for fr, s in sorted(final.items()):
            old = prior.get(fr, NodeStatus.IDLE)
            if s is not NodeStatus.IDLE and s is not old:
                changes[fr] = (old.value, s.value)
    return Analysis(final, leaf, tuple(conflicts), explained, targets, changes)


# -- Plan ---------------------------------------------------------------------


@dataclass(frozen=True)
class ChoicePoint:
    node: str
    options: tuple[tuple[tuple[str, ...], int], ...]  # (operation ids, score)
    chosen: int


@dataclass(frozen=True)
class Plan:
    target: str
    chosen: tuple[str, ...]
    rejected: tuple[tuple[str, int, str], ...]
    scores: Mapping[str, int]
    choices: tuple[ChoicePoint, ...] = ()

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "chosen": list(self.chosen),
            "rejected": [{"operation": o, "score": s, "reason": r} for o, s, r in self.rejected],
            "scores": dict(sorted(self.scores.items())),
            "choices": [
                {"node": c.node, "options": [{"operations": list(ops), "score": s} for ops, s in c.options], "chosen": c.chosen}
                for c in self.choices
            ],
        }


def conflicting_fulfilled(op: Operation, target: str, statuses: Mapping[str, NodeStatus], bundle: ModelBundle) -> set[str]:
    """Fulfilled requirements outside the target's goal that ``op`` would write into."""
    out = set()
    writes = op.write_types
    for g, status in statuses.items():
        if status is not NodeStatus.FULFILLED or g not in bundle.frm.nodes:
            continue
        if relation(target, g, bundle.frm) not in (Relation.DIVERGES_AT_OR, Relation.UNRELATED):
            continue
        if writes & resources_of(g, bundle).keys():
            out.add(g)
    return out


def plan(
    target: str,
    statuses: Mapping[str, NodeStatus],
    bundle: ModelBundle,
    triggered: set[str] | None = None,
) -> Plan:
    """Least-conflicting operations for the violated subtree rooted at ``target``.

    ``triggered`` limits candidates to operations whose rule held this
    iteration; None makes every operation a candidate.
    """
    frm = bundle.frm
    target = frm.node_id(target)
    conflicts: dict[str, set[str]] = {}
    choices: list[ChoicePoint] = []
    rejected: list[tuple[str, int, str]] = []

    def score_of(ops: tuple[str, ...]) -> int:
        hit: set[str] = set()
        for oid in ops:
            if oid not in conflicts:
                conflicts[oid] = conflicting_fulfilled(bundle.opm.operations[oid], target, statuses, bundle)
            hit |= conflicts[oid]
        return len(hit)

    def choose(node: str, options: list[tuple[str, ...]]) -> tuple[str, ...]:
        scored = [(ops, score_of(ops)) for ops in options]
        if len(scored) == 1:
            return scored[0][0]

        def key(i: int):
            ops, s = scored[i]
            nwrites = len(set().union(*(bundle.opm.operations[o].write_types for o in ops)))
            return s, nwrites, ops

        order = sorted(range(len(scored)), key=key)
        best = order[0]
        choices.append(ChoicePoint(node, tuple(scored), best))
        best_score = scored[best][1]
        for i in order[1:]:
            ops, s = scored[i]
            why = f"score {s} > {best_score}" if s > best_score else f"tie at score {s}, lost tie-break"
            rejected.extend((o, score_of((o,)), why) for o in ops)
        return scored[best][0]

    def select(node: str) -> tuple[str, ...] | None:
        n = frm.nodes[node]
        if n.is_leaf:
            ops = bundle.opm.for_ofr(n.children[0])
            if not ops:
                raise NoOperationalisation(node)
            cands = [(op.id,) for op in ops if triggered is None or op.id in triggered]
            if not cands:
                return None
            return choose(node, cands)
        parts = [p for p in (select(c) for c in n.children) if p is not None]
        if not parts:
            return None
        if n.decomposition.value == "AND":
            return tuple(o for p in parts for o in p)
        return choose(node, parts)

    chosen = select(target) or ()
    for oid in chosen:
        score_of((oid,))
    scores = {oid: len(hit) for oid, hit in conflicts.items()}
    return Plan(target, chosen, tuple(rejected), scores, tuple(choices))


# -- Execute ------------------------------------------------------------------


def _invalidated(op: Operation, bindings: Mapping[str, str]) -> set[tuple[str, str]]:
    if op.action.verb is Verb.REDIRECT_OUT:
        types = ("Shopper",)
    elif op.action.verb is Verb.REMOVE_ITEM:
        types = ("Item", "Order")
    else:
        types = ()
    assert op.action.verb in INVALIDATING_VERBS or not types
    return {(t, bindings[t]) for t in types if t in bindings}


def _footprint(op: Operation, bindings: Mapping[str, str]) -> set[tuple[str, str]]:
    return {(t, bindings[t]) for t in op.types if t in bindings}


@dataclass(frozen=True)
class Execution:
    log: tuple[Outcome, ...]
    world: WorldState
    deduplicated: tuple[tuple[str, str], ...]  # (dropped operation, kept OR-alternative)
    order: tuple[str, ...]


def execute(
    plans: Iterable[Plan],
    world: WorldState,
    bundle: ModelBundle,
    bindings: Mapping[str, str] | None = None,
    ctx: IterationContext | None = None,
) -> Execution:
    """Apply the chosen actions of ``plans``.

    At most one operation of each OR-alternative set runs (lowest score, then
    smallest id). Invalidating actions run after every other action touching
    the instance they invalidate; a cyclic constraint aborts the
    lower-priority action. Action failures are logged, never raised.
    """
    bindings = dict(bindings or {})
    ctx = ctx if ctx is not None else IterationContext()
    frm = bundle.frm
    score: dict[str, int] = {}
    for p in plans:
        for oid in p.chosen:
            s = p.scores.get(oid, 0)
            score[oid] = min(score.get(oid, s), s)

    kept: list[str] = []
    dropped: list[tuple[str, str]] = []
    for oid in sorted(score, key=lambda o: (score[o], o)):
        leaf = bundle.node_of_operation(oid)
        rival = next((k for k in kept if relation(leaf, bundle.node_of_operation(k), frm) is Relation.DIVERGES_AT_OR), None)
        if rival is None:
            kept.append(oid)
        else:
            dropped.append((oid, rival))

    ops = {oid: bundle.opm.operations[oid] for oid in kept}
    prio = {oid: bundle.priority_of_operation(oid) for oid in kept}
    before: dict[str, set[str]] = {oid: set() for oid in kept}  # oid -> operations that must precede it
    for a in kept:
        inv = _invalidated(ops[a], bindings)
        if not inv:
            continue
        for b in kept:
            if b != a and inv & _footprint(ops[b], bindings):
                before[a].add(b)

    log: list[Outcome] = []
    order: list[str] = []
    remaining = set(kept)
    done: set[str] = set()
    while remaining:
        ready = [(prio[o], o) for o in remaining if before[o] <= done]
        if not ready:
            # every remaining action waits on another: drop the least authoritative
            victim = max(remaining, key=lambda o: (prio[o], o))
            remaining.discard(victim)
            done.add(victim)
            log.append(Outcome(victim, Status.FAILED, "ordering_cycle"))
            continue
        heapq.heapify(ready)
        _, oid = heapq.heappop(ready)
        remaining.discard(oid)
        done.add(oid)
        order.append(oid)
        op = ops[oid]
        inst = ActionInstance(oid, op.action.verb, dict(op.action.params), bindings)
        try:
            world, outcome = apply_action(world, inst, ctx)
        except SimulationError as exc:
            outcome = Outcome(oid, Status.FAILED, f"error:{exc}")
        log.append(outcome)
    return Execution(tuple(log), world, tuple(dropped), tuple(order))


# -- the loop -------------------------------------------------------------------


@dataclass(frozen=True)
class Knowledge:
    """What the loop carries between iterations besides the models and the world."""

    standing: Mapping[str, NodeStatus] = field(default_factory=dict)
    version: int = 1
    iteration: int = 0


@dataclass(frozen=True)
class IterationResult:
    record: dict
    world: WorldState
    bundle: ModelBundle
    knowledge: Knowledge
    evaluations: tuple[RuleEvaluation, ...] = ()
    analysis: Analysis | None = None
    plans: tuple[Plan, ...] = ()
    execution: Execution | None = None


def _statuses_json(statuses: Mapping[str, NodeStatus]) -> dict:
    return {k: v.value for k, v in sorted(statuses.items())}


def mape_iteration(event: Event, world: WorldState, bundle: ModelBundle, prior: Knowledge) -> IterationResult:
    """Run one monitor-analyse-plan-execute cycle for ``event``.

    Requirement injections and retirements are recorded under the current
    model snapshot and take effect for the next iteration.
    """
    errors: list[str] = []
    diff: list[dict] = []
    ctx = IterationContext()
    checkout = event.kind is EventKind.CHECKOUT
    live = True
    try:
        staged, ev_out = apply_event(world, event)
    except SimulationError as exc:
        staged, ev_out = set_clock(world, event.day, event.minute), Outcome(event.id, Status.FAILED, f"error:{exc}")
        errors.append(str(exc))
    if ev_out.status is Status.FAILED:
        live = False
        current = set_clock(world, event.day, event.minute)
    elif checkout:
        # commit happens after execute so actions can still shape the order
        current = set_clock(world, event.day, event.minute)
        ctx.pending_checkout = open_order(current, event.payload["shopper"])
    else:
        current = staged
        diff.extend(ev_out.diff)

    if live:
        evaluations = monitor(event, current, bundle)
        unbound = unbound_operations(event, current, bundle)
        bindings = context_bindings(event, current)
    else:
        evaluations, unbound, bindings = [], [], {}
    triggered = {e.operation for e in evaluations if e.result}

    pre = analyse(evaluations, (), bundle, prior.standing)
    merged = {
        fr: s if s is not NodeStatus.IDLE else prior.standing.get(fr, NodeStatus.IDLE)
        for fr, s in pre.statuses.items()
    }
    plans = []
    for target in pre.targets:
        try:
            plans.append(plan(target, merged, bundle, triggered))
        except (EngineError, ModelError) as exc:
            errors.append(str(exc))
    execution = execute(plans, current, bundle, bindings, ctx)
    current = execution.world
    for o in execution.log:
        diff.extend(o.diff)
    attempted = {o.subject for o in execution.log}
    passed = {o for p in plans for o, _, _ in p.rejected} | {d for d, _ in execution.deduplicated}
    post = analyse(evaluations, execution.log, bundle, prior.standing, passed - attempted)

    if live and checkout:
        if ctx.checkout_blocked:
            ev_out = Outcome(event.id, Status.FAILED, "blocked")
        else:
            current, ev_out = apply_event(current, event)
            diff.extend(ev_out.diff)

    check_world(current)

    standing = dict(prior.standing)
    for fr, s in post.statuses.items():
        if s is not NodeStatus.IDLE:
            standing[fr] = s

    next_bundle, version = bundle, prior.version
    if event.kind in (EventKind.INJECT_REQUIREMENT, EventKind.RETIRE_REQUIREMENT):
        from . import dsl

        if event.kind is EventKind.INJECT_REQUIREMENT:
            result = dsl.merge_fragment(bundle, event.fragment)
        else:
            result = dsl.retire_requirement(bundle, event.payload["fr"])
        if result.ok:
            next_bundle, version = result.value, prior.version + 1
            standing = {fr: s for fr, s in standing.items() if fr in next_bundle.frm.nodes}
        else:
            errors.extend(str(d) for d in result.errors)
            errors.append(f"requirement change in {event.id} rejected")

    iteration = prior.iteration + 1
    frm = bundle.frm
    record = {
        "iteration": iteration,
        "snapshot": prior.version,
        "time": {"day": event.day, "minute": event.minute, "clock": event.clock},
        "event": event.to_json(),
        "event_outcome": ev_out.to_json(),
        "evaluations": [e.to_json() for e in evaluations],
        "unbound": unbound,
        "operations_of": {fr: sorted(op.id for op in bundle.operations_of(fr)) for fr in sorted(frm.nodes)},
        "priorities": {fr: frm.nodes[fr].priority for fr in sorted(frm.nodes)},
        "initial_statuses": _statuses_json(pre.statuses),
        "statuses": _statuses_json(post.statuses),
        "status_changes": {fr: list(ch) for fr, ch in post.changes.items()},
        "conflicts": [e.to_json() for e in post.conflicts],
        "explained": {
            fr: [
                {
                    "with": e.other(fr),
                    "priority": frm.nodes[e.other(fr)].priority,
                    "own_priority": frm.nodes[fr].priority,
                    "severity": e.severity.value,
                    "shared": sorted(e.shared),
                    "overlap": sorted(e.stakeholder_overlap),
                }
                for e in edges
            ]
            for fr, edges in sorted(post.explained.items())
        },
        "planned_targets": list(pre.targets),
        "plans": [p.to_json() for p in plans],
        "deduplicated": [{"operation": d, "kept": k} for d, k in execution.deduplicated],
        "executed": [o.to_json() for o in execution.log],
        "remediation_targets": list(post.targets),
        "world_diff": diff,
        "errors": errors,
    }
    knowledge = Knowledge(standing, version, iteration)
    return IterationResult(
        record, current, next_bundle, knowledge, tuple(evaluations), post, tuple(plans), execution
    )


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class AdaptationTrace:
    """Append-only list of iteration records."""

    def __init__(self, records: Iterable[dict] = ()):
        self._records: list[dict] = list(records)

    def append(self, record: dict) -> None:
        self._records.append(record)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, i: int) -> dict:
        return self._records[i]

    def to_ndjson(self) -> str:
        return "".join(_dumps(r) + "\n" for r in self._records)

    @classmethod
    def from_ndjson(cls, text: str) -> "AdaptationTrace":
        return cls(json.loads(line) for line in text.splitlines() if line.strip())

    def events(self) -> list[Event]:
        """Rebuild the events of the trace so it can be replayed."""
        from .dsl import parse_decls

        out = []
        for r in self._records:
            e = r["event"]
            kind = EventKind(e["kind"])
            fragment = ()
            if kind is EventKind.INJECT_REQUIREMENT:
                fragment = tuple(parse_decls(e["payload"]["text"], "<trace>")[0])
            out.append(Event(e["id"], e["day"], e["minute"], kind, e["payload"], fragment))
        return out


class Engine:
    """A single-threaded managing element: models, world and trace."""

    def __init__(self, bundle: ModelBundle, world: WorldState, knowledge: Knowledge | None = None):
        self.bundle = bundle
        self.world = world
        self.knowledge = knowledge or Knowledge()
        self.trace = AdaptationTrace()
        self.results: list[IterationResult] = []

    def step(self, event: Event) -> dict:
        result = mape_iteration(event, self.world, self.bundle, self.knowledge)
        self.world, self.bundle, self.knowledge = result.world, result.bundle, result.knowledge
        self.trace.append(result.record)
        self.results.append(result)
        return result.record
