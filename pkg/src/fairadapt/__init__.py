"""Fairness requirements as runtime models for a self-adaptive online shop."""

from __future__ import annotations

from .dsl import ParseResult, load_model, parse_model, parse_scenario, serialize
from .engine import (
    AdaptationTrace,
    ConflictEdge,
    Engine,
    Knowledge,
    Plan,
    RuleEvaluation,
    analyse,
    detect_conflicts,
    execute,
    mape_iteration,
    monitor,
    plan,
)
from .model import ModelBundle, NodeStatus, Relation, relation, resources_of
from .simulator import Event, EventKind, Outcome, Status, WorldState, apply_action, apply_event, new_world, run

__all__ = [
    "AdaptationTrace",
    "ConflictEdge",
    "Engine",
    "Event",
    "EventKind",
    "Knowledge",
    "ModelBundle",
    "NodeStatus",
    "Outcome",
    "ParseResult",
    "Plan",
    "Relation",
    "RuleEvaluation",
    "Status",
    "WorldState",
    "analyse",
    "apply_action",
    "apply_event",
    "detect_conflicts",
    "execute",
    "load_model",
    "mape_iteration",
    "monitor",
    "new_world",
    "parse_model",
    "parse_scenario",
    "plan",
    "relation",
    "resources_of",
    "run",
    "serialize",
]
