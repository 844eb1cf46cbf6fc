"""Bundled models and scenarios for the online supermarket example."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

FULL_MODEL = "supermarket.frm"
INITIAL_MODEL = "supermarket_initial.frm"
SCENARIO = "pandemic.scn"


def path(name: str) -> Path:
    return Path(str(resources.files(__name__).joinpath(name)))


def read(name: str) -> str:
    return resources.files(__name__).joinpath(name).read_text(encoding="utf-8")
