"""Bundled benchmark problems used by the verification suite and docs.

``stopping``: the controller is absent and the game collapses to optimal
stopping of a Brownian motion against the reward max(x, 0).
``impulse``: the stopper is disabled; deterministic drift with quadratic
running cost and one downward impulse available.
``game``: both players active; Brownian state, decaying bequest
e^{-t/10} (1 + max(x, 0)), impulses +-1/2 costing 0.1 + |z|/2.
"""

from __future__ import annotations

import json
from importlib import resources

from .model import ProblemSpec, load_spec

NAMES = ("stopping", "impulse", "game")


def canonical_document(name: str) -> dict:
    if name not in NAMES:
        raise KeyError(f"unknown canonical problem {name!r}; choose from {NAMES}")
    text = resources.files("impulsegame.problems").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def canonical_spec(name: str) -> ProblemSpec:
    return load_spec(canonical_document(name))
