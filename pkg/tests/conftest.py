import copy

import pytest

import impulsegame as ig

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def minimal_doc(**overrides):
    """1-D document with constant coefficients; override keys per test."""
    doc = {
        "domain": {"lower": [-2.0], "upper": [2.0], "horizon": 1.0},
        "drift": {"kind": "constant", "params": [0.0]},
        "vol": {"kind": "constant", "params": [1.0]},
        "running_cost": {"kind": "constant", "params": [0.0]},
        "bequest": {"kind": "constant", "params": [1.0]},
        "intervention_cost": {"kind": "constant", "params": [0.1]},
        "impulse_set": [[-0.5], [0.5]],
        "impulse_response": "translation",
        "cost_floor": 0.1,
    }
    doc.update(copy.deepcopy(overrides))
    return doc


@pytest.fixture(scope="session")
def stopping_spec():
    return ig.canonical_spec("stopping")


@pytest.fixture(scope="session")
def impulse_spec():
    return ig.canonical_spec("impulse")


@pytest.fixture(scope="session")
def game_spec():
    return ig.canonical_spec("game")


@pytest.fixture(scope="session")
def game_field_small(game_spec):
    grid = ig.build_grid(game_spec.domain, 50, 50)
    return ig.solve_qvi(game_spec, grid)


@pytest.fixture(scope="session")
def game_field_200(game_spec):
    grid = ig.build_grid(game_spec.domain, 200, 200)
    return ig.solve_qvi(game_spec, grid)
