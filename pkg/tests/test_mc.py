import numpy as np
import pytest

import impulsegame as ig
from conftest import minimal_doc


def test_constant_game_estimate_exact():
    doc = minimal_doc(bequest={"kind": "constant", "params": [3.0]})
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, 20, 20)
    field = ig.solve_qvi(spec, grid)
    controller, stopper = ig.extract_policy(spec, field)
    est = ig.estimate_value(spec, controller, stopper, 0.0, [0.3], 50, 0.01, 5)
    assert est.mean == pytest.approx(3.0)
    assert est.std_error == 0.0
    assert est.stop_fraction == 1.0  # constant reward: stop at once


def test_estimates_reproducible(game_spec, game_field_small):
    controller, stopper = ig.extract_policy(game_spec, game_field_small)
    a = ig.estimate_value(game_spec, controller, stopper, 0.0, [0.0], 200, 2e-3, 31)
    b = ig.estimate_value(game_spec, controller, stopper, 0.0, [0.0], 200, 2e-3, 31)
    assert a == b


def test_estimate_reports_diagnostics(game_spec, game_field_small):
    controller, stopper = ig.extract_policy(game_spec, game_field_small)
    est = ig.estimate_value(game_spec, controller, stopper, 0.0, [1.2], 300, 2e-3, 8)
    assert est.n_paths == 300
    assert 0.0 <= est.stop_fraction <= 1.0
    assert 0.0 <= est.exit_fraction <= 1.0
    assert np.isfinite(est.mean_impulse_count)
    payload = est.to_json()
    assert payload["n_paths"] == 300


def test_deviation_stoppers_behave():
    never = ig.NeverStop()
    now = ig.StopImmediately()
    rand = ig.StopAtRandom(0.0, 1.0, 3)
    x = np.zeros((4, 1))
    assert not never.stop_mask(0.5, x).any()
    assert now.stop_mask(0.0, x).all()
    assert not rand.stop_mask(0.0, x).any()
    assert rand.stop_mask(1.0, x).all()
    assert ig.StopAtRandom(0.0, 1.0, 3).threshold == rand.threshold


def test_regularity_probe_constant_field():
    doc = minimal_doc(bequest={"kind": "constant", "params": [1.5]})
    spec = ig.load_spec(doc)
    field = ig.solve_qvi(spec, ig.build_grid(spec.domain, 20, 20))
    probe = ig.regularity_probe(field)
    assert probe.lipschitz_x <= 1e-12
    assert probe.holder_t <= 1e-12


def test_regularity_probe_inherits_payoff_constant(stopping_spec):
    # a field equal to a 1-Lipschitz payoff probes at most 1 + dx
    grid = ig.build_grid(stopping_spec.domain, 40, 40)
    g = np.stack([stopping_spec.G(t, grid.nodes()) for t in grid.times])
    field = ig.ValueField(
        grid=grid,
        values=g,
        mv=np.full_like(g, np.inf),
        mv_argmin=np.full(g.shape, -1, dtype=int),
        bequest=g,
        diagnostics={"fixed_point_tol": 1e-8},
        converged=True,
    )
    probe = ig.regularity_probe(field)
    assert probe.lipschitz_x <= 1.0 + grid.dx[0]


def test_deviation_report_inequalities(game_spec, game_field_200):
    controller, stopper = ig.extract_policy(game_spec, game_field_200)
    grid = game_field_200.grid
    v00 = float(np.interp(0.0, grid.axes[0], game_field_200.values[0]))
    report = ig.deviation_report(
        game_spec, controller, stopper, 0.0, [0.0], v00, 2000, 1e-3, 21
    )
    assert set(report) == {
        "never_stop", "stop_immediately", "stop_at_random", "no_impulse_controller",
    }
    for entry in report.values():
        assert entry["holds"]


def test_stop_immediately_collects_initial_bequest(game_spec, game_field_small):
    controller, _ = ig.extract_policy(game_spec, game_field_small)
    est = ig.estimate_value(
        game_spec, controller, ig.StopImmediately(), 0.0, [0.7], 100, 1e-2, 2
    )
    expected = float(game_spec.G(0.0, np.array([[0.7]]))[0])
    assert est.mean == pytest.approx(expected)
    assert est.std_error <= 1e-15
