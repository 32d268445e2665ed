import numpy as np
import pytest

import impulsegame as ig
from conftest import minimal_doc


def constant_field(k_value=3.0, n=20):
    doc = minimal_doc(bequest={"kind": "constant", "params": [k_value]})
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, n, n)
    return spec, ig.solve_qvi(spec, grid)


def test_constant_game_all_stop_no_intervention():
    spec, field = constant_field()
    controller, stopper = ig.extract_policy(spec, field)
    assert stopper.mask.all()
    assert not controller.mask.any()  # MV exceeds V by the cost floor


def test_policy_masks_deterministic(game_spec, game_field_small):
    a_c, a_s = ig.extract_policy(game_spec, game_field_small, act_tol=1e-6)
    b_c, b_s = ig.extract_policy(game_spec, game_field_small, act_tol=1e-6)
    assert np.array_equal(a_c.mask, b_c.mask)
    assert np.array_equal(a_s.mask, b_s.mask)
    assert np.array_equal(a_c.impulse_map, b_c.impulse_map)


def test_zero_act_tol_keeps_only_certain_nodes(game_spec, game_field_small):
    controller, stopper = ig.extract_policy(game_spec, game_field_small, act_tol=0.0)
    # terminal slice always stops
    assert stopper.mask[-1].all()
    loose_c, loose_s = ig.extract_policy(game_spec, game_field_small, act_tol=0.1)
    assert loose_s.mask.sum() >= stopper.mask.sum()
    assert loose_c.mask.sum() >= controller.mask.sum()


def test_stale_field_rejected(game_spec):
    grid = ig.build_grid(game_spec.domain, 50, 50)
    try:
        ig.solve_qvi(game_spec, grid, ig.SolverParams(max_outer_iters=1))
    except ig.ConvergenceError as err:
        stale = err.field
    with pytest.raises(ig.StaleFieldError):
        ig.extract_policy(game_spec, stale)


def test_controller_acts_only_when_profitable(game_spec, game_field_small):
    controller, _ = ig.extract_policy(game_spec, game_field_small)
    mask = controller.mask
    gap = game_field_small.mv[mask] - game_field_small.values[mask]
    assert gap.max() <= controller.act_tol + 1e-15


def test_intervention_region_has_minimizers(game_spec, game_field_small):
    controller, _ = ig.extract_policy(game_spec, game_field_small)
    assert (game_field_small.mv_argmin[controller.mask] >= 0).all()


def test_stop_region_monotone_in_x_for_pure_stopping(stopping_spec):
    # the stopping payoff grows with x, so the stop region is an upper set
    # in space on every slice away from the terminal one
    grid = ig.build_grid(stopping_spec.domain, 100, 100)
    field = ig.solve_qvi(stopping_spec, grid)
    _, stopper = ig.extract_policy(stopping_spec, field)
    oracle = ig.lattice_stopping_value(stopping_spec, grid)
    tol = stopper.act_tol
    for k in range(0, grid.nt, 7):
        mask = stopper.mask[k]
        positive = grid.axes[0] > 0
        inner = mask[positive]
        # once stopping starts it continues to the right boundary
        first = np.argmax(inner) if inner.any() else len(inner)
        assert inner[first:].all()
        # matches the oracle's active set away from its frontier
        omask = oracle.values[k] <= oracle.bequest[k] + tol
        disagree = (mask != omask)[positive]
        assert disagree.mean() <= 0.1


def test_nearest_node_lookup(game_spec, game_field_small):
    controller, stopper = ig.extract_policy(game_spec, game_field_small)
    grid = game_field_small.grid
    k, j = 10, 30
    t = float(grid.times[k]) + 0.4 * grid.dt
    x = np.array([grid.axes[0][j] + 0.4 * grid.dx[0]])
    assert stopper.should_stop(t, x) == bool(stopper.mask[k, j])
    z = controller.impulse(t, x)
    if controller.mask[k, j]:
        assert np.allclose(z, controller.impulse_set[controller.impulse_map[k, j]])
    else:
        assert z is None


# --- one-step dynamic programming residual ----------------------------------


def test_constant_game_residual_zero():
    spec, field = constant_field()
    grid = field.grid
    r = ig.dpp_residual(spec, field, float(grid.times[5]), 7)
    assert r <= 1e-12


def test_residual_requires_room_for_one_step(game_spec, game_field_small):
    grid = game_field_small.grid
    with pytest.raises(ValueError):
        ig.dpp_residual(game_spec, game_field_small, float(grid.times[-1]), 5)


def test_residual_rejects_boundary_node(game_spec, game_field_small):
    with pytest.raises(ig.DomainError):
        ig.dpp_residual(game_spec, game_field_small, 0.0, 0)


def test_intervention_branch_consistent(game_spec, game_field_200):
    # deep in the intervention region the one-step impulse branch reproduces
    # the field at the fixed-point tolerance scale
    field = game_field_200
    controller, _ = ig.extract_policy(game_spec, field)
    tol = 10 * field.fixed_point_tol
    grid = field.grid
    interior = grid.interior_mask()
    hits = 0
    for k in range(0, grid.nt, 20):
        act = controller.mask[k] & interior
        if not act.any():
            continue
        diff = np.abs(field.mv[k][act] - field.values[k][act])
        assert diff.max() <= tol
        hits += 1
    assert hits > 0


def test_mean_residual_decays_under_refinement(game_spec):
    r_coarse = ig.mean_dpp_residual(
        game_spec, ig.solve_qvi(game_spec, ig.build_grid(game_spec.domain, 50, 50))
    )
    r_fine = ig.mean_dpp_residual(
        game_spec, ig.solve_qvi(game_spec, ig.build_grid(game_spec.domain, 100, 100))
    )
    assert r_fine <= 0.7 * r_coarse
