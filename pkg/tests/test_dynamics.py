import numpy as np
import pytest

import impulsegame as ig
from conftest import minimal_doc


def frozen_spec(**over):
    doc = minimal_doc(
        drift={"kind": "constant", "params": [0.0]},
        vol={"kind": "constant", "params": [0.0]},
        bequest={"kind": "constant", "params": [0.0]},
    )
    doc.update(over)
    return ig.load_spec(doc)


class FireOnce:
    """Intervenes with a fixed impulse at the first opportunity."""

    def __init__(self, z):
        self.z = np.atleast_1d(np.asarray(z, dtype=float))
        self.fired = False

    def impulse(self, t, x):
        if self.fired:
            return None
        self.fired = True
        return self.z


def test_frozen_dynamics_constant_path():
    spec = frozen_spec()
    out = ig.simulate_path(spec, 0.0, [0.5], None, None, 0.01, 1)
    assert out.effective_end == 1.0
    assert np.allclose(out.end_state, [0.5])
    assert np.allclose(out.states, 0.5)
    assert out.stop_time is None and out.exit_time is None


def test_deterministic_drift_exit_time():
    spec = frozen_spec(drift={"kind": "constant", "params": [1.0]})
    out = ig.simulate_path(spec, 0.0, [1.9], None, None, 0.01, 1)
    assert out.exit_time == pytest.approx(0.10, abs=0.011)
    assert out.end_state[0] >= 2.0


def test_forced_impulse_cost_at_first_mesh_time():
    # intervention is first possible one step after the start; the recorded
    # cost is the cost at that time
    spec = frozen_spec(intervention_cost={"kind": "affine", "params": [0.2, -0.1, 0.0]})
    dt = 0.01
    out = ig.simulate_path(spec, 0.0, [1.0], FireOnce([-0.5]), None, dt, 1)
    assert len(out.schedule) == 1
    ev = out.schedule.events[0]
    assert ev.time == pytest.approx(dt)
    assert ev.cost == pytest.approx(0.2 - 0.1 * dt)
    assert np.allclose(out.end_state, [0.5])


def test_impulse_costs_respect_floor():
    spec = ig.canonical_spec("game")
    grid = ig.build_grid(spec.domain, 50, 50)
    field = ig.solve_qvi(spec, grid)
    controller, _ = ig.extract_policy(spec, field)
    out = ig.simulate_path(spec, 0.0, [1.5], controller, None, 1e-3, 11)
    for ev in out.schedule.events:
        assert ev.cost >= spec.cost_floor


def test_bit_identical_reruns():
    spec = ig.canonical_spec("game")
    a = ig.simulate_path(spec, 0.0, [0.3], None, None, 1e-3, 99)
    b = ig.simulate_path(spec, 0.0, [0.3], None, None, 1e-3, 99)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.times, b.times)


def test_invalid_step_rejected():
    spec = frozen_spec()
    with pytest.raises(ig.SpecError, match="invalid step"):
        ig.simulate_path(spec, 0.5, [0.0], None, None, 0.6, 1)


def test_initial_state_outside_domain():
    spec = frozen_spec()
    with pytest.raises(ig.DomainError):
        ig.simulate_path(spec, 0.0, [2.5], None, None, 0.01, 1)


def test_mesh_refinement_consistency_sigma_zero():
    # halving dt moves the deterministic end state by O(dt)
    doc = minimal_doc(
        drift={"kind": "affine", "params": [0.0, 0.0, -0.5]},
        vol={"kind": "constant", "params": [0.0]},
    )
    spec = ig.load_spec(doc)
    ends = []
    for dt in (0.02, 0.01, 0.005):
        out = ig.simulate_path(spec, 0.0, [1.0], None, None, dt, 1)
        ends.append(out.end_state[0])
    first = abs(ends[1] - ends[0])
    second = abs(ends[2] - ends[1])
    assert second <= 0.75 * first


def test_batch_matches_single_paths():
    spec = ig.canonical_spec("game")
    grid = ig.build_grid(spec.domain, 50, 50)
    field = ig.solve_qvi(spec, grid)
    controller, stopper = ig.extract_policy(spec, field)
    batch = ig.simulate_batch(spec, 0.0, [0.8], controller, stopper, 2e-3, 32, 500)
    for i in range(32):
        out = ig.simulate_path(spec, 0.0, [0.8], controller, stopper, 2e-3, 500 + i)
        pb = ig.evaluate_payoff(spec, out)
        assert batch.totals[i] == pb.total
        assert batch.impulse_count[i] == len(out.schedule)
        assert batch.stopped[i] == (out.stop_time is not None)
        assert batch.exited[i] == (out.exit_time is not None)
        assert batch.end_time[i] == out.effective_end


def test_schedule_counts_finite_and_reported():
    spec = ig.canonical_spec("game")
    grid = ig.build_grid(spec.domain, 50, 50)
    field = ig.solve_qvi(spec, grid)
    controller, stopper = ig.extract_policy(spec, field)
    batch = ig.simulate_batch(spec, 0.0, [1.2], controller, stopper, 2e-3, 200, 1)
    assert np.isfinite(batch.impulse_count).all()
    assert np.isfinite(batch.impulse_count.mean())


# --- generator stencil ------------------------------------------------------


def test_generator_quadratic_exact():
    spec = ig.load_spec(minimal_doc())
    grid = ig.build_grid(spec.domain, 4, 40)
    phi = grid.axes[0] ** 2
    val = ig.generator_apply(spec, phi, grid, 0.0, 20)
    assert val == pytest.approx(1.0, abs=1e-12)


def test_generator_first_order_term():
    doc = minimal_doc(
        drift={"kind": "affine", "params": [0.0, 0.0, 1.0]},
        vol={"kind": "constant", "params": [0.0]},
    )
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, 4, 40)
    phi = grid.axes[0].copy()
    i = int(np.argmin(np.abs(grid.axes[0] - 0.5)))
    val = ig.generator_apply(spec, phi, grid, 0.0, i)
    assert val == pytest.approx(0.5, abs=1e-12)


def test_generator_matches_analytic_second_derivative():
    doc = minimal_doc(domain={"lower": [-2.0], "upper": [2.0], "horizon": 1.0})
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, 4, 400)  # h = 0.01
    phi = np.sin(grid.axes[0])
    i = int(np.argmin(np.abs(grid.axes[0])))
    val = ig.generator_apply(spec, phi, grid, 0.0, i)
    assert val == pytest.approx(-0.5 * np.sin(grid.axes[0][i]), abs=1e-6)


def test_generator_boundary_node_rejected():
    spec = ig.load_spec(minimal_doc())
    grid = ig.build_grid(spec.domain, 4, 40)
    with pytest.raises(ig.DomainError, match="stencil"):
        ig.generator_apply(spec, grid.axes[0] ** 2, grid, 0.0, 0)


def test_generator_two_dimensional():
    doc = minimal_doc(
        domain={"lower": [-1.0, -1.0], "upper": [1.0, 1.0], "horizon": 1.0},
        vol={"kind": "constant", "params": [1.0]},
        impulse_set=[[0.5, 0.0]],
    )
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, 2, (20, 20))
    mesh = np.meshgrid(*grid.axes, indexing="ij")
    phi = mesh[0] ** 2 + mesh[1] ** 2
    val = ig.generator_apply(spec, phi, grid, 0.0, (10, 10))
    # 0.5 * trace(identity diffusion * hessian) = 0.5 * (2 + 2)
    assert val == pytest.approx(2.0, abs=1e-10)


# --- moment diagnostics -----------------------------------------------------


def test_moments_frozen_dynamics():
    spec = frozen_spec()
    rep = ig.moment_diagnostics(spec, 0.0, [0.5], 200, 0.01, 3)
    assert all(v == 0.0 for v in rep.increment_sup.values())


def test_moment_ratios_reflect_brownian_scale():
    spec = ig.load_spec(minimal_doc())
    rep = ig.moment_diagnostics(spec, 0.0, [0.0], 5_000, 1e-3, 12)
    ratios = list(rep.increment_ratio.values())
    assert max(ratios) <= 4.0
    assert max(ratios) / min(ratios) <= 2.0


def test_moment_requires_enough_paths():
    spec = frozen_spec()
    with pytest.raises(ig.SpecError):
        ig.moment_diagnostics(spec, 0.0, [0.0], 10, 0.01, 1)


def test_growth_constant_stable_when_doubling_start():
    # linear drift: the fitted constant in the c(1+|x|^2) bound moves by
    # less than 2x when the start point doubles
    doc = minimal_doc(
        domain={"lower": [-6.0], "upper": [6.0], "horizon": 1.0},
        drift={"kind": "affine", "params": [0.0, 0.0, 1.0]},
    )
    spec = ig.load_spec(doc)
    c_half = ig.moment_diagnostics(spec, 0.0, [0.5], 5_000, 2e-3, 7).sup_sq_const
    c_one = ig.moment_diagnostics(spec, 0.0, [1.0], 5_000, 2e-3, 7).sup_sq_const
    assert 0.5 <= c_one / c_half <= 2.0
