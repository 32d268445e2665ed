import numpy as np
import pytest

import impulsegame as ig
from impulsegame import intervention_operator
from conftest import minimal_doc


def test_grid_arithmetic():
    spec = ig.load_spec(minimal_doc())
    grid = ig.build_grid(spec.domain, 10, 8)
    assert grid.dt == pytest.approx(0.1)
    assert grid.dx[0] == pytest.approx(0.5)
    assert grid.n_space == 9
    assert grid.times[0] == 0.0 and grid.times[-1] == 1.0


def test_grid_minimal_mesh():
    spec = ig.load_spec(minimal_doc())
    grid = ig.build_grid(spec.domain, 1, 2)
    assert np.allclose(grid.times, [0.0, 1.0])


def test_grid_two_dimensional_counts():
    doc = minimal_doc(
        domain={"lower": [0.0, 0.0], "upper": [1.0, 2.0], "horizon": 1.0},
        vol={"kind": "constant", "params": [0.1]},
        impulse_set=[[0.1, 0.0]],
    )
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, 3, (2, 4))
    assert grid.space_shape == (3, 5)
    assert grid.n_space == 15


def test_grid_rejects_zero_counts():
    spec = ig.load_spec(minimal_doc())
    with pytest.raises(ig.SpecError):
        ig.build_grid(spec.domain, 0, 4)
    with pytest.raises(ig.SpecError):
        ig.build_grid(spec.domain, 4, 1)


# --- intervention operator --------------------------------------------------


def test_hand_enumeration():
    # phi = |x|, impulses +-1 costing 0.6: at x = 1 the best move is z = -1
    doc = minimal_doc(
        impulse_set=[[-1.0], [1.0]],
        intervention_cost={"kind": "scaled-power", "params": [0.1, 0.5, 1.0]},
    )
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, 4, 400)
    phi = np.abs(grid.axes[0])
    mv, arg = intervention_operator(spec, phi, grid, 0.0)
    i = int(np.argmin(np.abs(grid.axes[0] - 1.0)))
    assert mv[i] == pytest.approx(0.6)
    assert spec.impulse_set.impulses[arg[i], 0] == -1.0


def test_constant_slice_shifts_by_cheapest_cost():
    spec = ig.load_spec(minimal_doc())
    grid = ig.build_grid(spec.domain, 4, 40)
    mv, arg = intervention_operator(spec, np.full(grid.n_space, 7.0), grid, 0.0)
    assert np.allclose(mv, 7.0 + 0.1)
    assert (arg >= 0).all()
    assert mv.min() >= 7.0 + spec.cost_floor - 1e-14


def test_empty_set_gives_infinity():
    spec = ig.canonical_spec("stopping")
    grid = ig.build_grid(spec.domain, 4, 40)
    mv, arg = intervention_operator(spec, np.zeros(grid.n_space), grid, 0.0)
    assert np.isinf(mv).all()
    assert (arg == -1).all()


def test_tie_breaks_to_lexicographic_smallest():
    # symmetric slice makes both impulses equally good; the canonical order
    # picks the smaller impulse
    spec = ig.load_spec(minimal_doc())
    grid = ig.build_grid(spec.domain, 4, 40)
    phi = grid.axes[0] ** 2
    mv, arg = intervention_operator(spec, phi, grid, 0.0)
    mid = grid.n_space // 2  # x = 0
    assert spec.impulse_set.impulses[arg[mid], 0] == -0.5


def test_shift_equivariance_and_monotonicity():
    spec = ig.canonical_spec("game")
    grid = ig.build_grid(spec.domain, 10, 60)
    rng = np.random.default_rng(2)
    xs = grid.axes[0]
    g = spec.G(0.4, xs[:, None])
    for _ in range(20):
        inc = rng.uniform(-2, 2, len(xs) - 1) * np.diff(xs)
        phi = np.concatenate([[0.0], np.cumsum(inc)])
        phi += np.linspace(g[0] - phi[0], g[-1] - phi[-1], len(xs))
        m, _ = intervention_operator(spec, phi, grid, 0.4)
        m_shift, _ = intervention_operator(spec, phi + 0.75, grid, 0.4)
        assert np.allclose(m_shift, m + 0.75, atol=1e-12)
        psi = phi + rng.uniform(0.0, 1.0, len(xs))
        m_psi, _ = intervention_operator(spec, psi, grid, 0.4)
        assert (m_psi >= m - 1e-12).all()


def test_two_dimensional_operator_clamps_to_crossing():
    doc = minimal_doc(
        domain={"lower": [0.0, 0.0], "upper": [1.0, 1.0], "horizon": 1.0},
        vol={"kind": "constant", "params": [0.1]},
        impulse_set=[[0.75, 0.0]],
        bequest={"kind": "constant", "params": [0.0]},
    )
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, 2, (4, 4))
    mesh = np.meshgrid(*grid.axes, indexing="ij")
    phi = (mesh[0] + mesh[1]).ravel()  # slice value x0 + x1
    mv, _ = intervention_operator(spec, phi, grid, 0.0)
    # node (0.5, 0.5) jumps to (1.25, 0.5) -> crossing at (1.0, 0.5)
    j = int(np.ravel_multi_index((2, 2), grid.space_shape))
    assert mv[j] == pytest.approx(1.5 + 0.1)


# --- solver -----------------------------------------------------------------


def test_constant_game_solution():
    doc = minimal_doc(bequest={"kind": "constant", "params": [3.0]})
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, 20, 40)
    field = ig.solve_qvi(spec, grid)
    assert np.abs(field.values - 3.0).max() < 1e-12
    assert (field.mv >= field.values + spec.cost_floor - 1e-12).all()


def test_boundary_and_terminal_carry_bequest():
    spec = ig.canonical_spec("game")
    grid = ig.build_grid(spec.domain, 30, 30)
    field = ig.solve_qvi(spec, grid)
    boundary = grid.boundary_mask()
    assert np.array_equal(field.values[-1], field.bequest[-1])
    for k in range(grid.nt + 1):
        assert np.array_equal(field.values[k][boundary], field.bequest[k][boundary])


def test_scheme_monotone_in_data():
    base = minimal_doc(
        bequest={"kind": "tabulated-grid", "knots": [-2.0, 0.0, 2.0],
                 "params": [1.0, 1.0, 3.0]},
        running_cost={"kind": "constant", "params": [0.0]},
    )
    hi = minimal_doc(
        bequest={"kind": "tabulated-grid", "knots": [-2.0, 0.0, 2.0],
                 "params": [1.2, 1.3, 3.2]},
        running_cost={"kind": "constant", "params": [0.2]},
    )
    s1, s2 = ig.load_spec(base), ig.load_spec(hi)
    grid = ig.build_grid(s1.domain, 40, 40)
    v1 = ig.solve_qvi(s1, grid).values
    v2 = ig.solve_qvi(s2, grid).values
    assert (v2 >= v1 - 1e-12).all()


def test_bounded_by_data():
    spec = ig.canonical_spec("game")
    grid = ig.build_grid(spec.domain, 60, 60)
    field = ig.solve_qvi(spec, grid)
    g_sup = np.abs(field.bequest).max()
    f_sup = np.abs(spec.f(0.0, grid.nodes())).max()
    assert field.sup_norm() <= g_sup + spec.domain.horizon * f_sup + 1e-9


def test_obstacle_sandwich_when_costs_dominate_bequest_spread():
    # with c = 0.1 + |z| a single jump can never beat the stopping reward,
    # so the field sits between the two obstacles everywhere
    doc = ig.canonical_document("game")
    doc["intervention_cost"] = {"kind": "scaled-power", "params": [0.1, 1.0, 1.0]}
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, 100, 100)
    field = ig.solve_qvi(spec, grid)
    tol = 10 * field.fixed_point_tol
    interior = grid.interior_mask()
    v = field.values[:-1][:, interior]
    assert (v >= field.bequest[:-1][:, interior] - tol).all()
    assert (v <= field.mv[:-1][:, interior] + tol).all()


@pytest.mark.parametrize(
    "name,disable,levels",
    [
        ("stopping", False, (50, 100, 200, 400)),
        ("impulse", True, (200, 400, 800, 1600)),
    ],
)
def test_grid_refinement_contracts(name, disable, levels):
    # halving both steps shrinks the change of the initial slice by 0.6x,
    # averaged over the probe nodes shared by every level
    spec = ig.canonical_spec(name)
    slices = []
    for n in levels:
        grid = ig.build_grid(spec.domain, n, n)
        field = ig.solve_qvi(spec, grid, disable_stopping=disable)
        slices.append(field.values[0][:: n // levels[0]])
    diffs = [np.abs(b - a).mean() for a, b in zip(slices, slices[1:])]
    assert diffs[1] <= 0.6 * diffs[0]
    assert diffs[2] <= 0.6 * diffs[1]


def test_refinement_trivial_for_constant_solution():
    doc = minimal_doc(bequest={"kind": "constant", "params": [3.0]})
    spec = ig.load_spec(doc)
    for n in (10, 20):
        field = ig.solve_qvi(spec, ig.build_grid(spec.domain, n, n))
        assert np.abs(field.values - 3.0).max() < 1e-12


def test_cross_diffusion_raises_scheme_error():
    doc = minimal_doc(
        domain={"lower": [0.0, 0.0], "upper": [1.0, 1.0], "horizon": 0.5},
        vol=[
            [{"kind": "constant", "params": [0.4]}, {"kind": "constant", "params": [0.2]}],
            [{"kind": "constant", "params": [0.0]}, {"kind": "constant", "params": [0.4]}],
        ],
        impulse_set=[[0.1, 0.0]],
    )
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, 4, (6, 6))
    with pytest.raises(ig.SchemeError, match="node"):
        ig.solve_qvi(spec, grid)


def test_two_dimensional_constant_game():
    doc = minimal_doc(
        domain={"lower": [-1.0, -1.0], "upper": [1.0, 1.0], "horizon": 0.5},
        vol={"kind": "constant", "params": [0.5]},
        bequest={"kind": "constant", "params": [2.0]},
        impulse_set=[[-0.25, 0.0], [0.25, 0.0]],
    )
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, 10, (10, 10))
    field = ig.solve_qvi(spec, grid)
    assert np.abs(field.values - 2.0).max() < 1e-12


def test_nonconvergence_carries_partial_field():
    spec = ig.canonical_spec("game")
    grid = ig.build_grid(spec.domain, 50, 50)
    params = ig.SolverParams(max_outer_iters=1)
    with pytest.raises(ig.ConvergenceError) as err:
        ig.solve_qvi(spec, grid, params)
    field = err.value.field
    assert field is not None and not field.converged
    assert field.diagnostics["stale"] is True
    assert len(err.value.history) >= 1


# --- scheme residual --------------------------------------------------------


def test_residual_small_after_convergence(game_field_small, game_spec):
    res = ig.pde_residual(game_spec, game_field_small)
    tol = 10 * game_field_small.fixed_point_tol
    assert np.nanmax(np.abs(res)) <= tol


def test_residual_constant_field_zero():
    doc = minimal_doc(bequest={"kind": "constant", "params": [3.0]})
    spec = ig.load_spec(doc)
    grid = ig.build_grid(spec.domain, 10, 20)
    field = ig.solve_qvi(spec, grid)
    res = ig.pde_residual(spec, field)
    assert np.nanmax(np.abs(res)) <= 1e-12


def test_residual_detects_perturbation(game_field_small, game_spec):
    import copy
    field = copy.deepcopy(game_field_small)
    grid = field.grid
    k = grid.nt // 2
    j = grid.n_space // 2
    field.values[k, j] += 1.0
    res = ig.pde_residual(game_spec, field)
    min_cost = float(game_spec.cost(grid.times[k], game_spec.impulse_set.impulses).min())
    assert res[k, j] >= 1.0 - min_cost


def test_oracle_solver_agreement_small_grid(game_spec):
    # both routes discretise the same nesting; on a coarse lattice they stay
    # within a few grid-scale units of each other
    grid = ig.build_grid(game_spec.domain, 50, 50)
    a = ig.solve_qvi(game_spec, grid)
    b = ig.discrete_game_value(game_spec, grid, "infsup")
    assert np.abs(a.values - b.values).max() <= 5 * (grid.dt + grid.dx[0])


def test_terminal_layer_matches_first_principles_chain_value(game_spec):
    # one step from the horizon the slice value is the best of: stop now,
    # diffuse one step, or prepend a chain of costed jumps; enumerate that
    # directly with Gauss-Hermite quadrature and no solver machinery
    grid = ig.build_grid(game_spec.domain, 200, 200)
    field = ig.solve_qvi(game_spec, grid)
    dt = grid.dt
    horizon = game_spec.domain.horizon
    z_nodes, z_w = np.polynomial.hermite_e.hermegauss(40)

    def cont(x):
        pts = np.clip(x + np.sqrt(dt) * z_nodes, -2.0, 2.0)
        return float((game_spec.G(horizon, pts[:, None]) * z_w).sum() / z_w.sum())

    def best_of_chains(x):
        stop_or_go = max(float(game_spec.G(horizon - dt, np.array([[x]]))[0]), cont(x))
        best = stop_or_go
        for k in range(1, 9):
            y = min(max(x - 0.5 * k, -2.0), 2.0)
            inner = max(float(game_spec.G(horizon - dt, np.array([[y]]))[0]), cont(y))
            best = min(best, 0.35 * k + inner)
        return best

    for x in (1.98, 1.0, 0.6, -0.5):
        j = int(round((x + 2.0) / grid.dx[0]))
        assert field.values[grid.nt - 1][j] == pytest.approx(best_of_chains(x), abs=2e-3)
