"""Brute-force lattice baselines, deliberately independent of the solver.

These use explicit moment-matched transitions (trinomial per axis) and
march backward slice by slice, so they share no stencil code with the
implicit solver. Probabilities are matched to the first two moments of
the diffusion increment and clamped to [0, 1]; when the straight match is
infeasible for the lattice step, the step is subdivided in time until it
is, up to a hard floor.
"""

from __future__ import annotations

import math
import numpy as np

from .errors import LatticeError, SpecError
from .model import ProblemSpec
from .qvi import Grid, ValueField, _dynamics_time_invariant, intervention_operator

_MAX_SUBSTEPS = 4096


def _axis_probabilities(mu, var, dt, dx):
    """Per-node (down, mid, up) weights for one axis; mean and second
    moment matched where feasible, mean-only upwind allocation otherwise."""
    shift = mu * dt / dx
    spread = (var * dt + (mu * dt) ** 2) / dx**2
    p_up = 0.5 * (spread + shift)
    p_dn = 0.5 * (spread - shift)
    # a vanishing diffusion makes one side negative: clamp and keep the mean
    neg_dn = p_dn < 0.0
    p_dn = np.where(neg_dn, 0.0, p_dn)
    p_up = np.where(neg_dn, shift, p_up)
    neg_up = p_up < 0.0
    p_up = np.where(neg_up, 0.0, p_up)
    p_dn = np.where(neg_up, -shift, p_dn)
    p_mid = 1.0 - p_up - p_dn
    return p_dn, p_mid, p_up


def _required_substeps(spec: ProblemSpec, grid: Grid) -> int:
    """Smallest power-of-two subdivision that keeps all weights in [0, 1]."""
    nodes = grid.nodes()
    scan_times = grid.times[:1] if _dynamics_time_invariant(spec) else grid.times[:-1]
    n_sub = 1
    while n_sub <= _MAX_SUBSTEPS:
        dt = grid.dt / n_sub
        ok = True
        for t in scan_times:
            mu = spec.mu(t, nodes)
            sig = spec.sigma(t, nodes)
            a = np.einsum("nik,njk->nij", sig, sig)
            for ax in range(grid.dimension):
                p_dn, p_mid, p_up = _axis_probabilities(
                    mu[:, ax], a[:, ax, ax], dt, grid.dx[ax]
                )
                if (p_mid < -1e-12).any() or (p_up > 1 + 1e-12).any() or (
                    p_dn > 1 + 1e-12
                ).any():
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return n_sub
        n_sub *= 2
    raise LatticeError(
        "moment matching infeasible on this lattice even after "
        f"{_MAX_SUBSTEPS} substeps; refine the space grid"
    )


def _offdiagonal_diffusion(spec: ProblemSpec, grid: Grid) -> bool:
    nodes = grid.nodes()
    for t in (grid.times[0], grid.times[-1]):
        sig = spec.sigma(t, nodes)
        a = np.einsum("nik,njk->nij", sig, sig)
        for i in range(grid.dimension):
            for j in range(grid.dimension):
                if i != j and np.abs(a[:, i, j]).max() > 1e-13:
                    return True
    return False


def _axis_step(values, p_dn, p_mid, p_up, axis, shape):
    """One explicit trinomial step along one axis, Dirichlet rows untouched."""
    v = values.reshape(shape)
    dn = p_dn.reshape(shape)
    md = p_mid.reshape(shape)
    up = p_up.reshape(shape)
    out = v.copy()
    sl_in = [slice(None)] * len(shape)
    sl_in[axis] = slice(1, -1)
    sl_up = [slice(None)] * len(shape)
    sl_up[axis] = slice(2, None)
    sl_dn = [slice(None)] * len(shape)
    sl_dn[axis] = slice(0, -2)
    out[tuple(sl_in)] = (
        dn[tuple(sl_in)] * v[tuple(sl_dn)]
        + md[tuple(sl_in)] * v[tuple(sl_in)]
        + up[tuple(sl_in)] * v[tuple(sl_up)]
    )
    return out.reshape(-1)


class _ExplicitTransition:
    """E_h[V(t_{k+1}, .) | X_{t_k} = node] with internal substepping."""

    def __init__(self, spec: ProblemSpec, grid: Grid):
        if grid.dimension > 2:
            raise SpecError("lattice oracles support dimensions 1 and 2 only")
        if _offdiagonal_diffusion(spec, grid):
            raise LatticeError("lattice oracles require diagonal diffusion")
        self.spec = spec
        self.grid = grid
        self.n_sub = _required_substeps(spec, grid)
        self.nodes = grid.nodes()
        self.boundary = grid.boundary_mask()
        self._static = None
        if _dynamics_time_invariant(spec):
            self._static = self._probabilities(float(grid.times[0]))

    def _probabilities(self, t: float):
        mu = self.spec.mu(t, self.nodes)
        sig = self.spec.sigma(t, self.nodes)
        a = np.einsum("nik,njk->nij", sig, sig)
        dt = self.grid.dt / self.n_sub
        return [
            _axis_probabilities(mu[:, ax], a[:, ax, ax], dt, self.grid.dx[ax])
            for ax in range(self.grid.dimension)
        ]

    def expectation(self, v_next: np.ndarray, k: int) -> np.ndarray:
        """March v(t_{k+1}) back to t_k through the substeps.

        Boundary nodes hold the exit payout at each intermediate time: the
        chain is absorbed there.
        """
        grid = self.grid
        dt = grid.dt / self.n_sub
        v = v_next.copy()
        for s in range(self.n_sub, 0, -1):
            t = float(grid.times[k] + (s - 1) * dt)
            probs = self._static if self._static is not None else self._probabilities(t)
            for ax in range(grid.dimension):
                p_dn, p_mid, p_up = probs[ax]
                v = _axis_step(v, p_dn, p_mid, p_up, ax, grid.space_shape)
            v[self.boundary] = self.spec.G(t, self.nodes[self.boundary])
        return v


def _tables(spec: ProblemSpec, grid: Grid):
    nodes = grid.nodes()
    g = np.stack([spec.G(t, nodes) for t in grid.times])
    f = np.stack([spec.f(t, nodes) for t in grid.times])
    return g, f


def _field(grid, values, mv, mv_argmin, g_table, method, n_sub) -> ValueField:
    return ValueField(
        grid=grid,
        values=values,
        mv=mv,
        mv_argmin=mv_argmin,
        bequest=g_table,
        diagnostics={"method": method, "substeps": n_sub, "stale": False},
        converged=True,
    )


def lattice_stopping_value(spec: ProblemSpec, grid: Grid) -> ValueField:
    """Pure optimal stopping by explicit backward induction (empty Z)."""
    if len(spec.impulse_set) != 0:
        raise SpecError("lattice_stopping_value requires an empty impulse set")
    trans = _ExplicitTransition(spec, grid)
    g_table, f_table = _tables(spec, grid)
    nt = grid.nt
    n = grid.n_space
    values = np.empty((nt + 1, n))
    values[nt] = g_table[nt]
    for k in range(nt - 1, -1, -1):
        cont = f_table[k] * grid.dt + trans.expectation(values[k + 1], k)
        values[k] = np.maximum(g_table[k], cont)
        values[k][trans.boundary] = g_table[k][trans.boundary]
    mv = np.full_like(values, np.inf)
    mv_argmin = np.full(values.shape, -1, dtype=int)
    return _field(grid, values, mv, mv_argmin, g_table, "lattice-stopping", trans.n_sub)


def _chain_rounds(spec: ProblemSpec, value_scale: float) -> int:
    """Upper bound on profitable within-slice impulse chains.

    Every chained impulse costs at least the floor, so chains longer than
    the value spread divided by the floor can never pay.
    """
    return max(1, int(math.ceil(value_scale / spec.cost_floor)) + 1)


def lattice_impulse_value(spec: ProblemSpec, grid: Grid) -> ValueField:
    """Pure impulse control: the stopper never acts before the horizon."""
    if len(spec.impulse_set) == 0:
        raise SpecError("lattice_impulse_value requires a non-empty impulse set")
    trans = _ExplicitTransition(spec, grid)
    g_table, f_table = _tables(spec, grid)
    nt = grid.nt
    n = grid.n_space
    values = np.empty((nt + 1, n))
    mv = np.empty((nt + 1, n))
    mv_argmin = np.empty((nt + 1, n), dtype=int)
    values[nt] = g_table[nt]
    scale = 2.0 * (np.abs(g_table).max() + grid.times[-1] * np.abs(f_table).max()) + 1.0
    rounds = _chain_rounds(spec, scale)
    for k in range(nt - 1, -1, -1):
        t = float(grid.times[k])
        cont = f_table[k] * grid.dt + trans.expectation(values[k + 1], k)
        cont[trans.boundary] = g_table[k][trans.boundary]
        w = cont.copy()
        for _ in range(rounds):
            m_vals, _ = intervention_operator(spec, w, grid, t)
            w_new = np.minimum(cont, m_vals)
            w_new[trans.boundary] = g_table[k][trans.boundary]
            if np.abs(w_new - w).max() <= 1e-13 * scale:
                w = w_new
                break
            w = w_new
        values[k] = w
        mv[k], mv_argmin[k] = intervention_operator(spec, w, grid, t)
    mv[nt], mv_argmin[nt] = intervention_operator(spec, values[nt], grid, grid.times[nt])
    return _field(grid, values, mv, mv_argmin, g_table, "lattice-impulse", trans.n_sub)


def discrete_game_value(spec: ProblemSpec, grid: Grid, order: str) -> ValueField:
    """Full discrete game with the per-slice min/max resolved in the given
    commitment order.

    infsup: the controller commits, the stopper responds, so the
    intervention option sits outermost:  V = min(max(G, C), M V).
    supinf: the stopper commits and the controller responds inside each
    branch:  V = max(min(G, M V), min(C, M V)).
    The two nestings are lattice-identical for the same M argument, so
    their values agree up to roundoff while the committed-first player is
    never better off.
    """
    if order not in ("infsup", "supinf"):
        raise SpecError("order must be 'infsup' or 'supinf'")
    trans = _ExplicitTransition(spec, grid)
    g_table, f_table = _tables(spec, grid)
    nt = grid.nt
    n = grid.n_space
    values = np.empty((nt + 1, n))
    mv = np.empty((nt + 1, n))
    mv_argmin = np.empty((nt + 1, n), dtype=int)
    values[nt] = g_table[nt]
    scale = 2.0 * (np.abs(g_table).max() + grid.times[-1] * np.abs(f_table).max()) + 1.0
    rounds = _chain_rounds(spec, scale) if len(spec.impulse_set) else 1
    for k in range(nt - 1, -1, -1):
        t = float(grid.times[k])
        cont = f_table[k] * grid.dt + trans.expectation(values[k + 1], k)
        cont[trans.boundary] = g_table[k][trans.boundary]
        base = np.maximum(g_table[k], cont)
        base[trans.boundary] = g_table[k][trans.boundary]
        v = base.copy()
        for _ in range(rounds):
            m_vals, _ = intervention_operator(spec, v, grid, t)
            if order == "infsup":
                v_new = np.minimum(base, m_vals)
            else:
                v_new = np.maximum(
                    np.minimum(g_table[k], m_vals), np.minimum(cont, m_vals)
                )
            v_new[trans.boundary] = g_table[k][trans.boundary]
            if np.abs(v_new - v).max() <= 1e-13 * scale:
                v = v_new
                break
            v = v_new
        values[k] = v
        mv[k], mv_argmin[k] = intervention_operator(spec, v, grid, t)
    mv[nt], mv_argmin[nt] = intervention_operator(spec, values[nt], grid, grid.times[nt])
    return _field(
        grid, values, mv, mv_argmin, g_table, f"discrete-game-{order}", trans.n_sub
    )
