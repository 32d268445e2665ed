"""Feedback strategies read off a converged field, and the one-step
dynamic-programming consistency check.

Active sets from strict equalities are numerically empty, so both regions
are cut with a tolerance: the controller acts where the intervention value
matches the field, the stopper where the stopping reward does. Each player
acts on their own set; the simulation order (stopper first) resolves nodes
where both are active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SpecError, StaleFieldError
from .model import ProblemSpec
from .qvi import Grid, ValueField, clamp_to_boundary, interp_slice, stopping_floor


@dataclass(frozen=True)
class FeedbackPolicy:
    """Markov feedback map on grid nodes; off-grid queries snap to the
    nearest node."""

    kind: str  # "controller" or "stopper"
    grid: Grid
    mask: np.ndarray  # (nt+1, n_space) boolean action region
    act_tol: float
    impulse_set: np.ndarray  # (nz, p) canonical order
    impulse_map: np.ndarray | None = None  # (nt+1, n_space) index into set

    def _time_index(self, t: float) -> int:
        times = self.grid.times
        k = int(round((t - times[0]) / self.grid.dt))
        return min(max(k, 0), len(times) - 1)

    def _node_index(self, x: np.ndarray) -> np.ndarray:
        """Flat nearest-node indices for states of shape (n, p)."""
        flat = np.zeros(len(x), dtype=int)
        for ax, axis in enumerate(self.grid.axes):
            dx = axis[1] - axis[0]
            i = np.rint((x[:, ax] - axis[0]) / dx).astype(int)
            i = np.clip(i, 0, len(axis) - 1)
            flat = flat * len(axis) + i
        return flat

    # stopper interface -----------------------------------------------------
    def should_stop(self, t: float, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(self.stop_mask(t, x[None, :])[0])

    def stop_mask(self, t: float, x: np.ndarray) -> np.ndarray:
        k = self._time_index(t)
        return self.mask[k][self._node_index(x)]

    # controller interface --------------------------------------------------
    def impulse(self, t: float, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = self.impulse_index_mask(t, x[None, :])[0]
        if idx < 0:
            return None
        return self.impulse_set[idx]

    def impulse_index_mask(self, t: float, x: np.ndarray) -> np.ndarray:
        """Index into the canonical impulse list per row, -1 for no action."""
        k = self._time_index(t)
        nodes = self._node_index(x)
        act = self.mask[k][nodes]
        out = np.full(len(x), -1, dtype=int)
        if self.impulse_map is not None:
            out[act] = self.impulse_map[k][nodes[act]]
        return out


def extract_policy(
    spec: ProblemSpec, field: ValueField, act_tol: float | None = None
) -> tuple[FeedbackPolicy, FeedbackPolicy]:
    """Controller and stopper regions of a converged field.

    The default tolerance is 10 * fixed_point_tol * (1 + sup|G|), recorded
    on both policies. The terminal slice always stops.
    """
    if not field.converged or field.diagnostics.get("stale"):
        raise StaleFieldError("policy extraction requires a converged field")
    if act_tol is None:
        act_tol = 10.0 * field.fixed_point_tol * (1.0 + float(np.abs(field.bequest).max()))
    if act_tol < 0:
        raise SpecError("act_tol must be non-negative")

    grid = field.grid
    v = field.values
    intervene = v >= field.mv - act_tol
    intervene[~np.isfinite(field.mv)] = False

    stop_obstacle = field.bequest
    if field.diagnostics.get("disable_stopping"):
        floor = stopping_floor(spec, grid)
        stop_obstacle = field.bequest.copy()
        stop_obstacle[: grid.nt] = floor
    stop = v <= stop_obstacle + act_tol
    stop[grid.nt] = True  # horizon end: collect the bequest

    controller = FeedbackPolicy(
        kind="controller",
        grid=grid,
        mask=intervene,
        act_tol=act_tol,
        impulse_set=spec.impulse_set.impulses,
        impulse_map=field.mv_argmin,
    )
    stopper = FeedbackPolicy(
        kind="stopper",
        grid=grid,
        mask=stop,
        act_tol=act_tol,
        impulse_set=spec.impulse_set.impulses,
        impulse_map=None,
    )
    return controller, stopper


# ---------------------------------------------------------------------------
# one-step dynamic programming residual


def _one_step_rhs(
    spec: ProblemSpec, field: ValueField, k: int
) -> np.ndarray:
    """Right-hand side of the one-step optimality relation on slice k.

    continue branch: trapezoidal running cost over one step plus the next
    slice interpolated at two-point cubature states matching the first two
    diffusion moments; impulse branch: the intervention values of the slice
    itself; the branches nest with the intervention option outermost.
    """
    grid = field.grid
    h = grid.dt
    t = float(grid.times[k])
    t_next = float(grid.times[k + 1])
    nodes = grid.nodes()
    n = grid.n_space
    m = spec.noise_dimension

    mu = spec.mu(t, nodes)
    sig = spec.sigma(t, nodes)
    f_here = spec.f(t, nodes)

    drifted = nodes + mu * h
    cont = np.zeros(n)
    scale = math.sqrt(m * h)
    for col in range(m):
        for sign in (1.0, -1.0):
            pts = drifted + sign * scale * sig[:, :, col]
            pts = clamp_to_boundary(grid, nodes, pts)
            v_next = interp_slice(grid, field.values[k + 1], pts)
            f_next = spec.f(t_next, pts)
            cont += (0.5 * h * (f_here + f_next) + v_next) / (2 * m)

    g_here = field.bequest[k]
    if field.diagnostics.get("disable_stopping") and k < grid.nt:
        g_here = np.full(n, stopping_floor(spec, grid))
    return np.minimum(field.mv[k], np.maximum(g_here, cont))


def dpp_residual(
    spec: ProblemSpec,
    field: ValueField,
    t: float,
    node,
    h: float | None = None,
) -> float:
    """|V(t, x) - one-step RHS| at a single interior grid node."""
    grid = field.grid
    if h is None:
        h = grid.dt
    if abs(h - grid.dt) > 1e-12 * max(1.0, grid.dt):
        raise SpecError("the one-step residual is defined for h = dt")
    k = int(round((t - grid.times[0]) / grid.dt))
    if k < 0 or k >= grid.nt or abs(grid.times[k] - t) > 1e-9:
        raise ValueError("t must be a grid time with t + h <= T")
    if np.isscalar(node) or isinstance(node, (int, np.integer)):
        node = (int(node),)
    node = tuple(int(i) for i in node)
    for ax, i in enumerate(node):
        if i <= 0 or i >= grid.space_shape[ax] - 1:
            raise DomainError(f"node {node} is not interior")
    flat = int(np.ravel_multi_index(node, grid.space_shape))
    rhs = _one_step_rhs(spec, field, k)
    return float(abs(field.values[k][flat] - rhs[flat]))


def dpp_residual_field(spec: ProblemSpec, field: ValueField) -> np.ndarray:
    """Residuals at every interior node of every pre-terminal slice.

    Shape (nt, n_space), NaN on spatial boundary nodes.
    """
    grid = field.grid
    interior = grid.interior_mask()
    out = np.full((grid.nt, grid.n_space), np.nan)
    for k in range(grid.nt):
        rhs = _one_step_rhs(spec, field, k)
        res = np.abs(field.values[k] - rhs)
        out[k, interior] = res[interior]
    return out


def mean_dpp_residual(spec: ProblemSpec, field: ValueField) -> float:
    """Mean one-step residual over all interior nodes and slices."""
    res = dpp_residual_field(spec, field)
    return float(np.nanmean(res))
