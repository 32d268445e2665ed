"""Grid construction, the intervention operator, and the obstacle solver.

The solver marches backward from the terminal bequest. Each time slice
solves one implicit Euler step of the linear generator equation (upwind
drift, central diffusion - a monotone stencil) and then projects onto the
two obstacles with the impulse obstacle outermost:

    V = min( MV, max( G, V_pde ) )

so wherever an immediate intervention beats the stopping reward, the
intervention value wins. MV depends on the unknown slice, so the slice
iterates a fixed point with the obstacle frozen at the previous iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, SchemeError, SpecError
from .model import DomainSpec, ProblemSpec


@dataclass(frozen=True)
class Grid:
    """Uniform tensor lattice over [0, T] x closure(S), boundary included."""

    times: np.ndarray
    axes: tuple[np.ndarray, ...]

    @property
    def nt(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def space_shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def n_space(self) -> int:
        return int(np.prod(self.space_shape))

    @property
    def lower(self) -> np.ndarray:
        return np.array([a[0] for a in self.axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([a[-1] for a in self.axes])

    def nodes(self) -> np.ndarray:
        """All space nodes as an (n_space, p) array in C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def boundary_mask(self) -> np.ndarray:
        """Flat boolean mask of nodes on the spatial boundary."""
        mask = np.zeros(self.space_shape, dtype=bool)
        for ax in range(self.dimension):
            sl = [slice(None)] * self.dimension
            sl[ax] = 0
            mask[tuple(sl)] = True
            sl[ax] = -1
            mask[tuple(sl)] = True
        return mask.ravel()

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask()


def build_grid(domain: DomainSpec, nt: int, nx: int | Sequence[int]) -> Grid:
    """Uniform grid with nt time steps and nx space steps per axis."""
    if nt < 1:
        raise SpecError("nt must be at least 1")
    p = domain.dimension
    nx_arr = np.broadcast_to(np.asarray(nx, dtype=int), (p,))
    if (nx_arr < 2).any():
        raise SpecError("nx must be at least 2 on every axis")
    times = np.linspace(0.0, domain.horizon, nt + 1)
    axes = tuple(
        np.linspace(domain.lower[i], domain.upper[i], nx_arr[i] + 1) for i in range(p)
    )
    return Grid(times=times, axes=axes)


# ---------------------------------------------------------------------------
# interpolation and boundary clamping


def clamp_to_boundary(grid: Grid, start: np.ndarray, target: np.ndarray) -> np.ndarray:
    """First crossing of segment start->target with the box boundary.

    Points already inside the closure are returned unchanged; for points
    that jump out, the crossing lies on the boundary, where solver slices
    carry the bequest, so an exiting impulse is valued at the exit payout.
    """
    lo, hi = grid.lower, grid.upper
    seg = target - start
    s = np.ones(len(target))
    for i in range(grid.dimension):
        d = seg[:, i]
        over = target[:, i] > hi[i]
        under = target[:, i] < lo[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            s_over = np.where(over, (hi[i] - start[:, i]) / d, 1.0)
            s_under = np.where(under, (lo[i] - start[:, i]) / d, 1.0)
        s = np.minimum(s, np.minimum(s_over, s_under))
    s = np.clip(s, 0.0, 1.0)
    out = start + s[:, None] * seg
    return np.clip(out, lo, hi)


def interp_slice(grid: Grid, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of one slice at points inside the closure."""
    vals = values.reshape(grid.space_shape)
    if grid.dimension == 1:
        return np.interp(pts[:, 0], grid.axes[0], vals)
    if grid.dimension == 2:
        ax0, ax1 = grid.axes
        i0 = np.clip(np.searchsorted(ax0, pts[:, 0]) - 1, 0, len(ax0) - 2)
        i1 = np.clip(np.searchsorted(ax1, pts[:, 1]) - 1, 0, len(ax1) - 2)
        w0 = (pts[:, 0] - ax0[i0]) / (ax0[i0 + 1] - ax0[i0])
        w1 = (pts[:, 1] - ax1[i1]) / (ax1[i1 + 1] - ax1[i1])
        w0 = np.clip(w0, 0.0, 1.0)
        w1 = np.clip(w1, 0.0, 1.0)
        return (
            vals[i0, i1] * (1 - w0) * (1 - w1)
            + vals[i0 + 1, i1] * w0 * (1 - w1)
            + vals[i0, i1 + 1] * (1 - w0) * w1
            + vals[i0 + 1, i1 + 1] * w0 * w1
        )
    raise SpecError("interpolation supports dimensions 1 and 2 only")


def intervention_operator(
    spec: ProblemSpec, slice_values: np.ndarray, grid: Grid, t: float
) -> tuple[np.ndarray, np.ndarray]:
    """Best value of one immediate impulse plus its cost, per node.

    Returns (values, minimiser indices into the canonical impulse list).
    With an empty impulse set the operator is +inf everywhere and the
    indices are -1: the degenerate encoding of a pure stopping game.
    Post-impulse states outside the closure are valued at the boundary
    crossing of the jump segment. Ties go to the lexicographically
    smallest impulse because the set is kept in canonical order.
    """
    shape = np.shape(slice_values)
    flat = np.asarray(slice_values, dtype=float).ravel()
    if flat.size != grid.n_space:
        raise SpecError("slice is not defined on every grid node")
    n = grid.n_space
    z_list = spec.impulse_set.impulses
    if len(z_list) == 0:
        return np.full(shape, np.inf), np.full(shape, -1, dtype=int)
    nodes = grid.nodes()
    candidates = np.empty((len(z_list), n))
    for k, z in enumerate(z_list):
        target = spec.impulse_response(nodes, z)
        pts = clamp_to_boundary(grid, nodes, target)
        candidates[k] = interp_slice(grid, flat, pts) + float(spec.cost(t, z))
    best = np.argmin(candidates, axis=0)
    values = candidates[best, np.arange(n)]
    return values.reshape(shape), best.reshape(shape)


# ---------------------------------------------------------------------------
# the monotone implicit operator


def _assemble_step_matrix(
    spec: ProblemSpec,
    grid: Grid,
    t: float,
    boundary: np.ndarray,
    dt: float | None = None,
) -> sp.csr_matrix:
    """A = I - dt*L_h with upwind drift and central diffusion.

    Boundary rows are identity (Dirichlet). Raises SchemeError if any
    off-diagonal weight of L_h turns negative, naming the first bad node.
    """
    p = grid.dimension
    shape = grid.space_shape
    n = grid.n_space
    if dt is None:
        dt = grid.dt
    nodes = grid.nodes()
    mu = spec.mu(t, nodes)  # (n, p)
    sig = spec.sigma(t, nodes)  # (n, p, m)
    a = np.einsum("nik,njk->nij", sig, sig)  # diffusion matrix sigma sigma^T

    strides = np.array(
        [int(np.prod(shape[i + 1 :], dtype=int)) for i in range(p)], dtype=int
    )
    idx = np.arange(n)
    multi = np.stack(np.unravel_index(idx, shape), axis=-1)

    diag = np.zeros(n)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    data: list[np.ndarray] = []
    interior = ~boundary

    def add(off_rows, off_cols, weight):
        rows.append(off_rows)
        cols.append(off_cols)
        data.append(weight)

    for i in range(p):
        dx = grid.dx[i]
        # drift, first-order upwind
        mu_i = mu[:, i]
        w_up = np.maximum(mu_i, 0.0) / dx
        w_dn = np.maximum(-mu_i, 0.0) / dx
        # diffusion, central second difference on the diagonal of a
        w_diff = 0.5 * a[:, i, i] / dx**2
        up_weight = np.where(interior, w_up + w_diff, 0.0)
        dn_weight = np.where(interior, w_dn + w_diff, 0.0)
        diag -= up_weight + dn_weight
        add(idx[interior], idx[interior] + strides[i], up_weight[interior])
        add(idx[interior], idx[interior] - strides[i], dn_weight[interior])
        for j in range(i + 1, p):
            # cross-derivative stencils put weight of both signs on the
            # corner neighbours, which destroys monotonicity; only
            # diagonal diffusion is admitted
            cross = np.where(interior, a[:, i, j], 0.0)
            bad = np.abs(cross) > 1e-13
            if bad.any():
                node = idx[bad][0]
                raise SchemeError(
                    "non-monotone stencil: cross-diffusion weight at node "
                    f"{tuple(int(v) for v in multi[node])}"
                )

    mat = sp.coo_matrix(
        (
            np.concatenate(data),
            (np.concatenate(rows), np.concatenate(cols)),
        ),
        shape=(n, n),
    ).tocsr()
    # off-diagonal weights of L_h must be >= 0 for a monotone scheme
    if mat.nnz and mat.data.min() < -1e-13:
        bad = int(mat.tocoo().row[np.argmin(mat.tocoo().data)])
        raise SchemeError(
            "non-monotone stencil: negative off-diagonal weight at node "
            f"{tuple(int(v) for v in multi[bad])}"
        )
    L = mat + sp.diags(diag)
    A = sp.identity(n, format="csr") - dt * L
    # Dirichlet rows
    keep = sp.diags(interior.astype(float))
    A = keep @ A + sp.diags(boundary.astype(float))
    return A.tocsr()


def _coefficient_time_invariant(coeff) -> bool:
    if coeff.decay != 0.0:
        return False
    if coeff.kind == "affine" and coeff.params[1] != 0.0:
        return False
    return True


def _dynamics_time_invariant(spec: ProblemSpec) -> bool:
    comps = list(spec.drift.components)
    for row in spec.vol.rows:
        comps.extend(row)
    return all(_coefficient_time_invariant(c) for c in comps)


class _StepSolver:
    """LU-backed implicit steps, re-factorising only when A changes.

    ``solve`` is one implicit Euler step over the full slice width;
    ``solve_substepped`` splits the slice into several implicit substeps,
    which resolves nonsmooth terminal data far better while staying
    monotone and unconditionally stable.
    """

    def __init__(self, spec: ProblemSpec, grid: Grid, boundary: np.ndarray):
        self.spec = spec
        self.grid = grid
        self.boundary = boundary
        self.invariant = _dynamics_time_invariant(spec)
        self._lu = None
        self._lu_sub: tuple[int, object] | None = None

    def solve(self, t: float, rhs: np.ndarray) -> np.ndarray:
        if self._lu is None or not self.invariant:
            A = _assemble_step_matrix(self.spec, self.grid, t, self.boundary)
            self._lu = spla.splu(A.tocsc())
        return self._lu.solve(rhs)

    def solve_substepped(
        self, t: float, v_next: np.ndarray, source: np.ndarray,
        dirichlet: np.ndarray, n_sub: int,
    ) -> np.ndarray:
        if self._lu_sub is None or self._lu_sub[0] != n_sub or not self.invariant:
            A = _assemble_step_matrix(
                self.spec, self.grid, t, self.boundary, dt=self.grid.dt / n_sub
            )
            self._lu_sub = (n_sub, spla.splu(A.tocsc()))
        lu = self._lu_sub[1]
        h = self.grid.dt / n_sub
        v = v_next
        for _ in range(n_sub):
            rhs = v + h * source
            rhs[self.boundary] = dirichlet[self.boundary]
            v = lu.solve(rhs)
        return v


@dataclass
class SolverParams:
    """Tolerances of the outer fixed point and the inner linear solves.

    The first ``startup_slices`` backward slices split their implicit step
    into ``startup_substeps`` pieces; terminal payoffs are typically kinked
    and a single full-width step smears them noticeably.
    """

    fixed_point_tol: float | None = None
    max_outer_iters: int = 50
    linear_solver_tol: float | None = None
    startup_slices: int = 4
    startup_substeps: int = 8

    def resolved(self, bequest_sup: float) -> "SolverParams":
        tol = self.fixed_point_tol
        if tol is None:
            tol = 1e-8 * (1.0 + bequest_sup)
        lin = self.linear_solver_tol
        if lin is None:
            lin = tol / 10.0
        return SolverParams(
            tol, self.max_outer_iters, lin, self.startup_slices, self.startup_substeps
        )


@dataclass
class ValueField:
    """Value function on a grid plus the data needed to audit it."""

    grid: Grid
    values: np.ndarray  # (nt+1, n_space)
    mv: np.ndarray  # intervention-operator values, same shape
    mv_argmin: np.ndarray  # minimiser index per node, -1 where undefined
    bequest: np.ndarray  # G sampled on the same nodes
    diagnostics: dict = field(default_factory=dict)
    converged: bool = True

    @property
    def fixed_point_tol(self) -> float:
        return float(self.diagnostics.get("fixed_point_tol", 1e-8))

    def slice_values(self, k: int) -> np.ndarray:
        return self.values[k]

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())


def _bequest_table(spec: ProblemSpec, grid: Grid) -> np.ndarray:
    nodes = grid.nodes()
    return np.stack([spec.G(t, nodes) for t in grid.times])


def _running_table(spec: ProblemSpec, grid: Grid) -> np.ndarray:
    nodes = grid.nodes()
    return np.stack([spec.f(t, nodes) for t in grid.times])


def stopping_floor(spec: ProblemSpec, grid: Grid) -> float:
    """Obstacle level low enough that early stopping never binds."""
    g = _bequest_table(spec, grid)
    f = _running_table(spec, grid)
    horizon = spec.domain.horizon
    return -10.0 * (np.abs(f).max() * horizon + np.abs(g).max())


def solve_qvi(
    spec: ProblemSpec,
    grid: Grid,
    params: SolverParams | None = None,
    disable_stopping: bool = False,
) -> ValueField:
    """Backward induction for the double obstacle problem.

    ``disable_stopping`` replaces the stopping obstacle by a large negative
    floor off the terminal slice (the maximizer never stops early), leaving
    the terminal and exit payouts untouched; this is the degenerate
    impulse-control mode used by the oracle comparisons.
    """
    g_table = _bequest_table(spec, grid)
    f_table = _running_table(spec, grid)
    params = (params or SolverParams()).resolved(float(np.abs(g_table).max()))
    tol = params.fixed_point_tol

    nt = grid.nt
    n = grid.n_space
    boundary = grid.boundary_mask()

    obstacle = g_table.copy()
    if disable_stopping:
        obstacle[:nt] = stopping_floor(spec, grid)

    # slices still unsolved when convergence fails stay NaN in the
    # stale artifact rather than carrying junk
    values = np.full((nt + 1, n), np.nan)
    mv = np.full((nt + 1, n), np.nan)
    mv_argmin = np.full((nt + 1, n), -1, dtype=int)
    values[nt] = g_table[nt]

    outer_iters: list[int] = []
    gaps: list[float] = []
    residual_norms: list[float] = []
    converged = True
    history: list[float] = []

    step = _StepSolver(spec, grid, boundary)
    for k in range(nt - 1, -1, -1):
        t = grid.times[k]
        if k >= nt - params.startup_slices and params.startup_substeps > 1:
            v_pde = step.solve_substepped(
                t, values[k + 1], f_table[k], g_table[k], params.startup_substeps
            )
        else:
            rhs = values[k + 1] + grid.dt * f_table[k]
            rhs[boundary] = g_table[k][boundary]
            v_pde = step.solve(t, rhs)
        unconstrained = np.maximum(obstacle[k], v_pde)
        unconstrained[boundary] = g_table[k][boundary]

        candidate = values[k + 1].copy()
        candidate[boundary] = g_table[k][boundary]
        gap = np.inf
        iters = 0
        while iters < params.max_outer_iters:
            o_vals, o_arg = intervention_operator(spec, candidate, grid, t)
            v_new = np.minimum(o_vals, unconstrained)
            v_new[boundary] = g_table[k][boundary]
            gap = float(np.abs(v_new - candidate).max())
            candidate = v_new
            iters += 1
            if gap <= tol:
                break
        outer_iters.append(iters)
        gaps.append(gap)
        history.append(gap)
        values[k] = candidate
        mv[k], mv_argmin[k] = intervention_operator(spec, candidate, grid, t)
        # scheme residual in the solver's own one-step form
        res = np.maximum(
            np.minimum(candidate - v_pde, candidate - obstacle[k]),
            candidate - mv[k],
        )
        interior = ~boundary
        residual_norms.append(float(np.abs(res[interior]).max()))
        if gap > tol:
            converged = False
            partial = ValueField(
                grid=grid,
                values=values,
                mv=mv,
                mv_argmin=mv_argmin,
                bequest=g_table,
                diagnostics={
                    "fixed_point_tol": tol,
                    "max_outer_iters": params.max_outer_iters,
                    "linear_solver_tol": params.linear_solver_tol,
                    "startup_slices": params.startup_slices,
                    "startup_substeps": params.startup_substeps,
                    "outer_iterations": outer_iters,
                    "fixed_point_gaps": gaps,
                    "pde_residual_norms": residual_norms,
                    "disable_stopping": disable_stopping,
                    "stale": True,
                },
                converged=False,
            )
            raise ConvergenceError(
                f"outer fixed point stalled at slice {k} (gap {gap:.3g} > {tol:.3g})",
                field=partial,
                history=history,
            )

    mv[nt], mv_argmin[nt] = intervention_operator(
        spec, values[nt], grid, grid.times[nt]
    )

    return ValueField(
        grid=grid,
        values=values,
        mv=mv,
        mv_argmin=mv_argmin,
        bequest=g_table,
        diagnostics={
            "fixed_point_tol": tol,
            "max_outer_iters": params.max_outer_iters,
            "linear_solver_tol": params.linear_solver_tol,
            "startup_slices": params.startup_slices,
            "startup_substeps": params.startup_substeps,
            "outer_iterations": outer_iters,
            "fixed_point_gaps": gaps,
            "pde_residual_norms": residual_norms,
            "disable_stopping": disable_stopping,
            "stale": False,
        },
        converged=converged,
    )


def pde_residual(spec: ProblemSpec, field: ValueField, grid: Grid | None = None) -> np.ndarray:
    """Slice-by-slice residual of the solver's own fixed-point equation.

    Shape (nt, n_space) with NaN on boundary nodes. The PDE branch is
    measured through the one-step implicit operator (the natural residual
    of the projected scheme), so a converged field scores at the level of
    the fixed-point tolerance.
    """
    grid = grid or field.grid
    nt = grid.nt
    boundary = grid.boundary_mask()
    g_table = field.bequest
    f_table = _running_table(spec, grid)
    obstacle = g_table.copy()
    if field.diagnostics.get("disable_stopping"):
        obstacle[:nt] = stopping_floor(spec, grid)
    startup_slices = int(field.diagnostics.get("startup_slices", 0))
    startup_substeps = int(field.diagnostics.get("startup_substeps", 1))
    out = np.full((nt, grid.n_space), np.nan)
    step = _StepSolver(spec, grid, boundary)
    for k in range(nt):
        t = grid.times[k]
        if k >= nt - startup_slices and startup_substeps > 1:
            v_pde = step.solve_substepped(
                t, field.values[k + 1], f_table[k], g_table[k], startup_substeps
            )
        else:
            rhs = field.values[k + 1] + grid.dt * f_table[k]
            rhs[boundary] = g_table[k][boundary]
            v_pde = step.solve(t, rhs)
        v = field.values[k]
        res = np.maximum(
            np.minimum(v - v_pde, v - obstacle[k]),
            v - field.mv[k],
        )
        res[boundary] = np.nan
        out[k] = res
    return out
