"""Forward simulation of the controlled diffusion under feedback policies.

Within one mesh step the stopper moves first, then the controller, then the
diffusion increment; exits are detected on the mesh (first sample outside
the open box). The controller is only consulted strictly after the initial
instant, so the first possible intervention time is t0 + dt. A seed fixes
the Brownian increments completely; batches derive per-path seeds as
base_seed + path_index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SpecError
from .model import ProblemSpec
from .qvi import Grid

EVENT_NONE = "none"
EVENT_IMPULSE = "impulse"
EVENT_STOP = "stop"
EVENT_EXIT = "exit"


@dataclass(frozen=True)
class ImpulseEvent:
    time: float
    impulse: np.ndarray
    cost: float


@dataclass
class ImpulseSchedule:
    """Realized control along one path: ordered (time, impulse, cost)."""

    events: list[ImpulseEvent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    @property
    def total_cost(self) -> float:
        return float(sum(e.cost for e in self.events))


@dataclass
class PathOutcome:
    """One simulated trajectory with its control and termination record."""

    times: np.ndarray  # (k,)
    states: np.ndarray  # (k, p); post-impulse state at impulse times
    events: list[str]  # per sample: none / impulse / stop / exit
    impulses: np.ndarray  # (k, p), zeros where no impulse
    schedule: ImpulseSchedule
    stop_time: float | None
    exit_time: float | None
    t0: float

    @property
    def effective_end(self) -> float:
        return float(self.times[-1])

    @property
    def end_state(self) -> np.ndarray:
        return self.states[-1]


def _mesh(t0: float, horizon: float, dt: float) -> np.ndarray:
    span = horizon - t0
    n = max(1, math.ceil(span / dt - 1e-12))
    times = t0 + dt * np.arange(n + 1)
    times[-1] = horizon
    return times


def simulate_path(
    spec: ProblemSpec,
    t0: float,
    x0,
    controller,
    stopper,
    dt: float,
    seed: int,
) -> PathOutcome:
    """Euler-Maruyama path of the controlled state from (t0, x0).

    Policies are queried through ``stopper.should_stop(t, x)`` and
    ``controller.impulse(t, x)`` (returning an impulse vector or None);
    a None policy never acts. Identical inputs give a bit-identical path.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    T = spec.domain.horizon
    if not spec.domain.contains(x0):
        raise DomainError(f"initial state {x0.tolist()} is not inside the domain")
    if not 0.0 <= t0 < T:
        raise SpecError("t0 must lie in [0, T)")
    if dt <= 0 or dt >= T - t0:
        raise SpecError("invalid step: need 0 < dt < T - t0")

    times = _mesh(t0, T, dt)
    n_steps = len(times) - 1
    m = spec.noise_dimension
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n_steps, m))

    p = spec.dimension
    rec_t: list[float] = []
    rec_x: list[np.ndarray] = []
    rec_e: list[str] = []
    rec_z: list[np.ndarray] = []
    schedule = ImpulseSchedule()
    stop_time: float | None = None
    exit_time: float | None = None

    x = x0.copy()
    j = 0
    while True:
        t = float(times[j])
        event = EVENT_NONE
        z_rec = np.zeros(p)

        if stopper is not None and stopper.should_stop(t, x):
            rec_t.append(t)
            rec_x.append(x.copy())
            rec_e.append(EVENT_STOP)
            rec_z.append(z_rec)
            stop_time = t
            break

        if j > 0 and j < n_steps and controller is not None:
            z = controller.impulse(t, x)
            if z is not None:
                z = np.atleast_1d(np.asarray(z, dtype=float))
                cost = float(spec.cost(t, z))
                schedule.events.append(ImpulseEvent(time=t, impulse=z, cost=cost))
                x = spec.impulse_response(x, z)
                event = EVENT_IMPULSE
                z_rec = z
                if not spec.domain.contains(x):
                    rec_t.append(t)
                    rec_x.append(x.copy())
                    rec_e.append(EVENT_EXIT)
                    rec_z.append(z_rec)
                    exit_time = t
                    break

        rec_t.append(t)
        rec_x.append(x.copy())
        rec_e.append(event)
        rec_z.append(z_rec)

        if j == n_steps:
            break

        h = float(times[j + 1] - times[j])
        mu = spec.mu(t, x[None, :])[0]
        sig = spec.sigma(t, x[None, :])[0]
        x = x + mu * h + sig @ (math.sqrt(h) * noise[j])
        j += 1

        if not spec.domain.contains(x):
            rec_t.append(float(times[j]))
            rec_x.append(x.copy())
            rec_e.append(EVENT_EXIT)
            rec_z.append(np.zeros(p))
            exit_time = float(times[j])
            break

    return PathOutcome(
        times=np.asarray(rec_t),
        states=np.asarray(rec_x),
        events=rec_e,
        impulses=np.asarray(rec_z),
        schedule=schedule,
        stop_time=stop_time,
        exit_time=exit_time,
        t0=t0,
    )


@dataclass
class BatchResult:
    """Per-path aggregates from the vectorised simulation engine.

    ``running``/``intervention``/``bequest`` follow the same accounting as
    the pathwise payoff evaluation (trapezoidal running cost, bequest at
    the effective end), which the test suite cross-checks path by path.
    """

    n_paths: int
    running: np.ndarray
    intervention: np.ndarray
    bequest: np.ndarray
    impulse_count: np.ndarray
    stopped: np.ndarray
    exited: np.ndarray
    end_time: np.ndarray
    end_state: np.ndarray
    sample: PathOutcome | None = None

    @property
    def totals(self) -> np.ndarray:
        return self.running + self.intervention + self.bequest


def simulate_batch(
    spec: ProblemSpec,
    t0: float,
    x0,
    controller,
    stopper,
    dt: float,
    n_paths: int,
    seed: int,
    keep_sample: bool = True,
) -> BatchResult:
    """Vectorised batch of paths with per-path seeds base_seed + index.

    Path i reproduces ``simulate_path(spec, t0, x0, ..., seed + i)``: the
    same per-path noise array is drawn from the same generator stream and
    the per-step event order (exit, stop, impulse) is identical, so the
    payoff aggregates match the single-path evaluation exactly.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    T = spec.domain.horizon
    if not spec.domain.contains(x0):
        raise DomainError(f"initial state {x0.tolist()} is not inside the domain")
    if dt <= 0 or dt >= T - t0:
        raise SpecError("invalid step: need 0 < dt < T - t0")
    if n_paths < 1:
        raise SpecError("n_paths must be positive")

    times = _mesh(t0, T, dt)
    n_steps = len(times) - 1
    m = spec.noise_dimension

    noise = np.empty((n_paths, n_steps, m))
    for i in range(n_paths):
        noise[i] = np.random.default_rng(seed + i).standard_normal((n_steps, m))

    lo = np.asarray(spec.domain.lower)
    hi = np.asarray(spec.domain.upper)
    z_list = spec.impulse_set.impulses

    x = np.tile(x0, (n_paths, 1))
    alive = np.ones(n_paths, dtype=bool)
    running = np.zeros(n_paths)
    intervention = np.zeros(n_paths)
    impulse_count = np.zeros(n_paths, dtype=int)
    stopped = np.zeros(n_paths, dtype=bool)
    exited = np.zeros(n_paths, dtype=bool)
    end_time = np.full(n_paths, times[-1])
    end_state = x.copy()

    def terminate(mask, t, flag):
        end_time[mask] = t
        end_state[mask] = x[mask]
        flag[mask] = True
        alive[mask] = False

    # stopper moves first, already at the initial instant
    if stopper is not None:
        fires = np.zeros(n_paths, dtype=bool)
        fires[alive] = stopper.stop_mask(float(times[0]), x[alive])
        terminate(alive & fires, float(times[0]), stopped)

    f_prev = spec.f(float(times[0]), x)

    for j in range(n_steps):
        if not alive.any():
            break
        t_next = float(times[j + 1])
        h = float(times[j + 1] - times[j])
        mu = spec.mu(float(times[j]), x)
        sig = spec.sigma(float(times[j]), x)
        step = mu * h + np.einsum("nij,nj->ni", sig, math.sqrt(h) * noise[:, j, :])
        x = np.where(alive[:, None], x + step, x)

        segment = alive.copy()  # paths integrating over [t_j, t_{j+1}]

        inside = np.logical_and(x > lo, x < hi).all(axis=1)
        terminate(alive & ~inside, t_next, exited)

        if stopper is not None and alive.any():
            fires = np.zeros(n_paths, dtype=bool)
            fires[alive] = stopper.stop_mask(t_next, x[alive])
            terminate(alive & fires, t_next, stopped)

        if j + 1 < n_steps and controller is not None and alive.any():
            z_idx = np.full(n_paths, -1, dtype=int)
            z_idx[alive] = controller.impulse_index_mask(t_next, x[alive])
            firing = alive & (z_idx >= 0)
            if firing.any():
                z = z_list[z_idx[firing]]
                intervention[firing] += spec.cost(t_next, z)
                impulse_count[firing] += 1
                x[firing] = spec.impulse_response(x[firing], z)
                inside = np.logical_and(x > lo, x < hi).all(axis=1)
                terminate(firing & ~inside, t_next, exited)

        # the recorded state at t_{j+1} is post-impulse, matching the
        # pathwise trapezoid
        f_next = spec.f(t_next, x)
        running[segment] += 0.5 * h * (f_prev[segment] + f_next[segment])
        f_prev = f_next

    end_state[alive] = x[alive]
    end_time[alive] = times[-1]

    bequest = np.asarray(spec.G(end_time, end_state), dtype=float)

    sample = None
    if keep_sample:
        sample = simulate_path(spec, t0, x0, controller, stopper, dt, seed)

    return BatchResult(
        n_paths=n_paths,
        running=running,
        intervention=intervention,
        bequest=bequest,
        impulse_count=impulse_count,
        stopped=stopped,
        exited=exited,
        end_time=end_time,
        end_state=end_state,
        sample=sample,
    )


# ---------------------------------------------------------------------------
# generator stencil and moment diagnostics


def generator_apply(spec: ProblemSpec, phi, grid: Grid, t: float, node) -> float:
    """Second-order central-difference generator at one interior node."""
    vals = np.asarray(phi, dtype=float).reshape(grid.space_shape)
    p = grid.dimension
    if np.isscalar(node) or isinstance(node, (int, np.integer)):
        node = (int(node),)
    node = tuple(int(i) for i in node)
    shape = grid.space_shape
    for ax, i in enumerate(node):
        if i <= 0 or i >= shape[ax] - 1:
            raise DomainError(f"stencil error: node {node} touches the boundary")

    x = np.array([grid.axes[ax][node[ax]] for ax in range(p)])
    mu = spec.mu(t, x[None, :])[0]
    sig = spec.sigma(t, x[None, :])[0]
    a = sig @ sig.T

    total = 0.0
    for ax in range(p):
        up = list(node)
        dn = list(node)
        up[ax] += 1
        dn[ax] -= 1
        dx = grid.dx[ax]
        first = (vals[tuple(up)] - vals[tuple(dn)]) / (2 * dx)
        second = (vals[tuple(up)] - 2 * vals[node] + vals[tuple(dn)]) / dx**2
        total += mu[ax] * first + 0.5 * a[ax, ax] * second
        for ax2 in range(ax + 1, p):
            pp = list(node)
            pm = list(node)
            mp = list(node)
            mm = list(node)
            pp[ax] += 1
            pp[ax2] += 1
            pm[ax] += 1
            pm[ax2] -= 1
            mp[ax] -= 1
            mp[ax2] += 1
            mm[ax] -= 1
            mm[ax2] -= 1
            cross = (
                vals[tuple(pp)] - vals[tuple(pm)] - vals[tuple(mp)] + vals[tuple(mm)]
            ) / (4 * dx * grid.dx[ax2])
            total += a[ax, ax2] * cross
    return float(total)


@dataclass(frozen=True)
class MomentReport:
    """Empirical second-moment bounds of the uncontrolled state.

    ``increment_ratio`` maps each window h to
    E[sup_{s in [t0, t0+h]} |X_s - x0|^2] / (h * (1 + |x0|^2)); stability of
    these ratios across the ladder is the quantity worth asserting, not the
    constant itself.
    """

    n_paths: int
    dt: float
    sup_sq: float
    sup_sq_const: float
    increment_sup: dict
    increment_ratio: dict

    @property
    def ratio_spread(self) -> float:
        vals = list(self.increment_ratio.values())
        return max(vals) / max(min(vals), 1e-300)


def moment_diagnostics(
    spec: ProblemSpec,
    t0: float,
    x0,
    n_paths: int,
    dt: float,
    seed: int,
    h_ladder: tuple[float, ...] = (0.01, 0.04, 0.16),
) -> MomentReport:
    """Monte-Carlo estimates of the running-sup moment bounds.

    Simulates the uncontrolled diffusion (no exits, no policies) and
    tracks running suprema of |X|^2 over [t0, T] and of |X - x0|^2 over
    each window of the ladder.
    """
    if n_paths < 100:
        raise SpecError("n_paths must be at least 100 for moment diagnostics")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    T = spec.domain.horizon
    rng = np.random.default_rng(seed)
    m = spec.noise_dimension

    h_max = max(h_ladder)
    n_fine = max(1, math.ceil(h_max / dt))
    fine_times = t0 + dt * np.arange(n_fine + 1)

    x = np.tile(x0, (n_paths, 1))
    sup_inc = np.zeros(n_paths)
    cutoffs = sorted(h_ladder)
    collected: dict[float, float] = {}
    next_cut = 0
    for j in range(n_fine):
        t = float(fine_times[j])
        mu = spec.mu(t, x)
        sig = spec.sigma(t, x)
        dw = math.sqrt(dt) * rng.standard_normal((n_paths, m))
        x = x + mu * dt + np.einsum("nij,nj->ni", sig, dw)
        dev = ((x - x0) ** 2).sum(axis=1)
        np.maximum(sup_inc, dev, out=sup_inc)
        while next_cut < len(cutoffs) and fine_times[j + 1] >= t0 + cutoffs[next_cut] - 1e-12:
            collected[cutoffs[next_cut]] = float(sup_inc.mean())
            next_cut += 1
    while next_cut < len(cutoffs):
        collected[cutoffs[next_cut]] = float(sup_inc.mean())
        next_cut += 1

    # coarser mesh for the horizon-wide supremum
    dt_sup = max(dt, (T - t0) / 256.0)
    n_coarse = max(1, math.ceil((T - t0) / dt_sup))
    coarse_times = np.linspace(t0, T, n_coarse + 1)
    x = np.tile(x0, (n_paths, 1))
    sup_sq = (x**2).sum(axis=1)
    for j in range(n_coarse):
        t = float(coarse_times[j])
        h = float(coarse_times[j + 1] - coarse_times[j])
        mu = spec.mu(t, x)
        sig = spec.sigma(t, x)
        dw = math.sqrt(h) * rng.standard_normal((n_paths, m))
        x = x + mu * h + np.einsum("nij,nj->ni", sig, dw)
        np.maximum(sup_sq, (x**2).sum(axis=1), out=sup_sq)

    scale = 1.0 + float((x0**2).sum())
    sup_mean = float(sup_sq.mean())
    ratios = {h: collected[h] / (h * scale) for h in h_ladder}
    return MomentReport(
        n_paths=n_paths,
        dt=dt,
        sup_sq=sup_mean,
        sup_sq_const=sup_mean / scale,
        increment_sup={h: collected[h] for h in h_ladder},
        increment_ratio=ratios,
    )
