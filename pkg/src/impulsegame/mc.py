"""Monte-Carlo closure: simulate the extracted policies and compare the
estimated payoff against the solved value; empirical regularity probes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import simulate_batch
from .errors import SpecError
from .model import ProblemSpec
from .payoff import PayoffBreakdown, batch_payoff_from_result
from .qvi import ValueField


class NeverStop:
    """Deviation stopper that lets the game run to the horizon."""

    def should_stop(self, t, x) -> bool:
        return False

    def stop_mask(self, t, x):
        return np.zeros(len(x), dtype=bool)


class StopImmediately:
    """Deviation stopper that ends the game at the first opportunity."""

    def should_stop(self, t, x) -> bool:
        return True

    def stop_mask(self, t, x):
        return np.ones(len(x), dtype=bool)


class StopAtRandom:
    """Stops at the first mesh time past a seeded uniform draw in [t0, T]."""

    def __init__(self, t0: float, horizon: float, seed: int):
        rng = np.random.default_rng(seed)
        self.threshold = float(t0 + rng.uniform(0.0, 1.0) * (horizon - t0))

    def should_stop(self, t, x) -> bool:
        return t >= self.threshold

    def stop_mask(self, t, x):
        return np.full(len(x), t >= self.threshold)


@dataclass(frozen=True)
class EstimateReport:
    """Monte-Carlo value estimate with its simulation diagnostics."""

    mean: float
    std_error: float
    breakdown: PayoffBreakdown
    mean_impulse_count: float
    stop_fraction: float
    exit_fraction: float
    n_paths: int
    dt: float
    seed: int

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "running_mean": self.breakdown.running,
            "intervention_mean": self.breakdown.intervention,
            "bequest_mean": self.breakdown.bequest,
            "mean_impulse_count": self.mean_impulse_count,
            "stop_fraction": self.stop_fraction,
            "exit_fraction": self.exit_fraction,
            "n_paths": self.n_paths,
            "dt": self.dt,
            "seed": self.seed,
        }


def estimate_value(
    spec: ProblemSpec,
    controller,
    stopper,
    t0: float,
    x0,
    n_paths: int,
    dt: float,
    seed: int,
) -> EstimateReport:
    """Sample-mean estimate of the game payoff under the given policies.

    Paths use derived seeds base + index; the aggregation is a plain
    pairwise sum, so reruns with identical inputs reproduce the estimate
    bit for bit.
    """
    if n_paths < 2:
        raise SpecError("estimate_value needs at least two paths")
    batch = simulate_batch(
        spec, t0, x0, controller, stopper, dt, n_paths, seed, keep_sample=False
    )
    mean, se, breakdown = batch_payoff_from_result(batch)
    return EstimateReport(
        mean=mean,
        std_error=se,
        breakdown=breakdown,
        mean_impulse_count=float(batch.impulse_count.mean()),
        stop_fraction=float(batch.stopped.mean()),
        exit_fraction=float(batch.exited.mean()),
        n_paths=n_paths,
        dt=dt,
        seed=seed,
    )


def deviation_report(
    spec: ProblemSpec,
    controller,
    stopper,
    t0: float,
    x0,
    v_reference: float,
    n_paths: int,
    dt: float,
    seed: int,
    slack: float = 0.05,
) -> dict:
    """Unilateral-deviation inequalities around the solved value.

    Against the extracted controller no fixed stopper family may beat the
    value (the maximizer cannot gain by deviating); against the extracted
    stopper the idle controller cannot do better than the value from the
    minimizer's side. Each entry reports the estimate and whether its
    inequality holds within 3 standard errors plus the discretisation
    slack.
    """
    T = spec.domain.horizon
    entries = {}
    stoppers = {
        "never_stop": NeverStop(),
        "stop_immediately": StopImmediately(),
        "stop_at_random": StopAtRandom(t0, T, seed),
    }
    for name, dev in stoppers.items():
        est = estimate_value(spec, controller, dev, t0, x0, n_paths, dt, seed)
        bound = v_reference + 3.0 * est.std_error + slack
        entries[name] = {
            "mean": est.mean,
            "std_error": est.std_error,
            "bound": bound,
            "holds": bool(est.mean <= bound),
            "direction": "<=",
        }
    est = estimate_value(spec, None, stopper, t0, x0, n_paths, dt, seed)
    bound = v_reference - 3.0 * est.std_error - slack
    entries["no_impulse_controller"] = {
        "mean": est.mean,
        "std_error": est.std_error,
        "bound": bound,
        "holds": bool(est.mean >= bound),
        "direction": ">=",
    }
    return entries


@dataclass(frozen=True)
class RegularityProbe:
    """Largest difference quotients of a field: |dV|/dx in space and
    |dV|/sqrt(dt) in time."""

    lipschitz_x: float
    holder_t: float


def regularity_probe(field: ValueField) -> RegularityProbe:
    if not field.converged:
        raise SpecError("regularity probe requires a converged field")
    grid = field.grid
    vals = field.values.reshape((grid.nt + 1, *grid.space_shape))
    lip = 0.0
    for ax in range(grid.dimension):
        diffs = np.abs(np.diff(vals, axis=1 + ax)) / grid.dx[ax]
        lip = max(lip, float(diffs.max()))
    hold = float(np.abs(np.diff(vals, axis=0)).max() / np.sqrt(grid.dt))
    return RegularityProbe(lipschitz_x=lip, holder_t=hold)
