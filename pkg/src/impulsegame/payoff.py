"""Pathwise payoff accounting and Monte-Carlo aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import BatchResult, PathOutcome
from .errors import DomainError, SpecError
from .model import ProblemSpec


@dataclass(frozen=True)
class PayoffBreakdown:
    """Running, intervention and bequest parts of one payoff sample."""

    running: float
    intervention: float
    bequest: float

    @property
    def total(self) -> float:
        return self.running + self.intervention + self.bequest


def evaluate_payoff(spec: ProblemSpec, outcome: PathOutcome) -> PayoffBreakdown:
    """Pure accounting of one trajectory: no randomness, no state.

    The running term integrates the running cost along the recorded samples
    by the trapezoidal rule (the recorded state at an impulse time is the
    post-impulse one); the bequest is charged at the effective end, which
    for a finite horizon always exists.
    """
    if outcome.states.shape[1] != spec.dimension:
        raise DomainError(
            f"outcome dimension {outcome.states.shape[1]} does not match "
            f"spec dimension {spec.dimension}"
        )
    if len(outcome.times) > 1:
        f_vals = spec.f(outcome.times, outcome.states)
        running = float(np.trapezoid(f_vals, outcome.times))
    else:
        running = 0.0
    end = outcome.effective_end
    intervention = float(
        sum(e.cost for e in outcome.schedule.events if e.time <= end)
    )
    bequest = float(spec.G(end, outcome.end_state[None, :])[0])
    return PayoffBreakdown(running=running, intervention=intervention, bequest=bequest)


def batch_payoff(
    spec: ProblemSpec, outcomes: list[PathOutcome]
) -> tuple[float, float, PayoffBreakdown]:
    """Sample mean, standard error and componentwise means of a batch."""
    if len(outcomes) < 2:
        raise SpecError("batch_payoff needs at least two outcomes")
    parts = [evaluate_payoff(spec, o) for o in outcomes]
    totals = np.array([p.total for p in parts])
    mean = float(totals.mean())
    se = float(totals.std(ddof=1) / np.sqrt(len(totals)))
    breakdown = PayoffBreakdown(
        running=float(np.mean([p.running for p in parts])),
        intervention=float(np.mean([p.intervention for p in parts])),
        bequest=float(np.mean([p.bequest for p in parts])),
    )
    return mean, se, breakdown


def batch_payoff_from_result(result: BatchResult) -> tuple[float, float, PayoffBreakdown]:
    """Same aggregation as batch_payoff but from the vectorised engine."""
    if result.n_paths < 2:
        raise SpecError("batch_payoff needs at least two outcomes")
    totals = result.totals
    mean = float(totals.mean())
    se = float(totals.std(ddof=1) / np.sqrt(len(totals)))
    breakdown = PayoffBreakdown(
        running=float(result.running.mean()),
        intervention=float(result.intervention.mean()),
        bequest=float(result.bequest.mean()),
    )
    return mean, se, breakdown


def batch_payoff_json(
    mean: float, se: float, n: int, breakdown: PayoffBreakdown
) -> dict:
    """Fixed JSON shape for serialised batch results."""
    return {
        "mean": mean,
        "std_error": se,
        "n": n,
        "running_mean": breakdown.running,
        "intervention_mean": breakdown.intervention,
        "bequest_mean": breakdown.bequest,
    }
