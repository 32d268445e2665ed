"""Delimited and JSON artifacts: value fields, policies, paths.

Floats are written with 17 significant digits so a written field reloads
bit for bit.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dynamics import PathOutcome
from .model import ProblemSpec
from .policy import FeedbackPolicy
from .qvi import Grid, ValueField

ACTIVE_PDE = "pde"
ACTIVE_STOP = "stop"
ACTIVE_IMPULSE = "impulse"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _active_labels(field: ValueField, atol: float) -> np.ndarray:
    v = field.values
    labels = np.full(v.shape, ACTIVE_PDE, dtype=object)
    labels[v <= field.bequest + atol] = ACTIVE_STOP
    labels[v >= field.mv - atol] = ACTIVE_IMPULSE
    return labels


def write_value_csv(field: ValueField, path, act_tol: float | None = None) -> None:
    """One row per node: t, x components, V, MV, G, active constraint."""
    grid = field.grid
    if act_tol is None:
        act_tol = 10.0 * field.fixed_point_tol * (
            1.0 + float(np.abs(field.bequest).max())
        )
    labels = _active_labels(field, act_tol)
    nodes = grid.nodes()
    p = grid.dimension
    header = ["t", *[f"x{i}" for i in range(p)], "V", "MV", "G", "active"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for k, t in enumerate(grid.times):
            for j in range(grid.n_space):
                writer.writerow(
                    [
                        _fmt(t),
                        *[_fmt(c) for c in nodes[j]],
                        _fmt(field.values[k, j]),
                        _fmt(field.mv[k, j]),
                        _fmt(field.bequest[k, j]),
                        labels[k, j],
                    ]
                )


def write_field_meta(field: ValueField, path, extra: dict | None = None) -> None:
    grid = field.grid
    meta = {
        "grid": {
            "lower": [float(a[0]) for a in grid.axes],
            "upper": [float(a[-1]) for a in grid.axes],
            "horizon": float(grid.times[-1]),
            "nt": grid.nt,
            "nx": [len(a) - 1 for a in grid.axes],
        },
        "converged": field.converged,
        "diagnostics": _jsonable(field.diagnostics),
    }
    if extra:
        meta.update(_jsonable(extra))
    with open(path, "w") as handle:
        json.dump(meta, handle, indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def read_value_field(csv_path, meta_path) -> ValueField:
    """Rebuild a ValueField from its CSV rows and JSON header."""
    with open(meta_path) as handle:
        meta = json.load(handle)
    g = meta["grid"]
    nt = int(g["nt"])
    nx = [int(v) for v in g["nx"]]
    times = np.linspace(0.0, float(g["horizon"]), nt + 1)
    axes = tuple(
        np.linspace(float(lo), float(hi), n + 1)
        for lo, hi, n in zip(g["lower"], g["upper"], nx)
    )
    grid = Grid(times=times, axes=axes)

    n = grid.n_space
    values = np.empty((nt + 1, n))
    mv = np.empty((nt + 1, n))
    bequest = np.empty((nt + 1, n))
    with open(csv_path, newline="") as handle:
        reader = csv.reader(handle)
        next(reader)
        for row_idx, row in enumerate(reader):
            k, j = divmod(row_idx, n)
            values[k, j] = float(row[-4])
            mv[k, j] = float(row[-3])
            bequest[k, j] = float(row[-2])
    return ValueField(
        grid=grid,
        values=values,
        mv=mv,
        mv_argmin=np.full((nt + 1, n), -1, dtype=int),
        bequest=bequest,
        diagnostics=meta.get("diagnostics", {}),
        converged=bool(meta.get("converged", True)),
    )


def write_policy_csv(policy: FeedbackPolicy, path) -> None:
    """Mask rows: t, x components, act flag, impulse components (controller)."""
    grid = policy.grid
    nodes = grid.nodes()
    p = grid.dimension
    is_controller = policy.impulse_map is not None
    header = ["t", *[f"x{i}" for i in range(p)], "act"]
    if is_controller:
        header += [f"z{i}" for i in range(p)]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for k, t in enumerate(grid.times):
            for j in range(grid.n_space):
                row = [_fmt(t), *[_fmt(c) for c in nodes[j]], int(policy.mask[k, j])]
                if is_controller:
                    zi = policy.impulse_map[k, j]
                    if policy.mask[k, j] and zi >= 0:
                        z = policy.impulse_set[zi]
                    else:
                        z = np.zeros(p)
                    row += [_fmt(c) for c in z]
                writer.writerow(row)


def write_policy_meta(policy: FeedbackPolicy, path) -> None:
    with open(path, "w") as handle:
        json.dump({"kind": policy.kind, "act_tol": policy.act_tol}, handle, indent=2)


def write_path_csv(spec: ProblemSpec, outcome: PathOutcome, path) -> None:
    """Trajectory rows: t, state, event, impulse, accumulated running cost."""
    p = spec.dimension
    times = outcome.times
    states = outcome.states
    f_vals = spec.f(times, states) if len(times) > 1 else np.zeros(1)
    accum = np.zeros(len(times))
    for j in range(1, len(times)):
        accum[j] = accum[j - 1] + 0.5 * (times[j] - times[j - 1]) * (
            f_vals[j - 1] + f_vals[j]
        )
    header = [
        "t",
        *[f"x{i}" for i in range(p)],
        "event",
        *[f"z{i}" for i in range(p)],
        "running_cost_accum",
    ]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for j in range(len(times)):
            writer.writerow(
                [
                    _fmt(times[j]),
                    *[_fmt(c) for c in states[j]],
                    outcome.events[j],
                    *[_fmt(c) for c in outcome.impulses[j]],
                    _fmt(accum[j]),
                ]
            )


def write_json(payload: dict, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2) + "\n")
