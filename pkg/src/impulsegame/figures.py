"""Figure rendering for the command-line report path.

Only the CLI imports this module; the numerical core stays free of any
plotting dependency. All figures go straight to files via the Agg backend.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .policy import FeedbackPolicy
from .qvi import ValueField


def _field_image(field: ValueField):
    """(times, xs, V matrix) for 1-D fields; 2-D fields show the t=0 slice."""
    grid = field.grid
    if grid.dimension == 1:
        return grid.times, grid.axes[0], field.values
    return None


def save_value_figure(field: ValueField, path) -> None:
    grid = field.grid
    fig, ax = plt.subplots(figsize=(7, 4))
    if grid.dimension == 1:
        xs = grid.axes[0]
        mesh = ax.pcolormesh(
            xs, grid.times, field.values, shading="nearest", cmap="viridis"
        )
        fig.colorbar(mesh, ax=ax, label="V")
        ax.set_xlabel("x")
        ax.set_ylabel("t")
        ax.set_title("value function")
    else:
        xs, ys = grid.axes[0], grid.axes[1]
        v0 = field.values[0].reshape(grid.space_shape)
        mesh = ax.pcolormesh(ys, xs, v0, shading="nearest", cmap="viridis")
        fig.colorbar(mesh, ax=ax, label="V(0, .)")
        ax.set_xlabel("x1")
        ax.set_ylabel("x0")
        ax.set_title("value at t = 0")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_policy_figure(controller: FeedbackPolicy, stopper: FeedbackPolicy, path) -> None:
    grid = controller.grid
    fig, ax = plt.subplots(figsize=(7, 4))
    if grid.dimension == 1:
        xs = grid.axes[0]
        region = np.zeros_like(controller.mask, dtype=float)
        region[stopper.mask] = 1.0
        region[controller.mask] = 2.0
        region[controller.mask & stopper.mask] = 3.0
        mesh = ax.pcolormesh(
            xs, grid.times, region, shading="nearest", cmap="Accent", vmin=0, vmax=3
        )
        cb = fig.colorbar(mesh, ax=ax, ticks=[0, 1, 2, 3])
        cb.ax.set_yticklabels(["continue", "stop", "intervene", "both"])
        ax.set_xlabel("x")
        ax.set_ylabel("t")
        ax.set_title("action regions")
    else:
        xs, ys = grid.axes[0], grid.axes[1]
        region = np.zeros(grid.space_shape)
        region[stopper.mask[0].reshape(grid.space_shape)] = 1.0
        region[controller.mask[0].reshape(grid.space_shape)] = 2.0
        mesh = ax.pcolormesh(ys, xs, region, shading="nearest", cmap="Accent")
        fig.colorbar(mesh, ax=ax)
        ax.set_title("action regions at t = 0")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_paths_figure(trajectories, path, title="sample paths") -> None:
    """Overlay of (times, states) pairs for 1-D problems."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for times, states in trajectories:
        ax.plot(times, states[:, 0], lw=0.9, alpha=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_refinement_figure(levels, series, path, ylabel) -> None:
    """Log-log decay of a diagnostic across grid refinements."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.loglog(levels, series, "o-")
    ax.set_xlabel("grid steps per axis")
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
