"""Figure rendering for the CLI report path.

Renders matplotlib figures to files next to the delimited output: loss
histories from RunRecords, space-time control heatmaps, control/state
profiles at selected times, and per-snapshot state-error curves.  The
numerical modules themselves stay plot-free; everything here consumes the
already-serialized data structures.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .config import GridField, GridSpec


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_loss_history(record, path, title="optimization history"):
    fig, ax = plt.subplots(figsize=(7, 4.2))
    term_keys = [c for c in record.columns()
                 if c not in record.CORE and c != "rel_l2_u"]
    iters = [row["iter"] for row in record.rows]
    total = [row["loss_total"] for row in record.rows]
    ax.semilogy(iters, total, "k-", lw=1.6, label="total")
    for key in term_keys:
        vals = [row.get(key) for row in record.rows]
        if any(v not in (None, "") for v in vals):
            ax.semilogy(iters, [v if v not in (None, "") else np.nan for v in vals],
                        lw=0.9, alpha=0.8, label=key)
    rel = [row.get("rel_l2_u") for row in record.rows]
    if any(v not in (None, "") for v in rel):
        ax.semilogy(iters, [v if v not in (None, "") else np.nan for v in rel],
                    "--", lw=1.2, label="rel L2(u)")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss / objective")
    ax.set_title(title)
    ax.legend(fontsize=8, ncol=2)
    ax.grid(True, which="both", alpha=0.25)
    return _finish(fig, path)


def plot_control_heatmap(control: GridField, grid: GridSpec, path, title="control u(x,t)"):
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    extent = [0.0, grid.n_time * grid.dt, 0.0, 1.0]
    im = ax.imshow(control.values, aspect="auto", origin="lower", extent=extent,
                   cmap="RdBu_r")
    fig.colorbar(im, ax=ax, label="u")
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_title(title)
    return _finish(fig, path)


def plot_profiles(field_values, grid: GridSpec, path, ylabel, title, n_profiles=5):
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    n_cols = field_values.shape[1]
    picks = np.unique(np.linspace(0, n_cols - 1, n_profiles).astype(int))
    for n in picks:
        ax.plot(grid.xs, field_values[:, n], lw=1.2, label=f"t = {n * grid.dt:.2f}")
    ax.set_xlabel("x")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.25)
    return _finish(fig, path)


def plot_state_comparison(result, grid: GridSpec, path):
    """Solver-recomputed vs network-predicted state at a few snapshot times."""
    fig, ax = plt.subplots(figsize=(6.8, 4.4))
    n_cols = grid.n_time + 1
    picks = np.unique(np.linspace(0, n_cols - 1, 4).astype(int))
    for n in picks:
        line, = ax.plot(grid.xs, result.solver_state.snapshots.values[:, n],
                        lw=1.4, label=f"solver t = {n * grid.dt:.2f}")
        if result.net_state is not None:
            err = result.snapshot_errors[n]
            ax.plot(grid.xs, result.net_state.snapshots.values[:, n], "--",
                    color=line.get_color(), lw=1.0,
                    label=f"net t = {n * grid.dt:.2f} (rel {err:.1e})")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(f"state, {result.method.value}")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.25)
    return _finish(fig, path)


def plot_summary(summary: dict, path):
    methods = list(summary["methods"])
    fig, axes = plt.subplots(1, 2, figsize=(9.5, 4.0))
    j = [summary["methods"][m]["J_trap"] for m in methods]
    axes[0].bar(methods, j, color="steelblue")
    axes[0].set_ylabel("J (trapezoid)")
    axes[0].tick_params(axis="x", rotation=25)
    rel = [summary["methods"][m]["rel_l2_u"] for m in methods]
    if any(r is not None for r in rel):
        axes[1].bar(methods, [r if r is not None else 0.0 for r in rel],
                    color="indianred")
        axes[1].set_ylabel("rel L2(u) vs reference")
        axes[1].set_yscale("log")
    axes[1].tick_params(axis="x", rotation=25)
    fig.suptitle("method comparison")
    return _finish(fig, path)
