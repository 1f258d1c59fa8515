"""Shared-baseline evaluation of converged controls.

Every method's control is exported to the common grid, the state is re-solved
with the RK4 solver (never taken from a network prediction), and objectives
are reported under both the optimizer's rectangle quadrature and the
trapezoidal rule.  The adjoint-refined-from-direct-PINN control serves as the
reference for relative-L2 control errors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import (ExperimentConfig, FieldSemantics, GridField, GridSpec,
                     ProblemSpec)
from .fd_solver import (ObjectiveBreakdown, StateTrajectory, objective,
                        resolve_substeps, solve_state, trapezoid_objective)
from .mlp import MlpArchitecture, MlpParams, eval_jets, init_params


class Method(Enum):
    ADJOINT_SCRATCH = "adjoint_scratch"
    DIRECT_PINN = "direct_pinn"
    INDIRECT_PINN = "indirect_pinn"
    ADJOINT_FROM_PINN = "adjoint_from_pinn"


class ZeroReference(ValueError):
    pass


@dataclass
class MethodResult:
    method: Method
    control: GridField
    solver_state: StateTrajectory
    objective_rect: ObjectiveBreakdown
    objective_trap: ObjectiveBreakdown
    net_state: StateTrajectory | None = None
    snapshot_errors: np.ndarray | None = None  # per-time rel-L2, PINN methods
    rel_l2_u_vs_reference: float | None = None
    terminal_identity_inf: float | None = None  # ||Y(.,T) + beta_Q U(.,T)||_inf
    wall_seconds: float = 0.0
    iterations: int = 0


def _trap_w(n):
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def export_control(control_net: MlpParams, grid: GridSpec) -> GridField:
    """Sample the control network at (x_i, t_n), slab value at the left endpoint."""
    xs, ts = grid.xs, grid.ts[:-1]
    xx = np.repeat(xs, ts.size)
    tt = np.tile(ts, xs.size)
    vals = eval_jets(control_net, xx, tt).value.reshape(xs.size, ts.size)
    return GridField(vals, FieldSemantics.CONTROL)


def export_state(state_net: MlpParams, grid: GridSpec) -> StateTrajectory:
    xs, ts = grid.xs, grid.ts
    xx = np.repeat(xs, ts.size)
    tt = np.tile(ts, xs.size)
    vals = eval_jets(state_net, xx, tt).value.reshape(xs.size, ts.size)
    return StateTrajectory(GridField(vals, FieldSemantics.STATE), grid)


def rel_l2(a: GridField, b: GridField, grid: GridSpec) -> float:
    """Trapezoid-weighted relative L2 distance of a from reference b."""
    if a.values.shape != b.values.shape:
        raise ValueError(f"shape mismatch: {a.values.shape} vs {b.values.shape}")
    wx = _trap_w(a.values.shape[0]) * grid.dx
    wt = _trap_w(a.values.shape[1]) * grid.dt
    w = wx[:, None] * wt[None, :]
    denom = float(np.sqrt(np.sum(w * b.values**2)))
    if denom == 0.0:
        raise ZeroReference("reference field has zero norm")
    return float(np.sqrt(np.sum(w * (a.values - b.values) ** 2))) / denom


def snapshot_rel_l2(net_state: StateTrajectory, solver_state: StateTrajectory,
                    grid: GridSpec) -> np.ndarray:
    """Per-time-snapshot relative L2 error with spatial trapezoid weights."""
    wx = _trap_w(grid.n_space) * grid.dx
    diff2 = wx[:, None] * (net_state.snapshots.values - solver_state.snapshots.values) ** 2
    ref2 = wx[:, None] * solver_state.snapshots.values**2
    num = np.sqrt(diff2.sum(axis=0))
    den = np.sqrt(ref2.sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / den, np.nan)


def total_variation_x(field: GridField) -> float:
    """Mean over time of the total variation in x (smoothness diagnostic)."""
    return float(np.mean(np.sum(np.abs(np.diff(field.values, axis=0)), axis=0)))


def evaluate_method(method: Method, control: GridField, spec: ProblemSpec,
                    grid: GridSpec, state_net: MlpParams | None = None,
                    reference_control: GridField | None = None,
                    wall_seconds: float = 0.0, iterations: int = 0) -> MethodResult:
    """Re-solve the state from the control on the shared grid and assemble the result."""
    substeps = resolve_substeps(spec, grid)
    solver_state = solve_state(control, spec, grid, substeps=substeps)
    result = MethodResult(
        method=method,
        control=control,
        solver_state=solver_state,
        objective_rect=objective(solver_state, control, spec, grid),
        objective_trap=trapezoid_objective(solver_state, control, spec, grid),
        wall_seconds=wall_seconds,
        iterations=iterations,
    )
    if state_net is not None:
        result.net_state = export_state(state_net, grid)
        result.snapshot_errors = snapshot_rel_l2(result.net_state, solver_state, grid)
    if reference_control is not None:
        result.rel_l2_u_vs_reference = rel_l2(control, reference_control, grid)
    y_T = solver_state.snapshots.values[:, -1]
    result.terminal_identity_inf = float(
        np.max(np.abs(y_T + spec.beta_Q * control.values[:, -1])))
    return result


def _make_nets(cfg: ExperimentConfig, seed: int):
    arch = MlpArchitecture(tuple(cfg.layer_widths),
                           input_scale=(((0.5, 2.0), (cfg.spec.horizon_T / 2.0,
                                                      2.0 / cfg.spec.horizon_T))
                                        if cfg.input_scaling else None))
    return init_params(arch, seed), init_params(arch, seed + 1000)


def run_comparison(cfg: ExperimentConfig, seed: int = 0,
                   reference_control: GridField | None = None):
    """The full four-method pipeline.

    Order: adjoint from scratch, direct PINN, indirect PINN, adjoint warm-started
    from the direct-PINN control (the reference).  Returns (results, summary,
    records) where records maps method name -> RunRecord and summary is a plain
    JSON-ready dict.  A failed stage is recorded and its dependents skipped.
    """
    from .adjoint import optimize_adjoint
    from .losses import PinnProblem
    from .optim import train_pinn

    spec, grid = cfg.spec, cfg.grid
    substeps = resolve_substeps(spec, grid)
    results: dict = {}
    records: dict = {}
    failures: dict = {}
    controls: dict = {}
    state_nets: dict = {}

    def rel_fn(ref):
        if ref is None:
            return None
        return lambda plist: rel_l2(export_control(plist[1], grid), ref, grid)

    # 1. adjoint from scratch
    t0 = time.perf_counter()
    try:
        zero = GridField.zeros(grid, FieldSemantics.CONTROL)
        ctrl, rec = optimize_adjoint(zero, spec, grid, cfg.adjoint_qn,
                                     substeps=substeps, reference=reference_control)
        controls[Method.ADJOINT_SCRATCH] = (ctrl, time.perf_counter() - t0, len(rec.rows))
        records[Method.ADJOINT_SCRATCH.value] = rec
    except Exception as exc:  # noqa: BLE001 - stage failures are data here
        failures[Method.ADJOINT_SCRATCH.value] = f"failed: {exc}"

    # 2. direct PINN
    t0 = time.perf_counter()
    try:
        nets0 = _make_nets(cfg, seed)
        problem = PinnProblem(spec, grid, cfg.weights, cfg.colloc.n_int,
                              cfg.colloc.n_bc, "direct")
        nets, rec, _ = train_pinn(problem, nets0, cfg.adam, cfg.qn,
                                  cfg.colloc.seed + seed,
                                  rel_l2_fn=rel_fn(reference_control))
        controls[Method.DIRECT_PINN] = (export_control(nets[1], grid),
                                        time.perf_counter() - t0, len(rec.rows))
        state_nets[Method.DIRECT_PINN] = nets[0]
        records[Method.DIRECT_PINN.value] = rec
    except Exception as exc:  # noqa: BLE001
        failures[Method.DIRECT_PINN.value] = f"failed: {exc}"

    # 3. indirect PINN
    t0 = time.perf_counter()
    try:
        nets0 = _make_nets(cfg, seed)
        problem = PinnProblem(spec, grid, cfg.weights, cfg.colloc.n_int,
                              cfg.colloc.n_bc, "indirect")
        nets, rec, _ = train_pinn(problem, nets0, cfg.adam, cfg.qn,
                                  cfg.colloc.seed + seed,
                                  rel_l2_fn=rel_fn(reference_control))
        controls[Method.INDIRECT_PINN] = (export_control(nets[1], grid),
                                          time.perf_counter() - t0, len(rec.rows))
        state_nets[Method.INDIRECT_PINN] = nets[0]
        records[Method.INDIRECT_PINN.value] = rec
    except Exception as exc:  # noqa: BLE001
        failures[Method.INDIRECT_PINN.value] = f"failed: {exc}"

    # 4. adjoint warm-started from the direct-PINN control
    if Method.DIRECT_PINN in controls:
        t0 = time.perf_counter()
        try:
            init = controls[Method.DIRECT_PINN][0]
            ctrl, rec = optimize_adjoint(init, spec, grid, cfg.adjoint_qn,
                                         substeps=substeps, reference=reference_control)
            controls[Method.ADJOINT_FROM_PINN] = (ctrl, time.perf_counter() - t0,
                                                  len(rec.rows))
            records[Method.ADJOINT_FROM_PINN.value] = rec
        except Exception as exc:  # noqa: BLE001
            failures[Method.ADJOINT_FROM_PINN.value] = f"failed: {exc}"
    else:
        failures[Method.ADJOINT_FROM_PINN.value] = "skipped: direct PINN stage failed"

    reference = controls.get(Method.ADJOINT_FROM_PINN, (reference_control,))[0] \
        if Method.ADJOINT_FROM_PINN in controls else reference_control

    for method in Method:
        if method not in controls:
            continue
        ctrl, wall, iters = controls[method]
        try:
            results[method] = evaluate_method(
                method, ctrl, spec, grid, state_net=state_nets.get(method),
                reference_control=reference, wall_seconds=wall, iterations=iters)
        except Exception as exc:  # noqa: BLE001
            failures[method.value] = f"evaluation failed: {exc}"

    summary = {"methods": {}, "failures": failures,
               "reference": Method.ADJOINT_FROM_PINN.value}
    from . import runtime
    for method, res in results.items():
        summary["methods"][method.value] = {
            "J_T_rect": res.objective_rect.j_terminal,
            "J_Q_rect": res.objective_rect.j_control,
            "J_rect": res.objective_rect.j_total,
            "J_T_trap": res.objective_trap.j_terminal,
            "J_Q_trap": res.objective_trap.j_control,
            "J_trap": res.objective_trap.j_total,
            "rel_l2_u": res.rel_l2_u_vs_reference,
            "terminal_identity_inf": res.terminal_identity_inf,
            "control_total_variation_x": total_variation_x(res.control),
            "wall_seconds": 0.0 if runtime.DETERMINISTIC else res.wall_seconds,
            "iterations": res.iterations,
        }
    return results, summary, records
