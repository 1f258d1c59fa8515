"""Reference forward solver for the controlled semilinear parabolic equation.

Centered finite differences in space with Neumann ghost-point closures
(Y_0 = Y_2, Y_{N+1} = Y_{N-1}, ghosts eliminated algebraically), advanced by
the classical explicit four-stage RK4 method with the control held constant
across all four stages of a step.  Also evaluates the discrete objective, in
both the rectangle-in-time form used by the optimizer and the trapezoidal
form used for reporting.

Stability note: at the reference resolution (dx = 1/512, eps = 0.01) the
fastest grid mode of the semi-discrete system has |lambda| ~ 4 eps^2 / dx^2
~ 105, so a bare RK4 step of dt = 0.05 is linearly unstable (amplification
~ 17 per step; roundoff blows up within ~15 steps).  ``auto_substeps`` picks
an internal RK4 substep count per control slab that restores stability while
keeping the control piecewise constant on the dt slabs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import FieldSemantics, GridField, GridSpec, ProblemSpec

# RK4 stability interval on the negative real axis is ~(-2.785, 0); leave margin.
_RK4_REAL_STABILITY = 2.5
# headroom for the reaction Jacobian f'(y) on O(1) states
_REACTION_MARGIN = 3.0


class BlowUpError(RuntimeError):
    def __init__(self, time_index):
        self.time_index = time_index
        super().__init__(f"state blew up (non-finite values) at time index {time_index}")


@dataclass
class ObjectiveBreakdown:
    j_terminal: float
    j_control: float

    @property
    def j_total(self) -> float:
        return self.j_terminal + self.j_control


@dataclass
class StateTrajectory:
    snapshots: GridField  # State, indices 0..N_t
    grid: GridSpec


def laplacian_neumann(row: np.ndarray, dx: float) -> np.ndarray:
    """Second difference with Neumann ghost closure at both ends."""
    row = np.asarray(row, dtype=np.float64)
    n = row.shape[-1]
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    out = np.empty_like(row)
    inv = 1.0 / (dx * dx)
    out[..., 1:-1] = (row[..., :-2] - 2.0 * row[..., 1:-1] + row[..., 2:]) * inv
    out[..., 0] = 2.0 * (row[..., 1] - row[..., 0]) * inv
    out[..., -1] = 2.0 * (row[..., -2] - row[..., -1]) * inv
    return out


def laplacian_neumann_transpose(row: np.ndarray, dx: float) -> np.ndarray:
    """Transpose of the (non-symmetric) ghost-closed Laplacian stencil."""
    row = np.asarray(row, dtype=np.float64)
    n = row.shape[-1]
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    out = np.empty_like(row)
    inv = 1.0 / (dx * dx)
    out[..., 1:-1] = (row[..., :-2] - 2.0 * row[..., 1:-1] + row[..., 2:]) * inv
    out[..., 1] += row[..., 0] * inv  # boundary row's doubled off-diagonal
    out[..., -2] += row[..., -1] * inv
    out[..., 0] = (-2.0 * row[..., 0] + row[..., 1]) * inv
    out[..., -1] = (row[..., -2] - 2.0 * row[..., -1]) * inv
    return out


def semidiscrete_rhs(y: np.ndarray, u: np.ndarray, spec: ProblemSpec, grid: GridSpec) -> np.ndarray:
    return spec.nu * laplacian_neumann(y, grid.dx) - spec.reaction.eval(y) + u


def auto_substeps(spec: ProblemSpec, grid: GridSpec) -> int:
    """Smallest substep count keeping RK4 linearly stable on this grid."""
    lam = 4.0 * spec.nu / grid.dx**2 + _REACTION_MARGIN
    return max(1, int(np.ceil(grid.dt * lam / _RK4_REAL_STABILITY)))


def resolve_substeps(spec: ProblemSpec, grid: GridSpec) -> int:
    return auto_substeps(spec, grid) if grid.substeps == 0 else grid.substeps


def rk4_step(y_n, u_n, spec: ProblemSpec, grid: GridSpec, dt: float | None = None) -> np.ndarray:
    """One RK4 step of y' = eps^2 Lap(y) - f(y) + u, u frozen across stages."""
    y_n = np.asarray(y_n, dtype=np.float64)
    u_n = np.asarray(u_n, dtype=np.float64)
    if not (np.all(np.isfinite(y_n)) and np.all(np.isfinite(u_n))):
        raise ValueError("non-finite input to rk4_step")
    h = grid.dt if dt is None else dt
    k1 = semidiscrete_rhs(y_n, u_n, spec, grid)
    k2 = semidiscrete_rhs(y_n + 0.5 * h * k1, u_n, spec, grid)
    k3 = semidiscrete_rhs(y_n + 0.5 * h * k2, u_n, spec, grid)
    k4 = semidiscrete_rhs(y_n + h * k3, u_n, spec, grid)
    return y_n + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def advance_slab(y, u, spec, grid, substeps: int) -> np.ndarray:
    """Advance one control slab of width dt with `substeps` internal RK4 steps."""
    h = grid.dt / substeps
    for _ in range(substeps):
        y = rk4_step(y, u, spec, grid, dt=h)
    return y


def solve_state(control: GridField, spec: ProblemSpec, grid: GridSpec,
                substeps: int | None = None) -> StateTrajectory:
    """Forward solve from y0; snapshot n+1 = RK4 advance of snapshot n under slab n."""
    control.check_shape(grid)
    if substeps is None:
        substeps = resolve_substeps(spec, grid)
    n, nt = grid.n_space, grid.n_time
    snaps = np.empty((n, nt + 1))
    snaps[:, 0] = spec.y0(grid.xs)
    y = snaps[:, 0].copy()
    # non-finite values are detected and reported via BlowUpError, so the
    # intermediate overflow warnings on an unstable march are pure noise
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(nt):
            y = advance_slab(y, control.values[:, step], spec, grid, substeps)
            if not np.all(np.isfinite(y)):
                raise BlowUpError(step + 1)
            snaps[:, step + 1] = y
    return StateTrajectory(GridField(snaps, FieldSemantics.STATE), grid)


def objective(traj: StateTrajectory, control: GridField, spec: ProblemSpec,
              grid: GridSpec) -> ObjectiveBreakdown:
    """Discrete objective as the optimizer sees it: Dx-weighted terminal sum,
    rectangle rule in time for the control energy."""
    control.check_shape(grid)
    traj.snapshots.check_shape(grid)
    y_T = traj.snapshots.values[:, -1]
    diff = y_T - spec.yd(grid.xs)
    j_terminal = 0.5 * spec.beta_T * grid.dx * float(np.sum(diff * diff))
    j_control = 0.5 * spec.beta_Q * grid.dx * grid.dt * float(np.sum(control.values**2))
    return ObjectiveBreakdown(j_terminal, j_control)


def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def trapezoid_objective(traj: StateTrajectory, control: GridField, spec: ProblemSpec,
                        grid: GridSpec) -> ObjectiveBreakdown:
    """Same integrals by the trapezoidal rule (reporting only).

    The piecewise-constant control is extended to t = T by its last slab value
    before applying the trapezoidal rule in time, so a constant control
    integrates to exactly beta_Q/2 * T * u^2.
    """
    control.check_shape(grid)
    traj.snapshots.check_shape(grid)
    wx = _trapezoid_weights(grid.n_space) * grid.dx
    y_T = traj.snapshots.values[:, -1]
    diff = y_T - spec.yd(grid.xs)
    j_terminal = 0.5 * spec.beta_T * float(np.sum(wx * diff * diff))
    u_ext = np.concatenate([control.values, control.values[:, -1:]], axis=1)
    wt = _trapezoid_weights(grid.n_time + 1) * grid.dt
    j_control = 0.5 * spec.beta_Q * float(np.sum(wx[:, None] * wt[None, :] * u_ext**2))
    return ObjectiveBreakdown(j_terminal, j_control)
