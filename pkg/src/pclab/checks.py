"""Finite-difference gradient oracles.

These are the repo's trust anchors: the discrete-adjoint gradient and the
MLP jet/parameter gradients are compared against central finite differences
on small instances.  Shared by the test suite and the `check-gradients` CLI
subcommand.

Relative errors use the denominator max(|fd|, floor) with a floor tied to the
gradient's overall scale: central differences carry an absolute noise floor
around 1e-10, so a bare per-component quotient would be meaningless for
entries that are themselves at roundoff level.
"""

from __future__ import annotations

import numpy as np

from .config import (FieldSemantics, GridField, GridSpec, LossWeights,
                     ProblemSpec, ReactionTerm)
from .adjoint import gradient
from .fd_solver import objective, solve_state
from .losses import (direct_loss, direct_loss_evaluator, indirect_loss,
                     indirect_loss_evaluator, sample_collocation)
from .mlp import MlpArchitecture, eval_jets, init_params, loss_param_gradient


def coarse_problem(n_space: int, n_time: int, dt: float = 0.1) -> tuple:
    spec = ProblemSpec(
        epsilon=0.01, horizon_T=n_time * dt, beta_T=1.0, beta_Q=1e-3,
        y0=lambda x: np.cos(np.pi * x),
        yd=lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
        reaction=ReactionTerm.allen_cahn(),
    )
    grid = GridSpec(n_space=n_space, dx=1.0 / (n_space - 1), n_time=n_time,
                    dt=dt, substeps=1)
    return spec, grid


def _rel(err, fd):
    floor = 1e-3 * (1.0 + np.max(np.abs(fd)))
    return np.abs(err) / np.maximum(np.abs(fd), floor)


def adjoint_gradient_check(n_space: int, n_time: int, seed: int,
                           h: float = 1e-6, n_components: int = 20) -> dict:
    """Adjoint gradient vs central finite differences on a coarse instance.

    Returns {'directional': rel err, 'component': max rel err over sampled entries}.
    """
    spec, grid = coarse_problem(n_space, n_time)
    rng = np.random.default_rng(seed)
    u = rng.normal(0.0, 0.5, (n_space, n_time))

    def j_of(vals):
        ctrl = GridField(vals, FieldSemantics.CONTROL)
        traj = solve_state(ctrl, spec, grid, substeps=1)
        return objective(traj, ctrl, spec, grid).j_total

    g, _, _ = gradient(GridField(u.copy(), FieldSemantics.CONTROL), spec, grid, substeps=1)

    delta = rng.normal(0.0, 1.0, u.shape)
    delta /= np.linalg.norm(delta)
    fd_dir = (j_of(u + h * delta) - j_of(u - h * delta)) / (2.0 * h)
    an_dir = float(np.sum(g.values * delta))
    directional = abs(an_dir - fd_dir) / max(abs(fd_dir), 1e-12)

    idx = rng.choice(u.size, size=min(n_components, u.size), replace=False)
    comp_errs = []
    flat = u.ravel()
    for k in idx:
        e = np.zeros(u.size)
        e[k] = 1.0
        fd = (j_of((flat + h * e).reshape(u.shape))
              - j_of((flat - h * e).reshape(u.shape))) / (2.0 * h)
        comp_errs.append(float(_rel(g.values.ravel()[k] - fd, np.array([fd]))[0]))
    return {"directional": float(directional), "component": max(comp_errs)}


def jet_derivative_check(seed: int = 0, n_points: int = 50,
                         arch: MlpArchitecture | None = None) -> dict:
    """Jet d_x/d_t vs central differences, d_xx vs second differences."""
    if arch is None:
        arch = MlpArchitecture()
    params = init_params(arch, seed)
    rng = np.random.default_rng(seed + 1)
    params = params.copy_with(rng.normal(0.0, 0.7, params.flat.size))
    x = rng.uniform(0.05, 0.95, n_points)
    t = rng.uniform(0.05, 2.95, n_points)
    j = eval_jets(params, x, t)

    # Richardson-extrapolated central differences: the bare O(h^2) stencil has
    # truncation noise above the 1e-8 bar for the first derivatives, and an
    # eps/h**2 roundoff floor near 1e-6 for the second.
    def rich(channel, axis, h=1e-4):
        def cd(step):
            dx, dt_ = (step, 0.0) if axis == "x" else (0.0, step)
            plus = getattr(eval_jets(params, x + dx, t + dt_), channel)
            minus = getattr(eval_jets(params, x - dx, t - dt_), channel)
            return (plus - minus) / (2.0 * step)

        return (4.0 * cd(h / 2) - cd(h)) / 3.0

    fd_x = rich("value", "x")
    fd_t = rich("value", "t")
    fd_xx = rich("d_x", "x")
    return {
        "d_x": float(np.max(_rel(j.d_x - fd_x, fd_x))),
        "d_t": float(np.max(_rel(j.d_t - fd_t, fd_t))),
        "d_xx": float(np.max(_rel(j.d_xx - fd_xx, fd_xx))),
    }


def loss_gradient_check(kind: str, seed: int = 0, h: float = 1e-6,
                        arch: MlpArchitecture | None = None,
                        n_int: int = 10, n_bc: int = 5) -> float:
    """Max per-parameter relative error of a full PINN loss gradient vs central FD."""
    if arch is None:
        arch = MlpArchitecture()
    spec, grid = coarse_problem(9, 3)
    weights = LossWeights()
    colloc = sample_collocation(grid, spec, n_int, n_bc, seed)
    rng = np.random.default_rng(seed + 7)
    nets = []
    for k in range(2):
        p = init_params(arch, seed + k)
        nets.append(p.copy_with(p.flat + 0.1 * rng.normal(size=p.flat.size)))

    if kind == "direct":
        evaluator = direct_loss_evaluator(colloc, spec, weights)
        value = lambda ns: direct_loss(ns[0], ns[1], colloc, spec, weights).total
    elif kind == "indirect":
        evaluator = indirect_loss_evaluator(colloc, spec, weights)
        value = lambda ns: indirect_loss(ns[0], ns[1], colloc, spec, weights).total
    else:
        raise ValueError(kind)

    _, grads = loss_param_gradient(nets, evaluator, colloc, spec.horizon_T)
    worst = 0.0
    for which, params in enumerate(nets):
        fd = np.empty(params.flat.size)
        for k in range(params.flat.size):
            plus = list(nets)
            minus = list(nets)
            ek = np.zeros(params.flat.size)
            ek[k] = h
            plus[which] = params.copy_with(params.flat + ek)
            minus[which] = params.copy_with(params.flat - ek)
            fd[k] = (value(plus) - value(minus)) / (2.0 * h)
        worst = max(worst, float(np.max(_rel(grads[which] - fd, fd))))
    return worst


def run_all_checks(verbose: bool = True) -> dict:
    """The `check-gradients` bundle: adjoint-vs-FD and MLP-vs-FD, both <= 1e-6."""
    adj = 0.0
    for (n, nt) in ((9, 3), (17, 5), (33, 10)):
        for seed in range(2):
            res = adjoint_gradient_check(n, nt, seed)
            adj = max(adj, res["directional"], res["component"])
    jets = jet_derivative_check()
    mlp = max(jets["d_x"], jets["d_t"], jets["d_xx"])
    small = MlpArchitecture((2, 8, 8, 1))
    for kind in ("direct", "indirect"):
        mlp = max(mlp, loss_gradient_check(kind, arch=small))
    out = {"adjoint_vs_fd": adj, "mlp_vs_fd": mlp,
           "ok": bool(adj <= 1e-6 and mlp <= 1e-6)}
    if verbose:
        print(f"adjoint-vs-FD max rel err: {adj:.3e}")
        print(f"MLP-vs-FD max rel err:     {mlp:.3e}")
        print("PASS" if out["ok"] else "FAIL")
    return out
