"""Direct and indirect (KKT) PINN losses built from network jets.

The residual evaluators are generic over anything exposing value/d_t/d_x/d_xx
attributes (a FieldJet, a JetBatch, or a manufactured analytic field), so the
residual algebra is testable independently of networks.

In the indirect formulation the adjoint is tied to the control network by
construction, Lambda = beta_Q * U, so the stationarity condition holds
identically and carries no loss term.  A generic three-network variant with
an independent adjoint network and an explicit stationarity term is kept as a
secondary code path (default off).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import GridSpec, LossWeights, ProblemSpec
from .mlp import JetBatch, MlpParams, eval_on_collocation, loss_param_gradient


@dataclass(frozen=True)
class CollocationSet:
    interior: np.ndarray       # (n_int, 2) columns x, t
    boundary_times: np.ndarray  # (n_bc,)
    initial_xs: np.ndarray      # grid xs at t = 0
    terminal_xs: np.ndarray     # grid xs at t = T
    seed: int


@dataclass
class LossBreakdown:
    terms: dict
    total: float


def sample_collocation(grid: GridSpec, spec: ProblemSpec, n_int: int, n_bc: int,
                       seed: int) -> CollocationSet:
    """Uniform i.i.d. interior points on (0,1)x(0,T) and boundary times on (0,T);
    initial/terminal points are the N uniform grid points.  Deterministic in seed."""
    if n_int < 1 or n_bc < 1:
        raise ValueError("collocation counts must be >= 1")
    rng = np.random.default_rng(seed)
    T = spec.horizon_T
    xs = rng.uniform(0.0, 1.0, n_int)
    ts = rng.uniform(0.0, T, n_int)
    tb = rng.uniform(0.0, T, n_bc)
    # uniform draws can land exactly on the closed endpoint; redraw those
    for arr, hi in ((xs, 1.0), (ts, T), (tb, T)):
        bad = (arr <= 0.0) | (arr >= hi)
        while np.any(bad):
            arr[bad] = rng.uniform(0.0, hi, int(bad.sum()))
            bad = (arr <= 0.0) | (arr >= hi)
    return CollocationSet(
        interior=np.column_stack([xs, ts]),
        boundary_times=tb,
        initial_xs=grid.xs.copy(),
        terminal_xs=grid.xs.copy(),
        seed=seed,
    )


def state_residual(field, control_value, spec: ProblemSpec):
    """r_y = d_t - eps^2 d_xx + f(value) - u."""
    return field.d_t - spec.nu * field.d_xx + spec.reaction.eval(field.value) - control_value


def adjoint_residual(state_jet, adjoint_jet, spec: ProblemSpec):
    """r_lambda = -d_t(lam) - eps^2 d_xx(lam) + f'(y) lam."""
    return (-adjoint_jet.d_t - spec.nu * adjoint_jet.d_xx
            + spec.reaction.deriv(state_jet.value) * adjoint_jet.value)


def _shared_state_terms(jy, ju, colloc: CollocationSet, spec: ProblemSpec):
    """res_y, bc_y, ic_y and the raw interior residual (shared by both losses)."""
    r = state_residual(jy["interior"], ju["interior"].value, spec)
    res_y = float(np.mean(r * r))
    bc_y = float(np.mean(jy["bc0"].d_x ** 2 + jy["bc1"].d_x ** 2))
    ic_err = jy["initial"].value - spec.y0(colloc.initial_xs)
    ic_y = float(np.mean(ic_err * ic_err))
    return r, res_y, bc_y, ic_y, ic_err


def _direct_terms(jy, ju, colloc, spec):
    r, res_y, bc_y, ic_y, ic_err = _shared_state_terms(jy, ju, colloc, spec)
    t_err = jy["terminal"].value - spec.yd(colloc.terminal_xs)
    terminal_cost = float(np.mean(t_err * t_err))
    n_int = colloc.interior.shape[0]
    u_int = ju["interior"].value
    control_cost = (spec.horizon_T / n_int) * float(np.sum(u_int * u_int))
    terms = {"res_y": res_y, "bc_y": bc_y, "ic_y": ic_y,
             "terminal_cost": terminal_cost, "control_cost": control_cost}
    return terms, r, ic_err, t_err


def _direct_total(terms, spec, weights):
    return (weights.w_res * terms["res_y"] + weights.w_bc * terms["bc_y"]
            + weights.w_ic * terms["ic_y"]
            + 0.5 * spec.beta_T * terms["terminal_cost"]
            + 0.5 * spec.beta_Q * terms["control_cost"])


def direct_loss(state_net: MlpParams, control_net: MlpParams, colloc: CollocationSet,
                spec: ProblemSpec, weights: LossWeights) -> LossBreakdown:
    jy = eval_on_collocation(state_net, colloc, spec.horizon_T, with_tape=False)
    ju = eval_on_collocation(control_net, colloc, spec.horizon_T, with_tape=False)
    terms, _, _, _ = _direct_terms(jy, ju, colloc, spec)
    return LossBreakdown(terms, _direct_total(terms, spec, weights))


def direct_loss_evaluator(colloc: CollocationSet, spec: ProblemSpec, weights: LossWeights):
    """Loss evaluator closure for loss_param_gradient: [state, control] samples."""
    n_int = colloc.interior.shape[0]
    n_bc = colloc.boundary_times.shape[0]
    n0 = colloc.initial_xs.shape[0]
    n_T = colloc.terminal_xs.shape[0]

    def evaluator(samples):
        jy, ju = samples
        terms, r, ic_err, t_err = _direct_terms(jy, ju, colloc, spec)
        total = _direct_total(terms, spec, weights)
        fp = spec.reaction.deriv(jy["interior"].value)
        cr = weights.w_res * (2.0 / n_int) * r

        cy_int = JetBatch.zeros_cotangent(jy["interior"])
        cy_int.value[:] = cr * fp
        cy_int.d_t[:] = cr
        cy_int.d_xx[:] = -spec.nu * cr
        cy_bc0 = JetBatch.zeros_cotangent(jy["bc0"])
        cy_bc0.d_x[:] = weights.w_bc * (2.0 / n_bc) * jy["bc0"].d_x
        cy_bc1 = JetBatch.zeros_cotangent(jy["bc1"])
        cy_bc1.d_x[:] = weights.w_bc * (2.0 / n_bc) * jy["bc1"].d_x
        cy_ic = JetBatch.zeros_cotangent(jy["initial"])
        cy_ic.value[:] = weights.w_ic * (2.0 / n0) * ic_err
        cy_T = JetBatch.zeros_cotangent(jy["terminal"])
        cy_T.value[:] = spec.beta_T / n_T * t_err

        cu_int = JetBatch.zeros_cotangent(ju["interior"])
        cu_int.value[:] = -cr + spec.beta_Q * (spec.horizon_T / n_int) * ju["interior"].value

        cots = [
            {"interior": cy_int, "bc0": cy_bc0, "bc1": cy_bc1,
             "initial": cy_ic, "terminal": cy_T},
            {"interior": cu_int},
        ]
        return (total, cots), terms

    def wrapped(samples):
        (total, cots), terms = evaluator(samples)
        wrapped.last_terms = terms
        return total, cots

    wrapped.last_terms = {}
    wrapped.with_terms = evaluator
    return wrapped


def _indirect_terms(jy, ju, colloc, spec):
    r, res_y, bc_y, ic_y, ic_err = _shared_state_terms(jy, ju, colloc, spec)
    bq = spec.beta_Q
    fp = spec.reaction.deriv(jy["interior"].value)
    # adjoint jets are beta_Q * control jets by construction
    rl = bq * (-ju["interior"].d_t - spec.nu * ju["interior"].d_xx + fp * ju["interior"].value)
    res_lambda = float(np.mean(rl * rl))
    bc_lambda = float(np.mean((bq * ju["bc0"].d_x) ** 2 + (bq * ju["bc1"].d_x) ** 2))
    t_err = (bq * ju["terminal"].value
             + spec.beta_T * (jy["terminal"].value - spec.yd(colloc.terminal_xs)))
    terminal_lambda = float(np.mean(t_err * t_err))
    terms = {"res_y": res_y, "res_lambda": res_lambda, "bc_y": bc_y,
             "bc_lambda": bc_lambda, "ic_y": ic_y, "terminal_lambda": terminal_lambda}
    return terms, r, rl, ic_err, t_err, fp


def _indirect_total(terms, weights):
    return (weights.w_y * terms["res_y"] + weights.w_lambda * terms["res_lambda"]
            + weights.w_bc_y * terms["bc_y"] + weights.w_bc_lambda * terms["bc_lambda"]
            + weights.w_ic * terms["ic_y"] + weights.w_T * terms["terminal_lambda"])


def indirect_loss(state_net: MlpParams, control_net: MlpParams, colloc: CollocationSet,
                  spec: ProblemSpec, weights: LossWeights) -> LossBreakdown:
    jy = eval_on_collocation(state_net, colloc, spec.horizon_T, with_tape=False)
    ju = eval_on_collocation(control_net, colloc, spec.horizon_T, with_tape=False)
    terms, *_ = _indirect_terms(jy, ju, colloc, spec)
    return LossBreakdown(terms, _indirect_total(terms, weights))


def indirect_loss_evaluator(colloc: CollocationSet, spec: ProblemSpec, weights: LossWeights):
    n_int = colloc.interior.shape[0]
    n_bc = colloc.boundary_times.shape[0]
    n0 = colloc.initial_xs.shape[0]
    n_T = colloc.terminal_xs.shape[0]
    bq, bt = spec.beta_Q, spec.beta_T

    def evaluator(samples):
        jy, ju = samples
        terms, r, rl, ic_err, t_err, fp = _indirect_terms(jy, ju, colloc, spec)
        total = _indirect_total(terms, weights)
        fpp = spec.reaction.deriv2(jy["interior"].value)
        cr = weights.w_y * (2.0 / n_int) * r
        cl = weights.w_lambda * (2.0 / n_int) * rl

        cy_int = JetBatch.zeros_cotangent(jy["interior"])
        cy_int.value[:] = cr * fp + cl * fpp * bq * ju["interior"].value
        cy_int.d_t[:] = cr
        cy_int.d_xx[:] = -spec.nu * cr
        cy_bc0 = JetBatch.zeros_cotangent(jy["bc0"])
        cy_bc0.d_x[:] = weights.w_bc_y * (2.0 / n_bc) * jy["bc0"].d_x
        cy_bc1 = JetBatch.zeros_cotangent(jy["bc1"])
        cy_bc1.d_x[:] = weights.w_bc_y * (2.0 / n_bc) * jy["bc1"].d_x
        cy_ic = JetBatch.zeros_cotangent(jy["initial"])
        cy_ic.value[:] = weights.w_ic * (2.0 / n0) * ic_err
        cy_T = JetBatch.zeros_cotangent(jy["terminal"])
        cy_T.value[:] = weights.w_T * (2.0 / n_T) * t_err * bt

        cu_int = JetBatch.zeros_cotangent(ju["interior"])
        cu_int.value[:] = -cr + cl * fp * bq
        cu_int.d_t[:] = -cl * bq
        cu_int.d_xx[:] = -spec.nu * cl * bq
        cu_bc0 = JetBatch.zeros_cotangent(ju["bc0"])
        cu_bc0.d_x[:] = weights.w_bc_lambda * (2.0 / n_bc) * bq * bq * ju["bc0"].d_x
        cu_bc1 = JetBatch.zeros_cotangent(ju["bc1"])
        cu_bc1.d_x[:] = weights.w_bc_lambda * (2.0 / n_bc) * bq * bq * ju["bc1"].d_x
        cu_T = JetBatch.zeros_cotangent(ju["terminal"])
        cu_T.value[:] = weights.w_T * (2.0 / n_T) * t_err * bq

        cots = [
            {"interior": cy_int, "bc0": cy_bc0, "bc1": cy_bc1,
             "initial": cy_ic, "terminal": cy_T},
            {"interior": cu_int, "bc0": cu_bc0, "bc1": cu_bc1, "terminal": cu_T},
        ]
        return (total, cots), terms

    def wrapped(samples):
        (total, cots), terms = evaluator(samples)
        wrapped.last_terms = terms
        return total, cots

    wrapped.last_terms = {}
    wrapped.with_terms = evaluator
    return wrapped


def indirect_loss_general(state_net: MlpParams, control_net: MlpParams,
                          adjoint_net: MlpParams, colloc: CollocationSet,
                          spec: ProblemSpec, weights: LossWeights,
                          w_st: float = 1.0) -> LossBreakdown:
    """Three-network indirect loss with an independent adjoint network and an
    explicit stationarity term (secondary path; the tied form is the default)."""
    jy = eval_on_collocation(state_net, colloc, spec.horizon_T, with_tape=False)
    ju = eval_on_collocation(control_net, colloc, spec.horizon_T, with_tape=False)
    jl = eval_on_collocation(adjoint_net, colloc, spec.horizon_T, with_tape=False)
    terms = _general_indirect_terms(jy, ju, jl, colloc, spec)[0]
    total = _general_indirect_total(terms, weights, w_st)
    return LossBreakdown(terms, total)


def _general_indirect_terms(jy, ju, jl, colloc, spec):
    r, res_y, bc_y, ic_y, ic_err = _shared_state_terms(jy, ju, colloc, spec)
    fp = spec.reaction.deriv(jy["interior"].value)
    rl = adjoint_residual(jy["interior"], jl["interior"], spec)
    res_lambda = float(np.mean(rl * rl))
    rst = spec.beta_Q * ju["interior"].value - jl["interior"].value
    stationarity = float(np.mean(rst * rst))
    bc_lambda = float(np.mean(jl["bc0"].d_x ** 2 + jl["bc1"].d_x ** 2))
    t_err = (jl["terminal"].value
             + spec.beta_T * (jy["terminal"].value - spec.yd(colloc.terminal_xs)))
    terminal_lambda = float(np.mean(t_err * t_err))
    terms = {"res_y": res_y, "res_lambda": res_lambda, "stationarity": stationarity,
             "bc_y": bc_y, "bc_lambda": bc_lambda, "ic_y": ic_y,
             "terminal_lambda": terminal_lambda}
    return terms, r, rl, rst, ic_err, t_err, fp


def _general_indirect_total(terms, weights, w_st):
    return (weights.w_y * terms["res_y"] + weights.w_lambda * terms["res_lambda"]
            + w_st * terms["stationarity"] + weights.w_bc_y * terms["bc_y"]
            + weights.w_bc_lambda * terms["bc_lambda"] + weights.w_ic * terms["ic_y"]
            + weights.w_T * terms["terminal_lambda"])


def general_indirect_loss_evaluator(colloc: CollocationSet, spec: ProblemSpec,
                                    weights: LossWeights, w_st: float = 1.0):
    """Evaluator over [state, control, adjoint] samples (gradient-check path)."""
    n_int = colloc.interior.shape[0]
    n_bc = colloc.boundary_times.shape[0]
    n0 = colloc.initial_xs.shape[0]
    n_T = colloc.terminal_xs.shape[0]

    def wrapped(samples):
        jy, ju, jl = samples
        terms, r, rl, rst, ic_err, t_err, fp = _general_indirect_terms(jy, ju, jl, colloc, spec)
        total = _general_indirect_total(terms, weights, w_st)
        fpp = spec.reaction.deriv2(jy["interior"].value)
        cr = weights.w_y * (2.0 / n_int) * r
        cl = weights.w_lambda * (2.0 / n_int) * rl
        cst = w_st * (2.0 / n_int) * rst

        cy_int = JetBatch.zeros_cotangent(jy["interior"])
        cy_int.value[:] = cr * fp + cl * fpp * jl["interior"].value
        cy_int.d_t[:] = cr
        cy_int.d_xx[:] = -spec.nu * cr
        cy_bc0 = JetBatch.zeros_cotangent(jy["bc0"])
        cy_bc0.d_x[:] = weights.w_bc_y * (2.0 / n_bc) * jy["bc0"].d_x
        cy_bc1 = JetBatch.zeros_cotangent(jy["bc1"])
        cy_bc1.d_x[:] = weights.w_bc_y * (2.0 / n_bc) * jy["bc1"].d_x
        cy_ic = JetBatch.zeros_cotangent(jy["initial"])
        cy_ic.value[:] = weights.w_ic * (2.0 / n0) * ic_err
        cy_T = JetBatch.zeros_cotangent(jy["terminal"])
        cy_T.value[:] = weights.w_T * (2.0 / n_T) * t_err * spec.beta_T

        cu_int = JetBatch.zeros_cotangent(ju["interior"])
        cu_int.value[:] = -cr + cst * spec.beta_Q

        cl_int = JetBatch.zeros_cotangent(jl["interior"])
        cl_int.value[:] = cl * fp - cst
        cl_int.d_t[:] = -cl
        cl_int.d_xx[:] = -spec.nu * cl
        cl_bc0 = JetBatch.zeros_cotangent(jl["bc0"])
        cl_bc0.d_x[:] = weights.w_bc_lambda * (2.0 / n_bc) * jl["bc0"].d_x
        cl_bc1 = JetBatch.zeros_cotangent(jl["bc1"])
        cl_bc1.d_x[:] = weights.w_bc_lambda * (2.0 / n_bc) * jl["bc1"].d_x
        cl_T = JetBatch.zeros_cotangent(jl["terminal"])
        cl_T.value[:] = weights.w_T * (2.0 / n_T) * t_err

        cots = [
            {"interior": cy_int, "bc0": cy_bc0, "bc1": cy_bc1,
             "initial": cy_ic, "terminal": cy_T},
            {"interior": cu_int},
            {"interior": cl_int, "bc0": cl_bc0, "bc1": cl_bc1, "terminal": cl_T},
        ]
        return total, cots

    return wrapped


class PinnProblem:
    """Bundles the pieces train_pinn needs: collocation sampling + evaluator."""

    def __init__(self, spec: ProblemSpec, grid: GridSpec, weights: LossWeights,
                 n_int: int, n_bc: int, kind: str):
        if kind not in ("direct", "indirect"):
            raise ValueError(f"unknown PINN kind {kind!r}")
        self.spec = spec
        self.grid = grid
        self.weights = weights
        self.n_int = n_int
        self.n_bc = n_bc
        self.kind = kind

    def sample(self, seed: int) -> CollocationSet:
        return sample_collocation(self.grid, self.spec, self.n_int, self.n_bc, seed)

    def evaluator(self, colloc: CollocationSet):
        if self.kind == "direct":
            return direct_loss_evaluator(colloc, self.spec, self.weights)
        return indirect_loss_evaluator(colloc, self.spec, self.weights)

    def breakdown(self, state_net, control_net, colloc: CollocationSet) -> LossBreakdown:
        if self.kind == "direct":
            return direct_loss(state_net, control_net, colloc, self.spec, self.weights)
        return indirect_loss(state_net, control_net, colloc, self.spec, self.weights)
