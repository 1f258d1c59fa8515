"""Two-phase training stack and the quasi-Newton driver.

Phase 1 is plain bias-corrected Adam with a step-decay learning-rate schedule.
Phase 2 is a self-scaled Broyden-family (BFGS member) method with a
strong-Wolfe line search (scipy's implementation, wrapped so each trial point
costs one combined objective+gradient call).  With ``memory == 0`` the full
dense inverse Hessian is kept and rescaled by tau = s'y / y'Hy before each
update, which reaches much deeper loss minima on the network training problems
than the limited-memory variant; ``memory > 0`` selects two-loop L-BFGS with a
gamma = s'y / y'y seed, which is the only affordable form for the
grid-sized adjoint control vector.
The same driver minimizes both PINN losses and the discrete-adjoint objective.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search as _scipy_line_search
from scipy.optimize._linesearch import LineSearchWarning

from .config import AdamConfig, QuasiNewtonConfig
from . import runtime


class NonFiniteObjective(RuntimeError):
    pass


@dataclass
class RunRecord:
    """Per-iteration log; rows are dicts with a shared core schema."""

    rows: list = field(default_factory=list)
    status: str = "ok"

    CORE = ("iter", "phase", "epoch", "loss_total", "grad_norm",
            "step_length", "lr", "wall_seconds")

    def append(self, **kw):
        self.rows.append(kw)

    def columns(self):
        extra = []
        for row in self.rows:
            for k in row:
                if k not in self.CORE and k not in extra:
                    extra.append(k)
        return list(self.CORE) + extra

    def to_csv(self, path):
        cols = self.columns()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                out = dict(row)
                if runtime.DETERMINISTIC:
                    out["wall_seconds"] = 0.0
                writer.writerow({k: out.get(k, "") for k in cols})

    @property
    def final_loss(self):
        return self.rows[-1]["loss_total"] if self.rows else None


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @staticmethod
    def zeros(n):
        return AdamState(np.zeros(n), np.zeros(n))


def adam_lr(step_index: int, cfg: AdamConfig) -> float:
    return cfg.lr0 * cfg.decay_factor ** (step_index // cfg.decay_every)


def adam_step(params, grad, moment_state: AdamState, step_index: int, cfg: AdamConfig):
    """Standard bias-corrected Adam update with the scheduled learning rate."""
    t = step_index + 1
    lr = adam_lr(step_index, cfg)
    m = cfg.beta1 * moment_state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * moment_state.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new_params, AdamState(m, v)


class _CachedObjective:
    """Caches the latest evaluations so scipy's separate f/f' calls cost one eval."""

    def __init__(self, fg):
        self._fg = fg
        self._cache = {}
        self.n_evals = 0

    def __call__(self, x):
        key = x.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            out = self._fg(x)
            f, g = out[0], out[1]
            extras = out[2] if len(out) > 2 else {}
            if not np.isfinite(f):
                raise NonFiniteObjective(f"objective returned {f}")
            hit = (float(f), np.asarray(g, dtype=np.float64), extras)
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = hit
            self.n_evals += 1
        return hit

    def value(self, x):
        return self(x)[0]

    def grad(self, x):
        return self(x)[1]


def quasi_newton_minimize(objective_with_gradient, x0, cfg: QuasiNewtonConfig,
                          record: RunRecord | None = None, phase: str = "qn",
                          epoch: int = 0, iter_offset: int = 0,
                          curvature: dict | None = None):
    """Self-scaled BFGS (dense when cfg.memory == 0, else limited-memory)
    with a strong-Wolfe line search.

    ``objective_with_gradient(x)`` returns (value, gradient) or
    (value, gradient, extras-dict); extras are copied into the log rows.
    Returns (best x, RunRecord).  On line-search failure the best iterate so
    far is returned and the record's status is flagged.
    """
    if record is None:
        record = RunRecord()
    obj = _CachedObjective(objective_with_gradient)
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g, extras = obj(x)
    t0 = time.perf_counter()
    if not np.all(np.isfinite(g)):
        raise NonFiniteObjective("non-finite gradient at x0")
    if np.max(np.abs(g)) <= cfg.grad_tol:
        record.status = "converged"
        return x, record

    # ``curvature`` lets a caller carry the accumulated curvature model across
    # successive calls (e.g. collocation-resampling epochs) instead of
    # restarting from identity each time
    dense = cfg.memory == 0  # full inverse-Hessian matrix instead of pair history
    if curvature is None:
        curvature = {}
    hmat = curvature.get("hmat") if dense else None
    if dense and hmat is None:
        hmat = np.eye(x.size)
    pairs = curvature.get("pairs", [])  # (s, y, rho)
    f_prev = None
    for it in range(1, cfg.max_iters_per_epoch + 1):
        if dense:
            q = hmat @ g
        else:
            # two-loop recursion with self-scaled seed
            q = g.copy()
            alphas = []
            for s, yv, rho in reversed(pairs):
                a = rho * (s @ q)
                q -= a * yv
                alphas.append(a)
            if pairs and cfg.self_scaling:
                s, yv, _ = pairs[-1]
                q *= (s @ yv) / (yv @ yv)
            for (s, yv, rho), a in zip(pairs, reversed(alphas)):
                b = rho * (yv @ q)
                q += (a - b) * s
        d = -q
        dd = d @ g
        if dd >= 0.0:  # not a descent direction; reset to scaled steepest descent
            pairs.clear()
            if dense:
                hmat = np.eye(x.size)
                curvature.pop("scaled_once", None)
            d = -g
            dd = d @ g

        with warnings.catch_warnings():
            # a failed search is reported through the record status instead
            warnings.simplefilter("ignore", LineSearchWarning)
            ls = _scipy_line_search(obj.value, obj.grad, x, d, gfk=g, old_fval=f,
                                    old_old_fval=f_prev, c1=cfg.wolfe_c1,
                                    c2=cfg.wolfe_c2, maxiter=cfg.max_line_search)
        alpha = ls[0]
        if alpha is None or ls[3] is None or ls[3] >= f:
            record.status = "line_search_failure"
            break
        x_new = x + alpha * d
        f_new, g_new, extras = obj(x_new)
        s = x_new - x
        yv = g_new - g
        sy = s @ yv
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            if dense:
                # self-scaled Broyden-family update of the dense inverse
                # Hessian (phi = 1 recovers BFGS):
                # H <- tau*(H - Hy Hy'/y'Hy + phi v v') + s s'/s'y,
                # v = sqrt(y'Hy) (s/s'y - Hy/y'Hy)
                rho = 1.0 / sy
                hy = hmat @ yv
                yhy = yv @ hy
                tau = sy / yhy if (cfg.self_scaling and yhy > 0.0) else 1.0
                if cfg.tau_rule == "capped":
                    tau = min(1.0, tau)
                elif cfg.tau_rule == "first" and curvature.get("scaled_once"):
                    tau = 1.0
                curvature["scaled_once"] = True
                v = np.sqrt(yhy) * (rho * s - hy / yhy)
                hmat -= np.outer(hy, hy) / yhy
                hmat += cfg.broyden_phi * np.outer(v, v)
                hmat *= tau
                hmat += rho * np.outer(s, s)
            else:
                pairs.append((s, yv, 1.0 / sy))
                if len(pairs) > cfg.memory:
                    pairs.pop(0)
        f_prev, x, f, g = f, x_new, f_new, g_new
        row = {"iter": iter_offset + it, "phase": phase, "epoch": epoch,
               "loss_total": f, "grad_norm": float(np.linalg.norm(g)),
               "step_length": float(alpha), "lr": "",
               "wall_seconds": time.perf_counter() - t0}
        row.update(extras)
        record.append(**row)
        if np.max(np.abs(g)) <= cfg.grad_tol:
            record.status = "converged"
            break
    curvature["hmat"], curvature["pairs"] = hmat, pairs
    return x, record


# ---------------------------------------------------------------------------
# Two-phase PINN training
# ---------------------------------------------------------------------------

def _split(xcat, params_list):
    out, pos = [], 0
    for p in params_list:
        n = p.flat.size
        out.append(p.copy_with(xcat[pos:pos + n]))
        pos += n
    return out


def train_pinn(problem, initial_params, adam_cfg: AdamConfig, qn_cfg: QuasiNewtonConfig,
               colloc_base_seed: int, rel_l2_fn=None):
    """Adam warm-up on one fixed collocation set, then quasi-Newton epochs with
    per-epoch collocation resampling (seed = base + 1 + epoch).

    ``problem`` must expose sample(seed) -> CollocationSet and
    evaluator(colloc) -> loss evaluator for loss_param_gradient.
    ``rel_l2_fn``, when given, maps the current params list to a relative-L2
    control error that is logged alongside the loss.
    Returns (trained params list, RunRecord, final CollocationSet or None).
    """
    from .mlp import loss_param_gradient

    record = RunRecord()
    params = list(initial_params)
    xcat = np.concatenate([p.flat for p in params])
    horizon_T = problem.spec.horizon_T
    t0 = time.perf_counter()
    it_count = 0
    last_colloc = None

    def make_fg(colloc):
        evaluator = problem.evaluator(colloc)

        # loss_param_gradient drives both value and gradient in one pass
        def fg(x):
            plist = _split(x, params)
            loss, grads = loss_param_gradient(plist, evaluator, colloc, horizon_T)
            extras = dict(getattr(evaluator, "last_terms", {}))
            if rel_l2_fn is not None:
                extras["rel_l2_u"] = rel_l2_fn(plist)
            return loss, np.concatenate(grads), extras

        return fg

    # phase 1: Adam on a fixed collocation set
    if adam_cfg.steps > 0:
        colloc = problem.sample(colloc_base_seed)
        last_colloc = colloc
        fg = make_fg(colloc)
        state = AdamState.zeros(xcat.size)
        for k in range(adam_cfg.steps):
            loss, grad, extras = fg(xcat)
            xcat, state = adam_step(xcat, grad, state, k, adam_cfg)
            it_count += 1
            row = {"iter": it_count, "phase": "adam", "epoch": 0, "loss_total": loss,
                   "grad_norm": float(np.linalg.norm(grad)), "step_length": "",
                   "lr": adam_lr(k, adam_cfg),
                   "wall_seconds": time.perf_counter() - t0}
            row.update(extras)
            record.append(**row)

    # phase 2: quasi-Newton epochs with fresh collocation each epoch; the
    # curvature model persists across epochs so resampling does not throw
    # away the accumulated Hessian approximation
    curvature: dict = {}
    for ep in range(qn_cfg.outer_epochs):
        colloc = problem.sample(colloc_base_seed + 1 + ep)
        last_colloc = colloc
        fg = make_fg(colloc)
        if not qn_cfg.carry_curvature:
            curvature = {}
        xcat, record = quasi_newton_minimize(fg, xcat, qn_cfg, record=record,
                                             phase="qn", epoch=ep, iter_offset=it_count,
                                             curvature=curvature)
        it_count = record.rows[-1]["iter"] if record.rows else it_count
        if record.status == "line_search_failure":
            record.status = "ok"  # epoch-level failure advances to the next epoch

    return _split(xcat, params), record, last_colloc
