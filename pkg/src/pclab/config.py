"""Continuous problem definition, discretization, and experiment hyperparameters.

Everything downstream (FD solver, adjoint, PINN losses, optimizers) reads its
problem data from the types defined here.  All instances are immutable after
validation and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np
import yaml


class ReactionKind(Enum):
    ALLEN_CAHN = "allen_cahn"
    ZELDOVICH = "zeldovich"
    ZFK = "zfk"
    CUSTOM = "custom"


@dataclass(frozen=True)
class ReactionTerm:
    """Pluggable reaction term f with analytic first and second derivatives.

    ``deriv`` must be the exact derivative of ``eval`` (the adjoint residual
    uses it analytically), and ``deriv2`` the exact derivative of ``deriv``
    (needed when differentiating the adjoint residual w.r.t. the state).
    ``lower_bound_cf`` is the constant c with f'(s) >= -c for all s.
    """

    kind: ReactionKind
    eval: Callable
    deriv: Callable
    deriv2: Callable
    lower_bound_cf: float

    @staticmethod
    def allen_cahn() -> "ReactionTerm":
        return ReactionTerm(
            kind=ReactionKind.ALLEN_CAHN,
            eval=lambda s: s**3 - s,
            deriv=lambda s: 3.0 * s**2 - 1.0,
            deriv2=lambda s: 6.0 * s,
            lower_bound_cf=1.0,
        )

    @staticmethod
    def zeldovich() -> "ReactionTerm":
        # f'(s) = 3s^2 - 2s has minimum -1/3 at s = 1/3
        return ReactionTerm(
            kind=ReactionKind.ZELDOVICH,
            eval=lambda s: s**3 - s**2,
            deriv=lambda s: 3.0 * s**2 - 2.0 * s,
            deriv2=lambda s: 6.0 * s - 2.0,
            lower_bound_cf=1.0 / 3.0,
        )

    @staticmethod
    def zfk(a: float) -> "ReactionTerm":
        if not 0.0 < a < 1.0:
            raise ValueError(f"ZFK parameter must lie in (0,1), got {a}")
        # f(s) = s(s-1)(s-a) = s^3 - (1+a)s^2 + a s
        # f'(s) = 3s^2 - 2(1+a)s + a, minimum a - (1+a)^2/3
        cf = max(0.0, (1.0 + a) ** 2 / 3.0 - a)
        return ReactionTerm(
            kind=ReactionKind.ZFK,
            eval=lambda s: s**3 - (1.0 + a) * s**2 + a * s,
            deriv=lambda s: 3.0 * s**2 - 2.0 * (1.0 + a) * s + a,
            deriv2=lambda s: 6.0 * s - 2.0 * (1.0 + a),
            lower_bound_cf=cf,
        )

    @staticmethod
    def custom(f, fp, fpp, lower_bound_cf: float) -> "ReactionTerm":
        return ReactionTerm(ReactionKind.CUSTOM, f, fp, fpp, float(lower_bound_cf))


@dataclass(frozen=True)
class ProblemSpec:
    """Continuous problem data: diffusion eps^2, horizon, cost weights, data."""

    epsilon: float
    horizon_T: float
    beta_T: float
    beta_Q: float
    y0: Callable
    yd: Callable
    reaction: ReactionTerm

    @property
    def nu(self) -> float:
        return self.epsilon**2


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time grid on [0,1] x [0,T].

    ``substeps`` controls internal RK4 substepping per control slab: the
    control stays piecewise constant on the dt slabs, but each slab may be
    advanced with several RK4 substeps for stability.  0 means "auto".
    """

    n_space: int = 513
    dx: float = 1.0 / 512.0
    n_time: int = 60
    dt: float = 0.05
    substeps: int = 1

    @property
    def xs(self) -> np.ndarray:
        return np.arange(self.n_space) * self.dx

    @property
    def ts(self) -> np.ndarray:
        return np.arange(self.n_time + 1) * self.dt


class FieldSemantics(Enum):
    STATE = "state"
    CONTROL = "control"
    ADJOINT = "adjoint"


@dataclass
class GridField:
    """A field sampled on the grid.  Control: (N, N_t); State/Adjoint: (N, N_t+1)."""

    values: np.ndarray
    semantics: FieldSemantics

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("GridField values must be a 2-D array")

    @staticmethod
    def zeros(grid: GridSpec, semantics: FieldSemantics) -> "GridField":
        cols = grid.n_time if semantics is FieldSemantics.CONTROL else grid.n_time + 1
        return GridField(np.zeros((grid.n_space, cols)), semantics)

    def check_shape(self, grid: GridSpec):
        cols = grid.n_time if self.semantics is FieldSemantics.CONTROL else grid.n_time + 1
        if self.values.shape != (grid.n_space, cols):
            raise ValueError(
                f"{self.semantics.value} field has shape {self.values.shape}, "
                f"expected {(grid.n_space, cols)}"
            )


@dataclass(frozen=True)
class LossWeights:
    """Weights of the PINN loss terms; all default to 1."""

    w_res: float = 1.0
    w_bc: float = 1.0
    w_ic: float = 1.0
    w_y: float = 1.0
    w_lambda: float = 1.0
    w_bc_y: float = 1.0
    w_bc_lambda: float = 1.0
    w_T: float = 1.0


class SpecValidationError(ValueError):
    """Raised by validate_spec; carries the full list of violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def spec_violations(spec: ProblemSpec, grid: GridSpec, weights: LossWeights | None = None):
    """Return a list naming every violated invariant (empty when valid)."""
    errs = []
    if spec.epsilon <= 0:
        errs.append(f"NonpositiveWeight: epsilon = {spec.epsilon} must be > 0")
    if spec.horizon_T <= 0:
        errs.append(f"NonpositiveWeight: horizon_T = {spec.horizon_T} must be > 0")
    if spec.beta_T <= 0:
        errs.append(f"NonpositiveWeight: beta_T = {spec.beta_T} must be > 0")
    if spec.beta_Q <= 0:
        errs.append(f"NonpositiveWeight: beta_Q = {spec.beta_Q} must be > 0")
    if spec.reaction.lower_bound_cf < 0:
        errs.append(f"NonpositiveWeight: lower_bound_cf = {spec.reaction.lower_bound_cf} must be >= 0")
    if grid.n_space < 3:
        errs.append(f"InvalidDomain: n_space = {grid.n_space} must be >= 3")
    elif abs((grid.n_space - 1) * grid.dx - 1.0) > 1e-12:
        errs.append(f"InvalidDomain: (n_space-1)*dx = {(grid.n_space - 1) * grid.dx} != 1")
    if grid.n_time < 1:
        errs.append(f"InvalidGrid: n_time = {grid.n_time} must be >= 1")
    elif abs(grid.n_time * grid.dt - spec.horizon_T) > 1e-12:
        errs.append(f"InvalidGrid: n_time*dt = {grid.n_time * grid.dt} != T = {spec.horizon_T}")
    if grid.substeps < 0:
        errs.append(f"InvalidGrid: substeps = {grid.substeps} must be >= 0")
    if weights is not None:
        for name in ("w_res", "w_bc", "w_ic", "w_y", "w_lambda", "w_bc_y", "w_bc_lambda", "w_T"):
            if getattr(weights, name) < 0:
                errs.append(f"NonpositiveWeight: {name} = {getattr(weights, name)} must be >= 0")
    return errs


def validate_spec(spec: ProblemSpec, grid: GridSpec, weights: LossWeights | None = None):
    """Return (spec, grid) iff all invariants hold; raise SpecValidationError otherwise."""
    errs = spec_violations(spec, grid, weights)
    if errs:
        raise SpecValidationError(errs)
    return spec, grid


def default_allen_cahn():
    """The reference Allen-Cahn configuration: eps=0.01, T=3, beta_T=1, beta_Q=1e-3,
    y0(x)=cos(pi x), yd=0 on the N=513, dt=0.05 grid."""
    spec = ProblemSpec(
        epsilon=0.01,
        horizon_T=3.0,
        beta_T=1.0,
        beta_Q=1e-3,
        y0=lambda x: np.cos(np.pi * x),
        yd=lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
        reaction=ReactionTerm.allen_cahn(),
    )
    grid = GridSpec(n_space=513, dx=1.0 / 512.0, n_time=60, dt=0.05, substeps=0)
    return spec, grid, LossWeights()


# ---------------------------------------------------------------------------
# Experiment-level configuration (collocation, optimizer, architecture)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CollocationConfig:
    n_int: int = 20000
    n_bc: int = 512
    seed: int = 0


@dataclass(frozen=True)
class AdamConfig:
    lr0: float = 1e-3
    decay_factor: float = 0.3
    decay_every: int = 200
    steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class QuasiNewtonConfig:
    outer_epochs: int = 40
    max_iters_per_epoch: int = 200
    memory: int = 50
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    grad_tol: float = 1e-12
    self_scaling: bool = True
    # dense-path scaling rule: "full" applies tau = s'y/y'Hy every update,
    # "capped" clamps it at 1, "first" scales only the first update after a
    # reset
    tau_rule: str = "full"
    # Broyden-family parameter for the dense update: 1 is BFGS, 0 is DFP,
    # other values interpolate/extrapolate along the family
    broyden_phi: float = 1.0
    # keep the accumulated curvature model across collocation-resampling
    # epochs instead of restarting it from identity
    carry_curvature: bool = False
    max_line_search: int = 25

    def __post_init__(self):
        if not (0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0):
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.wolfe_c1}, c2={self.wolfe_c2}")
        if self.memory < 0:
            raise ValueError(f"memory must be >= 0 (0 = dense), got {self.memory}")
        if self.tau_rule not in ("capped", "full", "first"):
            raise ValueError(f"unknown tau_rule {self.tau_rule!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; maps 1:1 onto the YAML config file."""

    spec: ProblemSpec
    grid: GridSpec
    weights: LossWeights
    colloc: CollocationConfig
    adam: AdamConfig
    qn: QuasiNewtonConfig
    adjoint_qn: QuasiNewtonConfig
    layer_widths: tuple = (2, 32, 32, 1)
    input_scaling: bool = True

    def validated(self) -> "ExperimentConfig":
        validate_spec(self.spec, self.grid, self.weights)
        return self


def default_experiment() -> ExperimentConfig:
    spec, grid, weights = default_allen_cahn()
    return ExperimentConfig(
        spec=spec,
        grid=grid,
        weights=weights,
        colloc=CollocationConfig(),
        adam=AdamConfig(),
        qn=QuasiNewtonConfig(memory=0, wolfe_c2=0.1),
        adjoint_qn=QuasiNewtonConfig(outer_epochs=1, max_iters_per_epoch=500),
    )


def coarse_experiment() -> ExperimentConfig:
    """Small instance for smoke tests and the deterministic CLI checks."""
    spec, _, weights = default_allen_cahn()
    grid = GridSpec(n_space=65, dx=1.0 / 64.0, n_time=30, dt=0.1, substeps=1)
    return ExperimentConfig(
        spec=spec,
        grid=grid,
        weights=weights,
        colloc=CollocationConfig(n_int=500, n_bc=64),
        adam=AdamConfig(steps=50),
        qn=QuasiNewtonConfig(outer_epochs=2, max_iters_per_epoch=25, memory=20),
        adjoint_qn=QuasiNewtonConfig(outer_epochs=1, max_iters_per_epoch=60, memory=20),
    )


def desk_experiment() -> ExperimentConfig:
    """Mid-size instance: stable without substepping, minutes not hours."""
    spec, _, weights = default_allen_cahn()
    grid = GridSpec(n_space=129, dx=1.0 / 128.0, n_time=60, dt=0.05, substeps=1)
    return ExperimentConfig(
        spec=spec,
        grid=grid,
        weights=weights,
        colloc=CollocationConfig(n_int=5000, n_bc=128),
        adam=AdamConfig(steps=400),
        qn=QuasiNewtonConfig(outer_epochs=10, max_iters_per_epoch=100, memory=0,
                             wolfe_c2=0.1),
        adjoint_qn=QuasiNewtonConfig(outer_epochs=1, max_iters_per_epoch=300),
    )


_PROFILES = {
    "cos_pi": lambda x: np.cos(np.pi * x),
    "zero": lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
}


def _profile_from_config(name):
    if isinstance(name, (int, float)):
        c = float(name)
        return lambda x: np.full_like(np.asarray(x, dtype=np.float64), c)
    if name in _PROFILES:
        return _PROFILES[name]
    raise ValueError(f"unknown profile {name!r}; use one of {sorted(_PROFILES)} or a constant")


def _reaction_from_config(node):
    if isinstance(node, str):
        node = {"kind": node}
    kind = node.get("kind", "allen_cahn")
    if kind == "allen_cahn":
        return ReactionTerm.allen_cahn()
    if kind == "zeldovich":
        return ReactionTerm.zeldovich()
    if kind == "zfk":
        return ReactionTerm.zfk(float(node["a"]))
    raise ValueError(f"unknown reaction kind {kind!r}")


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Load a YAML config file on top of a base configuration.

    Sections: problem, grid, weights, collocation, adam, quasi_newton,
    adjoint_quasi_newton, network.  Every key is optional and overrides the base.
    """
    cfg = base if base is not None else default_experiment()
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}

    if "problem" in raw:
        p = dict(raw["problem"])
        kw = {}
        for key in ("epsilon", "horizon_T", "beta_T", "beta_Q"):
            if key in p:
                kw[key] = float(p[key])
        if "y0" in p:
            kw["y0"] = _profile_from_config(p["y0"])
        if "yd" in p:
            kw["yd"] = _profile_from_config(p["yd"])
        if "reaction" in p:
            kw["reaction"] = _reaction_from_config(p["reaction"])
        cfg = replace(cfg, spec=replace(cfg.spec, **kw))
    if "grid" in raw:
        g = dict(raw["grid"])
        if g.get("substeps") == "auto":
            g["substeps"] = 0
        kw = {}
        for key, cast in (("n_space", int), ("dx", float), ("n_time", int), ("dt", float), ("substeps", int)):
            if key in g:
                kw[key] = cast(g[key])
        cfg = replace(cfg, grid=replace(cfg.grid, **kw))
    if "weights" in raw:
        cfg = replace(cfg, weights=replace(cfg.weights, **{k: float(v) for k, v in raw["weights"].items()}))
    if "collocation" in raw:
        c = raw["collocation"]
        cfg = replace(cfg, colloc=replace(cfg.colloc, **{k: int(v) for k, v in c.items()}))
    if "adam" in raw:
        a = {k: (int(v) if k in ("decay_every", "steps") else float(v)) for k, v in raw["adam"].items()}
        cfg = replace(cfg, adam=replace(cfg.adam, **a))
    for sect, attr in (("quasi_newton", "qn"), ("adjoint_quasi_newton", "adjoint_qn")):
        if sect in raw:
            q = {}
            for k, v in raw[sect].items():
                if k in ("outer_epochs", "max_iters_per_epoch", "memory", "max_line_search"):
                    q[k] = int(v)
                elif k in ("self_scaling", "carry_curvature"):
                    q[k] = bool(v)
                elif k == "tau_rule":
                    q[k] = str(v)
                else:
                    q[k] = float(v)
            cfg = replace(cfg, **{attr: replace(getattr(cfg, attr), **q)})
    if "network" in raw:
        n = raw["network"]
        kw = {}
        if "layer_widths" in n:
            kw["layer_widths"] = tuple(int(w) for w in n["layer_widths"])
        if "input_scaling" in n:
            kw["input_scaling"] = bool(n["input_scaling"])
        cfg = replace(cfg, **kw)
    return cfg.validated()


def config_as_dict(cfg: ExperimentConfig) -> dict:
    """Effective configuration as a plain dict (for the run manifest)."""
    spec = cfg.spec
    y0_name = next((n for n, f in _PROFILES.items() if f is spec.y0), "custom")
    yd_name = next((n for n, f in _PROFILES.items() if f is spec.yd), "custom")
    if spec.y0(np.array([0.0]))[0] == 1.0 and abs(spec.y0(np.array([1.0]))[0] + 1.0) < 1e-15:
        y0_name = "cos_pi"
    if not np.any(spec.yd(np.linspace(0, 1, 7))):
        yd_name = "zero"
    return {
        "problem": {
            "epsilon": spec.epsilon, "horizon_T": spec.horizon_T,
            "beta_T": spec.beta_T, "beta_Q": spec.beta_Q,
            "y0": y0_name, "yd": yd_name, "reaction": spec.reaction.kind.value,
        },
        "grid": {
            "n_space": cfg.grid.n_space, "dx": cfg.grid.dx,
            "n_time": cfg.grid.n_time, "dt": cfg.grid.dt, "substeps": cfg.grid.substeps,
        },
        "weights": {k: getattr(cfg.weights, k) for k in (
            "w_res", "w_bc", "w_ic", "w_y", "w_lambda", "w_bc_y", "w_bc_lambda", "w_T")},
        "collocation": {"n_int": cfg.colloc.n_int, "n_bc": cfg.colloc.n_bc, "seed": cfg.colloc.seed},
        "adam": {k: getattr(cfg.adam, k) for k in (
            "lr0", "decay_factor", "decay_every", "steps", "beta1", "beta2", "eps")},
        "quasi_newton": {k: getattr(cfg.qn, k) for k in (
            "outer_epochs", "max_iters_per_epoch", "memory", "wolfe_c1", "wolfe_c2",
            "grad_tol", "self_scaling", "tau_rule", "carry_curvature",
            "max_line_search")},
        "adjoint_quasi_newton": {k: getattr(cfg.adjoint_qn, k) for k in (
            "outer_epochs", "max_iters_per_epoch", "memory", "wolfe_c1", "wolfe_c2",
            "grad_tol", "self_scaling", "tau_rule", "carry_curvature",
            "max_line_search")},
        "network": {"layer_widths": list(cfg.layer_widths), "input_scaling": cfg.input_scaling},
    }
