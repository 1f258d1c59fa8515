"""Dense tanh MLPs for scalar space-time fields with exact input derivatives.

Each network maps (x, t) to a scalar.  Instead of nested generic autodiff, a
fixed-size jet (value, d_x, d_t, d_xx) is propagated through every layer:

    affine:  Z_c = C_c W + [b if c is the value channel]
    tanh:    V' = A,  X' = D1*ZX,  T' = D1*ZT,  S' = D2*ZX^2 + D1*ZS

with A = tanh(Z), D1 = 1 - A^2, D2 = -2 A D1.  Parameter gradients of any
scalar loss built from jets come from reverse accumulation over this exact
computation (the backward pass below), so they are exact to round-off.
No mixed d_xt / d_tt channels: nothing downstream needs them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class MlpArchitecture:
    layer_widths: tuple = (2, 32, 32, 1)
    # optional affine input map v -> (v - shift) * scale, one pair per input
    input_scale: tuple | None = None

    @property
    def param_count(self) -> int:
        w = self.layer_widths
        return sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))


@dataclass
class MlpParams:
    flat: np.ndarray
    arch: MlpArchitecture
    rng_seed: int = 0

    def copy_with(self, flat: np.ndarray) -> "MlpParams":
        return MlpParams(np.asarray(flat, dtype=np.float64), self.arch, self.rng_seed)


@dataclass
class FieldJet:
    value: float
    d_t: float
    d_x: float
    d_xx: float


class JetBatch:
    """Jets of one network at a batch of points, with the tape for backprop."""

    __slots__ = ("value", "d_x", "d_t", "d_xx", "_tape")

    def __init__(self, value, d_x, d_t, d_xx, tape=None):
        self.value = value
        self.d_x = d_x
        self.d_t = d_t
        self.d_xx = d_xx
        self._tape = tape

    @property
    def n_points(self):
        return self.value.shape[0]

    @staticmethod
    def zeros_cotangent(like: "JetBatch") -> "JetBatch":
        p = like.n_points
        return JetBatch(np.zeros(p), np.zeros(p), np.zeros(p), np.zeros(p))


def unpack_params(flat: np.ndarray, widths):
    layers = []
    pos = 0
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        w = flat[pos:pos + n_in * n_out].reshape(n_in, n_out)
        pos += n_in * n_out
        b = flat[pos:pos + n_out]
        pos += n_out
        layers.append((w, b))
    if pos != flat.size:
        raise ValueError(f"parameter vector has {flat.size} entries, architecture needs {pos}")
    return layers


def init_params(arch: MlpArchitecture, seed: int) -> MlpParams:
    """Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    widths = arch.layer_widths
    if any(w < 1 for w in widths):
        raise ValueError(f"layer widths must be >= 1, got {widths}")
    rng = np.random.default_rng(seed)
    chunks = []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        chunks.append(rng.uniform(-bound, bound, size=n_in * n_out))
        chunks.append(np.zeros(n_out))
    return MlpParams(np.concatenate(chunks), arch, seed)


def _input_channels(arch: MlpArchitecture, x, t):
    x = np.asarray(x, dtype=np.float64).ravel()
    t = np.asarray(t, dtype=np.float64).ravel()
    p = x.size
    c = np.zeros((4, p, 2))
    if arch.input_scale is None:
        c[0, :, 0] = x
        c[0, :, 1] = t
        c[1, :, 0] = 1.0
        c[2, :, 1] = 1.0
    else:
        (ax, bx), (at, bt) = arch.input_scale
        c[0, :, 0] = (x - ax) * bx
        c[0, :, 1] = (t - at) * bt
        c[1, :, 0] = bx
        c[2, :, 1] = bt
    return c


def eval_jets(params: MlpParams, x, t, with_tape: bool = False) -> JetBatch:
    """Forward-propagate the 4-channel jet through every layer."""
    widths = params.arch.layer_widths
    layers = unpack_params(params.flat, widths)
    c = _input_channels(params.arch, x, t)
    tape = [] if with_tape else None
    n_layers = len(layers)
    for idx, (w, b) in enumerate(layers):
        z = np.matmul(c, w)
        z[0] += b
        if idx < n_layers - 1:
            a = np.tanh(z[0])
            d1 = a * a
            np.subtract(1.0, d1, out=d1)
            d2 = a * d1
            d2 *= -2.0
            out = np.empty_like(z)
            out[0] = a
            np.multiply(d1, z[1], out=out[1])
            np.multiply(d1, z[2], out=out[2])
            np.multiply(z[1], z[1], out=out[3])
            out[3] *= d2
            out[3] += d1 * z[3]
            if with_tape:
                tape.append((c, z[1], z[2], z[3], a, d1, d2))
            c = out
        else:
            if with_tape:
                tape.append((c, None))
            c = z
    return JetBatch(c[0, :, 0].copy(), c[1, :, 0].copy(), c[2, :, 0].copy(),
                    c[3, :, 0].copy(), tape=tape)


def backprop_jets(params: MlpParams, jets: JetBatch, cot: JetBatch) -> np.ndarray:
    """Exact parameter gradient of sum_p <cot_p, jet_p> via reverse accumulation."""
    if jets._tape is None:
        raise ValueError("jets were computed without a tape; pass with_tape=True")
    widths = params.arch.layer_widths
    layers = unpack_params(params.flat, widths)
    p = jets.n_points
    g = np.zeros((4, p, 1))
    g[0, :, 0] = cot.value
    g[1, :, 0] = cot.d_x
    g[2, :, 0] = cot.d_t
    g[3, :, 0] = cot.d_xx

    grad_chunks = [None] * len(layers)
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        entry = jets._tape[idx]
        if entry[1] is None:  # linear output layer: g is already dL/dZ
            gz = g
        else:
            c_in, z1, z2, z3, a, d1, d2 = entry
            gv, gx, gt, gs = g[0], g[1], g[2], g[3]
            gz = np.empty_like(g)
            np.multiply(gt, d1, out=gz[2])
            np.multiply(gs, d1, out=gz[3])
            # gz0 = gv*d1 + (gx*z1 + gt*z2 + gs*z3)*d2 + gs*z1^2*d3,
            # with d3 = -2*(d1^2 + a*d2); built in place to avoid temporaries
            acc = gx * z1
            acc += gt * z2
            acc += gs * z3
            acc *= d2
            np.multiply(gv, d1, out=gz[0])
            gz[0] += acc
            d3 = d1 * d1
            d3 += a * d2
            d3 *= -2.0
            d3 *= z1
            d3 *= z1
            d3 *= gs
            gz[0] += d3
            np.multiply(gx, d1, out=gz[1])
            acc2 = gs * d2
            acc2 *= z1
            acc2 *= 2.0
            gz[1] += acc2
        c_in = entry[0]
        # contracts the channel and point axes at once; tensordot lowers to a
        # single BLAS GEMM, unlike the equivalent einsum
        gw = np.tensordot(c_in, gz, axes=([0, 1], [0, 1]))
        gb = gz[0].sum(axis=0)
        grad_chunks[idx] = (gw, gb)
        g = np.matmul(gz, w.T)
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grad_chunks])


def forward(params: MlpParams, x, t):
    """Plain forward pass; bitwise-identical to eval_jets(...).value."""
    jets = eval_jets(params, np.atleast_1d(x), np.atleast_1d(t))
    return jets.value if np.ndim(x) else float(jets.value[0])


def jet(params: MlpParams, x: float, t: float) -> FieldJet:
    j = eval_jets(params, [x], [t])
    return FieldJet(value=float(j.value[0]), d_t=float(j.d_t[0]),
                    d_x=float(j.d_x[0]), d_xx=float(j.d_xx[0]))


# ---------------------------------------------------------------------------
# Collocation-level evaluation: one jet batch per point group per network
# ---------------------------------------------------------------------------

GROUPS = ("interior", "bc0", "bc1", "initial", "terminal")


def eval_on_collocation(params: MlpParams, colloc, horizon_T: float, with_tape=True):
    """Jets of one network on every group of a CollocationSet.

    Groups: interior (x_j, t_j); bc0/bc1 (x=0 resp. x=1 at the boundary
    times); initial (grid xs, t=0); terminal (grid xs, t=T).
    """
    xi, ti = colloc.interior[:, 0], colloc.interior[:, 1]
    tb = colloc.boundary_times
    zeros_b = np.zeros_like(tb)
    ones_b = np.ones_like(tb)
    out = {
        "interior": eval_jets(params, xi, ti, with_tape=with_tape),
        "bc0": eval_jets(params, zeros_b, tb, with_tape=with_tape),
        "bc1": eval_jets(params, ones_b, tb, with_tape=with_tape),
        "initial": eval_jets(params, colloc.initial_xs,
                             np.zeros_like(colloc.initial_xs), with_tape=with_tape),
        "terminal": eval_jets(params, colloc.terminal_xs,
                              np.full_like(colloc.terminal_xs, horizon_T), with_tape=with_tape),
    }
    return out


def loss_param_gradient(params_list, loss_evaluator: Callable, colloc, horizon_T: float):
    """Exact parameter gradients of a scalar loss built from collocation jets.

    ``loss_evaluator`` receives one {group: JetBatch} dict per network and must
    return (loss, cotangents) where cotangents mirrors the structure (entries
    may be None for groups the loss does not touch).  Returns
    (loss, [flat gradient per network]).
    """
    samples = [eval_on_collocation(p, colloc, horizon_T) for p in params_list]
    loss, cots = loss_evaluator(samples)
    grads = []
    for params, nets, netcots in zip(params_list, samples, cots):
        g = np.zeros_like(params.flat)
        for group in GROUPS:
            cot = netcots.get(group) if netcots else None
            if cot is None:
                continue
            g += backprop_jets(params, nets[group], cot)
        grads.append(g)
    return loss, grads
