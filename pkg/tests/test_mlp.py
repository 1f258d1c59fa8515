import math

import numpy as np
import pytest
import sympy

from pclab.mlp import (FieldJet, MlpArchitecture, MlpParams, backprop_jets,
                       eval_jets, eval_on_collocation, forward, init_params,
                       jet, unpack_params)


def test_default_architecture_parameter_count():
    assert MlpArchitecture().param_count == 1185


def test_param_count_formula():
    arch = MlpArchitecture((2, 5, 3, 1))
    assert arch.param_count == (2 * 5 + 5) + (5 * 3 + 3) + (3 * 1 + 1)


def test_init_is_xavier_uniform_with_zero_biases():
    arch = MlpArchitecture()
    params = init_params(arch, seed=0)
    layers = unpack_params(params.flat, arch.layer_widths)
    for (w, b), (fan_in, fan_out) in zip(layers, [(2, 32), (32, 32), (32, 1)]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        assert w.shape == (fan_in, fan_out)
        assert np.max(np.abs(w)) <= bound
        # a uniform draw over [-bound, bound] should come close to the bound
        assert np.max(np.abs(w)) > 0.8 * bound
        assert not np.any(b)


def test_init_is_deterministic_in_seed():
    arch = MlpArchitecture()
    a = init_params(arch, seed=3).flat
    b = init_params(arch, seed=3).flat
    c = init_params(arch, seed=4).flat
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_forward_matches_manual_tiny_network():
    # one hidden tanh unit: y = w2 * tanh(w1x * x + w1t * t + b1) + b2
    arch = MlpArchitecture((2, 1, 1))
    w1x, w1t, b1, w2, b2 = 0.3, -0.7, 0.1, 1.4, -0.2
    params = MlpParams(np.array([w1x, w1t, b1, w2, b2]), arch)
    x, t = 0.4, 1.3
    expected = w2 * math.tanh(w1x * x + w1t * t + b1) + b2
    assert forward(params, np.array([x]), np.array([t]))[0] == pytest.approx(expected, rel=1e-15)


def test_jets_match_symbolic_tanh_composition():
    # independent oracle: build the same two-layer tanh network in sympy and
    # compare all four jet channels at randomly drawn points
    arch = MlpArchitecture((2, 4, 1))
    rng = np.random.default_rng(9)
    params = init_params(arch, 2).copy_with(rng.normal(0.0, 0.8, arch.param_count))
    (w1, b1), (w2, b2) = unpack_params(params.flat, arch.layer_widths)

    xs, ts = sympy.symbols("x t")
    hidden = [sympy.tanh(w1[0, j] * xs + w1[1, j] * ts + b1[j]) for j in range(4)]
    out = sum(w2[j, 0] * hidden[j] for j in range(4)) + b2[0]
    fns = {
        "value": sympy.lambdify((xs, ts), out, "numpy"),
        "d_x": sympy.lambdify((xs, ts), sympy.diff(out, xs), "numpy"),
        "d_t": sympy.lambdify((xs, ts), sympy.diff(out, ts), "numpy"),
        "d_xx": sympy.lambdify((xs, ts), sympy.diff(out, xs, 2), "numpy"),
    }

    x = rng.uniform(0, 1, 20)
    t = rng.uniform(0, 3, 20)
    jets = eval_jets(params, x, t)
    for channel, fn in fns.items():
        assert getattr(jets, channel) == pytest.approx(fn(x, t), rel=1e-12, abs=1e-12)


def test_scalar_jet_agrees_with_batch():
    params = init_params(MlpArchitecture(), 1)
    j = jet(params, 0.3, 1.7)
    batch = eval_jets(params, np.array([0.3]), np.array([1.7]))
    assert isinstance(j, FieldJet)
    assert (j.value, j.d_x, j.d_t, j.d_xx) == (
        batch.value[0], batch.d_x[0], batch.d_t[0], batch.d_xx[0])


def test_backprop_matches_finite_differences():
    # generic quadratic functional of all four channels, per-parameter FD
    arch = MlpArchitecture((2, 6, 1))
    rng = np.random.default_rng(4)
    params = init_params(arch, 0).copy_with(rng.normal(0.0, 0.6, arch.param_count))
    x = rng.uniform(0, 1, 12)
    t = rng.uniform(0, 3, 12)
    a, b, c, d = rng.normal(size=(4, 12))

    def loss_of(p):
        j = eval_jets(p, x, t)
        return float(np.sum(a * j.value**2 + b * j.d_x**2 + c * j.d_t**2 + d * j.d_xx**2))

    jets = eval_jets(params, x, t, with_tape=True)
    cot = jets.zeros_cotangent(jets)
    cot.value[:] = 2 * a * jets.value
    cot.d_x[:] = 2 * b * jets.d_x
    cot.d_t[:] = 2 * c * jets.d_t
    cot.d_xx[:] = 2 * d * jets.d_xx
    grad = backprop_jets(params, jets, cot)

    h = 1e-6
    fd = np.empty(arch.param_count)
    for k in range(arch.param_count):
        e = np.zeros(arch.param_count)
        e[k] = h
        fd[k] = (loss_of(params.copy_with(params.flat + e))
                 - loss_of(params.copy_with(params.flat - e))) / (2 * h)
    scale = 1.0 + np.max(np.abs(fd))
    assert np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3 * scale)) < 1e-6


def test_collocation_evaluation_covers_all_groups():
    from pclab.checks import coarse_problem
    from pclab.losses import sample_collocation

    spec, grid = coarse_problem(17, 5)
    colloc = sample_collocation(grid, spec, 40, 8, seed=0)
    params = init_params(MlpArchitecture(), 0)
    groups = eval_on_collocation(params, colloc, spec.horizon_T, with_tape=False)
    assert set(groups) == {"interior", "bc0", "bc1", "initial", "terminal"}
    assert groups["interior"].value.shape == (40,)
    assert groups["bc0"].value.shape == (8,)
    assert groups["initial"].value.shape == (17,)
    # boundary groups are evaluated at x = 0 and x = 1 at the same times
    direct0 = eval_jets(params, np.zeros(8), colloc.boundary_times)
    assert np.array_equal(groups["bc0"].value, direct0.value)


def test_input_scaling_changes_derivatives_consistently():
    # affine input scaling must chain through the jets: compare against an
    # unscaled network evaluated at the mapped inputs
    arch_plain = MlpArchitecture((2, 8, 1))
    arch_scaled = MlpArchitecture((2, 8, 1), input_scale=((0.5, 2.0), (1.5, 2.0 / 3.0)))
    rng = np.random.default_rng(5)
    flat = rng.normal(0.0, 0.5, arch_plain.param_count)
    plain = MlpParams(flat, arch_plain)
    scaled = MlpParams(flat, arch_scaled)
    x = rng.uniform(0, 1, 10)
    t = rng.uniform(0, 3, 10)
    js = eval_jets(scaled, x, t)
    jp = eval_jets(plain, 2.0 * x - 1.0, 2.0 / 3.0 * t - 1.0)
    assert js.value == pytest.approx(jp.value, rel=1e-13)
    assert js.d_x == pytest.approx(2.0 * jp.d_x, rel=1e-13)
    assert js.d_t == pytest.approx(2.0 / 3.0 * jp.d_t, rel=1e-13)
    assert js.d_xx == pytest.approx(4.0 * jp.d_xx, rel=1e-13)
