import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bgmgen import autograd as ag
from bgmgen.conditioning import synth_condition
from bgmgen.denoiser import (
    LANGUAGE,
    VISUAL,
    AttentionParams,
    DenoiserNet,
    SelectedCondition,
    attention_weights,
    backward,
    build_mask,
    forward,
    loss_graph,
    metrical_position,
    rescaled_block,
    segment_cross_attention,
    select_condition,
)

from conftest import TOY_ARCH


# ---- mask -----------------------------------------------------------------

def test_mask_default_setting():
    m = build_mask(32, 8).matrix
    assert m[3][5] == 1 and m[0][8] == 0 and m[8][8] == 1
    assert m.sum() == 4 * 64
    for g in range(4):
        assert m[8 * g:8 * g + 8, 8 * g:8 * g + 8].all()


def test_mask_single_partial_block():
    assert build_mask(5, 8).matrix.all()


def test_mask_ragged_tail():
    m = build_mask(10, 4).matrix
    count = sum(1 for i in range(10) for j in range(10) if i // 4 == j // 4)
    assert count == 36 and m.sum() == 36
    assert m[8, 9] == 1 and m[7, 8] == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(1, 20))
def test_mask_invariants(size, k):
    m = build_mask(size, k).matrix
    i, j = np.indices((size, size))
    np.testing.assert_array_equal(m, (i // k == j // k).astype(np.uint8))
    assert (m.sum(axis=1) >= 1).all()


def test_rescaled_block():
    assert rescaled_block(8, 128, 32) == 32
    assert rescaled_block(8, 64, 32) == 16
    assert rescaled_block(8, 2, 32) == 1
    assert rescaled_block(1, 1, 100) == 1


# ---- attention ------------------------------------------------------------

def _params(rng, d_model=4, d_cond=3, d_key=2, d_val=2):
    return AttentionParams(rng.standard_normal((d_model, d_key)), rng.standard_normal((d_cond, d_key)),
                           rng.standard_normal((d_cond, d_val)), rng.standard_normal((d_val, d_model)))


def test_attention_constant_condition_gives_same_update_everywhere():
    rng = np.random.default_rng(0)
    p = _params(rng)
    x = rng.standard_normal((6, 4))
    fc = np.tile(rng.standard_normal(3), (6, 1))
    out = segment_cross_attention(x, fc, p, build_mask(6, 6)) - x
    np.testing.assert_allclose(out, np.tile(out[0], (6, 1)), rtol=1e-12)


def test_attention_diagonal_mask_locality():
    rng = np.random.default_rng(1)
    p = _params(rng)
    x, fc = rng.standard_normal((8, 4)), rng.standard_normal((8, 3))
    mask = build_mask(8, 1)
    base = segment_cross_attention(x, fc, p, mask)
    for j in range(8):
        fc2 = fc.copy()
        fc2[j] += rng.standard_normal(3) * 10
        out = segment_cross_attention(x, fc2, p, mask)
        for i in range(8):
            if i != j:
                assert np.array_equal(out[i], base[i])


def test_attention_hand_computed():
    # L=4, k=2, d=1: q_i = 2 x_i, key_j = c_j, value_j = 3 c_j, output scale 0.5
    x = np.array([[1.0], [-1.0], [0.5], [2.0]])
    c = np.array([[0.2], [0.4], [-0.3], [1.0]])
    p = AttentionParams(np.array([[2.0]]), np.array([[1.0]]), np.array([[3.0]]), np.array([[0.5]]))
    expected = np.empty(4)
    for i in range(4):
        blk = [0, 1] if i < 2 else [2, 3]
        logits = [2 * x[i, 0] * c[j, 0] for j in blk]
        z = sum(math.exp(v) for v in logits)
        attn = sum(math.exp(v) / z * 3 * c[j, 0] for v, j in zip(logits, blk))
        expected[i] = x[i, 0] + 0.5 * attn
    out = segment_cross_attention(x, c, p, build_mask(4, 2))
    np.testing.assert_allclose(out[:, 0], expected, rtol=0, atol=1e-12)


def test_attention_rows_stochastic_and_masked_exactly_zero():
    rng = np.random.default_rng(2)
    p = _params(rng)
    mask = build_mask(10, 3)
    w = attention_weights(rng.standard_normal((10, 4)), rng.standard_normal((10, 3)), p, mask)
    assert (w >= 0).all()
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
    assert (w[mask.matrix == 0] == 0).all()


def test_attention_block_permutation_is_contained():
    rng = np.random.default_rng(3)
    p = _params(rng)
    x, fc = rng.standard_normal((16, 4)), rng.standard_normal((16, 3))
    mask = build_mask(16, 4)
    base = segment_cross_attention(x, fc, p, mask)
    fc2 = fc.copy()
    fc2[4:8] = fc[[6, 4, 7, 5]]
    out = segment_cross_attention(x, fc2, p, mask)
    outside = np.r_[0:4, 8:16]
    assert np.array_equal(out[outside], base[outside])
    # within the block, a key permutation only reorders the softmax sum
    np.testing.assert_allclose(out[4:8], base[4:8], rtol=1e-12)


def test_attention_dimension_errors():
    rng = np.random.default_rng(4)
    p = _params(rng)
    with pytest.raises(ValueError):
        segment_cross_attention(np.zeros((4, 4)), np.zeros((5, 3)), p, build_mask(4, 2))
    with pytest.raises(ValueError):
        segment_cross_attention(np.zeros((4, 5)), np.zeros((4, 3)), p, build_mask(4, 2))
    with pytest.raises(ValueError):
        segment_cross_attention(np.zeros((4, 4)), np.zeros((4, 3)), p, build_mask(5, 2))


# ---- selector -------------------------------------------------------------

def test_selector_cases():
    fv, fl = np.zeros((4, 2)), np.ones((4, 3))
    assert select_condition(fv, fl, 500, 200).modality == LANGUAGE
    assert select_condition(fv, fl, 200, 200).modality == VISUAL
    assert select_condition(fv, fl, 201, 200).modality == LANGUAGE
    assert all(select_condition(fv, fl, t, 0).modality == LANGUAGE for t in range(1, 1001))
    np.testing.assert_array_equal(select_condition(fv, fl, 1, 200).features, fv)


# ---- network --------------------------------------------------------------

def _toy_inputs(seed=0, batch=None):
    rng = np.random.default_rng(seed)
    shape = TOY_ARCH.roll_shape if batch is None else (batch,) + TOY_ARCH.roll_shape
    return rng.standard_normal(shape)


def test_initial_output_is_zero():
    net = DenoiserNet(TOY_ARCH, seed=0)
    cond = synth_condition(8, TOY_ARCH.d_fv, TOY_ARCH.d_fl, 0)
    out = forward(net, _toy_inputs(), 17, select_condition(cond.fv, cond.fl, 17, 200))
    assert out.shape == TOY_ARCH.roll_shape and not out.any()


def test_default_size_fits_budget():
    from bgmgen.denoiser import Architecture
    net = DenoiserNet(Architecture(d_fv=16, d_fl=16))
    assert net.param_count <= 50_000
    assert net.param_count == sum(int(np.prod(s)) for _, s, _ in net.layout)


def test_forward_deterministic(random_toy_net):
    x = _toy_inputs(1)
    cond = SelectedCondition(np.random.default_rng(2).standard_normal((5, TOY_ARCH.d_fl)), LANGUAGE)
    a = forward(random_toy_net, x, 900, cond)
    b = forward(DenoiserNet(TOY_ARCH, random_toy_net.params.copy()), x, 900, cond)
    assert np.array_equal(a, b) and np.isfinite(a).all()


def test_forward_rejects_non_finite(random_toy_net):
    x = _toy_inputs()
    x[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        forward(random_toy_net, x, 3)


def test_forward_rejects_wrong_shape(random_toy_net):
    with pytest.raises(ValueError):
        forward(random_toy_net, np.zeros((2, 8, 16)), 3)


def test_bad_parameter_vector():
    with pytest.raises(ValueError):
        DenoiserNet(TOY_ARCH, np.zeros(5))
    params = DenoiserNet(TOY_ARCH).params
    params[0] = np.inf
    with pytest.raises(ValueError):
        DenoiserNet(TOY_ARCH, params)


def test_batched_forward_matches_single(random_toy_net):
    x = _toy_inputs(3, batch=3)
    rng = np.random.default_rng(4)
    conds = [SelectedCondition(rng.standard_normal((8, TOY_ARCH.d_fv)), VISUAL),
             SelectedCondition(rng.standard_normal((4, TOY_ARCH.d_fl)), LANGUAGE),
             SelectedCondition(rng.standard_normal((8, TOY_ARCH.d_fv)), VISUAL)]
    ts = np.array([5, 700, 200])
    batched = forward(random_toy_net, x, ts, conds)
    for i in range(3):
        np.testing.assert_allclose(batched[i], forward(random_toy_net, x[i], ts[i], conds[i]),
                                   rtol=1e-12, atol=1e-12)


# straight-line reference: loops and explicit formulas, no autograd, no shared helpers

def _ref_sinusoid(values, dim):
    half = dim // 2
    out = np.zeros((len(values), dim))
    for r, v in enumerate(values):
        for i in range(half):
            f = math.exp(-math.log(10000.0) * i / half)
            out[r, i] = math.sin(v * f)
            out[r, half + i] = math.cos(v * f)
    return out


def _ref_ln(h, g, b):
    mu = h.mean(-1, keepdims=True)
    var = ((h - mu) ** 2).mean(-1, keepdims=True)
    return (h - mu) / np.sqrt(var + 1e-5) * g + b


def _ref_silu(h):
    return h / (1 + np.exp(-h))


def _ref_conv(h, w, b):
    k = w.shape[0]
    length = h.shape[0]
    out = np.tile(b, (length, 1)).astype(float)
    for t in range(length):
        for i in range(k):
            src = t + i - k // 2
            if 0 <= src < length:
                out[t] += h[src] @ w[i]
    return out


def _ref_interp(feats, length):
    frames = feats.shape[0]
    if frames == length:
        return feats
    pos = np.linspace(0, frames - 1, length) if length > 1 else np.zeros(1)
    return np.stack([np.interp(pos, np.arange(frames), feats[:, c]) for c in range(feats.shape[1])], 1)


def _ref_attention(h, tokens, wq, wk, wv, wo, block):
    out = np.zeros_like(h)
    for i in range(h.shape[0]):
        allowed = [j for j in range(h.shape[0]) if i // block == j // block]
        logits = np.array([(h[i] @ wq) @ (tokens[j] @ wk) for j in allowed]) / math.sqrt(wq.shape[1])
        w = np.exp(logits - logits.max())
        w /= w.sum()
        out[i] = sum(wj * (tokens[j] @ wv) for wj, j in zip(w, allowed)) @ wo
    return out


def _ref_position(length, dim):
    half = dim // 2
    out = np.zeros((length, dim))
    for r in range(length):
        for i in range(half):
            period = 2 ** (i + 1)
            out[r, i] = math.sin(2 * math.pi * r / period)
            out[r, half + i] = math.cos(2 * math.pi * r / period)
    return out


def test_metrical_position_repeats_every_bar():
    code = metrical_position(128, 32)
    assert code.shape == (128, 32)
    # pairs with periods 2, 4, 8, 16 repeat bar to bar; the 32-step pair does not
    bar_pairs = [0, 1, 2, 3, 16, 17, 18, 19]
    np.testing.assert_allclose(code[16:, bar_pairs], code[:-16, bar_pairs], atol=1e-12)
    assert not np.allclose(code[16:, 4], code[:-16, 4])
    assert len({tuple(np.round(row, 9)) for row in code}) == 128


def reference_forward(net, x, t, cond):
    a, v = net.arch, net.view
    seq = np.stack([np.concatenate([x[0, s], x[1, s]]) for s in range(a.time_steps)])
    h = seq @ v("in.w") + v("in.b") + _ref_position(a.time_steps, a.d_model)
    temb = _ref_silu(_ref_sinusoid([t], a.d_time)[0] @ v("time.w") + v("time.b"))
    feats, modality = cond
    tag = "fv" if modality == VISUAL else "fl"

    def level(name, h, n):
        r = _ref_conv(_ref_silu(_ref_ln(h, v(f"{name}.n1.g"), v(f"{name}.n1.b"))),
                      v(f"{name}.c1.w"), v(f"{name}.c1.b"))
        scale = temb @ v(f"{name}.scale.w") + v(f"{name}.scale.b")
        shift = temb @ v(f"{name}.shift.w") + v(f"{name}.shift.b")
        r = _ref_ln(r, v(f"{name}.n2.g"), v(f"{name}.n2.b")) * (1 + scale) + shift
        h = h + _ref_conv(_ref_silu(r), v(f"{name}.c2.w"), v(f"{name}.c2.b"))
        tokens = _ref_interp(feats, n) @ v(f"cond.{tag}.w") + v(f"cond.{tag}.b")
        block = max(1, math.floor(a.k * n / feats.shape[0] + 0.5))
        return h + _ref_attention(_ref_ln(h, v(f"{name}.na.g"), v(f"{name}.na.b")), tokens,
                                  v(f"{name}.q"), v(f"{name}.k"), v(f"{name}.v"), v(f"{name}.o"), block)

    n = a.time_steps
    h0 = level("enc0", h, n)
    h1 = level("enc1", (h0[0::2] + h0[1::2]) / 2, n // 2)
    h2 = level("dec0", np.repeat(h1, 2, axis=0) + h0, n)
    out = _ref_silu(_ref_ln(h2, v("out.n.g"), v("out.n.b"))) @ v("out.w") + v("out.b")
    out = out + (temb @ v("skip.w") + v("skip.b")) * seq
    p = a.pitch_bins
    return np.stack([out[:, :p], out[:, p:]])


@pytest.mark.parametrize("modality,t", [(VISUAL, 150), (LANGUAGE, 800)])
def test_forward_matches_straight_line_reference(random_toy_net, modality, t):
    width = TOY_ARCH.d_fv if modality == VISUAL else TOY_ARCH.d_fl
    feats = np.random.default_rng(5).standard_normal((12, width))
    x = _toy_inputs(6)
    got = forward(random_toy_net, x, t, SelectedCondition(feats, modality))
    want = reference_forward(random_toy_net, x, t, (feats, modality))
    np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-9)


# ---- gradients ------------------------------------------------------------

def test_no_parameter_path_gives_zero_gradient():
    w = ag.Tensor(np.ones(3), requires_grad=True)
    const = ag.Tensor(np.arange(3.0))
    loss = ag.mse(const, np.zeros(3))
    loss.backward()
    assert w.grad is None
    net = DenoiserNet(TOY_ARCH)
    graph = loss_graph(net, np.zeros(TOY_ARCH.roll_shape), 4, None, np.zeros(TOY_ARCH.roll_shape))
    g = backward(net, graph)
    # zero output layer and zero target: loss is 0 and so is every gradient
    assert not g.any()


def test_linear_layer_quadratic_loss_closed_form():
    rng = np.random.default_rng(0)
    w0, x, y = rng.standard_normal((3, 4)), rng.standard_normal(4), rng.standard_normal(3)
    w = ag.Tensor(w0, requires_grad=True)
    pred = ag.reshape(w @ ag.Tensor(x.reshape(4, 1)), (3,))
    loss = ag.mse(pred, y) * 3.0  # sum of squares
    loss.backward()
    np.testing.assert_allclose(w.grad, 2 * np.outer(w0 @ x - y, x), rtol=1e-12)


def _net_loss(net, params, x, t, conds, eps):
    trial = DenoiserNet(net.arch, params)
    return float(loss_graph(trial, x, t, conds, eps).loss.data)


def test_full_toy_gradient_against_finite_differences(random_toy_net):
    net = random_toy_net
    rng = np.random.default_rng(21)
    x = rng.standard_normal((2,) + TOY_ARCH.roll_shape)
    eps = rng.standard_normal(x.shape)
    conds = [SelectedCondition(rng.standard_normal((8, TOY_ARCH.d_fv)), VISUAL),
             SelectedCondition(rng.standard_normal((6, TOY_ARCH.d_fl)), LANGUAGE)]
    t = np.array([90, 600])
    grad = backward(net, loss_graph(net, x, t, conds, eps))
    coords = rng.choice(net.param_count, size=100, replace=False)
    h = 1e-4
    worst = 0.0
    for c in coords:
        plus, minus = net.params.copy(), net.params.copy()
        plus[c] += h
        minus[c] -= h
        fd = (_net_loss(net, plus, x, t, conds, eps) - _net_loss(net, minus, x, t, conds, eps)) / (2 * h)
        rel = abs(fd - grad[c]) / max(abs(fd), abs(grad[c]))
        worst = max(worst, rel)
    assert worst < 1e-4


@pytest.mark.parametrize("op", ["conv", "layer_norm", "softmax", "pool", "upsample", "silu"])
def test_op_gradients(op):
    rng = np.random.default_rng(sum(map(ord, op)))
    x0 = rng.standard_normal((2, 6, 4))
    w0 = rng.standard_normal((3, 4, 5))
    g0, b0 = rng.standard_normal(4), rng.standard_normal(4)
    mask = build_mask(6, 4).matrix.astype(bool)
    proj = rng.standard_normal((2, 6, 5 if op == "conv" else 4 if op != "softmax" else 6))
    if op in ("pool",):
        proj = rng.standard_normal((2, 3, 4))
    if op == "upsample":
        proj = rng.standard_normal((2, 12, 4))

    def run(x, w, g, b):
        xt, wt, gt, bt = (ag.Tensor(v, requires_grad=True) for v in (x, w, g, b))
        if op == "conv":
            y = ag.conv1d(xt, wt, ag.Tensor(np.zeros(5), requires_grad=True))
        elif op == "layer_norm":
            y = ag.layer_norm(xt, gt, bt)
        elif op == "softmax":
            y = ag.masked_softmax(xt @ ag.swap_last(xt), mask)
        elif op == "pool":
            y = ag.pool2(xt)
        elif op == "upsample":
            y = ag.upsample2(xt)
        else:
            y = ag.silu(xt)
        loss = ag.mean(y * proj)
        return loss, (xt, wt, gt, bt)

    loss, leaves = run(x0, w0, g0, b0)
    loss.backward()
    base = [x0, w0, g0, b0]
    for idx, leaf in enumerate(leaves):
        if leaf.grad is None:
            continue
        flat = base[idx].ravel()
        for c in range(0, flat.size, max(1, flat.size // 10)):
            vals = []
            for sign in (1, -1):
                args = [v.copy() for v in base]
                args[idx].ravel()[c] += sign * 1e-5
                vals.append(float(run(*args)[0].data))
            fd = (vals[0] - vals[1]) / 2e-5
            assert leaf.grad.ravel()[c] == pytest.approx(fd, rel=1e-5, abs=1e-9)
