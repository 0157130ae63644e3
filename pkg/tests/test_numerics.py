import numpy as np
import pytest

import c2f.numerics as nx
from c2f.errors import ContractError, DimensionError, EmptyInputError
from oracles import bce_loop, conv1d_loop, fc_loop, fd_gradient, grad_close, topk_mean_sort

F32 = np.float32


def rand(shape, seed, scale=1.0):
    return (np.random.default_rng(seed).standard_normal(shape) * scale).astype(F32)


# ---------------------------------------------------------------------------
# conv1d_temporal


def test_conv_identity_kernel():
    x = nx.Tensor(rand((7, 3), 0))
    kernel = nx.Tensor(np.eye(3, dtype=F32).reshape(1, 3, 3))
    bias = nx.Tensor(np.zeros(3, dtype=F32))
    out = nx.conv1d_temporal(x, kernel, bias)
    np.testing.assert_array_equal(out.data, x.data)


def test_conv_zero_input_gives_bias():
    x = nx.Tensor(np.zeros((5, 3), dtype=F32))
    kernel = nx.Tensor(rand((3, 3, 2), 1))
    bias = nx.Tensor(np.array([0.5, -1.25], dtype=F32))
    out = nx.conv1d_temporal(x, kernel, bias)
    for t in range(5):
        np.testing.assert_array_equal(out.data[t], bias.data)


def test_conv_matches_loop_oracle():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((8, 3)).astype(F32)
        kernel = rng.standard_normal((3, 3, 2)).astype(F32)
        bias = rng.standard_normal(2).astype(F32)
        out = nx.conv1d_temporal(nx.Tensor(x), nx.Tensor(kernel), nx.Tensor(bias))
        np.testing.assert_array_equal(out.data, conv1d_loop(x, kernel, bias))


def test_conv_depth_mismatch():
    with pytest.raises(DimensionError):
        nx.conv1d_temporal(nx.Tensor(rand((4, 3), 0)), nx.Tensor(rand((3, 2, 2), 1)), nx.Tensor(np.zeros(2, dtype=F32)))


def test_conv_even_kernel_rejected():
    with pytest.raises(DimensionError):
        nx.conv1d_temporal(nx.Tensor(rand((4, 3), 0)), nx.Tensor(rand((2, 3, 2), 1)), nx.Tensor(np.zeros(2, dtype=F32)))


# ---------------------------------------------------------------------------
# fully_connected


def test_fc_identity():
    x = nx.Tensor(rand((4, 3), 2))
    out = nx.fully_connected(x, nx.Tensor(np.eye(3, dtype=F32)), nx.Tensor(np.zeros(3, dtype=F32)))
    np.testing.assert_array_equal(out.data, x.data)


def test_fc_zero_input_gives_bias():
    bias = np.array([1.0, -2.0], dtype=F32)
    out = nx.fully_connected(nx.Tensor(np.zeros((3, 4), dtype=F32)), nx.Tensor(rand((4, 2), 3)), nx.Tensor(bias))
    for row in out.data:
        np.testing.assert_array_equal(row, bias)


def test_fc_matches_loop_oracle():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((4, 3)).astype(F32)
        w = rng.standard_normal((3, 2)).astype(F32)
        b = rng.standard_normal(2).astype(F32)
        out = nx.fully_connected(nx.Tensor(x), nx.Tensor(w), nx.Tensor(b))
        np.testing.assert_array_equal(out.data, fc_loop(x, w, b))


def test_fc_dim_mismatch():
    with pytest.raises(DimensionError):
        nx.fully_connected(nx.Tensor(rand((4, 3), 0)), nx.Tensor(rand((2, 2), 1)), nx.Tensor(np.zeros(2, dtype=F32)))


# ---------------------------------------------------------------------------
# activations


def test_sigmoid_at_zero():
    assert nx.sigmoid(nx.Tensor(np.zeros(1, dtype=F32))).data[0] == 0.5


def test_sigmoid_range():
    out = nx.sigmoid(nx.Tensor(rand(1000, 4, scale=5.0))).data
    assert np.all(out > 0.0) and np.all(out < 1.0)


def test_relu_values():
    out = nx.relu(nx.Tensor(np.array([-2.0, 0.0, 3.0], dtype=F32)))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 3.0])


def test_sigmoid_derivative_matches_fd():
    x = nx.Tensor(np.array([1.0], dtype=F32), requires_grad=True)
    tape = nx.Tape()
    with tape:
        out = nx.sum_all(nx.sigmoid(x))
    tape.backward(out)
    fd = fd_gradient(lambda: float(nx.sigmoid(nx.Tensor(x.data)).data[0]), x.data, 0, h=1e-2)
    assert grad_close(float(x.grad[0]), fd, rtol=1e-3)


def test_relu_subgradient_zero_at_zero():
    x = nx.Tensor(np.array([0.0, -1.0, 2.0], dtype=F32), requires_grad=True)
    tape = nx.Tape()
    with tape:
        out = nx.sum_all(nx.relu(x))
    tape.backward(out)
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# topk_mean


def test_topk_basic():
    out = nx.topk_mean(nx.Tensor(np.array([1.0, 2.0, 3.0], dtype=F32)), np.ones(3), 2)
    assert out.item() == 2.5


def test_topk_k_at_least_length_is_masked_mean():
    scores = nx.Tensor(np.array([1.0, 5.0, -2.0, 4.0], dtype=F32))
    mask = np.array([1, 1, 0, 1], dtype=F32)
    out = nx.topk_mean(scores, mask, 10)
    np.testing.assert_allclose(out.item(), (1.0 + 5.0 + 4.0) / 3.0, rtol=1e-6)


def test_topk_matches_sort_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        t = int(rng.integers(1, 40))
        scores = rng.standard_normal(t).astype(F32)
        mask = (rng.random(t) < 0.8).astype(F32)
        if mask.sum() == 0:
            mask[int(rng.integers(t))] = 1.0
        k = int(rng.integers(1, t + 1))
        got = nx.topk_mean(nx.Tensor(scores), mask, k).item()
        assert got == float(topk_mean_sort(scores, mask, k))


def test_topk_tie_breaks_to_lower_index():
    scores = nx.Tensor(np.array([0.5, 0.9, 0.9, 0.1], dtype=F32), requires_grad=True)
    tape = nx.Tape()
    with tape:
        out = nx.topk_mean(scores, np.ones(4), 3)
    tape.backward(out)
    # selected: indices 1, 2 (value 0.9) and 0 (0.5); index 3 loses the tie-free slot
    np.testing.assert_allclose(scores.grad, [1 / 3, 1 / 3, 1 / 3, 0.0], rtol=1e-6)


def test_topk_gradient_is_one_over_k_on_selected():
    scores = nx.Tensor(np.array([0.1, 0.8, 0.3, 0.9], dtype=F32), requires_grad=True)
    tape = nx.Tape()
    with tape:
        out = nx.topk_mean(scores, np.ones(4), 2)
    tape.backward(out)
    np.testing.assert_allclose(scores.grad, [0.0, 0.5, 0.0, 0.5], rtol=1e-6)


def test_topk_empty_mask_raises():
    with pytest.raises(EmptyInputError):
        nx.topk_mean(nx.Tensor(np.ones(3, dtype=F32)), np.zeros(3), 1)


def test_topk_masked_entry_never_influences():
    scores = np.array([0.2, 9.0, 0.4], dtype=F32)
    mask = np.array([1, 0, 1], dtype=F32)
    base = nx.topk_mean(nx.Tensor(scores), mask, 2).item()
    scores[1] = -9.0
    assert nx.topk_mean(nx.Tensor(scores), mask, 2).item() == base
    t = nx.Tensor(scores, requires_grad=True)
    tape = nx.Tape()
    with tape:
        out = nx.topk_mean(t, mask, 2)
    tape.backward(out)
    assert t.grad[1] == 0.0


def test_topk_monotone_in_single_entry():
    rng = np.random.default_rng(11)
    for _ in range(200):
        scores = rng.standard_normal(12).astype(F32)
        k = int(rng.integers(1, 12))
        base = nx.topk_mean(nx.Tensor(scores), np.ones(12), k).item()
        i = int(rng.integers(12))
        bumped = scores.copy()
        bumped[i] += abs(rng.standard_normal()) + 0.01
        assert nx.topk_mean(nx.Tensor(bumped), np.ones(12), k).item() >= base


# ---------------------------------------------------------------------------
# backward / tape


def test_backward_sum_gives_ones():
    x = nx.Tensor(rand((3, 4), 5), requires_grad=True)
    tape = nx.Tape()
    with tape:
        loss = nx.sum_all(x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((3, 4), dtype=F32))


def test_backward_sigmoid_product_closed_form():
    w = nx.Tensor(np.array([0.7], dtype=F32), requires_grad=True)
    x = nx.Tensor(np.array([1.3], dtype=F32), requires_grad=True)
    tape = nx.Tape()
    with tape:
        s = nx.sigmoid(nx.mul(w, x))
        loss = nx.sum_all(s)
    tape.backward(s if False else loss)
    sig = 1.0 / (1.0 + np.exp(-0.7 * 1.3))
    np.testing.assert_allclose(w.grad[0], sig * (1 - sig) * 1.3, rtol=1e-5)
    np.testing.assert_allclose(x.grad[0], sig * (1 - sig) * 0.7, rtol=1e-5)


def test_backward_twice_raises():
    x = nx.Tensor(np.ones(3, dtype=F32), requires_grad=True)
    tape = nx.Tape()
    with tape:
        loss = nx.sum_all(x)
    tape.backward(loss)
    with pytest.raises(ContractError):
        tape.backward(loss)


def test_backward_nonscalar_raises():
    x = nx.Tensor(np.ones(3, dtype=F32), requires_grad=True)
    tape = nx.Tape()
    with tape:
        y = nx.relu(x)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_backward_foreign_loss_raises():
    x = nx.Tensor(np.ones(3, dtype=F32), requires_grad=True)
    tape = nx.Tape()
    with tape:
        nx.sum_all(x)
    stray = nx.Tensor(np.float32(1.0))
    with pytest.raises(ContractError):
        tape.backward(stray)


def test_fanout_accumulates():
    x = nx.Tensor(np.array([2.0], dtype=F32), requires_grad=True)
    tape = nx.Tape()
    with tape:
        loss = nx.sum_all(nx.add(nx.mul(x, x), x))  # x^2 + x -> d/dx = 2x + 1
    tape.backward(loss)
    np.testing.assert_allclose(x.grad[0], 5.0, rtol=1e-6)


# ---------------------------------------------------------------------------
# per-op finite-difference checks (float64 oracles, realized f32 steps)


def _fd_check_all(build_loss, oracle, tensors, h=1e-5):
    tape = nx.Tape()
    with tape:
        loss = build_loss()
    for t in tensors:
        t.zero_grad()
    tape.backward(loss)
    np.testing.assert_allclose(loss.item(), oracle(), rtol=1e-5, atol=1e-6)
    for t in tensors:
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat_grad = grad.reshape(-1)
        for i in range(flat_grad.size):
            fd = fd_gradient(oracle, t.data, i, h=h)
            assert grad_close(float(flat_grad[i]), fd), (
                f"gradient mismatch at {i}: analytic {flat_grad[i]}, fd {fd}"
            )


def test_gradcheck_conv_chain():
    rng = np.random.default_rng(3)
    x = nx.Tensor(rng.standard_normal((6, 3)).astype(F32), requires_grad=True)
    kernel = nx.Tensor((rng.standard_normal((3, 3, 2)) * 0.4).astype(F32), requires_grad=True)
    bias = nx.Tensor((rng.standard_normal(2) * 0.1).astype(F32), requires_grad=True)

    def build():
        return nx.bce_mean(
            nx.sigmoid(nx.conv1d_temporal(x, kernel, bias)),
            np.zeros((6, 2), dtype=F32), np.ones((6, 2), dtype=F32),
        )

    def oracle():
        t = 6
        xp = np.zeros((t + 2, 3))
        xp[1:1 + t] = x.data.astype(np.float64)
        acc = np.tile(bias.data.astype(np.float64), (t, 1))
        for k in range(3):
            acc += xp[k:k + t] @ kernel.data[k].astype(np.float64)
        p = np.clip(1.0 / (1.0 + np.exp(-acc)), 1e-7, 1 - 1e-7)
        return float(-np.log1p(-p).mean())

    _fd_check_all(build, oracle, [x, kernel, bias])


def test_gradcheck_fc_relu_chain():
    rng = np.random.default_rng(4)
    x = nx.Tensor(rng.standard_normal((5, 3)).astype(F32), requires_grad=True)
    w = nx.Tensor((rng.standard_normal((3, 4)) * 0.5).astype(F32), requires_grad=True)
    b = nx.Tensor((rng.standard_normal(4) * 0.2).astype(F32), requires_grad=True)
    w2 = nx.Tensor((rng.standard_normal((4, 1)) * 0.5).astype(F32), requires_grad=True)
    b2 = nx.Tensor(np.zeros(1, dtype=F32), requires_grad=True)
    labels = (rng.random((5, 1)) > 0.5).astype(F32)

    def build():
        h = nx.relu(nx.fully_connected(x, w, b))
        return nx.bce_mean(nx.sigmoid(nx.fully_connected(h, w2, b2)), labels, np.ones((5, 1), dtype=F32))

    def oracle():
        h = np.maximum(x.data.astype(np.float64) @ w.data + b.data, 0)
        z = h @ w2.data + b2.data
        p = np.clip(np.where(z >= 0, 1 / (1 + np.exp(-z)), np.exp(z) / (1 + np.exp(z))), 1e-7, 1 - 1e-7)
        y = labels.astype(np.float64)
        return float(-(y * np.log(p) + (1 - y) * np.log1p(-p)).mean())

    _fd_check_all(build, oracle, [x, w, b, w2, b2])


def test_gradcheck_tv_absmean_topk_threshold():
    rng = np.random.default_rng(5)
    raw = nx.Tensor(rng.standard_normal(9).astype(F32), requires_grad=True)
    mask = np.array([1, 1, 1, 1, 1, 1, 1, 0, 1], dtype=F32)

    def build():
        s = nx.sigmoid(raw)
        tv = nx.total_variation(s, mask)
        mass = nx.masked_abs_mean(s, mask)
        top = nx.topk_mean(nx.threshold(s, 0.05), mask, 3)
        return nx.add(nx.add(tv, mass), top)

    def oracle():
        s = 1 / (1 + np.exp(-raw.data.astype(np.float64)))
        m = mask.astype(bool)
        pairs = m[1:] & m[:-1]
        tv = np.abs((s[1:] - s[:-1])[pairs]).sum() / pairs.sum()
        mass = np.abs(s[m]).sum() / m.sum()
        th = np.where(s >= 0.05, s, 0.0)
        top = np.sort(th[m])[::-1][:3].mean()
        return float(tv + mass + top)

    _fd_check_all(build, oracle, [raw])


# ---------------------------------------------------------------------------
# fused losses against hand-loop oracles


def test_bce_mean_matches_loop_oracle():
    rng = np.random.default_rng(9)
    for _ in range(50):
        shape = (int(rng.integers(1, 12)),)
        p = rng.random(shape).astype(F32)
        y = (rng.random(shape) > 0.5).astype(F32)
        m = (rng.random(shape) > 0.3).astype(F32)
        got = nx.bce_mean(nx.Tensor(p), y, m).item()
        np.testing.assert_allclose(got, bce_loop(p, y, m), rtol=1e-6, atol=1e-7)


def test_bce_perfect_scores_hit_clamp_floor():
    p = nx.Tensor(np.array([1.0, 0.0, 1.0], dtype=F32))
    y = np.array([1.0, 0.0, 1.0], dtype=F32)
    loss = nx.bce_mean(p, y, np.ones(3, dtype=F32)).item()
    assert 0.0 < loss < 1e-5


def test_bce_half_gives_ln2():
    p = nx.Tensor(np.full(6, 0.5, dtype=F32))
    loss = nx.bce_mean(p, np.zeros(6, dtype=F32), np.ones(6, dtype=F32)).item()
    np.testing.assert_allclose(loss, np.log(2.0), rtol=1e-6)


def test_bce_empty_mask_is_zero():
    out = nx.bce_mean(nx.Tensor(np.ones(3, dtype=F32)), np.ones(3, dtype=F32), np.zeros(3, dtype=F32))
    assert out.item() == 0.0


def test_masked_entries_never_influence_bce():
    rng = np.random.default_rng(10)
    p = rng.random(8).astype(F32)
    y = (rng.random(8) > 0.5).astype(F32)
    m = np.array([1, 1, 0, 1, 0, 1, 1, 1], dtype=F32)
    base = nx.bce_mean(nx.Tensor(p), y, m).item()
    p2 = p.copy()
    p2[2] = 0.999
    p2[4] = 0.001
    assert nx.bce_mean(nx.Tensor(p2), y, m).item() == base
    t = nx.Tensor(p2, requires_grad=True)
    tape = nx.Tape()
    with tape:
        out = nx.bce_mean(t, y, m)
    tape.backward(out)
    assert t.grad[2] == 0.0 and t.grad[4] == 0.0


# ---------------------------------------------------------------------------
# adam


def _named(p):
    return [("p", p)]


def test_adam_zero_gradient_leaves_params():
    p = nx.Tensor(np.array([1.0, -2.0], dtype=F32), requires_grad=True)
    state = nx.AdamState.for_params(_named(p), learning_rate=0.1)
    before = p.data.copy()
    p.grad = np.zeros_like(p.data)
    nx.adam_step(_named(p), state)
    np.testing.assert_array_equal(p.data, before)
    assert state.step_count == 1


def test_adam_constant_gradient_monotone():
    p = nx.Tensor(np.array([0.0], dtype=F32), requires_grad=True)
    state = nx.AdamState.for_params(_named(p), learning_rate=0.05)
    prev = 0.0
    for _ in range(50):
        p.grad = np.array([1.0], dtype=F32)
        nx.adam_step(_named(p), state)
        assert p.data[0] < prev
        prev = float(p.data[0])


def test_adam_first_step_hand_computed():
    p = nx.Tensor(np.array([0.0], dtype=F32), requires_grad=True)
    state = nx.AdamState.for_params(_named(p), learning_rate=0.1, beta1=0.9, beta2=0.999)
    p.grad = np.array([1.0], dtype=F32)
    nx.adam_step(_named(p), state)
    # m=0.1, v=0.001 -> mhat=1, vhat=1 -> p = -0.1/(1+eps)
    np.testing.assert_allclose(p.data[0], -0.1, rtol=1e-5)


def test_adam_nan_gradient_names_parameter():
    p = nx.Tensor(np.array([0.0], dtype=F32), requires_grad=True)
    p.name = "fc1_w"
    state = nx.AdamState.for_params([("fc1_w", p)])
    p.grad = np.array([np.nan], dtype=F32)
    with pytest.raises(FloatingPointError, match="fc1_w"):
        nx.adam_step([("fc1_w", p)], state)


# ---------------------------------------------------------------------------
# determinism


def test_forward_determinism_bit_identical():
    def once():
        rng = np.random.default_rng(42)
        x = nx.Tensor(rng.standard_normal((10, 4)).astype(F32))
        w = nx.Tensor(rng.standard_normal((4, 3)).astype(F32))
        b = nx.Tensor(rng.standard_normal(3).astype(F32))
        return nx.sigmoid(nx.fully_connected(x, w, b)).data.tobytes()

    assert once() == once()
