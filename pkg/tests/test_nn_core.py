import mpmath
import numpy as np
import pytest

from conftest import finite_diff_check, probe_loss
from voxelfill.errors import NonScalarLoss, ShapeMismatch
from voxelfill.nn import Grid, adam_init, adam_step, backward, no_grad, ops


def g64(rng, shape, scale=1.0):
    return Grid(rng.standard_normal(shape) * scale, requires_grad=True)


# ------------------------------------------------------------- conv oracles

def conv_loop_oracle(x, w, b, stride, pad):
    """Direct 6-nested-loop 2D convolution in float64."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, [(0, 0), (0, 0), (pad, pad), (pad, pad)])
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for ni in range(n):
        for co in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (xp[ni, ci, oy * stride + ky, ox * stride + kx]
                                        * w[co, ci, ky, kx])
                    out[ni, co, oy, ox] = acc + b[co]
    return out


def test_conv_1x1_single_voxel():
    x = Grid(np.array([[[[3.0]]]]))
    w = Grid(np.array([[[[2.0]]]]))
    b = Grid(np.array([0.5]))
    out = ops.conv(x, w, b)
    assert out.data[0, 0, 0, 0] == pytest.approx(2.0 * 3.0 + 0.5)


def test_conv_identity_kernel_3d(rng):
    x = Grid(rng.standard_normal((1, 1, 5, 5, 5)))
    k = np.zeros((1, 1, 3, 3, 3))
    k[0, 0, 1, 1, 1] = 1.0
    out = ops.conv(x, Grid(k), padding=1)
    assert np.array_equal(out.data, x.data)


def test_conv_matches_loop_oracle(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((2, 3, 3, 3))
    b = rng.standard_normal(2)
    for stride, pad in [(1, 0), (1, 1), (2, 1)]:
        got = ops.conv(Grid(x), Grid(w), Grid(b), stride=stride, padding=pad)
        want = conv_loop_oracle(x, w, b, stride, pad)
        assert np.allclose(got.data, want, atol=1e-10)


def test_conv_shape_law_property(rng):
    for _ in range(12):
        n = int(rng.integers(5, 12))
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 3))
        if n + 2 * p < k:
            continue
        x = Grid(rng.standard_normal((1, 1, n, n)))
        w = Grid(rng.standard_normal((1, 1, k, k)))
        out = ops.conv(x, w, stride=s, padding=p)
        expect = (n + 2 * p - k) // s + 1
        assert out.shape[2:] == (expect, expect)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeMismatch):
        ops.conv(Grid(np.zeros((1, 2, 4, 4))), Grid(np.zeros((1, 3, 3, 3))))


def test_transpose_conv_unit_kernel_identity(rng):
    x = Grid(rng.standard_normal((1, 1, 4, 4)))
    w = Grid(np.ones((1, 1, 1, 1)))
    out = ops.transpose_conv(x, w, stride=1)
    assert np.allclose(out.data, x.data)


def test_transpose_conv_shape_doubling(rng):
    x = Grid(rng.standard_normal((1, 2, 4, 4)))
    w = Grid(rng.standard_normal((2, 3, 2, 2)))
    out = ops.transpose_conv(x, w, stride=2)
    assert out.shape == (1, 3, 8, 8)


def test_transpose_conv_shape_law(rng):
    for _ in range(12):
        n = int(rng.integers(2, 8))
        k = int(rng.integers(1, 5))
        s = int(rng.integers(1, 4))
        p = int(rng.integers(0, (((n - 1) * s + k) - 1) // 2 + 1))
        x = Grid(rng.standard_normal((1, 1, n, n)))
        w = Grid(rng.standard_normal((1, 1, k, k)))
        expect = (n - 1) * s + k - 2 * p
        if expect < 1:
            continue
        out = ops.transpose_conv(x, w, stride=s, padding=p)
        assert out.shape[2:] == (expect, expect)


def test_transpose_conv_is_conv_input_gradient(rng):
    # oracle: backward pass of conv with the same kernel
    w = rng.standard_normal((4, 2, 3, 3))
    x = Grid(rng.standard_normal((2, 2, 7, 7)), requires_grad=True)
    out = ops.conv(x, Grid(w), stride=2, padding=1)
    g = rng.standard_normal(out.shape)
    backward(ops.sum_(ops.mul(out, Grid(g))))
    got = ops.transpose_conv(Grid(g), Grid(w), stride=2, padding=1)
    assert got.shape == x.shape
    assert np.allclose(got.data, x.grad, atol=1e-10)


# --------------------------------------------------------------- norms/attn

def test_instance_norm_constant_channel():
    x = Grid(np.full((1, 1, 4, 4), 3.7))
    out = ops.instance_norm(x, Grid(np.ones(1)), Grid(np.zeros(1)))
    assert np.abs(out.data).max() < 1e-2  # eps keeps 0/0 finite


def test_instance_norm_zero_mean(rng):
    x = Grid(rng.standard_normal((2, 3, 6, 6)))
    out = ops.instance_norm(x, Grid(np.ones(3)), Grid(np.zeros(3)))
    assert np.abs(out.data.mean(axis=(2, 3))).max() < 1e-5


def test_instance_norm_matches_two_pass_loop(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    gain = rng.standard_normal(3)
    shift = rng.standard_normal(3)
    got = ops.instance_norm(Grid(x), Grid(gain), Grid(shift), eps=1e-5).data
    for n in range(2):
        for c in range(3):
            sl = x[n, c]
            mu = sl.mean()
            var = ((sl - mu) ** 2).mean()
            want = (sl - mu) / np.sqrt(var + 1e-5) * gain[c] + shift[c]
            assert np.allclose(got[n, c], want, atol=1e-10)


def test_attention_single_token(rng):
    d = 6
    x = rng.standard_normal((1, 1, d))
    mats = {k: rng.standard_normal((d, d)) for k in "qkvo"}
    out, wts = ops.self_attention(Grid(x), Grid(mats["q"]), Grid(mats["k"]),
                                  Grid(mats["v"]), Grid(mats["o"]),
                                  heads=2, return_weights=True)
    assert np.allclose(wts, 1.0)  # softmax over one element
    want = (x[0] @ mats["v"]) @ mats["o"]
    assert np.allclose(out.data[0], want, atol=1e-10)


def test_attention_rows_sum_to_one(rng):
    x = Grid(rng.standard_normal((2, 7, 8)))
    mats = [Grid(rng.standard_normal((8, 8))) for _ in range(4)]
    _, wts = ops.self_attention(x, *mats, heads=4, return_weights=True)
    assert np.abs(wts.sum(axis=-1) - 1.0).max() < 1e-6


def test_attention_two_tokens_hand_rolled(rng):
    # oracle: explicit small-matrix arithmetic, single head
    d = 4
    x = rng.standard_normal((1, 2, d))
    wq, wk, wv, wo = (rng.standard_normal((d, d)) for _ in range(4))
    q, k, v = x[0] @ wq, x[0] @ wk, x[0] @ wv
    scores = q @ k.T / np.sqrt(d)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    att = e / e.sum(axis=1, keepdims=True)
    want = (att @ v) @ wo
    got = ops.self_attention(Grid(x), Grid(wq), Grid(wk), Grid(wv), Grid(wo), heads=1)
    assert np.allclose(got.data[0], want, atol=1e-10)


# ------------------------------------------------------------- activations

def test_activation_values():
    assert ops.relu(Grid(np.array([-1.0]))).data[0] == 0.0
    assert ops.relu(Grid(np.array([2.0]))).data[0] == 2.0
    assert ops.sigmoid(Grid(np.array([0.0]))).data[0] == pytest.approx(0.5)
    assert ops.leaky_relu(Grid(np.array([-2.0])), 0.2).data[0] == pytest.approx(-0.4)
    assert ops.tanh(Grid(np.array([0.0]))).data[0] == 0.0


def test_gelu_matches_high_precision_erf():
    # oracle: mpmath erf at 30 significant digits
    mpmath.mp.dps = 30
    xs = np.array([-2.5, -1.0, -0.3, 0.0, 0.7, 1.9, 3.2])
    got = ops.gelu(Grid(xs)).data
    for x, g in zip(xs, got):
        want = float(0.5 * mpmath.mpf(x) * (1 + mpmath.erf(mpmath.mpf(x) / mpmath.sqrt(2))))
        assert abs(g - want) < 1e-12


# ---------------------------------------------------------------- backward

def test_backward_sum_gives_ones(rng):
    x = g64(rng, (3, 4))
    backward(ops.sum_(x))
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_square_at_three():
    x = Grid(np.array([3.0]), requires_grad=True)
    backward(ops.sum_(ops.mul(x, x)))
    assert x.grad[0] == pytest.approx(6.0)


def test_backward_accumulates_without_reset():
    x = Grid(np.array([2.0]), requires_grad=True)
    backward(ops.sum_(ops.mul(x, x)))
    first = x.grad.copy()
    backward(ops.sum_(ops.mul(x, x)))
    assert np.allclose(x.grad, 2 * first)


def test_backward_nonscalar_raises(rng):
    x = g64(rng, (2, 2))
    with pytest.raises(NonScalarLoss):
        backward(ops.mul(x, 2.0))


def test_backward_deterministic(rng):
    def run():
        r = np.random.default_rng(55)
        x = Grid(r.standard_normal((2, 3, 8, 8)), requires_grad=True)
        w = Grid(r.standard_normal((4, 3, 3, 3)), requires_grad=True)
        out = ops.relu(ops.conv(x, w, padding=1))
        backward(ops.mean(ops.mul(out, out)))
        return x.grad.copy(), w.grad.copy()

    gx1, gw1 = run()
    gx2, gw2 = run()
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_composite_graph_finite_differences(rng):
    # conv -> norm -> attention -> sum, all gradients vs central differences
    x = g64(rng, (1, 2, 6, 6), 0.7)
    w = g64(rng, (4, 2, 3, 3), 0.4)
    gain = Grid(np.ones(4) + 0.1 * rng.standard_normal(4), requires_grad=True)
    shift = Grid(0.1 * rng.standard_normal(4), requires_grad=True)
    mats = [g64(rng, (4, 4), 0.5) for _ in range(4)]
    probe = rng.standard_normal((1, 36, 4))

    def build():
        h = ops.conv(x, w, padding=1)
        h = ops.instance_norm(h, gain, shift)
        tokens = ops.transpose(ops.reshape(h, (1, 4, 36)), (0, 2, 1))
        out = ops.self_attention(tokens, *mats, heads=2)
        return probe_loss(out, probe)

    finite_diff_check(build, [x, w, gain, shift, *mats], rng)


def test_no_grad_suppresses_graph(rng):
    x = g64(rng, (2, 2))
    with no_grad():
        out = ops.mul(x, x)
    assert out._backward is None


def test_elementwise_and_reduction_fd(rng):
    x = g64(rng, (3, 4), 0.8)
    y = g64(rng, (3, 4), 0.8)
    probe = rng.standard_normal((3, 4))

    def build():
        a = ops.add(ops.mul(x, y), ops.div(x, ops.add(ops.mul(y, y), 2.0)))
        b = ops.sub(ops.exp(ops.mul(a, 0.3)), ops.log(ops.add(ops.mul(x, x), 1.5)))
        c = ops.add(ops.sqrt(ops.add(ops.mul(b, b), 1e-3)), ops.absolute(x))
        d = ops.add(ops.tanh(c), ops.add(ops.sigmoid(b), ops.gelu(a)))
        return probe_loss(d, probe)

    finite_diff_check(build, [x, y], rng)


def test_softmax_concat_pad_crop_fd(rng):
    x = g64(rng, (2, 3, 4), 0.9)
    y = g64(rng, (2, 2, 4), 0.9)
    probe = rng.standard_normal((2, 5, 3))

    def build():
        joined = ops.concat([x, y], axis=1)  # (2,5,4)
        padded = ops.pad(joined, [(0, 0), (0, 1), (1, 0)])  # (2,6,5)
        cut = ops.crop(padded, (slice(None), slice(0, 5), slice(1, 4)))
        return probe_loss(ops.softmax(cut, axis=-1), probe)

    finite_diff_check(build, [x, y], rng)


def test_matmul_broadcast_fd(rng):
    a = g64(rng, (3, 4, 5), 0.6)
    b = g64(rng, (5, 2), 0.6)
    probe = rng.standard_normal((3, 4, 2))

    def build():
        return probe_loss(ops.matmul(a, b), probe)

    finite_diff_check(build, [a, b], rng)


# --------------------------------------------------------------------- adam

def test_adam_zero_gradients_no_change(rng):
    p = Grid(rng.standard_normal((3, 3)), requires_grad=True)
    params = {"p": p}
    state = adam_init(params, lr=0.1)
    before = p.data.copy()
    p.grad = np.zeros_like(p.data)
    adam_step(params, state)
    assert np.array_equal(p.data, before)
    assert state.step == 1


def test_adam_descends_quadratic():
    w = Grid(np.array([1.0]), requires_grad=True)
    params = {"w": w}
    state = adam_init(params, lr=0.1)
    backward(ops.sum_(ops.mul(w, w)))
    adam_step(params, state)
    assert abs(w.data[0]) < 1.0


def test_adam_matches_reference_recurrence():
    # oracle: independent Adam recurrence with the analytic gradient 2w
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    w = Grid(np.array([1.0, -1.5]), requires_grad=True)
    params = {"w": w}
    state = adam_init(params, lr, b1, b2, eps)

    ref = np.array([1.0, -1.5])
    m = np.zeros(2)
    v = np.zeros(2)
    for t in range(1, 201):
        w.grad = None
        backward(ops.sum_(ops.mul(w, w)))
        adam_step(params, state)

        g = 2.0 * ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref = ref - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert np.allclose(w.data, ref, rtol=1e-10, atol=1e-12)
    assert np.abs(w.data).max() < 1e-2
