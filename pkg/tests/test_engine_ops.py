import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtpn import engine as E
from mtpn.engine import kernels
from mtpn.errors import GradientError, PrecisionError, ShapeError
from oracles import naive_conv, naive_resize


def test_conv_single_multiply():
    x = np.array([3.0], dtype=np.float32).reshape(1, 1, 1, 1)
    w = np.array([2.0], dtype=np.float32).reshape(1, 1, 1, 1)
    y, t = E.tally_scope(E.conv2d, x, w)
    assert y.shape == (1, 1, 1, 1) and y[0, 0, 0, 0] == 6.0
    assert (t.macs, t.flops) == (1, 2)


def test_conv_closed_form_macs():
    x = np.zeros((1, 3, 64, 64), np.float32)
    w = np.zeros((16, 3, 3, 3), np.float32)
    y, t = E.tally_scope(E.conv2d, x, w, stride=1, pad=1)
    assert y.shape == (1, 16, 64, 64)
    assert t.macs == 1_769_472 and t.flops == 3_538_944


def test_conv_bias_flops():
    x = np.zeros((1, 2, 4, 4), np.float32)
    w = np.zeros((3, 2, 1, 1), np.float32)
    _, t = E.tally_scope(E.conv2d, x, w, np.zeros(3, np.float32))
    assert t.flops == 2 * t.macs + 3 * 16


@pytest.mark.parametrize("groups", [1, 2, 4])


def test_conv_matches_naive_oracle(backend, rng, groups):
    x = rng.standard_normal((1, 4, 8, 8)).astype(np.float32)
    w = rng.standard_normal((8 if groups == 4 else 6, 4 // groups, 3, 3)).astype(np.float32)
    b = rng.standard_normal(w.shape[0]).astype(np.float32)
    y = E.conv2d(x, w, b, stride=2, pad=1, groups=groups)
    ref = naive_conv(x.astype(np.float64), w.astype(np.float64), b, 2, 1, groups)
    np.testing.assert_allclose(y, ref, rtol=1e-5, atol=1e-5)


def test_depthwise_conv_matches_oracle(backend, rng):
    x = rng.standard_normal((2, 5, 9, 7))
    w = rng.standard_normal((5, 1, 3, 3))
    np.testing.assert_allclose(E.conv2d(x, w, stride=2, pad=1, groups=5), naive_conv(x, w, None, 2, 1, 5), rtol=1e-10)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 12), w=st.integers(1, 12), k=st.integers(1, 4), s=st.integers(1, 3), p=st.integers(0, 2))


def test_conv_shape_law(h, w, k, s, p):
    x = np.ones((1, 2, h, w), np.float32)
    wt = np.ones((3, 2, k, k), np.float32)
    if h + 2 * p < k or w + 2 * p < k:
        with pytest.raises(ShapeError):
            E.conv2d(x, wt, stride=s, pad=p)
        return
    y = E.conv2d(x, wt, stride=s, pad=p)
    assert y.shape == (1, 3, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)


def test_conv_linearity(rng):
    x = rng.standard_normal((1, 3, 10, 10)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    a = np.float32(2.5)
    np.testing.assert_allclose(E.conv2d(a * x, w, pad=1), a * E.conv2d(x, w, pad=1), rtol=1e-5, atol=1e-5)


def test_conv_errors():
    x = np.zeros((1, 4, 5, 5), np.float32)
    with pytest.raises(ShapeError) as exc:
        E.conv2d(x, np.zeros((2, 3, 3, 3), np.float32))
    assert exc.value.dim
    with pytest.raises(ShapeError):
        E.conv2d(x, np.zeros((2, 4, 7, 7), np.float32))
    with pytest.raises(ShapeError):
        E.conv2d(x, np.zeros((3, 2, 1, 1), np.float32), groups=2)


def test_mixed_precision_rejected():
    with pytest.raises(PrecisionError):
        E.conv2d(np.zeros((1, 1, 2, 2), np.float32), np.zeros((1, 1, 1, 1), np.float64))
    with pytest.raises(PrecisionError):
        E.add(np.zeros((1, 1, 2, 2), np.float32), np.zeros((1, 1, 2, 2)))


@pytest.mark.parametrize("dtype", [np.float32, np.float64])


def test_precision_preserved(dtype, rng):
    x = rng.standard_normal((1, 2, 4, 4)).astype(dtype)
    assert E.relu(x).dtype == dtype
    assert E.resize_bilinear(x, 8, 8).dtype == dtype
    assert E.conv2d(x, np.ones((1, 2, 3, 3), dtype), pad=1).dtype == dtype


def test_relu_and_batchnorm_identity():
    x = np.array([-1.0, 0.0, 2.0]).reshape(1, 3, 1, 1)
    np.testing.assert_array_equal(E.relu(x).ravel(), [0, 0, 2])
    y = E.batchnorm(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), eps=0.0)
    np.testing.assert_array_equal(y, x)


def test_relu6_and_sigmoid():
    x = np.array([-1.0, 3.0, 9.0]).reshape(1, 3, 1, 1)
    np.testing.assert_array_equal(E.relu6(x).ravel(), [0, 3, 6])
    np.testing.assert_allclose(E.sigmoid(x).ravel(), 1 / (1 + np.exp(-x.ravel())), rtol=1e-12)


def test_softmax_sums_to_one(rng):
    x = (rng.standard_normal((2, 2, 5, 6)) * 10).astype(np.float32)
    y = E.softmax_channels(x)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-5)
    e = np.exp(x - x.max(axis=1, keepdims=True))
    np.testing.assert_allclose(y, e / e.sum(axis=1, keepdims=True), rtol=1e-5)


def test_concat_and_pools(rng):
    a = rng.standard_normal((1, 2, 4, 4))
    b = rng.standard_normal((1, 3, 4, 4))
    assert E.concat_channels([a, b]).shape == (1, 5, 4, 4)
    with pytest.raises(ShapeError):
        E.concat_channels([a, rng.standard_normal((1, 1, 3, 4))])
    mp = E.maxpool(a, 2, 2)
    np.testing.assert_array_equal(mp, a.reshape(1, 2, 2, 2, 2, 2).max(axis=(3, 5)))
    ap = E.avgpool(a, 2, 2)
    np.testing.assert_allclose(ap, a.reshape(1, 2, 2, 2, 2, 2).mean(axis=(3, 5)))
    np.testing.assert_allclose(E.global_avgpool(a)[..., 0, 0], a.mean(axis=(2, 3)))


def test_maxpool_padding_ignores_pad(backend):
    x = -np.ones((1, 1, 4, 4))
    y = E.maxpool(x, 3, 2, pad=1)
    assert y.shape == (1, 1, 2, 2) and (y == -1).all()


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        E.add(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


def test_batchnorm_length_mismatch():
    with pytest.raises(ShapeError):
        E.batchnorm(np.zeros((1, 3, 2, 2)), np.ones(2), np.zeros(3), np.zeros(3), np.ones(3))


def test_resize_constant(backend):
    y = E.resize_bilinear(np.full((1, 1, 1, 1), 5.0), 4, 4)
    assert y.shape == (1, 1, 4, 4) and (y == 5.0).all()


def test_resize_matches_scalar_oracle(backend, rng):
    x = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2)
    np.testing.assert_allclose(E.resize_bilinear(x, 4, 4), naive_resize(x, 4, 4), atol=1e-6)
    y = rng.standard_normal((1, 2, 5, 7))
    for oh, ow in [(10, 14), (3, 4), (8, 5)]:
        np.testing.assert_allclose(E.resize_bilinear(y, oh, ow), naive_resize(y, oh, ow), atol=1e-10)


def test_resize_identity_is_bitwise(rng):
    x = rng.standard_normal((1, 3, 4, 5)).astype(np.float32)
    y = E.resize_bilinear(x, 4, 5)
    assert y.tobytes() == x.tobytes() and y is not x


def test_resize_flops():
    _, t = E.tally_scope(E.resize_bilinear, np.zeros((1, 2, 3, 3)), 6, 6)
    assert t.flops == 8 * 2 * 36 and t.macs == 0


def test_weighted_merge_properties(rng):
    a, b = rng.standard_normal((2, 1, 2, 3, 3))
    np.testing.assert_allclose(E.weighted_merge([a, b], np.ones(2), eps=0.0), (a + b) / 2, rtol=1e-12)
    np.testing.assert_allclose(E.weighted_merge([a, b], np.array([0.0, 1.0]), eps=0.0), b, rtol=1e-12)
    for _ in range(100):
        w = rng.uniform(0, 5, size=rng.integers(2, 5))
        c = E.merge_coefficients(w)
        assert c.sum() <= 1.0 and ((c >= 0) & (c <= 1)).all()


def test_merge_independent_of_zero_weight_input(rng):
    a, b, c = rng.standard_normal((3, 1, 2, 3, 3))
    w = np.array([0.7, 0.0, 1.3])
    np.testing.assert_array_equal(E.weighted_merge([a, b, c], w), E.weighted_merge([a, b * 100, c], w))


def test_non_differentiable_ops_raise(rng):
    x = rng.standard_normal((1, 2, 3, 3))
    with E.recording() as tape:
        idx = E.argmax_channels(x)
        th = E.threshold(x, 0.0)
    assert idx.shape == (1, 3, 3)
    for node in tape.nodes:
        with pytest.raises(GradientError):
            E.vjp(node, np.ones(node.output.shape))
    with pytest.raises(GradientError):
        tape.gradient([(th, np.ones_like(th))], [x])


def test_vjp_examples():
    with E.recording() as tape:
        x = np.array([2.0, -2.0]).reshape(1, 2, 1, 1)
        y = E.relu(x)
        a, b = np.ones((1, 1, 2, 2)), np.zeros((1, 1, 2, 2))
        s = E.add(a, b)
    dx, = E.vjp(tape.nodes[0], np.ones_like(y))
    np.testing.assert_array_equal(dx.ravel(), [1, 0])
    up = np.arange(4.0).reshape(1, 1, 2, 2)
    da, db = E.vjp(tape.nodes[1], up)
    np.testing.assert_array_equal(da, up)
    np.testing.assert_array_equal(db, up)
    with pytest.raises(ShapeError):
        E.vjp(tape.nodes[1], np.ones((1, 1, 3, 3)))
    assert s.shape == a.shape


def test_tally_empty_and_deterministic(rng):
    _, t = E.tally_scope(lambda: None)
    assert (t.macs, t.flops, t.per_op) == (0, 0, [])
    x = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)

    def f():
        return E.maxpool(E.relu(E.conv2d(x, w, pad=1, label="c"), label="c"), 2, 2, label="p")

    _, t1 = E.tally_scope(f)
    _, t2 = E.tally_scope(f)
    assert t1 == t2
    assert t1.macs == sum(m for _, m, _ in t1.per_op) and t1.flops == sum(f_ for _, _, f_ in t1.per_op)
    assert t1.flops >= t1.macs
    assert [lbl for lbl, _, _ in t1.per_op] == ["c/conv2d", "c/relu", "p/maxpool"]


def test_tally_nesting():
    x = np.zeros((1, 1, 2, 2))
    with E.counting() as outer:
        E.relu(x)
        with E.counting() as inner:
            E.sigmoid(x)
    assert inner.flops == 16 and outer.flops == 4 + 16
    assert len(outer.per_op) == 2


@pytest.mark.parametrize("op", ["conv", "depthwise", "maxpool", "resize_up", "resize_down"])


def test_backends_agree(rng, op):
    x = rng.standard_normal((1, 6, 13, 11)).astype(np.float32)
    w = rng.standard_normal((6, 1, 3, 3)).astype(np.float32)
    w2 = rng.standard_normal((5, 6, 3, 3)).astype(np.float32)
    fns = {
        "conv": lambda: E.conv2d(x, w2, stride=2, pad=1),
        "depthwise": lambda: E.conv2d(x, w, stride=1, pad=1, groups=6),
        "maxpool": lambda: E.maxpool(x, 3, 2, pad=1),
        "resize_up": lambda: E.resize_bilinear(x, 26, 22),
        "resize_down": lambda: E.resize_bilinear(x, 7, 5),
    }
    prev = kernels.get_backend()
    outs = {}
    try:
        for name in kernels.BACKENDS:
            kernels.set_backend(name)
            outs[name] = fns[op]()
    finally:
        kernels.set_backend(prev)
    np.testing.assert_allclose(outs["numba"], outs["numpy"], rtol=1e-5, atol=1e-5)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")


def test_finite_outputs(rng):
    x = (rng.standard_normal((1, 4, 6, 6)) * 50).astype(np.float32)
    for y in (E.sigmoid(x), E.softmax_channels(x), E.relu6(x), E.resize_bilinear(x, 3, 3)):
        assert np.isfinite(y).all()
