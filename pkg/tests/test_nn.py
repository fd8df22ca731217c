import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collateral.errors import ConfigError, DomainError, ShapeError
from collateral.nn import (
    SGD,
    Conv3D,
    ConvTranspose3D,
    Dense,
    Flatten,
    Sequential,
    Sigmoid,
    Softmax,
    Tanh,
    class_weights,
    conv3d,
    conv3d_grads,
    conv_output_size,
    gradient_check,
    mse_loss,
    tconv3d,
    weighted_cce,
)


def conv_oracle(x, w, stride, pad):
    """Direct loop cross-correlation."""
    n, c, *sp = x.shape
    o, _, k, _, _ = w.shape
    xp = np.pad(x, [(0, 0), (0, 0)] + [(pad, pad)] * 3)
    out_sp = [conv_output_size(d, k, stride, pad) for d in sp]
    out = np.zeros((n, o, *out_sp))
    for i in range(out_sp[0]):
        for j in range(out_sp[1]):
            for l in range(out_sp[2]):
                patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k, l * stride:l * stride + k]
                out[:, :, i, j, l] = np.einsum("ncabd,ocabd->no", patch, w)
    return out


def test_ones_kernel_example():
    out = conv3d(np.ones((1, 1, 4, 4, 4)), np.ones((1, 1, 3, 3, 3)), 1, 0)
    assert out.shape == (1, 1, 2, 2, 2) and np.all(out == 27)


def test_identity_kernel(rng):
    w = np.zeros((1, 1, 3, 3, 3))
    w[0, 0, 1, 1, 1] = 1
    x = rng.standard_normal((2, 1, 5, 6, 7))
    assert np.array_equal(conv3d(x, w, 1), x)


def test_half_padding_halves():
    assert [conv_output_size(n, 5, 2, 2) for n in (64, 32, 16, 8)] == [32, 16, 8, 4]
    y = conv3d(np.zeros((1, 1, 64, 64, 64), dtype=np.float32), np.zeros((1, 1, 5, 5, 5), dtype=np.float32), 2)
    assert y.shape == (1, 1, 32, 32, 32)


@pytest.mark.parametrize("shape,k,s,p", [((2, 3, 6, 5, 7), 3, 1, 1), ((1, 2, 9, 8, 8), 5, 2, 2),
                                         ((2, 1, 7, 7, 7), 3, 2, 0), ((1, 2, 34, 34, 34), 5, 2, 2)])
def test_conv_matches_oracle(rng, shape, k, s, p):
    x = rng.standard_normal(shape)
    w = rng.standard_normal((3, shape[1], k, k, k))
    assert np.allclose(conv3d(x, w, s, p), conv_oracle(x, w, s, p), atol=1e-10)


def test_conv_shape_errors(rng):
    with pytest.raises(ShapeError):
        conv3d(rng.standard_normal((1, 2, 5, 5, 5)), rng.standard_normal((1, 3, 3, 3, 3)), 1)
    with pytest.raises(ShapeError):
        conv3d(rng.standard_normal((1, 1, 2, 5, 5)), rng.standard_normal((1, 1, 5, 5, 5)), 1, 0)


def test_tconv_examples(rng):
    w = rng.standard_normal((1, 2, 5, 5, 5))
    y = rng.standard_normal((1, 1, 8, 8, 8))
    assert tconv3d(y, w, 2).shape == (1, 2, 16, 16, 16)
    assert not tconv3d(np.zeros_like(y), w, 2).any()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_adjoint_identity(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.choice([1, 3, 5]))
    s = int(rng.integers(1, 3))
    c, o = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    sp = tuple(int(v) for v in rng.integers(k, k + 7, size=3))
    x = rng.standard_normal((2, c, *sp))
    w = rng.standard_normal((o, c, k, k, k))
    y = rng.standard_normal(conv3d(x, w, s).shape)
    lhs = np.sum(conv3d(x, w, s) * y)
    rhs = np.sum(x * tconv3d(y, w, s, out_spatial=sp))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_conv_grads_match_oracle(rng):
    x = rng.standard_normal((2, 2, 6, 7, 5))
    w = rng.standard_normal((3, 2, 3, 3, 3))
    g = rng.standard_normal(conv3d(x, w, 2).shape)
    dx, dw = conv3d_grads(x, w, g, 2)
    dw_ref = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        e = np.zeros_like(w)
        e[idx] = 1
        dw_ref[idx] = np.sum(conv3d(x, e, 2) * g)
    assert np.allclose(dw, dw_ref, atol=1e-10)
    assert np.allclose(dx, tconv3d(g, w, 2, out_spatial=x.shape[2:]), atol=1e-10)


def test_activations():
    assert Tanh().forward(np.zeros((1, 1)))[0, 0] == 0
    assert Sigmoid().forward(np.zeros((1, 1)))[0, 0] == 0.5
    assert np.allclose(Softmax().forward(np.full((1, 3), 7.0)), 1 / 3)


def _nets(rng):
    yield Sequential([Dense(5, 4, rng, np.float64)], (5,)), rng.standard_normal((3, 5))
    yield Sequential([Tanh()], (4,)), rng.standard_normal((3, 4))
    yield Sequential([Sigmoid()], (4,)), rng.standard_normal((3, 4))
    yield Sequential([Softmax()], (4,)), rng.standard_normal((3, 4))
    yield Sequential([Conv3D(2, 3, 3, 1, rng, np.float64)], (2, 5, 4, 6)), rng.standard_normal((2, 2, 5, 4, 6))
    yield Sequential([Conv3D(2, 2, 5, 2, rng, np.float64)], (2, 8, 8, 8)), rng.standard_normal((2, 2, 8, 8, 8))
    yield (Sequential([ConvTranspose3D(2, 3, 5, 2, rng, np.float64)], (2, 4, 4, 4)),
           rng.standard_normal((2, 2, 4, 4, 4)))
    yield (Sequential([Conv3D(1, 2, 3, 2, rng, np.float64), Tanh(), Flatten(), Dense(16, 3, rng, np.float64),
                       Softmax()], (1, 4, 4, 4)), rng.standard_normal((2, 1, 4, 4, 4)))


def test_every_layer_gradient(rng):
    for net, x in _nets(rng):
        assert gradient_check(net, x, rng) < 1e-4, [l.kind for l in net.layers]


def test_gradient_check_detects_errors(rng):
    class Broken(Tanh):
        def backward(self, g):
            return 1.1 * super().backward(g)

    assert gradient_check(Sequential([Broken()], (4,)), rng.standard_normal((2, 4)), rng) > 1e-2


def test_weighted_cce():
    assert weighted_cce(np.array([[0.0, 1.0, 0.0]]), [1], [1, 1, 1])[0] == 0
    assert weighted_cce(np.full((2, 3), 1 / 3), [0, 2], [1, 1, 1])[0] == pytest.approx(np.log(3))
    w = class_weights([0, 0, 1, 2], 3)
    w2 = class_weights([0, 0, 0, 0, 1, 2], 3)
    assert w2[0] == w[0] / 2 and w2[1] == w[1]
    with pytest.raises(DomainError):
        weighted_cce(np.array([[0.5, 0.7, 0.1]]), [0], [1, 1, 1])


def test_weighted_cce_gradient(rng):
    p = rng.dirichlet(np.ones(3), size=4)
    y = np.array([0, 2, 1, 1])
    w = np.array([0.5, 2.0, 1.0])
    _, g = weighted_cce(p, y, w)
    h = 1e-7
    for i, j in [(0, 0), (1, 2), (3, 1)]:
        q = p.copy()
        q[i, j] += h
        # evaluate off the simplex directly from the formula
        up = np.mean(-w[y] * np.log(q[np.arange(4), y]))
        base = np.mean(-w[y] * np.log(p[np.arange(4), y]))
        assert g[i, j] == pytest.approx((up - base) / h, rel=1e-4, abs=1e-6)


def test_sgd_examples():
    net = Sequential([Dense(1, 1, np.random.default_rng(0), np.float64)], (1,))
    layer = net.layers[0]
    layer.params["w"][...] = 1.0
    opt = SGD(lr=0.1, decay=0, momentum=0)
    layer.grads["w"][...] = 1.0
    opt.step(net)
    assert layer.params["w"][0, 0] == pytest.approx(0.9)
    net.zero_grad()
    layer.velocity = {}
    before = layer.params["w"].copy()
    SGD(momentum=0.9).step(net)
    assert np.array_equal(layer.params["w"], before)
    assert SGD(lr=0.01, decay=1e-6, iterations=10 ** 6).current_lr() == pytest.approx(0.005)
    with pytest.raises(ConfigError):
        SGD(momentum=1.0)


def test_momentum_accumulates():
    net = Sequential([Dense(1, 1, np.random.default_rng(0), np.float64)], (1,))
    layer = net.layers[0]
    layer.params["w"][...] = 0.0
    opt = SGD(lr=1.0, decay=0, momentum=0.5)
    for _ in range(2):
        layer.grads["w"][...] = 1.0
        opt.step(net)
    # v1 = -1, v2 = -0.5 - 1
    assert layer.params["w"][0, 0] == pytest.approx(-2.5)


def test_single_sample_loss_decreases(rng):
    net = Sequential([Conv3D(1, 2, 3, 2, rng, np.float64), Tanh(), Flatten(), Dense(16, 2, rng, np.float64),
                      Sigmoid()], (1, 4, 4, 4))
    x = rng.standard_normal((1, 1, 4, 4, 4))
    target = np.array([[0.2, 0.9]])
    opt = SGD(lr=0.05, decay=0, momentum=0)
    losses = []
    for _ in range(50):
        loss, g = mse_loss(net(x), target)
        losses.append(loss)
        net.zero_grad()
        net.backward(g)
        opt.step(net)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_outputs_finite_and_copy_independent(rng):
    net = Sequential([Dense(3, 2, rng), Tanh()], (3,))
    twin = net.copy()
    twin.layers[0].params["w"] += 1
    assert not np.array_equal(twin.layers[0].params["w"], net.layers[0].params["w"])
    assert np.all(np.isfinite(net(rng.standard_normal((4, 3)).astype(np.float32))))
    with pytest.raises(ShapeError):
        net(np.zeros((1, 4), dtype=np.float32))
