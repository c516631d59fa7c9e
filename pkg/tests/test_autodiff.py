import math

import numpy as np
import pytest

from mambahash import autodiff as ad
from mambahash.autodiff import Tensor
from mambahash.errors import ContractError, NumericError, ShapeError
from mambahash.gradcheck import grad_check


def param(rng, *shape, low=None, high=None):
    if low is None:
        return Tensor(rng.normal(size=shape), requires_grad=True)
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


# -- forward examples -------------------------------------------------------


def test_depthwise_same_padding_shape(rng):
    x = Tensor(rng.normal(size=(1, 4, 4, 5)))
    w = Tensor(rng.normal(size=(3, 3, 5)))
    assert ad.depthwise_conv2d(x, w, None, 1, 1).shape == (1, 4, 4, 5)


@pytest.mark.parametrize("k", [1, 3, 5, 7])
def test_depthwise_kernel_sizes_keep_shape(rng, k):
    x = Tensor(rng.normal(size=(2, 6, 6, 3)))
    w = Tensor(rng.normal(size=(k, k, 3)))
    assert ad.depthwise_conv2d(x, w, None, 1, k // 2).shape == (2, 6, 6, 3)


def test_global_average_pool_of_constant():
    x = Tensor(np.full((2, 3, 3, 4), 2.5))
    np.testing.assert_array_equal(ad.mean(x, axis=(1, 2)).data, np.full((2, 4), 2.5))


def test_layer_norm_of_1_2_3():
    out = ad.layer_norm(Tensor([1.0, 2.0, 3.0]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
    var = 2.0 / 3.0
    assert abs(out.mean()) < 1e-15
    np.testing.assert_allclose(out.var(), var / (var + 1e-5), rtol=1e-14)
    np.testing.assert_allclose(out, np.array([-1.0, 0.0, 1.0]) / math.sqrt(var + 1e-5), rtol=1e-14)


def test_conv2d_matches_direct_loops(rng):
    x = rng.normal(size=(2, 7, 6, 3))
    w = rng.normal(size=(3, 3, 3, 4))
    b = rng.normal(size=4)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ho, wo = (7 + 2 - 3) // 2 + 1, (6 + 2 - 3) // 2 + 1
    ref = np.zeros((2, ho, wo, 4))
    for n in range(2):
        for i in range(ho):
            for j in range(wo):
                patch = xp[n, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3, :]
                ref[n, i, j] = np.tensordot(patch, w, axes=([0, 1, 2], [0, 1, 2])) + b
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_channel_conv1d_matches_direct_sum():
    x = Tensor([[1.0, 2.0, 3.0, 4.0]])
    w = Tensor([0.5, -1.0, 2.0])
    # out[d] = 0.5 x[d-1] - x[d] + 2 x[d+1] with zeros outside
    np.testing.assert_allclose(ad.channel_conv1d(x, w).data, [[3.0, 4.5, 6.0, -2.5]])


def test_shape_errors_name_the_operation(rng):
    with pytest.raises(ShapeError, match="conv2d"):
        ad.conv2d(Tensor(np.zeros((1, 4, 4, 3))), Tensor(np.zeros((3, 3, 2, 4))))
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeError, match="concat"):
        ad.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], axis=1)
    with pytest.raises(ShapeError, match="channel_conv1d"):
        ad.channel_conv1d(Tensor(np.zeros((1, 4))), Tensor(np.zeros(2)))


def test_softplus_stable_for_large_inputs():
    out = ad.softplus(Tensor([-800.0, 0.0, 800.0])).data
    assert np.isfinite(out).all()
    assert out[1] == math.log(2)
    assert out[2] == 800.0


def test_expm1_ratio_continuous_at_series_cutoff():
    z = np.array([-1e-3 * (1 + 1e-12), -1e-3 * (1 - 1e-12), 0.0, 1e-8])
    out = ad.expm1_ratio(Tensor(z)).data
    assert abs(out[0] - out[1]) < 1e-13
    assert out[2] == 1.0
    assert abs(out[3] - (1 + 0.5e-8)) < 1e-15


# -- backward examples ------------------------------------------------------


def test_linear_map_gradient_is_outer_structure(rng):
    W = param(rng, 3, 4)
    x = Tensor(rng.normal(size=(4, 1)))
    ad.tsum(W @ x).backward()
    np.testing.assert_allclose(W.grad, np.broadcast_to(x.data.T, (3, 4)))


def test_tanh_gradient_at_zero():
    p = Tensor(np.zeros(5), requires_grad=True)
    ad.tsum(ad.tanh(p)).backward()
    np.testing.assert_array_equal(p.grad, np.ones(5))


def test_reuse_accumulates_exactly(rng):
    a = param(rng, 3)
    w1, w2 = rng.normal(size=3), rng.normal(size=3)
    ad.tsum(a * w1).backward()
    g1 = a.grad
    a.grad = None
    ad.tsum(a * w2).backward()
    g2 = a.grad
    a.grad = None
    ad.tsum(a * w1 + a * w2).backward()
    np.testing.assert_array_equal(a.grad, g1 + g2)


def test_backward_on_nonscalar_is_contract_error(rng):
    a = param(rng, 3)
    with pytest.raises(ContractError):
        (a * 2.0).backward()


def test_no_grad_records_nothing(rng):
    a = param(rng, 3)
    with ad.no_grad():
        out = ad.tanh(a)
    assert not out.requires_grad and out.op == "leaf"


def test_forward_is_deterministic(rng):
    w = Tensor(rng.normal(size=(3, 3, 2, 4)))
    x = Tensor(rng.normal(size=(2, 6, 6, 2)))
    a = ad.conv2d(x, w, None, 1, 1).data
    b = ad.conv2d(x, w, None, 1, 1).data
    assert a.tobytes() == b.tobytes()


def test_shared_subexpression_diamond(rng):
    # y = (a*a) used twice; checks each node is visited once in reverse order
    a = param(rng, 4)
    sq = a * a
    ad.tsum(sq * sq + sq).backward()
    np.testing.assert_allclose(a.grad, 4 * a.data**3 + 2 * a.data, rtol=1e-13)


# -- grad_check examples ----------------------------------------------------


def test_grad_check_square_at_3():
    x = Tensor([3.0], requires_grad=True)
    rep = grad_check(lambda t: ad.tsum(t * t), x, step=1e-5)
    assert rep.analytic[0] == 6.0
    assert rep.max_rel_err < 1e-9 and rep.passed


def test_grad_check_constant_function():
    x = Tensor([1.0, 2.0], requires_grad=True)
    rep = grad_check(lambda t: ad.tsum(Tensor([5.0])), x)
    np.testing.assert_array_equal(rep.analytic, 0.0)
    np.testing.assert_array_equal(rep.numeric, 0.0)


def test_grad_check_non_finite_raises():
    x = Tensor([-1.0], requires_grad=True)
    with pytest.raises(NumericError), np.errstate(invalid="ignore"):
        grad_check(lambda t: ad.tsum(ad.log(t)), x)


def test_grad_check_flags_wrong_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)

    def f(t):
        # detached square: taped value is right, gradient is missing
        return ad.tsum(Tensor(t.data**2) + 0.0 * t)

    rep = grad_check(f, x)
    assert not rep.passed
    np.testing.assert_array_equal(rep.flagged, [0, 1])


# -- finite-difference suite over every op ----------------------------------


def _ops(rng):
    w = Tensor(rng.normal(size=(3, 3, 2, 4)))
    dw = Tensor(rng.normal(size=(5, 5, 2)))
    gamma, beta = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4))
    mat = Tensor(rng.normal(size=(4, 3)))
    other = Tensor(rng.uniform(0.5, 2.0, size=(2, 3, 4)))
    perm = rng.permutation(3)
    k1 = Tensor(rng.normal(size=3))
    row = Tensor(rng.normal(size=4))
    return {
        "add_broadcast": ((2, 3, 4), lambda t: ad.add(t, row) * other),
        "sub": ((2, 3, 4), lambda t: ad.sub(other, t)),
        "mul": ((2, 3, 4), lambda t: t * other),
        "div": ((2, 3, 4), lambda t: other / (t * t + 1.0)),
        "pow": ((2, 3, 4), lambda t: (t * t + 1.0) ** 1.5),
        "matmul": ((2, 3, 4), lambda t: t @ mat),
        "linear": ((2, 3, 4), lambda t: ad.linear(t, mat, Tensor(np.ones(3)))),
        "sum_axis": ((2, 3, 4), lambda t: ad.tsum(t, axis=1) * 1.7),
        "mean_axes": ((2, 3, 4), lambda t: ad.mean(t, axis=(0, 2), keepdims=True) * 3.0),
        "reshape_transpose": ((2, 3, 4), lambda t: ad.transpose(ad.reshape(t, (6, 4)), (1, 0)) @ Tensor(np.arange(6.0).reshape(6, 1))),
        "flip": ((2, 3, 4), lambda t: ad.flip(t, 1) * other),
        "permute": ((2, 3, 4), lambda t: ad.permute_axis(t, perm, 1) * other),
        "getitem": ((2, 3, 4), lambda t: t[:, 1:, ::2] * 2.0),
        "concat_split": ((2, 3, 4), lambda t: ad.concat(ad.split(t, 2, axis=-1)[::-1], axis=-1) * other),
        "exp": ((2, 3, 4), lambda t: ad.exp(t)),
        "log": ((2, 3, 4), lambda t: ad.log(t * t + 0.5)),
        "tanh": ((2, 3, 4), lambda t: ad.tanh(t)),
        "sigmoid": ((2, 3, 4), lambda t: ad.sigmoid(t)),
        "relu": ((2, 3, 4), lambda t: ad.relu(t)),
        "silu": ((2, 3, 4), lambda t: ad.silu(t)),
        "softplus": ((2, 3, 4), lambda t: ad.softplus(3.0 * t)),
        "expm1_ratio": ((2, 3, 4), lambda t: ad.expm1_ratio(t)),
        "expm1_ratio_small": ((2, 3, 4), lambda t: ad.expm1_ratio(t * 1e-4)),
        "square": ((2, 3, 4), lambda t: ad.square(t)),
        "layer_norm": ((2, 3, 4), lambda t: ad.layer_norm(t, gamma, beta)),
        "conv2d_s1": ((2, 5, 5, 2), lambda t: ad.conv2d(t, w, None, 1, 1)),
        "conv2d_s2": ((2, 6, 5, 2), lambda t: ad.conv2d(t, w, None, 2, 1)),
        "dwconv_5x5": ((2, 5, 5, 2), lambda t: ad.depthwise_conv2d(t, dw, None, 1, 2)),
        "dwconv_s2": ((2, 6, 6, 2), lambda t: ad.depthwise_conv2d(t, dw, None, 2, 2)),
        "channel_conv1d": ((2, 1, 5), lambda t: ad.channel_conv1d(t, k1)),
    }


def _weighted(out, rng_w):
    # random projection to a scalar so every output coordinate matters
    return ad.tsum(out * Tensor(rng_w.normal(size=out.shape)))


@pytest.mark.parametrize("name", list(_ops(np.random.default_rng(0))))
def test_input_gradients_match_finite_differences(name):
    rng = np.random.default_rng(7)
    shape, op = _ops(rng)[name]
    x = Tensor(rng.normal(size=shape), requires_grad=True)
    if name == "relu":
        x.data[np.abs(x.data) < 1e-3] = 0.5  # keep away from the kink
    rep = grad_check(lambda t: _weighted(op(t), np.random.default_rng(99)), x, step=1e-5)
    assert rep.max_rel_err <= 1e-4, (name, rep.max_rel_err)


@pytest.mark.parametrize("which", ["weight", "bias"])
@pytest.mark.parametrize("kind", ["conv2d", "depthwise"])
def test_parameter_gradients_match_finite_differences(rng, kind, which):
    x = Tensor(rng.normal(size=(2, 6, 6, 3)))
    if kind == "conv2d":
        w = param(rng, 3, 3, 3, 4)
        b = param(rng, 4)
        fn = lambda: ad.conv2d(x, w, b, 2, 1)  # noqa: E731
    else:
        w = param(rng, 3, 3, 3)
        b = param(rng, 3)
        fn = lambda: ad.depthwise_conv2d(x, w, b, 1, 1)  # noqa: E731
    theta = w if which == "weight" else b
    rep = grad_check(lambda t: _weighted(fn(), np.random.default_rng(3)), theta)
    assert rep.max_rel_err <= 1e-4


def test_layer_norm_affine_gradients(rng):
    x = Tensor(rng.normal(size=(3, 5)))
    g, b = param(rng, 5), param(rng, 5)
    for theta in (g, b):
        rep = grad_check(lambda t: _weighted(ad.layer_norm(x, g, b), np.random.default_rng(4)), theta)
        assert rep.max_rel_err <= 1e-4


def test_scan_recurrence_gradients(rng):
    a = param(rng, 2, 7, 3, 4, low=0.1, high=0.95)
    u = param(rng, 2, 7, 3, 4)
    c = param(rng, 2, 7, 4)
    for theta in (a, u, c):
        rep = grad_check(lambda t: _weighted(ad.scan_recurrence(a, u, c), np.random.default_rng(5)), theta)
        assert rep.max_rel_err <= 1e-4


def test_channel_conv1d_weight_gradient(rng):
    x = Tensor(rng.normal(size=(2, 1, 7)))
    k = param(rng, 5)
    rep = grad_check(lambda t: _weighted(ad.channel_conv1d(x, k), np.random.default_rng(6)), k)
    assert rep.max_rel_err <= 1e-4


def test_permute_rejects_non_permutation(rng):
    with pytest.raises(ShapeError):
        ad.permute_axis(Tensor(np.zeros((2, 3))), np.array([0, 0, 1]), 1)
