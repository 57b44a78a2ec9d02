import numpy as np
import pytest

from rccr import autodiff as ad


def _leaf(shape, rng, low=-1.0, high=1.0):
    return ad.Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def test_forward_examples():
    np.testing.assert_array_equal(ad.add([1.0, 2.0], [3.0, 4.0]).data, [4.0, 6.0])
    np.testing.assert_array_equal(ad.softmax([0.0, 0.0]).data, [0.5, 0.5])
    np.testing.assert_array_equal(ad.reverse(ad.tensor([1.0, 2.0, 3.0]), 0).data, [3.0, 2.0, 1.0])
    np.testing.assert_array_equal(ad.permute(ad.tensor([[1.0, 2.0, 3.0]]), (2, 1, 0)).data, [[3.0, 2.0, 1.0]])


def test_backward_examples():
    x = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    grads = ad.backward(ad.sum_(x * x))
    np.testing.assert_array_equal(grads[id(x)], [2.0, 4.0, 6.0])
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    y = ad.Tensor([1.0, 2.0], requires_grad=True)
    (g,) = ad.grad(ad.sum_(ad.tensor([5.0, 6.0])), [y])
    np.testing.assert_array_equal(g, [0.0, 0.0])


def test_skl_gradient_vanishes_at_symmetric_point():
    z = ad.Tensor([0.3, -1.0, 2.0, 0.1], requires_grad=True)
    p = ad.softmax(z, 2.0)
    q = ad.softmax(z, 2.0)
    root = ad.sum_((p - q) * (ad.log(p) - ad.log(q)))
    (g,) = ad.grad(root, [z])
    np.testing.assert_array_equal(g, np.zeros(4))


def test_non_scalar_root_rejected():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(x * 2.0)


def test_dimension_errors_name_the_op():
    with pytest.raises(ad.DimensionError, match="add"):
        ad.add(np.ones(3), np.ones(4))
    with pytest.raises(ad.DimensionError, match="matmul"):
        ad.matmul(np.ones((2, 3)), np.ones((4, 5)))
    with pytest.raises(ad.DimensionError, match="conv1d"):
        ad.conv1d(np.ones((1, 5, 4)), np.ones((3, 3, 2)))


def test_non_finite_values_raise():
    with pytest.raises(FloatingPointError):
        ad.log(ad.tensor([0.0, 1.0]))
    with pytest.raises(FloatingPointError):
        ad.exp(ad.tensor([1000.0]))
    with pytest.raises(ValueError):
        ad.log1p(ad.tensor([-0.5]))


def test_no_grad_records_nothing():
    x = ad.Tensor([1.0], requires_grad=True)
    with ad.no_grad():
        y = x * 3.0
    assert y.parents == () and not y.requires_grad


def test_grad_accumulates_over_shared_use():
    x = ad.Tensor([2.0], requires_grad=True)
    (g,) = ad.grad(ad.sum_(x * x * x + x), [x])
    np.testing.assert_allclose(g, [13.0])


def test_grad_check_sum_of_squares():
    x = ad.Tensor(np.random.default_rng(0).normal(size=5))
    assert ad.grad_check(lambda t: ad.sum_(t * t), x, eps=1e-5) <= 1e-6


def test_grad_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        ad.grad_check(lambda t: ad.sum_(t), ad.tensor([1.0]), eps=0.5)


OPS = {
    "mul-broadcast": (lambda a: ad.mean(a * ad.tensor([1.5, -2.0, 0.5])), (4, 3)),
    "div": (lambda a: ad.mean(ad.div(1.0, a + 3.0)), (3, 2)),
    "power": (lambda a: ad.mean(ad.power(a + 3.0, 1.7)), (5,)),
    "exp": (lambda a: ad.mean(ad.exp(a)), (5,)),
    "log": (lambda a: ad.mean(ad.log(a + 2.0)), (5,)),
    "log1p": (lambda a: ad.mean(ad.log1p(a + 1.5)), (5,)),
    "gelu": (lambda a: ad.mean(ad.gelu(a)), (6,)),
    "huber": (lambda a: ad.mean(ad.huber(a * 3.0, 1.0)), (7,)),
    "softmax": (lambda a: ad.sum_(ad.softmax(a, 2.0) * ad.tensor([1.0, 2.0, -1.0])), (2, 3)),
    "log_softmax": (lambda a: ad.mean(ad.log_softmax(a, 1.0) * ad.tensor([1.0, 0.0, 0.0])), (2, 3)),
    "matmul": (lambda a: ad.mean(ad.square(a @ ad.tensor(np.arange(12.0).reshape(3, 4) / 10))), (2, 3)),
    "reverse-permute": (
        lambda a: ad.mean(ad.permute(ad.reverse(a, -2), (1, 0)) * ad.tensor(np.arange(6.0).reshape(3, 2))),
        (3, 2),
    ),
    "getitem-concat": (lambda a: ad.mean(ad.square(ad.concat([a[0], a[1:2].reshape(-1)], 0))), (3, 2)),
    "transpose": (lambda a: ad.mean(ad.transpose(a, (1, 0)) * ad.tensor(np.arange(6.0).reshape(2, 3))), (3, 2)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    fn, shape = OPS[name]
    x = _leaf(shape, np.random.default_rng(len(name)))
    assert ad.grad_check(fn, x, eps=1e-6) <= 1e-6


def test_conv_pool_gradients():
    rng = np.random.default_rng(5)
    x = _leaf((2, 12, 4), rng)
    w = _leaf((5, 4, 3), rng)
    b = _leaf((3,), rng)

    def f(ts):
        h = ad.conv1d(ts[0], ts[1], ts[2], stride=1)
        h = ad.maxpool1d(ad.relu(h), 3)
        return ad.mean(ad.square(h))

    assert ad.grad_check(f, [x, w, b], eps=1e-5) <= 1e-5

    def g(ts):
        h = ad.conv1d(ts[0], ts[1], ts[2], stride=2)
        return ad.mean(ad.square(ad.adaptive_meanpool1d(ad.gelu(h), 4)))

    assert ad.grad_check(g, [x, w, b], eps=1e-5) <= 1e-5


def test_adaptive_bins_are_mirror_symmetric():
    for length in range(2, 40):
        for bins in range(1, length + 1):
            spans = ad.adaptive_bins(length, bins)
            assert spans[0][0] == 0 and spans[-1][1] == length
            for b, (s, e) in enumerate(spans):
                ms, me = spans[bins - 1 - b]
                assert (s, e) == (length - me, length - ms)


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1, 6, 2))
    w = rng.normal(size=(3, 2, 1))
    out = ad.conv1d(x, w).data[0, :, 0]
    xp = np.pad(x[0], ((1, 1), (0, 0)))
    direct = [np.sum(xp[t : t + 3] * w[:, :, 0]) for t in range(6)]
    np.testing.assert_allclose(out, direct, rtol=1e-12)
