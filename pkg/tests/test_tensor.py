import numpy as np
import pytest

from core.gradcheck import check_gradients
from core.tensor import (
    Tape, Tensor, absolute, add, backward, channel_concat, channel_split, elementwise, gelu,
    mean_all, mul, no_grad, relu, scalar_mul, sigmoid, sub, sum_all,
)
from utils.errors import DimensionError, TensorIndexError, UsageError

SEEDS = [0, 1, 2, 3, 4]


def tie_free(rng, shape, margin=0.05):
    """Random values kept away from 0 so kinks are never straddled"""
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def test_tensor_basics():
    t = Tensor(np.arange(6, dtype=np.float32).reshape(1, 1, 2, 3), requires_grad=True)
    assert t.shape == (1, 1, 2, 3)
    assert t.numel == 6
    assert t.dtype == np.float32
    assert t.is_leaf
    assert Tensor([1, 2, 3]).dtype == np.float32


def test_unsupported_dtype_rejected():
    with pytest.raises(UsageError):
        Tensor(np.zeros(2), dtype=np.int32)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_binary_ops_gradients(seed, op):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((2, 3, 4, 5))
    b = rng.standard_normal((2, 3, 4, 5))
    report = check_gradients(lambda x, y: elementwise(op, x, y), [a, b], seed=seed)
    assert report.passed, report.summary()


@pytest.mark.parametrize("seed", SEEDS)
def test_per_channel_broadcast_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 4, 4))
    bias = rng.standard_normal(3)
    gate = rng.standard_normal((2, 3, 1, 1))
    report = check_gradients(lambda a, b, g: mul(add(a, b), g), [x, bias, gate], seed=seed)
    assert report.passed, report.summary()


def test_per_channel_broadcast_values():
    x = Tensor(np.zeros((1, 3, 2, 2)))
    out = add(x, Tensor(np.array([1.0, 2.0, 3.0])))
    np.testing.assert_array_equal(out.data[0, :, 0, 0], [1.0, 2.0, 3.0])


def test_broadcast_mismatch_names_axis():
    a = Tensor(np.zeros((1, 3, 4, 4)))
    b = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(DimensionError, match="axis 1"):
        add(a, b)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("fn", [gelu, sigmoid, relu, absolute, lambda x: scalar_mul(x, -2.5)])
def test_unary_ops_gradients(seed, fn):
    rng = np.random.default_rng(seed)
    report = check_gradients(fn, [tie_free(rng, (1, 2, 3, 4))], seed=seed)
    assert report.passed, report.summary()


def test_gelu_values():
    x = np.array([-3.0, -1.0, 0.0, 1.0, 3.0])
    expected = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))
    np.testing.assert_allclose(gelu(Tensor(x)).data, expected, rtol=1e-12)


def test_sigmoid_is_stable_at_extremes():
    y = sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [0.0, 0.5, 1.0])


def test_elementwise_rejects_unknown_op():
    with pytest.raises(UsageError, match="Unknown"):
        elementwise("tan", Tensor(np.zeros(1)))


@pytest.mark.parametrize("seed", SEEDS)
def test_reduction_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, 3, 3))
    assert check_gradients(sum_all, [x], seed=seed).passed
    assert check_gradients(mean_all, [x], seed=seed).passed


def test_reductions_return_rank4_scalar():
    x = Tensor(np.ones((2, 3, 4, 5)))
    assert sum_all(x).shape == (1, 1, 1, 1)
    assert sum_all(x).item() == 120.0
    assert mean_all(x).item() == 1.0


@pytest.mark.parametrize("seed", SEEDS)
def test_concat_and_split_gradients(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((1, 2, 3, 3))
    b = rng.standard_normal((1, 3, 3, 3))

    def fn(x, y):
        first, second = channel_split(channel_concat([x, y, x]), 3)
        return channel_concat([second, first])

    report = check_gradients(fn, [a, b], seed=seed)
    assert report.passed, report.summary()


def test_concat_mismatch_names_axis():
    with pytest.raises(DimensionError, match="axis 2"):
        channel_concat([Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 2)))])


@pytest.mark.parametrize("boundary", [0, 4, -1])
def test_split_out_of_range(boundary):
    with pytest.raises(TensorIndexError):
        channel_split(Tensor(np.zeros((1, 4, 2, 2))), boundary)


def test_split_error_is_index_error():
    with pytest.raises(IndexError):
        channel_split(Tensor(np.zeros((1, 4, 2, 2))), 9)


def test_backward_without_tape():
    with pytest.raises(UsageError, match="no tape"):
        backward(Tensor(np.ones((1, 1, 1, 1))))


def test_backward_needs_scalar():
    x = Tensor(np.ones((1, 2, 2, 2)), requires_grad=True)
    with pytest.raises(DimensionError):
        scalar_mul(x, 2.0).backward()


def test_gradients_accumulate_on_reused_leaf():
    x = Tensor(np.full((1, 1, 1, 1), 3.0), requires_grad=True)
    sum_all(add(mul(x, x), x)).backward()
    assert x.grad.item() == pytest.approx(7.0)
    sum_all(x).backward()
    assert x.grad.item() == pytest.approx(8.0)
    x.zero_grad()
    assert x.grad is None


def test_tape_is_topological():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    y = gelu(mul(x, x))
    loss = sum_all(sub(y, x))
    ops = Tape.collect(loss).ops()
    assert ops.index("mul") < ops.index("gelu") < ops.index("sub") < ops.index("sum")


def test_no_grad_records_nothing():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with no_grad():
        y = mul(x, x)
    assert y.node is None and not y.requires_grad
    assert mul(x, x).node is not None


def test_operators_match_functions():
    a = Tensor(np.array([1.0, 2.0]))
    b = Tensor(np.array([3.0, 5.0]))
    np.testing.assert_array_equal((a + b).data, [4.0, 7.0])
    np.testing.assert_array_equal((a - b).data, [-2.0, -3.0])
    np.testing.assert_array_equal((a * b).data, [3.0, 10.0])
    np.testing.assert_array_equal((-a).data, [-1.0, -2.0])


def test_five_point_stencil_resolves_steep_sigmoid():
    # slope 6.3, third derivative ~8.4e3 at this point
    def steep(a):
        return sigmoid(scalar_mul(a, 60.0))

    x = np.array([2.0 / 60.0])
    assert not check_gradients(steep, [x]).passed
    report = check_gradients(steep, [x], order=4)
    assert report.passed, report.summary()
    assert report.max_rel_error < 1e-5


def test_negligible_gradients_do_not_set_relative_error(rng):
    x = rng.standard_normal((1, 2, 3, 3))
    tiny = rng.standard_normal((1, 2, 3, 3))
    report = check_gradients(lambda a, b: add(mul(a, a), scalar_mul(b, 1e-9)), [x, tiny])
    assert report.passed, report.summary()
    assert report.max_rel_error < 1e-6


def test_unknown_stencil_order():
    with pytest.raises(ValueError, match="order"):
        check_gradients(sum_all, [np.ones((1, 1, 2, 2))], order=3)
