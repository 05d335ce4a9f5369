import numpy as np
import pytest

from core.attention_ops import (
    SHIFT_MASK_VALUE, cyclic_shift, layer_norm, matmul, merge_heads, shifted_window_mask, softmax,
    split_heads, window_partition, window_reverse,
)
from core.gradcheck import check_gradients
from core.tensor import Tensor
from utils.errors import DimensionError

SEEDS = [0, 1, 2, 3, 4]


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("transpose_b", [False, True])
def test_matmul_gradients(seed, transpose_b):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((3, 2, 4, 5))
    b = rng.standard_normal((1, 2, 6, 5) if transpose_b else (1, 2, 5, 6))
    report = check_gradients(lambda x, y: matmul(x, y, transpose_b), [a, b], seed=seed)
    assert report.passed, report.summary()


def test_matmul_values_and_errors():
    a = np.arange(6, dtype=np.float64).reshape(1, 1, 2, 3)
    b = np.arange(12, dtype=np.float64).reshape(1, 1, 3, 4)
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, a @ b)
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(a), transpose_b=True).data, a @ a.swapaxes(-1, -2))
    with pytest.raises(DimensionError, match="inner axis"):
        matmul(Tensor(a), Tensor(a))


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 4, 7)) * 3
    y = softmax(Tensor(x)).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
    assert check_gradients(softmax, [x], seed=seed).passed


def test_softmax_large_logits_finite():
    y = softmax(Tensor(np.array([[[[1000.0, 0.0, -1000.0]]]]))).data
    np.testing.assert_allclose(y.reshape(-1), [1.0, 0.0, 0.0])


@pytest.mark.parametrize("seed", SEEDS)
def test_layer_norm(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 6, 3, 4)) * 2 + 1
    gamma = rng.standard_normal(6)
    beta = rng.standard_normal(6)
    plain = layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    np.testing.assert_allclose(plain.mean(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(plain.var(axis=1), 1.0, atol=1e-4)
    report = check_gradients(layer_norm, [x, gamma, beta], seed=seed)
    assert report.passed, report.summary()


def test_layer_norm_param_shape():
    with pytest.raises(DimensionError):
        layer_norm(Tensor(np.zeros((1, 4, 2, 2))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


def test_window_partition_layout():
    x = np.arange(2 * 3 * 4 * 6, dtype=np.float64).reshape(2, 3, 4, 6)
    windows = window_partition(Tensor(x), 2).data
    assert windows.shape == (2 * 2 * 3, 1, 4, 3)
    # window (n=1, row 1, col 2) holds pixels rows 2..3, cols 4..5
    idx = 1 * 6 + 1 * 3 + 2
    expected = x[1, :, 2:4, 4:6].reshape(3, 4).T
    np.testing.assert_array_equal(windows[idx, 0], expected)
    np.testing.assert_array_equal(window_reverse(Tensor(windows), 2, 4, 6).data, x)


def test_window_partition_needs_divisible_size():
    with pytest.raises(DimensionError, match="axis 3"):
        window_partition(Tensor(np.zeros((1, 1, 4, 6))), 4)


@pytest.mark.parametrize("seed", SEEDS)
def test_window_and_head_rearrangement_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 4, 4, 8))

    def fn(a):
        w = merge_heads(split_heads(window_partition(cyclic_shift(a, -2, -2), 4), 2))
        return cyclic_shift(window_reverse(w, 4, 4, 8), 2, 2)

    np.testing.assert_array_equal(fn(Tensor(x)).data, x)
    report = check_gradients(fn, [x], seed=seed)
    assert report.passed, report.summary()


def test_split_heads_layout():
    x = np.arange(2 * 3 * 4, dtype=np.float64).reshape(2, 1, 3, 4)
    heads = split_heads(Tensor(x), 2).data
    assert heads.shape == (2, 2, 3, 2)
    np.testing.assert_array_equal(heads[:, 1], x[:, 0, :, 2:])
    with pytest.raises(DimensionError):
        split_heads(Tensor(x), 3)


def region_labels(h, w, window, shift):
    labels = np.zeros((h, w), dtype=int)
    for i in range(h):
        for j in range(w):
            ri = 0 if i < h - window else (1 if i < h - shift else 2)
            rj = 0 if j < w - window else (1 if j < w - shift else 2)
            labels[i, j] = ri * 3 + rj
    return labels


@pytest.mark.parametrize("h,w,window", [(8, 8, 4), (8, 12, 4), (12, 8, 4)])
def test_shifted_window_mask_matches_region_oracle(h, w, window):
    shift = window // 2
    mask = shifted_window_mask(h, w, window, shift)
    labels = region_labels(h, w, window, shift)
    nh, nw = h // window, w // window
    assert mask.shape == (nh * nw, 1, window * window, window * window)
    for wi in range(nh):
        for wj in range(nw):
            tile = labels[wi * window:(wi + 1) * window, wj * window:(wj + 1) * window].reshape(-1)
            expected = np.where(tile[:, None] == tile[None, :], 0.0, SHIFT_MASK_VALUE)
            np.testing.assert_array_equal(mask[wi * nw + wj, 0], expected)
    # only windows touching the wrapped border are masked
    assert np.all(mask[0] == 0.0)
    assert np.any(mask[-1] == SHIFT_MASK_VALUE)
