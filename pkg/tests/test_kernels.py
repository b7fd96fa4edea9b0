import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lgtsm import autograd as ag
from lgtsm.autograd import Tensor
from lgtsm.gradcheck import check_grad
from lgtsm.kernels import (bilinear_resize, conv2d_per_frame, conv3d, gram_matrix, interp_matrix,
                           temporal_conv1d_depthwise)


def brute_conv2d(x, w, b, stride=1, dilation=1):
    """Direct loop over output pixels with 'same' zero padding."""
    B, C, L, H, W = x.shape
    Co, _, k, _ = w.shape
    p = dilation * (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (p, p), (p, p)))
    Ho = (H + 2 * p - dilation * (k - 1) - 1) // stride + 1
    Wo = (W + 2 * p - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((B, Co, L, Ho, Wo))
    for i in range(Ho):
        for j in range(Wo):
            r, c = i * stride, j * stride
            patch = xp[:, :, :, r : r + dilation * (k - 1) + 1 : dilation, c : c + dilation * (k - 1) + 1 : dilation]
            out[:, :, :, i, j] = np.einsum("bclyx,ocyx->bol", patch, w) + b[None, :, None]
    return out


@pytest.mark.parametrize("stride,dilation,k", [(1, 1, 3), (2, 1, 3), (1, 2, 3), (1, 1, 5), (2, 1, 5), (1, 4, 3)])
def test_conv2d_matches_brute_force(stride, dilation, k):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 2, 9, 8))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    got = conv2d_per_frame(Tensor(x), Tensor(w), Tensor(b), stride=stride, dilation=dilation).data
    assert np.allclose(got, brute_conv2d(x, w, b, stride, dilation), atol=1e-12)


def test_conv2d_frozen_values():
    # 3x3 ones kernel over a 3x3 ramp: each output sums its zero-padded neighbourhood
    x = np.arange(9.0).reshape(1, 1, 1, 3, 3)
    out = conv2d_per_frame(Tensor(x), Tensor(np.ones((1, 1, 3, 3)))).data[0, 0, 0]
    assert np.array_equal(out, [[8, 15, 12], [21, 36, 27], [20, 33, 24]])


def test_conv2d_is_per_frame():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 4, 6, 6))
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    full = conv2d_per_frame(Tensor(x), w).data
    for t in range(4):
        single = conv2d_per_frame(Tensor(x[:, :, t : t + 1]), w).data
        assert np.array_equal(full[:, :, t : t + 1], single)


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ValueError, match="Cin=2"):
        conv2d_per_frame(Tensor(np.zeros((1, 3, 1, 4, 4))), Tensor(np.zeros((1, 2, 3, 3))))


def test_conv2d_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((1, 2, 2, 5, 5)))
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    b = Tensor(rng.standard_normal(3))
    err, n = check_grad(lambda: conv2d_per_frame(x, w, b, stride=2, dilation=1), [x, w, b])
    assert n > 0 and err < 1e-6


def test_conv3d_with_centre_only_temporal_tap_equals_conv2d():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 3, 6, 6))
    w2 = rng.standard_normal((4, 2, 3, 3))
    w3 = np.zeros((4, 2, 3, 3, 3))
    w3[:, :, 1] = w2
    a = conv3d(Tensor(x), w3).data
    b = conv2d_per_frame(Tensor(x), Tensor(w2)).data
    assert np.allclose(a, b, atol=1e-12)


def test_conv3d_zero_pads_time():
    x = np.ones((1, 1, 3, 4, 4))
    w = np.zeros((1, 1, 3, 1, 1))
    w[0, 0, 0] = 1.0  # read the previous frame
    out = conv3d(Tensor(x), w).data[0, 0]
    assert np.array_equal(out[0], np.zeros((4, 4)))
    assert np.array_equal(out[1:], np.ones((2, 4, 4)))


def test_temporal_conv_frozen_values():
    x = np.arange(1.0, 5.0).reshape(1, 1, 4, 1, 1)
    k = np.array([[1.0, 10.0, 100.0]])  # out[t] = x[t-1] + 10 x[t] + 100 x[t+1]
    out = temporal_conv1d_depthwise(Tensor(x), Tensor(k)).data.ravel()
    assert np.array_equal(out, [210.0, 321.0, 432.0, 43.0])


def test_temporal_conv_rejects_oversized_kernel():
    with pytest.raises(ValueError, match="exceeds"):
        temporal_conv1d_depthwise(Tensor(np.zeros((1, 1, 2, 1, 1))), Tensor(np.zeros((1, 5))))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9))
def test_interp_rows_are_convex_weights(n_in, n_out):
    A = interp_matrix(n_in, n_out)
    assert np.allclose(A.sum(axis=1), 1.0)
    assert (A >= 0).all()


def test_resize_preserves_constants_and_is_identity_at_same_size():
    x = np.full((1, 2, 2, 4, 6), 0.7)
    assert np.allclose(bilinear_resize(Tensor(x), 8, 3).data, 0.7)
    y = np.random.default_rng(4).standard_normal((1, 1, 1, 5, 5))
    assert np.allclose(bilinear_resize(Tensor(y), 5, 5).data, y, atol=1e-15)


def test_resize_down2_averages_pixel_pairs():
    x = np.arange(16.0).reshape(1, 1, 1, 4, 4)
    out = bilinear_resize(Tensor(x), 2, 2).data[0, 0, 0]
    assert np.array_equal(out, [[2.5, 4.5], [10.5, 12.5]])


def test_gram_matrix_brute_force():
    rng = np.random.default_rng(5)
    f = rng.standard_normal((2, 3, 2, 4, 5))
    G = gram_matrix(Tensor(f)).data
    for b in range(2):
        for t in range(2):
            F = f[b, :, t].reshape(3, -1)
            assert np.allclose(G[b, t], F @ F.T / (3 * 20))


def test_resize_and_gram_gradients():
    rng = np.random.default_rng(6)
    x = Tensor(rng.standard_normal((1, 2, 2, 6, 4)))
    assert check_grad(lambda: bilinear_resize(x, 3, 8), [x])[0] < 1e-6
    assert check_grad(lambda: gram_matrix(x), [x])[0] < 1e-6
    k = Tensor(rng.standard_normal((2, 3)))
    assert check_grad(lambda: temporal_conv1d_depthwise(x, k), [x, k])[0] < 1e-6
    with ag.no_grad():
        assert not temporal_conv1d_depthwise(x, k).requires_grad
