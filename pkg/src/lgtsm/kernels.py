"""Differentiable video kernels on [B, C, L, H, W] tensors.

Spatial convolutions run frame by frame with the batch and frame axes folded
together. Only the horizontal taps are unrolled into columns; each kernel row
is then one GEMM, so every matmul covers all frames at once.
"""
from __future__ import annotations

import numpy as np

from .autograd import Tensor, as_tensor, make_result


def _check_video(x: Tensor, name: str = "x"):
    if x.ndim != 5:
        raise ValueError(f"{name} must be 5-D [B,C,L,H,W], got shape {x.shape}")


def same_padding(kernel: int, dilation: int = 1) -> int:
    if kernel % 2 == 0:
        raise ValueError(f"'same' padding needs an odd kernel, got {kernel}")
    return dilation * (kernel - 1) // 2


def _to_padded_nhwc(a: np.ndarray, pad: int) -> np.ndarray:
    """[B,C,L,H,W] -> zero-padded channels-last frames [B*L, H+2p, W+2p, C]."""
    B, C, L, H, W = a.shape
    out = np.zeros((B * L, H + 2 * pad, W + 2 * pad, C), dtype=a.dtype)
    out[:, pad : pad + H, pad : pad + W, :] = a.transpose(0, 2, 3, 4, 1).reshape(B * L, H, W, C)
    return out


def _row_slice(i, dilation, stride, Ho):
    r0 = i * dilation
    return slice(r0, r0 + stride * (Ho - 1) + 1, stride)


def _width_cols(xp: np.ndarray, kw, stride, dilation, Wo) -> np.ndarray:
    """[..., Hp, Wp, C] -> [..., Hp, Wo, kw*C]: only the horizontal taps are unrolled.

    Each kernel row then becomes one GEMM over a row window of this array,
    which copies kh times less data than a full im2col.
    """
    C = xp.shape[-1]
    cols = np.empty(xp.shape[:-2] + (Wo, kw, C), dtype=xp.dtype)
    for j in range(kw):
        cols[..., j, :] = xp[..., _row_slice(j, dilation, stride, Wo), :]
    return cols.reshape(xp.shape[:-2] + (Wo, kw * C))


def _width_col2im(dcols: np.ndarray, shape, kw, stride, dilation, Wo) -> np.ndarray:
    C = shape[-1]
    d = dcols.reshape(dcols.shape[:-1] + (kw, C))
    out = np.zeros(shape, dtype=dcols.dtype)
    for j in range(kw):
        out[..., _row_slice(j, dilation, stride, Wo), :] += d[..., j, :]
    return out


def _weight_matrix(w: np.ndarray) -> np.ndarray:
    """[Cout,Cin,*k] -> [prod(k)*Cin, Cout] rows ordered by kernel tap, then input channel."""
    nd = w.ndim
    return w.transpose(tuple(range(2, nd)) + (1, 0)).reshape(-1, w.shape[0])


def _conv_bwd(x, w, bias, wcols, geom, g):
    B, L, pad, stride, dilation, Ho, Wo, Hp, Wp = geom
    Cout, Cin, kh, kw = w.shape
    N = B * L
    g4 = g.transpose(0, 2, 3, 4, 1).reshape(N, Ho, Wo, Cout)
    g2 = g4.reshape(-1, Cout)
    rows = [wcols[:, _row_slice(i, dilation, stride, Ho)].reshape(-1, kw * Cin) for i in range(kh)]
    gw = None
    if w.requires_grad:
        gw = np.stack([r.T @ g2 for r in rows]).reshape(kh, kw, Cin, Cout).transpose(3, 2, 0, 1)
    gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
    gx = None
    if x.requires_grad:
        wm = _weight_matrix(w.data).reshape(kh, kw * Cin, Cout)
        dwc = np.zeros(wcols.shape, dtype=g.dtype)
        for i in range(kh):
            dwc[:, _row_slice(i, dilation, stride, Ho)] += (g2 @ wm[i].T).reshape(N, Ho, Wo, kw * Cin)
        dxp = _width_col2im(dwc, (N, Hp, Wp, Cin), kw, stride, dilation, Wo)
        H, W = x.shape[3], x.shape[4]
        gx = dxp[:, pad : pad + H, pad : pad + W, :].reshape(B, L, H, W, Cin).transpose(0, 4, 1, 2, 3)
    return (gx, gw) if bias is None else (gx, gw, gb)


def conv2d_per_frame(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
                     dilation: int = 1, padding: int | str = "same") -> Tensor:
    """2-D convolution applied to every frame independently.

    ``w`` is [Cout, Cin, kh, kw]; with ``padding="same"`` (zero padding) the
    output spatial size is ceil(H / stride).
    """
    _check_video(x)
    w = as_tensor(w)
    if w.ndim != 4:
        raise ValueError(f"conv weight must be [Cout,Cin,kh,kw], got shape {w.shape}")
    B, C, L, H, W = x.shape
    Cout, Cin, kh, kw = w.shape
    if Cin != C:
        raise ValueError(f"conv2d_per_frame: weight expects Cin={Cin} channels, input has C={C}")
    if bias is not None and bias.shape != (Cout,):
        raise ValueError(f"bias must have shape ({Cout},), got {bias.shape}")
    if padding == "same":
        if kh != kw:
            raise ValueError("'same' padding needs a square kernel")
        pad = same_padding(kh, dilation)
    else:
        pad = int(padding)
    Hp, Wp = H + 2 * pad, W + 2 * pad
    Ho = (Hp - dilation * (kh - 1) - 1) // stride + 1
    Wo = (Wp - dilation * (kw - 1) - 1) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ValueError(f"conv2d_per_frame: zero-size output for input {H}x{W}, kernel {kh}x{kw}")

    wcols = _width_cols(_to_padded_nhwc(x.data, pad), kw, stride, dilation, Wo)
    wm = _weight_matrix(w.data).reshape(kh, kw * Cin, Cout)
    out = np.zeros((B * L * Ho * Wo, Cout), dtype=np.result_type(x.dtype, w.dtype))
    for i in range(kh):
        out += wcols[:, _row_slice(i, dilation, stride, Ho)].reshape(-1, kw * Cin) @ wm[i]
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(B, L, Ho, Wo, Cout).transpose(0, 4, 1, 2, 3))

    inputs = (x, w) if bias is None else (x, w, bias)
    needs = any(t.requires_grad for t in inputs)
    geom = (B, L, pad, stride, dilation, Ho, Wo, Hp, Wp)
    saved = wcols if needs else None
    return make_result(out, inputs, "conv2d_per_frame", lambda g: _conv_bwd(x, w, bias, saved, geom, g))


def conv3d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           dilation: int = 1) -> Tensor:
    """Forward-only 3-D convolution with 'same' zero padding in time and space.

    ``w`` is [Cout, Cin, kt, kh, kw]. Used for parameter and runtime
    comparisons only, so no backward rule is recorded.
    """
    _check_video(x)
    w = as_tensor(w)
    bias = None if bias is None else as_tensor(bias)
    B, C, L, H, W = x.shape
    Cout, Cin, kt, kh, kw = w.shape
    if Cin != C:
        raise ValueError(f"conv3d: weight expects Cin={Cin} channels, input has C={C}")
    pt = same_padding(kt)
    ps = same_padding(kh, dilation)
    xp = np.zeros((B, L + 2 * pt, H + 2 * ps, W + 2 * ps, C), dtype=x.dtype)
    xp[:, pt : pt + L, ps : ps + H, ps : ps + W] = x.data.transpose(0, 2, 3, 4, 1)
    Ho = (H + 2 * ps - dilation * (kh - 1) - 1) // stride + 1
    Wo = (W + 2 * ps - dilation * (kw - 1) - 1) // stride + 1
    wcols = _width_cols(xp, kw, stride, dilation, Wo)
    wm = _weight_matrix(w.data).reshape(kt, kh, kw * C, Cout)
    out = np.zeros((B * L * Ho * Wo, Cout), dtype=np.result_type(x.dtype, w.dtype))
    for a in range(kt):
        for i in range(kh):
            out += wcols[:, a : a + L, _row_slice(i, dilation, stride, Ho)].reshape(-1, kw * C) @ wm[a, i]
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(B, L, Ho, Wo, Cout).transpose(0, 4, 1, 2, 3))
    return Tensor(out)


def _tconv_bwd(x, k, xp, g):
    K = k.shape[1]
    L = x.shape[2]
    gx = gk = None
    if x.requires_grad:
        gxp = np.zeros_like(xp)
        for j in range(K):
            gxp[:, :, j : j + L] += k.data[None, :, j, None, None, None] * g
        p = (K - 1) // 2
        gx = gxp[:, :, p : p + L]
    if k.requires_grad:
        gk = np.empty(k.shape, dtype=k.dtype)
        for j in range(K):
            gk[:, j] = np.einsum("bclhw,bclhw->c", g, xp[:, :, j : j + L])
    return gx, gk


def temporal_conv1d_depthwise(x: Tensor, k: Tensor) -> Tensor:
    """Per-channel temporal correlation with zero-padded sequence ends.

    out[b,c,t] = sum_j k[c,j] * x[b,c,t+j-(K-1)/2]
    """
    _check_video(x)
    k = as_tensor(k, like=x)
    B, C, L, H, W = x.shape
    if k.ndim != 2 or k.shape[0] != C:
        raise ValueError(f"temporal kernels must be [C={C}, K], got shape {k.shape}")
    K = k.shape[1]
    if K % 2 == 0:
        raise ValueError(f"temporal kernel size must be odd, got K={K}")
    if K > 2 * L - 1:
        raise ValueError(f"temporal kernel size K={K} exceeds 2L-1={2 * L - 1}")
    p = (K - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (0, 0), (0, 0))) if p else x.data
    out = np.zeros(x.shape, dtype=np.result_type(x.dtype, k.dtype))
    for j in range(K):
        out += k.data[None, :, j, None, None, None] * xp[:, :, j : j + L]
    return make_result(out, (x, k), "temporal_conv1d_depthwise", lambda g: _tconv_bwd(x, k, xp, g))


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Linear interpolation weights [n_out, n_in], half-pixel centers."""
    A = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        A[o, i0] += 1.0 - frac
        A[o, i1] += frac
    return A


def _resize_bwd(Ah, Aw, g):
    return (np.einsum("oh,bclhw,pw->bclop", Ah.T, g, Aw.T, optimize=True),)


def bilinear_resize(x: Tensor, H2: int, W2: int) -> Tensor:
    """Per-frame bilinear resampling (align_corners off, edge clamped)."""
    _check_video(x)
    if H2 < 1 or W2 < 1:
        raise ValueError(f"target size must be positive, got {H2}x{W2}")
    H, W = x.shape[3:]
    Ah = interp_matrix(H, H2, x.dtype)
    Aw = interp_matrix(W, W2, x.dtype)
    out = np.einsum("oh,bclhw,pw->bclop", Ah, x.data, Aw, optimize=True)
    return make_result(out, (x,), "bilinear_resize", lambda g: _resize_bwd(Ah, Aw, g))


def _gram_bwd(F, denom, shape, g):
    dF = ((g + np.swapaxes(g, -1, -2)) @ F) / denom
    B, Cp, L, Hp, Wp = shape
    return (dF.reshape(B, L, Cp, Hp, Wp).transpose(0, 2, 1, 3, 4),)


def gram_matrix(feat: Tensor) -> Tensor:
    """Channel auto-correlation per batch item and frame -> [B, L, Cp, Cp].

    Normalised by Cp*Hp*Wp.
    """
    _check_video(feat, "feat")
    B, Cp, L, Hp, Wp = feat.shape
    F = feat.data.transpose(0, 2, 1, 3, 4).reshape(B, L, Cp, Hp * Wp)
    denom = Cp * Hp * Wp
    G = (F @ np.swapaxes(F, -1, -2)) / denom
    return make_result(G, (feat,), "gram_matrix", lambda g: _gram_bwd(F, denom, feat.shape, g))
