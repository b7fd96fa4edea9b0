"""Temporal shift, learnable shift kernels, gated convolution and spectral norm.

Channel layout of a shifted activation with C channels and shift fraction f:
``[0, n)`` forward group (frame t reads t-1), ``[n, 2n)`` backward group
(frame t reads t+1), ``[2n, C)`` static group, where n = floor(C*f/2).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor, make_result
from .kernels import bilinear_resize, conv2d_per_frame, temporal_conv1d_depthwise
from .module import Module

FIXED = "fixed_tsm"
LEARNABLE = "learnable"


@dataclass(frozen=True)
class ShiftSpec:
    fraction: Fraction = Fraction(1, 4)
    causal: bool = False
    mode: str = LEARNABLE

    def __post_init__(self):
        frac = Fraction(self.fraction).limit_denominator(1 << 16)
        object.__setattr__(self, "fraction", frac)
        if not 0 <= frac <= 1:
            raise ValueError(f"shift fraction must lie in [0, 1], got {frac}")
        if self.mode not in (FIXED, LEARNABLE):
            raise ValueError(f"unknown shift mode {self.mode!r}")

    def group_size(self, channels: int) -> int:
        return int(channels * self.fraction / 2)

    def groups(self, channels: int):
        """(forward, backward, static) channel slices."""
        n = self.group_size(channels)
        return slice(0, n), slice(n, 2 * n), slice(2 * n, channels)


def _shift_np(a: np.ndarray, spec: ShiftSpec, reverse: bool = False) -> np.ndarray:
    fwd, bwd, static = spec.groups(a.shape[1])
    out = np.zeros_like(a)
    # reverse=True applies the adjoint, used by the backward rule
    src_f, dst_f = (slice(1, None), slice(None, -1)) if reverse else (slice(None, -1), slice(1, None))
    out[:, fwd, dst_f] = a[:, fwd, src_f]
    if spec.causal:
        out[:, bwd] = a[:, bwd]
    else:
        out[:, bwd, src_f] = a[:, bwd, dst_f]
    out[:, static] = a[:, static]
    return out


def _shift_bwd(spec, g):
    return (_shift_np(g, spec, reverse=True),)


def temporal_shift_fixed(x: Tensor, spec: ShiftSpec) -> Tensor:
    """Zero-parameter TSM: move the forward/backward groups one frame in time."""
    if x.ndim != 5:
        raise ValueError(f"temporal shift expects [B,C,L,H,W], got shape {x.shape}")
    return make_result(_shift_np(x.data, spec), (x,), "temporal_shift_fixed", lambda g: _shift_bwd(spec, g))


def _expand_bwd(index, n_rows, g):
    out = np.zeros((n_rows,) + g.shape[1:], dtype=g.dtype)
    np.add.at(out, index, g)
    return (out,)


def _expand_rows(k: Tensor, index: np.ndarray) -> Tensor:
    return make_result(k.data[index], (k,), "expand_rows", lambda g: _expand_bwd(index, k.shape[0], g))


class LearnableShiftKernels(Module):
    """Temporal kernels of odd size K, one per channel by default.

    With ``grouped=True`` only three kernels are stored (forward, backward and
    static role) and shared by every channel of that role.
    """

    def __init__(self, channels: int, kernel_size: int = 3, spec: ShiftSpec | None = None,
                 grouped: bool = False, trainable: bool = True, dtype=np.float64):
        super().__init__()
        if kernel_size % 2 == 0 or kernel_size < 1:
            raise ValueError(f"shift kernel size must be odd and positive, got {kernel_size}")
        self.channels = channels
        self.kernel_size = kernel_size
        self.spec = spec or ShiftSpec()
        self.grouped = grouped
        self.trainable = trainable
        rows = 3 if grouped else channels
        self.weight = Parameter(np.zeros((rows, kernel_size), dtype=dtype))
        self.weight.requires_grad = trainable
        fwd, bwd, static = self.spec.groups(channels)
        role = np.full(channels, 2, dtype=np.int64)
        role[fwd] = 0
        role[bwd] = 1
        object.__setattr__(self, "_role", role)
        init_tsm_equivalent(self, self.spec)

    def channel_kernels(self) -> Tensor:
        """[C, K] kernels, with future taps masked in causal mode."""
        k = _expand_rows(self.weight, self._role) if self.grouped else self.weight
        if self.spec.causal:
            p = self.kernel_size // 2
            mask = np.ones(self.kernel_size, dtype=k.dtype)
            mask[p + 1 :] = 0
            k = ag.mul(k, mask)
        return k


def init_tsm_equivalent(kernels: LearnableShiftKernels, spec: ShiftSpec | None = None) -> LearnableShiftKernels:
    """Set kernels so the learnable shift reproduces the fixed shift exactly.

    Forward-group channels get a delta one tap before centre, backward-group
    one tap after (centre in causal mode, matching the causal fixed shift),
    static channels the centred delta.
    """
    spec = spec or kernels.spec
    K = kernels.kernel_size
    p = K // 2
    w = np.zeros(kernels.weight.shape, dtype=kernels.weight.dtype)
    if kernels.grouped:
        rows = {0: 0, 1: 1, 2: 2}
        fwd, bwd, static = [rows[0]], [rows[1]], [rows[2]]
    else:
        fwd, bwd, static = spec.groups(kernels.channels)
    if K >= 3:
        w[fwd, p - 1] = 1.0
        w[bwd, p if spec.causal else p + 1] = 1.0
    else:
        # K == 1 cannot express a shift
        w[fwd, p] = 1.0
        w[bwd, p] = 1.0
    w[static, p] = 1.0
    kernels.weight.data[...] = w
    return kernels


def learnable_temporal_shift(x: Tensor, kernels: LearnableShiftKernels) -> Tensor:
    return temporal_conv1d_depthwise(x, kernels.channel_kernels())


# -- spectral normalisation -------------------------------------------------
class SpectralNormState:
    """Persistent power-iteration vectors for one weight.

    ``init_iterations`` steps are run against ``weight`` up front so that a
    frozen (eval-mode) state already gives a positive estimate.
    """

    def __init__(self, weight: np.ndarray, rng: np.random.Generator, power_iterations: int = 1,
                 init_iterations: int = 3, eps: float = 1e-12):
        W = weight.reshape(weight.shape[0], -1)
        self.u = _l2n(rng.standard_normal(W.shape[0]).astype(weight.dtype))
        self.v = _l2n(rng.standard_normal(W.shape[1]).astype(weight.dtype))
        self.power_iterations = power_iterations
        self.eps = eps
        power_iterate(W, self, init_iterations)

    @classmethod
    def wrap(cls, u: np.ndarray, v: np.ndarray, power_iterations: int = 1) -> "SpectralNormState":
        """View over existing buffers; updates write through."""
        st = cls.__new__(cls)
        st.u, st.v = u, v
        st.power_iterations = power_iterations
        st.eps = 1e-12
        return st


def _l2n(a, eps=1e-12):
    return a / (np.linalg.norm(a) + eps)


def power_iterate(W: np.ndarray, state: SpectralNormState, n: int) -> None:
    for _ in range(n):
        state.v[...] = _l2n(W.T @ state.u, state.eps)
        state.u[...] = _l2n(W @ state.v, state.eps)


def _sn_bwd(w, sigma, u, v, g):
    if sigma is None:
        return (g / SN_FLOOR,)
    dot = float(np.sum(g * w.data))
    gw = g / sigma - (dot / sigma ** 2) * np.outer(u, v).reshape(w.shape)
    return (gw,)


SN_FLOOR = 1e-12


def spectral_normalize(w: Tensor, state: SpectralNormState, update: bool = True) -> Tensor:
    """Return ``w / sigma`` with sigma = u^T W v from persisted power iteration.

    With ``update`` the vectors are advanced ``state.power_iterations`` steps
    first. The gradient treats u and v as constants but differentiates sigma.
    """
    W = w.data.reshape(w.shape[0], -1)
    if update:
        power_iterate(W, state, state.power_iterations)
    u, v = state.u.copy(), state.v.copy()
    sigma = float(u @ W @ v)
    if sigma <= SN_FLOOR:
        # degenerate (e.g. all-zero) weight: leave it unscaled in magnitude
        out = w.data / SN_FLOOR
        return make_result(out, (w,), "spectral_normalize", lambda g: _sn_bwd(w, None, u, v, g))
    out = w.data / sigma
    return make_result(out, (w,), "spectral_normalize", lambda g: _sn_bwd(w, sigma, u, v, g))


# -- gated layer ------------------------------------------------------------
ACTIVATIONS = {
    "leaky_relu": lambda x: ag.leaky_relu(x, 0.2),
    "relu": ag.relu,
    "tanh": ag.tanh,
    "identity": ag.identity,
}

RESAMPLE = ("none", "down2", "up2")


def he_normal(rng, shape, dtype, gain: float = 1.0):
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * (gain * np.sqrt(2.0 / fan_in))).astype(dtype)


# The sigmoid gate scales activations by about 0.5 at init; without
# compensation the signal shrinks geometrically with depth.
GATE_GAIN = 2.0


class GatedLayer(Module):
    """Gated 2-D convolution with an optional temporal shift on the feature path.

    The gating convolution sees the unshifted input; only the feature
    convolution reads shifted channels.
    """

    def __init__(self, cin: int, cout: int, kernel: int = 5, dilation: int = 1,
                 resample: str = "none", activation: str = "leaky_relu",
                 shift: ShiftSpec | None = ShiftSpec(), shift_kernel: int = 3,
                 grouped_shift: bool = False, spectral_norm: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__()
        if resample not in RESAMPLE:
            raise ValueError(f"resample must be one of {RESAMPLE}, got {resample!r}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cin, self.cout, self.kernel = cin, cout, kernel
        self.dilation, self.resample, self.activation = dilation, resample, activation
        self.shift_spec = shift
        shape = (cout, cin, kernel, kernel)
        self.wf = Parameter(he_normal(rng, shape, dtype, GATE_GAIN))
        self.bf = Parameter(np.zeros(cout, dtype=dtype))
        self.wg = Parameter(he_normal(rng, shape, dtype))
        self.bg = Parameter(np.zeros(cout, dtype=dtype))
        if shift is not None and shift.mode == LEARNABLE:
            self.shift = LearnableShiftKernels(cin, shift_kernel, shift, grouped=grouped_shift, dtype=dtype)
        else:
            object.__setattr__(self, "shift", None)
        self.spectral_norm = spectral_norm
        if spectral_norm:
            for key in ("wf", "wg"):
                st = SpectralNormState(getattr(self, key).data, rng)
                self.register_buffer(key + "_u", st.u)
                self.register_buffer(key + "_v", st.v)

    def sn_state(self, key: str) -> SpectralNormState:
        return SpectralNormState.wrap(self._buffers[key + "_u"], self._buffers[key + "_v"])

    def effective_weight(self, key: str) -> Tensor:
        w = getattr(self, key)
        if not self.spectral_norm:
            return w
        return spectral_normalize(w, self.sn_state(key), update=self.training)

    def set_causal(self, causal: bool):
        if self.shift_spec is None:
            return
        spec = ShiftSpec(self.shift_spec.fraction, causal, self.shift_spec.mode)
        self.shift_spec = spec
        if self.shift is not None:
            self.shift.spec = spec

    def apply_shift(self, x: Tensor) -> Tensor:
        if self.shift_spec is None:
            return x
        if self.shift is not None:
            return learnable_temporal_shift(x, self.shift)
        return temporal_shift_fixed(x, self.shift_spec)

    def shift_param_count(self) -> int:
        return 0 if self.shift is None else self.shift.weight.size

    def forward(self, x: Tensor) -> Tensor:
        return lgtsm_layer_forward(x, self)


def resample(x: Tensor, mode: str) -> Tensor:
    if mode == "none":
        return x
    H, W = x.shape[3:]
    if mode == "down2":
        return bilinear_resize(x, H // 2, W // 2)
    return bilinear_resize(x, H * 2, W * 2)


def lgtsm_layer_forward(x: Tensor, p: GatedLayer) -> Tensor:
    if x.shape[1] != p.cin:
        raise ValueError(f"layer expects {p.cin} input channels, got {x.shape[1]}")
    x = resample(x, p.resample)
    gating = conv2d_per_frame(x, p.effective_weight("wg"), p.bg, dilation=p.dilation)
    features = conv2d_per_frame(p.apply_shift(x), p.effective_weight("wf"), p.bf, dilation=p.dilation)
    return ag.mul(ag.sigmoid(gating), ACTIVATIONS[p.activation](features))
