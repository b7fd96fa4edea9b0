"""Inpainting generator, TSM discriminator and the 3-D convolution comparison build."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from fractions import Fraction

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .kernels import conv2d_per_frame, conv3d
from .module import Module
from .tsm import (FIXED, LEARNABLE, GatedLayer, ShiftSpec, SpectralNormState, he_normal,
                  resample, spectral_normalize, temporal_shift_fixed)


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 32
    kernel_size: int = 5
    shift_kernel: int = 3
    shift_fraction: Fraction = Fraction(1, 4)
    shift_mode: str = LEARNABLE
    causal: bool = False
    spectral_norm: bool = True
    dilations: tuple = (2, 4)
    in_channels: int = 4

    def layer_table(self):
        """(name, cin, cout, resample, dilation) for the ten gated layers."""
        c = self.base_channels
        d1, d2 = self.dilations
        return [
            ("layer1", self.in_channels, c, "none", 1),
            ("layer2", c, 2 * c, "down2", 1),
            ("layer3", 2 * c, 2 * c, "none", 1),
            ("layer4", 2 * c, 4 * c, "down2", 1),
            ("layer5", 4 * c, 4 * c, "none", 1),
            ("layer6", 4 * c, 4 * c, "none", d1),
            ("layer7", 4 * c, 4 * c, "none", d2),
            ("layer8", 4 * c, 4 * c, "none", 1),
            ("layer9", 4 * c, 2 * c, "up2", 1),
            ("layer10", 2 * c, c, "up2", 1),
        ]

    def shift_spec(self) -> ShiftSpec:
        return ShiftSpec(self.shift_fraction, self.causal, self.shift_mode)


SPATIAL_MULTIPLE = 4


class OutputConv(Module):
    """Plain convolution followed by tanh; no gating and no shift."""

    def __init__(self, cin, cout, kernel, spectral_norm, rng, dtype):
        super().__init__()
        self.kernel = kernel
        self.w = Parameter(he_normal(rng, (cout, cin, kernel, kernel), dtype))
        self.b = Parameter(np.zeros(cout, dtype=dtype))
        self.spectral_norm = spectral_norm
        if spectral_norm:
            st = SpectralNormState(self.w.data, rng)
            self.register_buffer("w_u", st.u)
            self.register_buffer("w_v", st.v)

    def forward(self, x):
        w = self.w
        if self.spectral_norm:
            w = spectral_normalize(w, _state(self, "w"), update=self.training)
        return ag.tanh(conv2d_per_frame(x, w, self.b))


def _state(module, key):
    return SpectralNormState.wrap(module._buffers[key + "_u"], module._buffers[key + "_v"])


class Generator(Module):
    """Eleven-layer encoder/decoder without skip connections."""

    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(), seed: int = 0, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        spec = cfg.shift_spec()
        names = []
        for name, cin, cout, rs, dil in cfg.layer_table():
            layer = GatedLayer(cin, cout, cfg.kernel_size, dil, rs, "leaky_relu", spec,
                               cfg.shift_kernel, spectral_norm=cfg.spectral_norm, rng=rng, dtype=dtype)
            setattr(self, name, layer)
            names.append(name)
        self.layer11 = OutputConv(cfg.base_channels, 3, cfg.kernel_size, cfg.spectral_norm, rng, dtype)
        names.append("layer11")
        object.__setattr__(self, "layer_names", names)

    @property
    def layers(self):
        return [getattr(self, n) for n in self.layer_names]

    def set_causal(self, causal: bool):
        object.__setattr__(self, "cfg", replace(self.cfg, causal=causal))
        for layer in self.layers[:-1]:
            layer.set_causal(causal)

    def forward(self, masked_video: Tensor, mask) -> Tensor:
        return generator_forward(self, masked_video, mask)


def _mask_tensor(mask, like: Tensor) -> Tensor:
    data = mask.data if hasattr(mask, "data") else mask
    data = np.asarray(data, dtype=like.dtype)
    if data.ndim == 5 and data.shape[0] == 1 and like.shape[0] > 1:
        data = np.broadcast_to(data, (like.shape[0],) + data.shape[1:])
    return Tensor(data)


def generator_forward(gen: Generator, masked_video: Tensor, mask) -> Tensor:
    """Run the generator on zero-filled input plus its mask channel."""
    x = ag.as_tensor(masked_video)
    if x.ndim != 5 or x.shape[1] != 3:
        raise ValueError(f"masked video must be [B,3,L,H,W], got shape {x.shape}")
    H, W = x.shape[3:]
    if H % SPATIAL_MULTIPLE or W % SPATIAL_MULTIPLE:
        raise ValueError(f"frame size {H}x{W} must be divisible by {SPATIAL_MULTIPLE}")
    m = _mask_tensor(mask, x)
    if m.shape != (x.shape[0], 1) + x.shape[2:]:
        raise ValueError(f"mask shape {m.shape} does not match video shape {x.shape}")
    h = ag.concat([x, m], axis=1)
    for layer in gen.layers:
        h = layer(h)
    return h


def composite_output(O, V, mask) -> Tensor:
    """mask * O + (1 - mask) * V."""
    O = ag.as_tensor(O)
    V = ag.as_tensor(V)
    m = _mask_tensor(mask, V)
    return ag.add(ag.mul(m, O), ag.mul(ag.sub(1.0, m), V))


# -- discriminator ----------------------------------------------------------
@dataclass(frozen=True)
class DiscriminatorConfig:
    base_channels: int = 32
    kernel_size: int = 5
    stride: int = 2
    n_layers: int = 6
    shift_fraction: Fraction = Fraction(1, 4)
    spectral_norm: bool = True
    in_channels: int = 3

    def channels(self):
        c = self.base_channels
        widths = [c, 2 * c] + [4 * c] * (self.n_layers - 3) + [1]
        return list(zip([self.in_channels] + widths[:-1], widths))


class Discriminator(Module):
    """Strided convolutions with a fixed temporal shift before every layer.

    Returns an unbounded score per spatio-temporal point.
    """

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 1, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        object.__setattr__(self, "spec", ShiftSpec(cfg.shift_fraction, False, FIXED))
        k = cfg.kernel_size
        names = []
        for i, (cin, cout) in enumerate(cfg.channels(), start=1):
            w = Parameter(he_normal(rng, (cout, cin, k, k), dtype))
            setattr(self, f"w{i}", w)
            setattr(self, f"b{i}", Parameter(np.zeros(cout, dtype=dtype)))
            if cfg.spectral_norm:
                st = SpectralNormState(w.data, rng)
                self.register_buffer(f"w{i}_u", st.u)
                self.register_buffer(f"w{i}_v", st.v)
            names.append(i)
        object.__setattr__(self, "n_layers", len(names))

    def weight(self, i: int, update: bool | None = None) -> Tensor:
        w = getattr(self, f"w{i}")
        if not self.cfg.spectral_norm:
            return w
        update = self.training if update is None else update
        return spectral_normalize(w, _state(self, f"w{i}"), update=update)

    def warmup(self, n: int = 50):
        """Advance every power iteration ``n`` steps without a forward pass.

        Random init weights have close top singular values (ratio ~0.99), so
        20 steps can leave the estimate a few percent low; 50 bring every
        layer of the default build within 1%.
        """
        with ag.no_grad():
            for _ in range(n):
                for i in range(1, self.n_layers + 1):
                    self.weight(i, update=True)

    def forward(self, video: Tensor) -> Tensor:
        return discriminator_forward(self, video)


def discriminator_forward(disc: Discriminator, video: Tensor) -> Tensor:
    h = ag.as_tensor(video)
    for i in range(1, disc.n_layers + 1):
        h = temporal_shift_fixed(h, disc.spec)
        h = conv2d_per_frame(h, disc.weight(i), getattr(disc, f"b{i}"), stride=disc.cfg.stride)
        if i < disc.n_layers:
            h = ag.leaky_relu(h, 0.2)
    return h


# -- 3-D convolution comparison build ---------------------------------------
class Gated3DLayer(Module):
    def __init__(self, cin, cout, kernel, dilation, resample_mode, rng, dtype, temporal=3):
        super().__init__()
        shape = (cout, cin, temporal, kernel, kernel)
        self.wf = Parameter(he_normal(rng, shape, dtype))
        self.bf = Parameter(np.zeros(cout, dtype=dtype))
        self.wg = Parameter(he_normal(rng, shape, dtype))
        self.bg = Parameter(np.zeros(cout, dtype=dtype))
        self.dilation = dilation
        self.resample = resample_mode

    def forward(self, x):
        x = resample(x, self.resample)
        g = conv3d(x, self.wg, self.bg, dilation=self.dilation)
        f = conv3d(x, self.wf, self.bf, dilation=self.dilation)
        return ag.mul(ag.sigmoid(g), ag.leaky_relu(f, 0.2))


class Output3D(Module):
    def __init__(self, cin, cout, kernel, rng, dtype, temporal=3):
        super().__init__()
        self.w = Parameter(he_normal(rng, (cout, cin, temporal, kernel, kernel), dtype))
        self.b = Parameter(np.zeros(cout, dtype=dtype))

    def forward(self, x):
        return ag.tanh(conv3d(x, self.w, self.b))


class Generator3D(Module):
    """Same layer table with every convolution made 3-D; forward only, never trained."""

    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(), seed: int = 0, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        names = []
        for name, cin, cout, rs, dil in cfg.layer_table():
            setattr(self, name, Gated3DLayer(cin, cout, cfg.kernel_size, dil, rs, rng, dtype))
            names.append(name)
        self.layer11 = Output3D(cfg.base_channels, 3, cfg.kernel_size, rng, dtype)
        names.append("layer11")
        object.__setattr__(self, "layer_names", names)

    @property
    def layers(self):
        return [getattr(self, n) for n in self.layer_names]

    def forward(self, masked_video, mask):
        x = ag.as_tensor(masked_video)
        h = ag.concat([x, _mask_tensor(mask, x)], axis=1)
        with ag.no_grad():
            for layer in self.layers:
                h = layer(h)
        return h


def build_3dconv_variant(cfg: GeneratorConfig = GeneratorConfig(), seed: int = 0, dtype=np.float64) -> "ModelBundle":
    return ModelBundle(generator=Generator3D(cfg, seed, dtype))


# -- bundle -----------------------------------------------------------------
class ModelBundle(Module):
    """Generator and discriminator addressable by hierarchical name."""

    def __init__(self, generator: Module | None = None, discriminator: Module | None = None):
        super().__init__()
        if generator is not None:
            self.generator = generator
        if discriminator is not None:
            self.discriminator = discriminator
        self.assign_names()

    @classmethod
    def build(cls, gcfg: GeneratorConfig = GeneratorConfig(), dcfg: DiscriminatorConfig = DiscriminatorConfig(),
              seed: int = 0, dtype=np.float64) -> "ModelBundle":
        return cls(Generator(gcfg, seed, dtype), Discriminator(dcfg, seed + 1, dtype))

    def component(self, name: str) -> Module:
        try:
            return self._children[name]
        except KeyError:
            raise KeyError(f"bundle has no component {name!r}") from None


def param_count(model: Module, component: str | None = None) -> int:
    """Exact number of trainable scalars (optionally of one bundle component)."""
    if component is not None:
        model = model.component(component)
    return sum(p.size for p in model.parameters() if p.requires_grad)


def config_dict(cfg) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
