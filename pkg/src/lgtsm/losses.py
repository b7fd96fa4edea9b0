"""Reconstruction, feature-space and adversarial objectives."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .kernels import conv2d_per_frame, gram_matrix

FX_MAGIC = b"LGTSMFX1"


class FeatureExtractor:
    """Fixed (non-trainable) conv stack emitting one feature map per stage.

    Each stage is conv(stride) followed by ``activation``; frames are
    processed independently. The default is a seeded random stand-in for a
    pretrained classifier.
    """

    def __init__(self, weights: list[np.ndarray], strides: list[int] | None = None,
                 activation: str = "leaky_relu", source: str = "custom"):
        if not weights:
            raise ValueError("feature extractor needs at least one stage")
        self.weights = [np.asarray(w) for w in weights]
        self.strides = list(strides) if strides is not None else [2] * len(weights)
        if len(self.strides) != len(self.weights):
            raise ValueError("one stride per stage required")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ValueError(f"stage channel mismatch: {prev.shape} -> {nxt.shape}")
        self.activation = activation
        self.source = source

    @classmethod
    def seeded(cls, seed: int = 1234, channels=(16, 32, 64), in_channels: int = 3, kernel: int = 3):
        rng = np.random.default_rng(seed)
        ws = []
        cin = in_channels
        for c in channels:
            fan_in = cin * kernel * kernel
            ws.append(rng.standard_normal((c, cin, kernel, kernel)) * np.sqrt(2.0 / fan_in))
            cin = c
        return cls(ws, source="seeded_random")

    @property
    def n_stages(self) -> int:
        return len(self.weights)

    def __call__(self, x: Tensor) -> list[Tensor]:
        feats = []
        h = x
        for w, s in zip(self.weights, self.strides):
            h = conv2d_per_frame(h, w.astype(x.dtype, copy=False), stride=s)
            if self.activation == "leaky_relu":
                h = ag.leaky_relu(h, 0.2)
            elif self.activation == "relu":
                h = ag.relu(h)
            feats.append(h)
        return feats

    def save(self, path) -> None:
        """Binary layout: magic, then per stage 4 x u32 LE dims + f32 LE payload."""
        with open(path, "wb") as f:
            f.write(FX_MAGIC)
            for w in self.weights:
                f.write(struct.pack("<4I", *w.shape))
                f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "FeatureExtractor":
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:8] != FX_MAGIC:
            raise ValueError(f"{path}: not a feature-extractor file (bad magic)")
        pos = 8
        ws = []
        while pos < len(blob):
            if pos + 16 > len(blob):
                raise ValueError(f"{path}: truncated stage header at offset {pos}")
            dims = struct.unpack_from("<4I", blob, pos)
            pos += 16
            n = int(np.prod(dims)) * 4
            if pos + n > len(blob):
                raise ValueError(f"{path}: stage payload needs {n} bytes at offset {pos}, file has {len(blob) - pos}")
            ws.append(np.frombuffer(blob, dtype="<f4", count=n // 4, offset=pos).reshape(dims).astype(np.float64))
            pos += n
        return cls(ws, source="weights_file")


@dataclass(frozen=True)
class LossWeights:
    l1: float = 1.0
    perc: float = 0.1
    style: float = 10.0
    adv: float = 0.01

    def __post_init__(self):
        vals = (self.l1, self.perc, self.style, self.adv)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be nonnegative")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


def l1_loss(O: Tensor, V, mask=None, masked_weight: float | None = None) -> Tensor:
    """Mean absolute error over every pixel, channel, frame and batch item.

    With ``masked_weight`` set, masked pixels are weighted by it (and valid
    pixels by 1) before averaging.
    """
    V = ag.as_tensor(V, like=O)
    diff = ag.abs_(ag.sub(O, V))
    if masked_weight is None:
        return ag.mean(diff)
    m = np.asarray(mask.data if hasattr(mask, "data") else mask, dtype=O.dtype)
    wmap = 1.0 + (masked_weight - 1.0) * m
    return ag.mean(ag.mul(diff, wmap))


def _batch(x: Tensor) -> int:
    return x.shape[0]


def perceptual_loss(O: Tensor, V, fx: FeatureExtractor) -> Tensor:
    """Sum over frames and stages of the stage-normalised feature l1 distance, batch-averaged."""
    V = ag.as_tensor(V, like=O)
    with ag.no_grad():
        fv = fx(V)
    fo = fx(O)
    total = None
    B = _batch(O)
    for a, b in zip(fo, fv):
        _, Cp, _, Hp, Wp = a.shape
        term = ag.mul(ag.sum_(ag.abs_(ag.sub(a, b))), 1.0 / (Cp * Hp * Wp * B))
        total = term if total is None else ag.add(total, term)
    return total


def style_loss(O: Tensor, V, fx: FeatureExtractor) -> Tensor:
    """Sum over frames and stages of the Gram-matrix l1 distance / Cp^2, batch-averaged."""
    V = ag.as_tensor(V, like=O)
    with ag.no_grad():
        gv = [gram_matrix(f) for f in fx(V)]
    total = None
    B = _batch(O)
    for f, g_v in zip(fx(O), gv):
        Cp = f.shape[1]
        term = ag.mul(ag.sum_(ag.abs_(ag.sub(gram_matrix(f), g_v))), 1.0 / (Cp * Cp * B))
        total = term if total is None else ag.add(total, term)
    return total


STANDARD = "standard"
PAPER = "paper"


def d_hinge_loss(scores_real: Tensor, scores_fake: Tensor, hinge_sign: str = STANDARD) -> Tensor:
    """Discriminator hinge loss.

    ``standard``: mean relu(1 - D(real)) + mean relu(1 + D(fake)).
    ``paper``: the mirrored form, mean relu(1 + D(real)) + mean relu(1 - D(fake)).
    """
    if hinge_sign == STANDARD:
        r, f = ag.sub(1.0, scores_real), ag.add(1.0, scores_fake)
    elif hinge_sign == PAPER:
        r, f = ag.add(1.0, scores_real), ag.sub(1.0, scores_fake)
    else:
        raise ValueError(f"hinge_sign must be {STANDARD!r} or {PAPER!r}")
    return ag.add(ag.mean(ag.relu(r)), ag.mean(ag.relu(f)))


def g_adv_loss(scores_fake: Tensor) -> Tensor:
    """-mean D(G(z))."""
    return ag.mul(ag.mean(scores_fake), -1.0)


def total_loss(components: dict, w: LossWeights) -> Tensor:
    """Weighted sum of the available components (keys: l1, perc, style, adv)."""
    total = None
    for key in ("l1", "perc", "style", "adv"):
        if key not in components:
            continue
        lam = getattr(w, key)
        if lam == 0:
            continue
        term = ag.mul(components[key], lam)
        total = term if total is None else ag.add(total, term)
    if total is None:
        raise ValueError("no loss component with a positive weight")
    return total
