"""Frame sequences, the synthetic moving-shapes dataset, and batching."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .maskgen import MaskSpec, MaskVideo, generate_mask
from .netpbm import read_frames, write_frames


def normalize(frames: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 [..] -> [-1, 1] via x / 127.5 - 1."""
    return (np.asarray(frames, dtype=np.float64) / 127.5 - 1.0).astype(dtype)


def denormalize(x: np.ndarray) -> np.ndarray:
    """Inverse of ``normalize``: clamp to [0, 255] and round half up."""
    v = (np.asarray(x, dtype=np.float64) + 1.0) * 127.5
    return np.floor(np.clip(v, 0.0, 255.0) + 0.5).astype(np.uint8)


def frames_to_video(frames: np.ndarray, dtype=np.float32) -> np.ndarray:
    """[L, H, W, 3] uint8 -> [1, 3, L, H, W] in [-1, 1]."""
    return normalize(frames, dtype).transpose(3, 0, 1, 2)[None]


def video_to_frames(video: np.ndarray) -> np.ndarray:
    """[1, 3, L, H, W] in [-1, 1] -> [L, H, W, 3] uint8."""
    return denormalize(np.asarray(video)[0].transpose(1, 2, 3, 0))


@dataclass
class FrameSequence:
    frames: np.ndarray  # [L, H, W, 3] uint8
    path: str | None = None
    fps: float | None = None

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[3] != 3 or f.dtype != np.uint8:
            raise ValueError(f"frames must be uint8 [L,H,W,3], got {f.dtype} {f.shape}")

    @property
    def shape(self):
        return self.frames.shape

    def save(self, directory) -> list[str]:
        self.path = str(directory)
        return write_frames(directory, self.frames, "ppm")

    @classmethod
    def load(cls, directory) -> "FrameSequence":
        return cls(read_frames(directory, "ppm"), path=str(directory))


def read_manifest(path) -> list[str]:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as f:
        lines = [ln.strip() for ln in f]
    return [ln if os.path.isabs(ln) else os.path.join(base, ln) for ln in lines if ln and not ln.startswith("#")]


def write_manifest(path, clip_dirs) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in clip_dirs:
            f.write(f"{d}\n")


def load_dataset(manifest) -> list[FrameSequence]:
    return [FrameSequence.load(d) for d in read_manifest(manifest)]


# -- synthetic scenes -------------------------------------------------------
@dataclass(frozen=True)
class Shape:
    kind: str  # "rect" or "disk"
    y: float
    x: float
    size: int  # rect side length or disk diameter
    vy: float
    vx: float
    color: tuple


@dataclass(frozen=True)
class SyntheticSceneSpec:
    seed: int = 0
    n_shapes: int = 2
    L: int = 8
    H: int = 64
    W: int = 64
    background: str = "gradient"  # or "constant"
    max_speed: float = 4.0
    shapes: tuple | None = None
    bg_colors: tuple | None = None

    def __post_init__(self):
        if not 1 <= self.n_shapes <= 4:
            raise ValueError("n_shapes must be in 1..4")
        if self.background not in ("constant", "gradient"):
            raise ValueError(f"unknown background {self.background!r}")


def _reflect(p0: float, v: float, t: int, lo: float, hi: float) -> float:
    """Position of a point bouncing between lo and hi."""
    span = hi - lo
    if span <= 0:
        return lo
    q = (p0 - lo + v * t) % (2 * span)
    return lo + (q if q <= span else 2 * span - q)


def _random_shapes(rng, spec):
    shapes = []
    for _ in range(spec.n_shapes):
        size = int(rng.integers(spec.H // 8, spec.H // 3))
        speed = rng.uniform(0, spec.max_speed)
        ang = rng.uniform(0, 2 * np.pi)
        shapes.append(Shape(
            kind=str(rng.choice(["rect", "disk"])),
            y=float(rng.uniform(0, spec.H - size)), x=float(rng.uniform(0, spec.W - size)),
            size=size, vy=float(speed * np.sin(ang)), vx=float(speed * np.cos(ang)),
            color=tuple(int(c) for c in rng.integers(0, 256, 3)),
        ))
    return shapes


def synth_video(spec: SyntheticSceneSpec) -> FrameSequence:
    """Deterministic moving rects/disks over a constant or two-colour gradient background.

    Shapes move at constant velocity and reflect off the borders, so they stay
    fully inside the frame.
    """
    rng = np.random.default_rng(spec.seed)
    L, H, W = spec.L, spec.H, spec.W
    c0, c1 = spec.bg_colors or (tuple(rng.integers(0, 256, 3)), tuple(rng.integers(0, 256, 3)))
    c0, c1 = np.array(c0, float), np.array(c1, float)
    if spec.background == "constant":
        bg = np.broadcast_to(c0, (H, W, 3))
    else:
        ramp = np.linspace(0.0, 1.0, W)[None, :, None]
        bg = np.broadcast_to(c0 * (1 - ramp) + c1 * ramp, (H, W, 3))
    bg = np.round(bg).astype(np.uint8)
    shapes = list(spec.shapes) if spec.shapes is not None else _random_shapes(rng, spec)
    yy, xx = np.mgrid[0:H, 0:W]
    frames = np.empty((L, H, W, 3), dtype=np.uint8)
    for t in range(L):
        fr = bg.copy()
        for s in shapes:
            y = int(round(_reflect(s.y, s.vy, t, 0, H - s.size)))
            x = int(round(_reflect(s.x, s.vx, t, 0, W - s.size)))
            if s.kind == "rect":
                fr[y : y + s.size, x : x + s.size] = s.color
            else:
                r = s.size / 2
                inside = (yy - (y + r - 0.5)) ** 2 + (xx - (x + r - 0.5)) ** 2 <= r * r
                fr[inside] = s.color
        frames[t] = fr
    return FrameSequence(frames)


def synthetic_dataset(n: int, seed: int = 0, L: int = 8, H: int = 64, W: int = 64) -> list[FrameSequence]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        spec = SyntheticSceneSpec(seed=int(rng.integers(1 << 31)), n_shapes=int(rng.integers(1, 5)), L=L, H=H, W=W,
                                  background=str(rng.choice(["constant", "gradient"])))
        out.append(synth_video(spec))
    return out


# -- batches ----------------------------------------------------------------
@dataclass
class Batch:
    video: np.ndarray         # [B, 3, L, H, W] in [-1, 1]
    mask: np.ndarray          # [B, 1, L, H, W] in {0, 1}
    masked_video: np.ndarray  # video * (1 - mask)
    indices: list = field(default_factory=list)
    masks: list = field(default_factory=list)

    def check(self) -> None:
        expect = self.video * (1 - self.mask).astype(self.video.dtype)
        if not np.array_equal(self.masked_video, expect):
            raise AssertionError("masked_video is inconsistent with video and mask")


def make_batch(sequences, mask_spec: MaskSpec, B: int, seed: int = 0, step: int = 0,
               indices=None, clip_len: int | None = None, dtype=np.float32) -> Batch:
    """Sample B clips and per-clip masks; deterministic in (seed, step)."""
    if not sequences:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng([seed, step])
    if indices is None:
        indices = rng.integers(len(sequences), size=B).tolist()
    vids, masks, mlist = [], [], []
    for j, i in enumerate(indices):
        fr = sequences[i].frames
        L = clip_len or fr.shape[0]
        if L > fr.shape[0]:
            raise ValueError(f"clip length {L} exceeds sequence length {fr.shape[0]}")
        t0 = int(rng.integers(0, fr.shape[0] - L + 1))
        clip = fr[t0 : t0 + L]
        vids.append(frames_to_video(clip, dtype)[0])
        ms = MaskSpec(mask_spec.kind, mask_spec.ratio_range, mask_spec.motion, int(rng.integers(1 << 31)))
        mv = generate_mask(ms, L, clip.shape[1], clip.shape[2])
        mlist.append(mv)
        masks.append(mv.data[0].astype(dtype))
    video = np.stack(vids)
    mask = np.stack(masks)
    return Batch(video, mask, video * (1 - mask), list(indices), mlist)


def epoch_order(n: int, seed: int, epoch: int, shuffle: bool = True) -> list[int]:
    """Visit order for one epoch: a permutation of range(n) when shuffling."""
    if not shuffle:
        return list(range(n))
    return np.random.default_rng([seed, epoch, 7]).permutation(n).tolist()


def epoch_batches(sequences, mask_spec: MaskSpec, B: int, seed: int = 0, epoch: int = 0, shuffle: bool = True):
    """Yield batches covering every sequence exactly once (last batch may be short)."""
    order = epoch_order(len(sequences), seed, epoch, shuffle)
    for k in range(0, len(order), B):
        yield make_batch(sequences, mask_spec, len(order[k : k + B]), seed, epoch * 100003 + k, indices=order[k : k + B])
