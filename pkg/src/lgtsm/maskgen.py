"""Free-form video mask synthesis with a controllable mask-to-frame ratio.

Every kind draws a mask on frame 0 and translates it rigidly along a bounded
random walk (integer steps of Euclidean length <= ``motion``); pixels moved
outside the frame are dropped.

Stroke and blob masks are thresholded distance fields, so the covered volume
grows monotonically with the brush radius. The radius is picked as the
quantile of the translated distance values that matches a target ratio drawn
from the requested range, which lands in range almost every time; skeletons
are redrawn when the radius falls outside the allowed band.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .netpbm import read_frames, write_frames

KINDS = ("stroke", "bbox", "object_like")
RATIO_BUCKETS = [(i / 10, (i + 1) / 10) for i in range(7)]
MAX_ATTEMPTS = 100
# keeps consecutive-frame IoU >= 0.5 under 2 px/frame motion
MIN_RADIUS = 4.0
MIN_BOX_SIDE = 8


def bucket_label(lo: float, hi: float) -> str:
    return f"{round(lo * 100)}-{round(hi * 100)}%"


class MaskRatioError(RuntimeError):
    def __init__(self, spec, best):
        self.best = best
        super().__init__(f"could not reach ratio range {spec.ratio_range} after {MAX_ATTEMPTS} attempts; best {best:.4f}")


@dataclass(frozen=True)
class MaskSpec:
    kind: str = "stroke"
    ratio_range: tuple = (0.1, 0.2)
    motion: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"mask kind must be one of {KINDS}, got {self.kind!r}")
        lo, hi = self.ratio_range
        if not (0 <= lo < hi <= 1):
            raise ValueError(f"ratio range must satisfy 0 <= lo < hi <= 1, got {self.ratio_range}")
        if self.motion < 0:
            raise ValueError("motion must be nonnegative")


class MaskVideo:
    """Binary occlusion volume [1, 1, L, H, W]; 1 marks pixels to inpaint."""

    def __init__(self, data: np.ndarray):
        d = np.asarray(data)
        if d.ndim == 3:
            d = d[None, None]
        if d.ndim != 5 or d.shape[:2] != (1, 1):
            raise ValueError(f"mask must be [1,1,L,H,W], got shape {d.shape}")
        if not np.isin(d, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        self.data = d.astype(np.uint8)
        self.ratio = ratio(self.data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def frames(self) -> np.ndarray:
        return self.data[0, 0]

    def save(self, directory) -> list[str]:
        return write_frames(directory, self.frames, "pbm")

    @classmethod
    def load(cls, directory) -> "MaskVideo":
        return cls(read_frames(directory, "pbm"))

    def __eq__(self, other):
        return isinstance(other, MaskVideo) and np.array_equal(self.data, other.data)


def ratio(mask) -> float:
    """Fraction of masked pixels over the whole volume."""
    d = mask.data if isinstance(mask, MaskVideo) else np.asarray(mask)
    return float(np.count_nonzero(d)) / d.size if d.size else 0.0


def apply_mask(video, mask):
    """Zero the masked pixels: video * (1 - mask)."""
    m = mask.data if isinstance(mask, MaskVideo) else np.asarray(mask)
    v = np.asarray(video.data if hasattr(video, "data") else video)
    return v * (1 - m).astype(v.dtype)


# -- motion -----------------------------------------------------------------
def random_walk(rng: np.random.Generator, L: int, motion: float, bound: int | None = None) -> np.ndarray:
    """Cumulative integer offsets [L, 2]; each step has Euclidean length <= motion.

    With ``bound`` the walk reflects so every offset component stays within it.
    """
    r = int(np.floor(motion))
    steps = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= motion * motion]
    steps = np.array(steps or [(0, 0)])
    out = np.zeros((L, 2), dtype=int)
    for t in range(1, L):
        step = steps[rng.integers(len(steps))].copy()
        nxt = out[t - 1] + step
        if bound is not None:
            flip = np.abs(nxt) > bound
            step[flip] *= -1
            nxt = out[t - 1] + step
        out[t] = nxt
    return out


def translate(frame: np.ndarray, dy: int, dx: int, fill=0) -> np.ndarray:
    H, W = frame.shape
    out = np.full_like(frame, fill)
    ys, yd = (slice(0, H - dy), slice(dy, H)) if dy >= 0 else (slice(-dy, H), slice(0, H + dy))
    xs, xd = (slice(0, W - dx), slice(dx, W)) if dx >= 0 else (slice(-dx, W), slice(0, W + dx))
    if abs(dy) < H and abs(dx) < W:
        out[yd, xd] = frame[ys, xs]
    return out


def rigid_video(frame0: np.ndarray, offsets: np.ndarray, fill=0) -> np.ndarray:
    return np.stack([translate(frame0, int(dy), int(dx), fill) for dy, dx in offsets])


# -- shapes -----------------------------------------------------------------
def _segment_distance(H, W, segments) -> np.ndarray:
    """Euclidean distance from every pixel centre to the nearest segment."""
    yy = np.arange(H, dtype=np.float64)[:, None]
    xx = np.arange(W, dtype=np.float64)[None, :]
    best = np.full((H, W), np.inf)
    for (y0, x0), (y1, x1) in segments:
        dy, dx = y1 - y0, x1 - x0
        den = dy * dy + dx * dx
        ry, rx = yy - y0, xx - x0
        if den == 0:
            d2 = ry * ry + rx * rx
        else:
            t = np.clip((ry * dy + rx * dx) * (1.0 / den), 0.0, 1.0)
            ey, ex = ry - t * dy, rx - t * dx
            d2 = ey * ey + ex * ex
        np.minimum(best, d2, out=best)
    return np.sqrt(best)


def _stroke_skeleton(rng, H, W, n_strokes):
    my, mx = H / 8, W / 8
    segs = []
    for _ in range(n_strokes):
        y, x = rng.uniform(my, H - 1 - my), rng.uniform(mx, W - 1 - mx)
        angle = rng.uniform(0, 2 * np.pi)
        for _ in range(rng.integers(2, 7)):
            angle += rng.uniform(-np.pi / 2, np.pi / 2)
            length = rng.uniform(H / 16, H / 4)
            ny = min(max(y + length * np.sin(angle), my), H - 1 - my)
            nx = min(max(x + length * np.cos(angle), mx), W - 1 - mx)
            segs.append(((y, x), (ny, nx)))
            y, x = ny, nx
    return segs


def _blob_skeleton(rng, H, W, n_blobs):
    segs = []
    for _ in range(n_blobs):
        cy, cx = rng.uniform(H / 4, 3 * H / 4), rng.uniform(W / 4, 3 * W / 4)
        pts = [(cy + rng.normal(0, H / 16), cx + rng.normal(0, W / 16)) for _ in range(rng.integers(2, 5))]
        segs.extend((p, q) for p, q in zip(pts, pts[1:]))
        segs.append((pts[0], pts[0]))
    return segs


def _radius_for_target(dist_video: np.ndarray, target: float) -> float:
    flat = dist_video.ravel()
    k = min(max(int(np.floor(target * flat.size)), 0), flat.size - 1)
    return float(np.partition(flat, k)[k])


def _threshold_fit(dist0, offsets, lo, hi, target, rmin, rmax):
    """Pick a radius hitting ``target``; return (volume, ratio, status)."""
    dv = rigid_video(dist0, offsets, fill=np.inf)
    r = _radius_for_target(dv, target)
    if r < rmin:
        r, status = rmin, "small"
    elif r > rmax:
        r, status = rmax, "large"
    else:
        status = "ok"
    vol = (dv <= r).astype(np.uint8)
    rt = ratio(vol)
    if lo <= rt < hi:
        return vol, rt, "ok"
    return vol, rt, status if status != "ok" else ("large" if rt < lo else "small")


def generate_mask(spec: MaskSpec, L: int, H: int, W: int) -> MaskVideo:
    """Draw a mask video whose ratio lies in ``spec.ratio_range``."""
    if H < 16 or W < 16:
        raise ValueError(f"mask frames must be at least 16x16, got {H}x{W}")
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.ratio_range
    if spec.kind == "bbox":
        return _bbox_mask(spec, rng, L, H, W)

    rmin, rmax = MIN_RADIUS, max(H, W) / 8
    count = int(rng.integers(1, 9)) if spec.kind == "stroke" else int(rng.integers(1, 4))
    limit = 8 if spec.kind == "stroke" else 3
    best, best_gap = None, np.inf
    offsets = random_walk(rng, L, spec.motion, bound=max(H, W) // 16)
    for _ in range(MAX_ATTEMPTS):
        target = rng.uniform(lo, hi)
        if spec.kind == "stroke":
            segs = _stroke_skeleton(rng, H, W, count)
            rmax_k = rmax
        else:
            segs = _blob_skeleton(rng, H, W, count)
            rmax_k = max(H, W) / 2
        dist0 = _segment_distance(H, W, segs)
        # small frames: the band collapses to the largest allowed radius
        vol, rt, status = _threshold_fit(dist0, offsets, lo, hi, target, min(rmin, rmax_k), rmax_k)
        if status == "ok":
            return MaskVideo(vol)
        gap = lo - rt if rt < lo else rt - hi
        if gap < best_gap:
            best, best_gap = rt, gap
        if status == "large":
            count = min(count + 1, limit)
        else:
            count = max(count - 1, 1)
    raise MaskRatioError(spec, best)


def _bbox_mask(spec, rng, L, H, W):
    lo, hi = spec.ratio_range
    for _ in range(MAX_ATTEMPTS):
        target = rng.uniform(lo, hi)
        area = target * H * W
        aspect = rng.uniform(0.5, 2.0)
        h = int(round(np.sqrt(area * aspect)))
        w = int(round(area / max(h, 1)))
        h, w = min(max(h, 1), H), min(max(w, 1), W)
        if min(h, w) < MIN_BOX_SIDE or not lo <= h * w / (H * W) < hi:
            continue
        top = int(rng.integers(0, H - h + 1))
        left = int(rng.integers(0, W - w + 1))
        return bbox_mask(L, H, W, top, left, h, w, spec.motion, rng)
    raise MaskRatioError(spec, 0.0)


def bbox_mask(L, H, W, top, left, h, w, motion: float = 0.0, rng=None) -> MaskVideo:
    """Rectangle mask that wanders without leaving the frame (constant area)."""
    if not (0 <= top and 0 <= left and top + h <= H and left + w <= W):
        raise ValueError("box must lie inside the frame")
    rng = rng if rng is not None else np.random.default_rng(0)
    offs = random_walk(rng, L, motion)
    vol = np.zeros((L, H, W), dtype=np.uint8)
    y, x = top, left
    prev = np.zeros(2, int)
    for t in range(L):
        dy, dx = offs[t] - prev
        prev = offs[t]
        # reflect at the borders
        y, x = y + dy, x + dx
        if y < 0 or y + h > H:
            y -= 2 * dy
        if x < 0 or x + w > W:
            x -= 2 * dx
        y = min(max(y, 0), H - h)
        x = min(max(x, 0), W - w)
        vol[t, y : y + h, x : x + w] = 1
    return MaskVideo(vol)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


def save_mask(mask: MaskVideo, directory) -> list[str]:
    os.makedirs(directory, exist_ok=True)
    return mask.save(directory)
