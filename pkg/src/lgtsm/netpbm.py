"""Binary PPM (P6) and PBM (P4) readers/writers."""
from __future__ import annotations

import os
import re

import numpy as np


class NetpbmError(ValueError):
    pass


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def _header(blob: bytes, n_fields: int, path):
    """Parse magic plus ``n_fields`` integers; return (magic, ints, payload_offset)."""
    pos = 0
    tokens = []
    for _ in range(1 + n_fields):
        m = _TOKEN.match(blob, pos)
        if m is None:
            raise NetpbmError(f"{path}: truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    if pos >= len(blob):
        raise NetpbmError(f"{path}: truncated header")
    if blob[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise NetpbmError(f"{path}: header must end with one whitespace byte")
    try:
        ints = [int(t) for t in tokens[1:]]
    except ValueError:
        raise NetpbmError(f"{path}: malformed header fields {tokens[1:]}") from None
    return tokens[0], ints, pos + 1


def write_ppm(path, image: np.ndarray) -> None:
    """Write an H x W x 3 uint8 image as P6 with maxval 255."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise NetpbmError(f"PPM image must be HxWx3, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise NetpbmError(f"PPM image must be uint8, got {img.dtype}")
    H, W = img.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (W, H))
        f.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    magic, (W, H, maxval), off = _header(blob, 3, path)
    if magic != b"P6":
        raise NetpbmError(f"{path}: expected P6, found {magic!r}")
    if maxval != 255:
        raise NetpbmError(f"{path}: only maxval 255 is supported, found {maxval}")
    need = W * H * 3
    have = len(blob) - off
    if have < need:
        raise NetpbmError(f"{path}: truncated payload, expected {need} bytes, got {have}")
    return np.frombuffer(blob, dtype=np.uint8, count=need, offset=off).reshape(H, W, 3).copy()


def write_pbm(path, bits: np.ndarray) -> None:
    """Write an H x W binary array as P4 (1 = black = masked)."""
    b = np.asarray(bits)
    if b.ndim != 2:
        raise NetpbmError(f"PBM image must be 2-D, got shape {b.shape}")
    if not np.isin(b, (0, 1)).all():
        raise NetpbmError("PBM image must be binary")
    H, W = b.shape
    packed = np.packbits(b.astype(np.uint8), axis=1)
    with open(path, "wb") as f:
        f.write(b"P4\n%d %d\n" % (W, H))
        f.write(packed.tobytes())


def read_pbm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    magic, (W, H), off = _header(blob, 2, path)
    if magic != b"P4":
        raise NetpbmError(f"{path}: expected P4, found {magic!r}")
    row = (W + 7) // 8
    need = row * H
    have = len(blob) - off
    if have < need:
        raise NetpbmError(f"{path}: truncated payload, expected {need} bytes, got {have}")
    packed = np.frombuffer(blob, dtype=np.uint8, count=need, offset=off).reshape(H, row)
    return np.unpackbits(packed, axis=1)[:, :W].copy()


FRAME_PATTERN = "frame_{:05d}"


def frame_paths(directory, ext: str) -> list[str]:
    """Contiguous frame_00000.<ext>, frame_00001.<ext>, ... files in ``directory``."""
    names = sorted(n for n in os.listdir(directory) if n.startswith("frame_") and n.endswith("." + ext))
    expected = [FRAME_PATTERN.format(i) + "." + ext for i in range(len(names))]
    if names != expected:
        raise NetpbmError(f"{directory}: frame files must be contiguous from {expected[0] if expected else 'frame_00000'}")
    if not names:
        raise NetpbmError(f"{directory}: no frame_*.{ext} files")
    return [os.path.join(directory, n) for n in names]


def write_frames(directory, frames, ext: str = "ppm") -> list[str]:
    os.makedirs(directory, exist_ok=True)
    writer = write_ppm if ext == "ppm" else write_pbm
    paths = []
    for i, fr in enumerate(frames):
        p = os.path.join(directory, FRAME_PATTERN.format(i) + "." + ext)
        writer(p, fr)
        paths.append(p)
    return paths


def read_frames(directory, ext: str = "ppm") -> np.ndarray:
    reader = read_ppm if ext == "ppm" else read_pbm
    frames = [reader(p) for p in frame_paths(directory, ext)]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise NetpbmError(f"{directory}: frames differ in size {sorted(shapes)}")
    return np.stack(frames)
