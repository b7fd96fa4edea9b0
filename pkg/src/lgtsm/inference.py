"""Inpainting, bucketed evaluation and the parameter/runtime report."""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import Checkpoint, load_checkpoint
from .data import frames_to_video, video_to_frames
from .losses import FeatureExtractor, perceptual_loss
from .maskgen import RATIO_BUCKETS, MaskSpec, MaskVideo, apply_mask, bucket_label, generate_mask
from .netpbm import read_frames, write_frames
from .networks import (Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelBundle,
                       build_3dconv_variant, composite_output, param_count)
from .train import TrainConfig


def generator_from_checkpoint(ck: Checkpoint, dtype=None) -> Generator:
    cfg = TrainConfig.from_dict(ck.meta["config"])
    dtype = np.dtype(dtype or cfg.dtype)
    gen = Generator(cfg.generator_config(), seed=cfg.seed, dtype=dtype)
    ModelBundle(gen)
    for name, p in gen.named_parameters("generator."):
        key = "param/" + name
        if key not in ck.tensors:
            raise ValueError(f"checkpoint lacks {name}")
        p.data = ck.tensors[key].astype(dtype)
    for name, buf in gen.named_buffers("generator."):
        key = "buffer/" + name
        if key in ck.tensors:
            buf[...] = ck.tensors[key]
    gen.eval()
    return gen


def run_generator(gen: Generator, masked_video: np.ndarray, mask: np.ndarray) -> np.ndarray:
    with ag.no_grad():
        return gen(Tensor(masked_video.astype(gen.layer1.wf.dtype)), mask).data


def inpaint_arrays(gen: Generator, frames: np.ndarray, mask: np.ndarray, causal: bool = False) -> np.ndarray:
    """frames [L,H,W,3] uint8, mask [L,H,W] {0,1} -> completed frames uint8."""
    if frames.shape[:3] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match frames {frames.shape[:3]}")
    dtype = gen.layer1.wf.dtype
    gen.set_causal(causal)
    V = frames_to_video(frames, dtype)
    m = mask[None, None].astype(dtype)
    O = run_generator(gen, apply_mask(V, m), m)
    comp = composite_output(O, V, m).data
    return video_to_frames(comp)


def inpaint(checkpoint, frames_dir, mask_dir, out_dir, causal: bool = False) -> list[str]:
    ck = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    gen = generator_from_checkpoint(ck)
    frames = read_frames(frames_dir, "ppm")
    mask = MaskVideo.load(mask_dir).frames
    if len(mask) != len(frames):
        raise ValueError(f"{len(frames)} frames but {len(mask)} mask frames")
    out = inpaint_arrays(gen, frames, mask, causal)
    return write_frames(out_dir, out, "ppm")


# -- evaluation -------------------------------------------------------------
@dataclass
class BucketResult:
    label: str
    lo: float
    hi: float
    mse: float
    masked_mse: float
    proxy: float
    mean_ratio: float
    n: int


@dataclass
class EvalReport:
    buckets: list = field(default_factory=list)
    proxy_name: str = "PROXY perceptual distance (fixed feature extractor)"

    @property
    def labels(self):
        return [b.label for b in self.buckets]

    def monotone_mse(self) -> bool:
        m = [b.mse for b in self.buckets]
        return all(a <= b for a, b in zip(m, m[1:]))

    def to_text(self) -> str:
        head = f"{'bucket':>8} {'n':>3} {'ratio':>7} {'MSE':>10} {'masked MSE':>11} {'PROXY':>10}"
        rows = [f"{b.label:>8} {b.n:>3} {b.mean_ratio:>7.4f} {b.mse:>10.6f} {b.masked_mse:>11.6f} {b.proxy:>10.6f}"
                for b in self.buckets]
        note = f"MSE on composited output, [0,1] pixel scale. PROXY = {self.proxy_name}."
        trend = "MSE nondecreasing with mask ratio: " + ("yes" if self.monotone_mse() else "no (soft expectation)")
        return "\n".join([head, *rows, note, trend]) + "\n"


def evaluate(predict_fn, clips, n_buckets: int = 7, kind: str = "stroke", seed: int = 0,
             fx: FeatureExtractor | None = None, dtype=np.float64) -> EvalReport:
    """Per-ratio-bucket metrics over a fixed seeded mask set.

    ``predict_fn(masked_video, mask) -> raw output`` works on [1,3,L,H,W] arrays
    in [-1, 1]; ``clips`` is a list of uint8 [L,H,W,3] arrays or FrameSequences.
    """
    if not 1 <= n_buckets <= len(RATIO_BUCKETS):
        raise ValueError(f"buckets must be in 1..{len(RATIO_BUCKETS)}")
    fx = fx or FeatureExtractor.seeded()
    report = EvalReport()
    for bi, (lo, hi) in enumerate(RATIO_BUCKETS[:n_buckets]):
        mses, mmses, proxies, ratios = [], [], [], []
        for ci, clip in enumerate(clips):
            frames = clip.frames if hasattr(clip, "frames") else clip
            L, H, W = frames.shape[:3]
            mv = generate_mask(MaskSpec(kind, (lo, hi), seed=seed * 1_000_003 + bi * 1009 + ci), L, H, W)
            V = frames_to_video(frames, dtype)
            m = mv.data.astype(dtype)
            O = np.asarray(predict_fn(apply_mask(V, m), m), dtype=dtype)
            comp = composite_output(O, V, m).data
            sq = ((comp - V) / 2.0) ** 2
            mses.append(float(sq.mean()))
            mmses.append(float((sq * m).sum() / max(m.sum() * 3, 1.0)))
            with ag.no_grad():
                proxies.append(float(perceptual_loss(Tensor(comp), V, fx).item()))
            ratios.append(mv.ratio)
        report.buckets.append(BucketResult(bucket_label(lo, hi), lo, hi, float(np.mean(mses)), float(np.mean(mmses)),
                                           float(np.mean(proxies)), float(np.mean(ratios)), len(clips)))
    return report


def evaluate_checkpoint(checkpoint, clips, n_buckets: int = 7, seed: int = 0) -> EvalReport:
    ck = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    gen = generator_from_checkpoint(ck)
    return evaluate(lambda mv, m: run_generator(gen, mv, m), clips, n_buckets, seed=seed,
                    dtype=gen.layer1.wf.dtype)


# -- parameter / runtime report ---------------------------------------------
def median_time(fn, repeats: int = 5) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def paramreport(shape=(1, 8, 64, 64), cfg: GeneratorConfig = GeneratorConfig(), repeats: int = 5,
                timing: bool = True, dtype=np.float32) -> dict:
    """Parameter counts and median forward wall time for both generators."""
    B, L, H, W = shape
    gen = Generator(cfg, seed=0, dtype=dtype)
    gen3d = build_3dconv_variant(cfg, seed=0, dtype=dtype).generator
    disc = Discriminator(DiscriminatorConfig(), seed=1, dtype=dtype)
    gen.eval()
    rep = {
        "shape": (B, 3, L, H, W),
        "lgtsm_params": param_count(gen),
        "conv3d_params": param_count(gen3d),
        "disc_params": param_count(disc),
    }
    rep["param_ratio"] = rep["lgtsm_params"] / rep["conv3d_params"]
    if timing:
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (B, 3, L, H, W)).astype(dtype)
        m = (rng.random((B, 1, L, H, W)) < 0.15).astype(dtype)
        xm = x * (1 - m)
        rep["repeats"] = repeats
        rep["lgtsm_seconds"] = median_time(lambda: run_generator(gen, xm, m), repeats)
        with ag.no_grad():
            rep["conv3d_seconds"] = median_time(lambda: gen3d(Tensor(xm), m), repeats)
        rep["time_ratio"] = rep["conv3d_seconds"] / rep["lgtsm_seconds"]
    return rep


def format_paramreport(rep: dict) -> str:
    lines = [
        f"{'model':<22} {'parameters':>12}" + (f" {'forward s (median)':>20}" if "lgtsm_seconds" in rep else ""),
        f"{'LGTSM generator':<22} {rep['lgtsm_params']:>12,}" + (f" {rep['lgtsm_seconds']:>20.4f}" if "lgtsm_seconds" in rep else ""),
        f"{'3D-conv generator':<22} {rep['conv3d_params']:>12,}" + (f" {rep['conv3d_seconds']:>20.4f}" if "conv3d_seconds" in rep else ""),
        f"{'TSM discriminator':<22} {rep['disc_params']:>12,}",
        f"param ratio LGTSM/3D = {rep['param_ratio']:.4f}",
    ]
    if "time_ratio" in rep:
        lines.append(f"time ratio 3D/LGTSM = {rep['time_ratio']:.3f} (median of {rep['repeats']} runs, shape {rep['shape']})")
    return "\n".join(lines) + "\n"
