import numpy as np
import pytest

from lgtsm.data import normalize, synthetic_dataset
from lgtsm.inference import (evaluate, evaluate_checkpoint, format_paramreport, generator_from_checkpoint, inpaint,
                             inpaint_arrays, paramreport)
from lgtsm.maskgen import MaskVideo
from lgtsm.netpbm import read_frames, write_frames
from lgtsm.networks import GeneratorConfig
from lgtsm.train import TrainConfig, Trainer

CFG = TrainConfig(height=16, width=16, clip_len=4, batch_size=1, n_clips=2, val_clips=1, base_channels=2,
                  kernel_size=3, disc_channels=2, dtype="float64")


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    tr = Trainer(CFG)
    tr.run(steps=1)
    path = tmp_path_factory.mktemp("ck") / "g.ckpt"
    tr.save(path)
    return str(path)


def _frames(seed=0, L=4):
    return np.random.default_rng(seed).integers(0, 256, (L, 16, 16, 3), dtype=np.uint8)


def test_empty_mask_returns_input_bit_identically(ckpt):
    from lgtsm.checkpoint import load_checkpoint
    gen = generator_from_checkpoint(load_checkpoint(ckpt))
    f = _frames()
    assert np.array_equal(inpaint_arrays(gen, f, np.zeros((4, 16, 16), np.uint8)), f)


def test_full_mask_output_is_the_generator_output(ckpt):
    from lgtsm.checkpoint import load_checkpoint
    gen = generator_from_checkpoint(load_checkpoint(ckpt))
    f = _frames()
    a = inpaint_arrays(gen, f, np.ones((4, 16, 16), np.uint8))
    b = inpaint_arrays(gen, _frames(seed=1), np.ones((4, 16, 16), np.uint8))
    assert np.array_equal(a, b)  # nothing of the input survives a full mask


def test_causal_inpainting_ignores_future_frames(ckpt):
    from lgtsm.checkpoint import load_checkpoint
    gen = generator_from_checkpoint(load_checkpoint(ckpt))
    f = _frames(L=6)
    m = np.zeros((6, 16, 16), np.uint8)
    m[:, 4:10, 4:10] = 1
    a = inpaint_arrays(gen, f, m, causal=True)
    f2 = f.copy()
    f2[4:] = 255 - f2[4:]
    b = inpaint_arrays(gen, f2, m, causal=True)
    assert np.array_equal(a[:4], b[:4])


def test_inpaint_directories(ckpt, tmp_path):
    f = _frames()
    m = np.zeros((4, 16, 16), np.uint8)
    m[:, :4] = 1
    write_frames(tmp_path / "in", f, "ppm")
    MaskVideo(m).save(tmp_path / "m")
    paths = inpaint(ckpt, tmp_path / "in", tmp_path / "m", tmp_path / "out")
    out = read_frames(tmp_path / "out")
    assert len(paths) == 4
    assert np.array_equal(out[:, 4:], f[:, 4:])
    MaskVideo(m[:3]).save(tmp_path / "short")
    with pytest.raises(ValueError, match="mask frames"):
        inpaint(ckpt, tmp_path / "in", tmp_path / "short", tmp_path / "out2")


def test_evaluate_with_oracle_gives_zero_error():
    clip = np.full((4, 16, 16, 3), 200, np.uint8)
    value = normalize(np.uint8(200), np.float64)
    rep = evaluate(lambda mv, m: np.full(mv.shape, value), [clip, clip], n_buckets=7)
    assert rep.labels == ["0-10%", "10-20%", "20-30%", "30-40%", "40-50%", "50-60%", "60-70%"]
    assert all(b.mse == 0.0 and b.masked_mse == 0.0 and b.proxy == 0.0 for b in rep.buckets)
    assert all(b.lo <= b.mean_ratio < b.hi for b in rep.buckets)


def test_zero_fill_error_grows_with_mask_ratio():
    clips = synthetic_dataset(2, seed=0, L=4, H=16, W=16)
    rep = evaluate(lambda mv, m: mv, clips, n_buckets=7)
    assert rep.monotone_mse()
    text = rep.to_text()
    assert "PROXY" in text and "60-70%" in text


def test_evaluate_checkpoint_runs(ckpt):
    rep = evaluate_checkpoint(ckpt, synthetic_dataset(1, seed=3, L=4, H=16, W=16), n_buckets=2)
    assert len(rep.buckets) == 2 and np.isfinite(rep.buckets[1].mse)


def test_paramreport_without_timing():
    rep = paramreport(cfg=GeneratorConfig(base_channels=4), timing=False)
    assert 0.3 < rep["param_ratio"] < 0.4
    assert "param ratio" in format_paramreport(rep)
