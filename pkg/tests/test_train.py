import numpy as np
import pytest

from lgtsm.checkpoint import load_checkpoint, to_bytes
from lgtsm.train import (ConfigError, StageMismatchError, TrainConfig, Trainer, TrainingDiverged, checkpoint_name,
                         format_log, train)

SMALL = dict(steps=4, height=16, width=16, clip_len=4, batch_size=1, n_clips=3, val_clips=2, base_channels=2,
             kernel_size=3, disc_channels=2, eval_every=2, checkpoint_every=2, dtype="float64", lr_g=1e-3, lr_d=1e-3)


def small(**kw):
    return TrainConfig(**{**SMALL, **kw})


def _params(tr, component):
    return {n: p.data.copy() for n, p in tr.bundle.component(component).named_parameters()}


def test_config_text_round_trip_and_comments():
    cfg = small(stage="finetune", mask_ratio=(0.2, 0.3), causal=True)
    assert TrainConfig.from_text(cfg.to_text()) == cfg
    assert TrainConfig.from_text("steps = 7  # short run\n\n# comment\nseed=3").steps == 7


def test_config_rejects_unknown_duplicate_and_invalid_values():
    with pytest.raises(ConfigError, match="unknown config key 'stepz'"):
        TrainConfig.from_text("stepz = 3")
    with pytest.raises(ConfigError, match="duplicate"):
        TrainConfig.from_text("steps = 3\nsteps = 4")
    with pytest.raises(ConfigError):
        TrainConfig.from_text("causal = maybe")
    with pytest.raises(ConfigError):
        TrainConfig(height=18)
    with pytest.raises(ConfigError):
        TrainConfig(lambda_l1=0, lambda_perc=0, lambda_style=0, lambda_adv=0)


def test_zero_steps_checkpoint_equals_initialisation(tmp_path):
    cfg = small(steps=0)
    tr = train(cfg, out_dir=str(tmp_path), verbose=False)
    ck = load_checkpoint(tmp_path / checkpoint_name("pretrain", 0))
    fresh = Trainer(cfg)
    for name, p in fresh.bundle.named_parameters():
        assert np.array_equal(ck.tensors["param/" + name], p.data)
    assert tr.trace == []


def test_pretrain_leaves_discriminator_bitwise_unchanged():
    tr = Trainer(small())
    before = _params(tr, "discriminator")
    g_before = _params(tr, "generator")
    tr.run(steps=3)
    assert all(np.array_equal(before[n], p) for n, p in _params(tr, "discriminator").items())
    assert any(not np.array_equal(g_before[n], p) for n, p in _params(tr, "generator").items())


def test_finetune_logs_every_term_and_updates_both_networks():
    tr = Trainer(small(stage="finetune"))
    d0 = _params(tr, "discriminator")
    rec = tr.run(steps=2)[-1]
    for key in ("l1", "perc", "style", "adv", "w_l1", "w_perc", "w_style", "w_adv", "total", "d_loss"):
        assert key in rec and np.isfinite(rec[key])
    assert rec["total"] == pytest.approx(rec["w_l1"] + rec["w_perc"] + rec["w_style"] + rec["w_adv"])
    assert any(not np.array_equal(d0[n], p) for n, p in _params(tr, "discriminator").items())
    assert format_log(rec).startswith("[finetune 2] l1=")


@pytest.mark.parametrize("stage", ["pretrain", "finetune"])
def test_resume_reproduces_the_loss_trace_exactly(tmp_path, stage):
    cfg = small(stage=stage)
    straight = Trainer(cfg)
    straight.run(steps=4)
    first = Trainer(cfg)
    first.run(steps=2)
    first.save(tmp_path / "mid.ckpt")
    second = Trainer(cfg)
    second.resume(load_checkpoint(tmp_path / "mid.ckpt"))
    second.run(steps=4)
    assert first.trace + second.trace == straight.trace
    assert to_bytes(second.to_checkpoint()) == to_bytes(straight.to_checkpoint())


def test_checkpoint_resave_is_byte_identical(tmp_path):
    tr = Trainer(small())
    tr.run(steps=1)
    tr.save(tmp_path / "a.ckpt")
    again = Trainer(small())
    again.resume(load_checkpoint(tmp_path / "a.ckpt"))
    again.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_stage_mismatch_points_to_init(tmp_path):
    tr = Trainer(small())
    tr.save(tmp_path / "p.ckpt")
    ft = Trainer(small(stage="finetune"))
    with pytest.raises(StageMismatchError, match="--init"):
        ft.resume(load_checkpoint(tmp_path / "p.ckpt"))
    ft.init_from(load_checkpoint(tmp_path / "p.ckpt"))
    assert ft.step == 0
    g = dict(tr.bundle.component("generator").named_parameters())
    assert all(np.array_equal(p.data, g[n].data) for n, p in ft.bundle.component("generator").named_parameters())


def test_architecture_mismatch_is_a_config_error(tmp_path):
    Trainer(small()).save(tmp_path / "p.ckpt")
    with pytest.raises(ConfigError, match="base_channels"):
        Trainer(small(base_channels=4)).resume(load_checkpoint(tmp_path / "p.ckpt"))


def test_non_finite_loss_aborts_and_names_last_good_checkpoint(tmp_path):
    tr = Trainer(small())
    tr.run(steps=1)
    good = tr.save(tmp_path / "good.ckpt")
    tr.G.layer11.b.data[:] = np.nan
    with pytest.raises(TrainingDiverged) as e:
        tr.run(steps=3)
    assert "pretrain step 2" in str(e.value)
    assert good in str(e.value)


def test_run_writes_periodic_checkpoints_and_log(tmp_path):
    train(small(), out_dir=str(tmp_path), verbose=False)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert "pretrain_000002.ckpt" in names and "pretrain_000004.ckpt" in names
    assert "config.txt" in names and "train.log" in names
    assert TrainConfig.load(tmp_path / "config.txt") == small()


def test_plateau_detection():
    tr = Trainer(small())
    tr.val_history = [1.0, 0.9, 0.8, 0.8, 0.799, 0.8]
    assert tr.plateaued()
    tr.val_history = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5]
    assert not tr.plateaued()


def test_batches_depend_only_on_seed_stage_and_step():
    a, b = Trainer(small()), Trainer(small())
    assert np.array_equal(a.batch_for(5).mask, b.batch_for(5).mask)
    assert not np.array_equal(a.batch_for(5).mask, a.batch_for(6).mask)
    ft = Trainer(small(stage="finetune"))
    assert not np.array_equal(a.batch_for(5).mask, ft.batch_for(5).mask)
