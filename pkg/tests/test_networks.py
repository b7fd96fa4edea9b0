import numpy as np
import pytest

from lgtsm import autograd as ag
from lgtsm.autograd import Tensor
from lgtsm.networks import (Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelBundle,
                            build_3dconv_variant, composite_output, param_count)
from lgtsm.tsm import FIXED

TINY = GeneratorConfig(base_channels=4, kernel_size=3)


def _inputs(B=1, L=4, H=16, W=16, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1, 1, (B, 3, L, H, W))
    m = (rng.random((B, 1, L, H, W)) < 0.2).astype(np.float64)
    return v, m


def test_generator_output_shape_and_range():
    g = Generator(TINY)
    v, m = _inputs(B=2)
    out = g(Tensor(v * (1 - m)), m).data
    assert out.shape == v.shape
    assert np.abs(out).max() <= 1.0


def test_generator_rejects_sizes_not_divisible_by_four():
    g = Generator(TINY)
    v, m = _inputs(H=18, W=16)
    with pytest.raises(ValueError, match="divisible by 4"):
        g(Tensor(v), m)


def test_generator_is_deterministic_in_seed():
    v, m = _inputs()
    a = Generator(TINY, seed=3)(Tensor(v), m).data
    b = Generator(TINY, seed=3)(Tensor(v), m).data
    assert np.array_equal(a, b)


def test_layer_count_and_channel_plan():
    g = Generator(GeneratorConfig(base_channels=8))
    assert len(g.layers) == 11
    widths = [(l.cin, l.cout) for l in g.layers[:-1]]
    assert widths[0] == (4, 8) and widths[4] == (32, 32) and widths[-1] == (16, 8)
    assert [g.layers[i].dilation for i in (5, 6)] == [2, 4]


def test_parameter_ratio_against_3d_variant():
    cfg = GeneratorConfig()
    ratio = param_count(Generator(cfg)) / param_count(build_3dconv_variant(cfg).generator)
    assert 0.333 <= ratio <= 0.35


def test_fixed_mode_adds_no_shift_parameters():
    learn = param_count(Generator(TINY))
    fixed = param_count(Generator(GeneratorConfig(base_channels=4, kernel_size=3, shift_mode=FIXED)))
    shift_params = sum(l.shift_param_count() for l in Generator(TINY).layers[:-1])
    assert learn - fixed == shift_params > 0


def test_causal_generator_ignores_future_frames():
    g = Generator(TINY, seed=1)
    g.set_causal(True)
    g.eval()
    v, m = _inputs(L=6, seed=2)
    a = g(Tensor(v), m).data
    v2 = v.copy()
    v2[:, :, 4:] = np.random.default_rng(9).uniform(-1, 1, v2[:, :, 4:].shape)
    b = g(Tensor(v2), m).data
    assert np.array_equal(a[:, :, :4], b[:, :, :4])
    assert not np.array_equal(a[:, :, 4:], b[:, :, 4:])


def test_non_causal_generator_reads_future_frames():
    g = Generator(TINY, seed=1)
    g.eval()
    v, m = _inputs(L=6, seed=2)
    v2 = v.copy()
    v2[:, :, 5] += 0.5
    assert not np.array_equal(g(Tensor(v), m).data[:, :, 4], g(Tensor(v2), m).data[:, :, 4])


def test_composite_keeps_known_pixels_exactly():
    v, m = _inputs()
    o = np.random.default_rng(5).uniform(-1, 1, v.shape)
    c = composite_output(o, v, m).data
    keep = np.broadcast_to(m == 0, v.shape)
    assert np.array_equal(c[keep], v[keep])
    assert np.array_equal(c[~keep], o[~keep])


def test_discriminator_layers_and_score_shape():
    d = Discriminator(DiscriminatorConfig(base_channels=4))
    s = d(Tensor(np.zeros((1, 3, 4, 64, 64))))
    assert d.n_layers == 6
    assert s.shape == (1, 1, 4, 1, 1)


def test_discriminator_spectral_norms_after_warmup_svd_oracle():
    d = Discriminator(DiscriminatorConfig(base_channels=4))
    d.warmup()
    for i in range(1, d.n_layers + 1):
        w = d.weight(i, update=False).data
        assert np.linalg.svd(w.reshape(w.shape[0], -1), compute_uv=False)[0] <= 1 + 1e-2


def test_bundle_names_parameters_hierarchically():
    b = ModelBundle.build(TINY, DiscriminatorConfig(base_channels=4))
    names = [n for n, _ in b.named_parameters()]
    assert "generator.layer3.wf" in names
    assert "discriminator.w1" in names
    assert param_count(b, "generator") == param_count(b.generator)
    with pytest.raises(KeyError):
        b.component("critic")


def test_train_mode_updates_power_iteration_and_eval_does_not():
    g = Generator(TINY)
    v, m = _inputs()
    u0 = g.layer1._buffers["wf_u"].copy()
    g.eval()
    with ag.no_grad():
        g(Tensor(v), m)
    assert np.array_equal(u0, g.layer1._buffers["wf_u"])
    g.train()
    with ag.no_grad():
        g(Tensor(v), m)
    assert not np.array_equal(u0, g.layer1._buffers["wf_u"])
