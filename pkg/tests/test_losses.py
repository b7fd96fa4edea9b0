import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lgtsm import autograd as ag
from lgtsm.autograd import Tensor
from lgtsm.losses import (PAPER, STANDARD, FeatureExtractor, LossWeights, d_hinge_loss, g_adv_loss, l1_loss,
                          perceptual_loss, style_loss, total_loss)

FX = FeatureExtractor.seeded()


def _video(seed, shape=(2, 3, 2, 16, 16)):
    return np.random.default_rng(seed).uniform(-1, 1, shape)


def test_reconstruction_losses_vanish_at_target():
    v = _video(0)
    assert l1_loss(Tensor(v), v).item() == 0.0
    assert perceptual_loss(Tensor(v), v, FX).item() == 0.0
    assert style_loss(Tensor(v), v, FX).item() == 0.0


def test_l1_frozen_value():
    o = np.zeros((1, 3, 1, 2, 2))
    v = np.full((1, 3, 1, 2, 2), 0.5)
    v[0, 0, 0, 0, 0] = -1.5
    # (1.5 + 11 * 0.5) / 12
    assert l1_loss(Tensor(o), v).item() == pytest.approx(7.0 / 12.0, abs=1e-15)


def test_masked_weight_l1():
    o = np.zeros((1, 1, 1, 1, 2))
    v = np.ones((1, 1, 1, 1, 2))
    m = np.array([1.0, 0.0]).reshape(1, 1, 1, 1, 2)
    assert l1_loss(Tensor(o), v, m, masked_weight=3.0).item() == 2.0


def test_hinge_at_zero_scores_is_two_under_both_conventions():
    z = Tensor(np.zeros((2, 1, 4, 1, 1)))
    assert d_hinge_loss(z, z, STANDARD).item() == 2.0
    assert d_hinge_loss(z, z, PAPER).item() == 2.0


def test_hinge_conventions_mirror_each_other():
    r = Tensor(np.array([0.5, -2.0]))
    f = Tensor(np.array([-0.5, 3.0]))
    # standard: mean(relu(1 - r)) + mean(relu(1 + f)) = (0.5 + 3) / 2 + (0.5 + 4) / 2
    assert d_hinge_loss(r, f, STANDARD).item() == 4.0
    # paper form: relu(1 + r) + relu(1 - f) = (1.5 + 0) / 2 + (1.5 + 0) / 2
    assert d_hinge_loss(r, f, PAPER).item() == 1.5
    with pytest.raises(ValueError):
        d_hinge_loss(r, f, "other")


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5))
def test_generator_adversarial_loss_of_constant_scores(c):
    assert g_adv_loss(Tensor(np.full((2, 1, 3, 1, 1), c))).item() == -c


def test_style_loss_ignores_spatial_permutations_of_a_constant_video():
    # constant frames have position-free Gram matrices; any perturbation must raise the loss
    v = np.full((1, 3, 1, 16, 16), 0.3)
    o = v.copy()
    o[0, 0, 0, 3, 3] = -0.9
    assert style_loss(Tensor(o), v, FX).item() > 0.0


def test_perceptual_and_style_are_batch_averaged():
    v = _video(1, (1, 3, 2, 16, 16))
    o = _video(2, (1, 3, 2, 16, 16))
    vv, oo = np.concatenate([v, v]), np.concatenate([o, o])
    assert np.isclose(perceptual_loss(Tensor(oo), vv, FX).item(), perceptual_loss(Tensor(o), v, FX).item())
    assert np.isclose(style_loss(Tensor(oo), vv, FX).item(), style_loss(Tensor(o), v, FX).item())


def test_total_loss_weights_and_defaults():
    w = LossWeights()
    assert (w.l1, w.perc, w.style, w.adv) == (1.0, 0.1, 10.0, 0.01)
    comps = {k: Tensor(np.array(1.0)) for k in ("l1", "perc", "style", "adv")}
    assert total_loss(comps, w).item() == pytest.approx(11.11)
    with pytest.raises(ValueError):
        LossWeights(l1=-1.0)


def test_feature_extractor_weights_round_trip(tmp_path):
    p = tmp_path / "fx.bin"
    FX.save(p)
    fx2 = FeatureExtractor.load(p)
    assert all(np.array_equal(a.astype(np.float32), b) for a, b in zip(FX.weights, fx2.weights))
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(ValueError, match="stage payload"):
        FeatureExtractor.load(p)


def test_loss_gradient_flows_only_into_output():
    v = _video(3)
    o = Tensor(_video(4), requires_grad=True)
    vt = Tensor(v, requires_grad=True)
    ag.backward(perceptual_loss(o, vt, FX))
    assert o.grad is not None and np.abs(o.grad).sum() > 0
    assert vt.grad is None
