"""Central finite-difference verification of every backward rule (float64).

Each check reduces the output to a scalar through a fixed random projection,
then compares the tape gradient with (f(x+h) - f(x-h)) / 2h at sampled
coordinates, h = 1e-6 * max(1, |x|). The relative error of a coordinate is
|analytic - numeric| / max(|analytic|, |numeric|, floor), with floor the
larger of 1e-3 * max|analytic| over the tensor and 1e4 times the rounding
noise of the difference quotient, estimated as 1e-15 * sum|R * f| / h.
Finite differences of components far below either scale are dominated by
rounding; a wrong backward rule produces errors on the order of the largest
component and still fails.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .kernels import bilinear_resize, conv2d_per_frame, gram_matrix, temporal_conv1d_depthwise
from .losses import (PAPER, STANDARD, FeatureExtractor, LossWeights, d_hinge_loss, g_adv_loss, l1_loss,
                     perceptual_loss, style_loss, total_loss)
from .module import Module
from .networks import (Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelBundle, OutputConv,
                       composite_output)
from .tsm import (FIXED, LEARNABLE, GatedLayer, LearnableShiftKernels, ShiftSpec, SpectralNormState,
                  init_tsm_equivalent, learnable_temporal_shift, spectral_normalize, temporal_shift_fixed)

TOLERANCE = 1e-4
COMPONENTS = ("ops", "layer", "generator", "losses", "discriminator")


@dataclass
class CheckResult:
    component: str
    name: str
    max_rel_err: float
    n_coords: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def check_grad(f, wrt, n_samples: int = 12, seed: int = 0) -> tuple[float, int]:
    """Max relative error of d(R . f())/d(wrt) at up to ``n_samples`` coordinates per tensor."""
    rng = np.random.default_rng(seed)
    with ag.no_grad():
        out0 = f()
    R = rng.standard_normal(out0.shape) if out0.ndim else np.array(1.0)
    magnitude = float(np.abs(out0.data * R).sum())

    def scalar() -> float:
        with ag.no_grad():
            return float((f().data * R).sum())

    for t in wrt:
        t.requires_grad = True
        t.grad = None
    out = f()
    loss = ag.sum_(ag.mul(out, R)) if out.ndim else out
    ag.backward(loss)
    worst, count = 0.0, 0
    for t in wrt:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat_idx = rng.choice(t.size, size=min(n_samples, t.size), replace=False)
        floor = 1e-3 * float(np.abs(g).max()) + 1e-12
        for fi in flat_idx:
            idx = np.unravel_index(fi, t.shape)
            x0 = t.data[idx]
            h = 1e-6 * max(1.0, abs(float(x0)))
            t.data[idx] = x0 + h
            fp = scalar()
            t.data[idx] = x0 - h
            fm = scalar()
            t.data[idx] = x0
            num = (fp - fm) / (2 * h)
            ana = float(g[idx])
            noise = 1e-15 * magnitude / h
            err = abs(ana - num) / max(abs(ana), abs(num), floor, 1e4 * noise)
            worst = max(worst, err)
            count += 1
    return worst, count


def _rand(rng, *shape, away_from_zero=False):
    a = rng.standard_normal(shape)
    if away_from_zero:
        a = np.where(np.abs(a) < 1e-2, 1e-2 * np.sign(a) + (a == 0) * 1e-2, a)
    return Tensor(a, requires_grad=True)


def _frozen_sn(w: Parameter, rng) -> Tensor:
    """Spectral normalisation with u, v held fixed so repeated evaluations agree."""
    st = SpectralNormState(w.data, rng)
    return spectral_normalize(w, st, update=False)


def _freeze(module: Module):
    """Eval mode: spectral-norm vectors stop updating during finite differences."""
    module.eval()
    return module


# -- suites -----------------------------------------------------------------
def _ops(rng):
    x = _rand(rng, 2, 3, 4, 5)
    y = _rand(rng, 2, 3, 4, 5)
    yb = _rand(rng, 1, 3, 1, 5)
    k = _rand(rng, 1, 1, 1, 1)
    xs = _rand(rng, 2, 3, 4, 5, away_from_zero=True)
    v = _rand(rng, 1, 4, 3, 6, 6)
    w = _rand(rng, 5, 4, 3, 3)
    b = _rand(rng, 5)
    w5 = _rand(rng, 3, 4, 5, 5)
    tk = _rand(rng, 4, 3)
    tk5 = _rand(rng, 4, 5)
    spec = ShiftSpec(Fraction(1, 4), False, LEARNABLE)
    cspec = ShiftSpec(Fraction(1, 4), True, LEARNABLE)
    v8 = _rand(rng, 1, 8, 3, 4, 4)
    shift = init_tsm_equivalent(LearnableShiftKernels(8, 3, spec, dtype=np.float64), spec)
    shift.weight.data += 0.1 * rng.standard_normal(shift.weight.shape)
    cshift = init_tsm_equivalent(LearnableShiftKernels(8, 3, cspec, dtype=np.float64), cspec)
    cshift.weight.data += 0.1 * rng.standard_normal(cshift.weight.shape)
    gshift = LearnableShiftKernels(8, 3, spec, grouped=True, dtype=np.float64)
    gshift.weight.data = rng.standard_normal(gshift.weight.shape)
    sw = Parameter(rng.standard_normal((6, 4, 3, 3)))
    sn_state = SpectralNormState(sw.data, rng)
    feat = _rand(rng, 1, 4, 2, 3, 3)
    m = (rng.random((1, 1, 3, 6, 6)) < 0.4).astype(float)
    O = _rand(rng, 1, 3, 3, 6, 6)
    Vt = _rand(rng, 1, 3, 3, 6, 6)
    return [
        ("add", lambda: ag.add(x, yb), [x, yb]),
        ("sub", lambda: ag.sub(x, yb), [x, yb]),
        ("mul", lambda: ag.mul(x, y), [x, y]),
        ("mul_broadcast", lambda: ag.mul(x, yb), [x, yb]),
        ("mul_scalar_tensor", lambda: ag.mul(x, k), [x, k]),
        ("sigmoid", lambda: ag.sigmoid(x), [x]),
        ("tanh", lambda: ag.tanh(x), [x]),
        ("relu", lambda: ag.relu(xs), [xs]),
        ("leaky_relu", lambda: ag.leaky_relu(xs, 0.2), [xs]),
        ("abs", lambda: ag.abs_(xs), [xs]),
        ("sum", lambda: ag.sum_(x), [x]),
        ("mean", lambda: ag.mean(x), [x]),
        ("concat", lambda: ag.concat([x, y], axis=1), [x, y]),
        ("reshape", lambda: ag.reshape(x, (6, 20)), [x]),
        ("conv2d", lambda: conv2d_per_frame(v, w, b), [v, w, b]),
        ("conv2d_stride2", lambda: conv2d_per_frame(v, w, b, stride=2), [v, w, b]),
        ("conv2d_dilation2", lambda: conv2d_per_frame(v, w, None, dilation=2), [v, w]),
        ("conv2d_5x5_stride2", lambda: conv2d_per_frame(v, w5, None, stride=2), [v, w5]),
        ("temporal_conv1d", lambda: temporal_conv1d_depthwise(v, tk), [v, tk]),
        ("temporal_conv1d_k5", lambda: temporal_conv1d_depthwise(v, tk5), [v, tk5]),
        ("bilinear_down", lambda: bilinear_resize(v, 3, 3), [v]),
        ("bilinear_up", lambda: bilinear_resize(v, 12, 12), [v]),
        ("gram_matrix", lambda: gram_matrix(feat), [feat]),
        ("temporal_shift_fixed", lambda: temporal_shift_fixed(v8, ShiftSpec(mode=FIXED)), [v8]),
        ("temporal_shift_fixed_causal", lambda: temporal_shift_fixed(v8, ShiftSpec(causal=True, mode=FIXED)), [v8]),
        ("learnable_shift", lambda: learnable_temporal_shift(v8, shift), [v8, shift.weight]),
        ("learnable_shift_causal", lambda: learnable_temporal_shift(v8, cshift), [v8, cshift.weight]),
        ("learnable_shift_grouped", lambda: learnable_temporal_shift(v8, gshift), [v8, gshift.weight]),
        ("spectral_normalize", lambda: spectral_normalize(sw, sn_state, update=False), [sw]),
        ("composite_output", lambda: composite_output(O, Vt, m), [O, Vt]),
    ]


def _layer(rng):
    spec = ShiftSpec()
    layer = GatedLayer(4, 6, kernel=3, dilation=1, shift=spec, rng=rng)
    init_tsm_equivalent(layer.shift, spec)
    layer.shift.weight.data += 0.1 * rng.standard_normal(layer.shift.weight.shape)
    _freeze(layer)
    down = _freeze(GatedLayer(4, 4, kernel=3, resample="down2", dilation=2, shift=spec, rng=rng))
    fixed = _freeze(GatedLayer(4, 4, kernel=3, resample="up2", shift=ShiftSpec(mode=FIXED), rng=rng))
    x = _rand(rng, 1, 4, 3, 8, 8)
    return [
        ("lgtsm_layer", lambda: layer(x), [x] + layer.parameters()),
        ("lgtsm_layer_down2_dilated", lambda: down(x), [x] + down.parameters()),
        ("lgtsm_layer_up2_fixed_shift", lambda: fixed(x), [x] + fixed.parameters()),
    ]


class _MiniGenerator(Module):
    """Three gated layers (same, down, up) plus the tanh output conv."""

    def __init__(self, rng, c=4):
        super().__init__()
        spec = ShiftSpec()
        self.l1 = GatedLayer(4, c, 3, 1, "none", shift=spec, rng=rng)
        self.l2 = GatedLayer(c, c, 3, 1, "down2", shift=spec, rng=rng)
        self.l3 = GatedLayer(c, c, 3, 1, "up2", shift=spec, rng=rng)
        self.out = OutputConv(c, 3, 3, True, rng, np.float64)

    def forward(self, x, m):
        h = ag.concat([x, Tensor(m)], axis=1)
        return self.out(self.l3(self.l2(self.l1(h))))


def _randomize_biases(module: Module, rng, scale: float = 0.5):
    """Move pre-activations off the leaky-relu kink at zero."""
    for name, p in module.named_parameters():
        if name.rsplit(".", 1)[-1].startswith("b"):
            p.data = scale * rng.standard_normal(p.shape)
    return module


def _generator(rng):
    mini = _freeze(_MiniGenerator(rng))
    x = _rand(rng, 1, 3, 3, 8, 8)
    m = (rng.random((1, 1, 3, 8, 8)) < 0.3).astype(float)
    # Full depth without spectral norm: with it, ten attenuating layers push
    # early-layer gradients (~1e-8) below finite-difference resolution. The
    # spectral-norm backward is covered by the op, layer and mini checks.
    gen = _randomize_biases(_freeze(Generator(GeneratorConfig(base_channels=2, kernel_size=3, spectral_norm=False),
                                              seed=3)), rng)
    ModelBundle(gen)
    params = gen.parameters()
    picked = [params[i] for i in rng.choice(len(params), size=8, replace=False)]
    cgen = _randomize_biases(_freeze(Generator(GeneratorConfig(base_channels=2, kernel_size=3, causal=True,
                                                                 spectral_norm=False), seed=4)), rng)
    xs = _rand(rng, 1, 3, 3, 8, 8)
    return [
        ("mini_generator", lambda: mini(x, m), [x] + mini.parameters()),
        ("full_generator_tiny", lambda: gen(x, m), [x] + picked),
        ("full_generator_causal_tiny", lambda: cgen(xs, m), [xs, cgen.layer1.shift.weight, cgen.layer11.w]),
    ]


def _losses(rng):
    fx = FeatureExtractor.seeded(seed=7, channels=(3, 4), kernel=3)
    O = _rand(rng, 1, 3, 2, 8, 8)
    V = Tensor(rng.standard_normal((1, 3, 2, 8, 8)))
    m = (rng.random((1, 1, 2, 8, 8)) < 0.3).astype(float)
    sr = _rand(rng, 1, 1, 2, 3, 3)
    sf = _rand(rng, 1, 1, 2, 3, 3)
    w = LossWeights()

    def total():
        comps = {"l1": l1_loss(O, V), "perc": perceptual_loss(O, V, fx), "style": style_loss(O, V, fx),
                 "adv": g_adv_loss(ag.mul(ag.mean(O), 1.0))}
        return total_loss(comps, w)

    return [
        ("l1_loss", lambda: l1_loss(O, V), [O]),
        ("l1_loss_mask_weighted", lambda: l1_loss(O, V, m, masked_weight=3.0), [O]),
        ("perceptual_loss", lambda: perceptual_loss(O, V, fx), [O]),
        ("style_loss", lambda: style_loss(O, V, fx), [O]),
        ("d_hinge_standard", lambda: d_hinge_loss(sr, sf, STANDARD), [sr, sf]),
        ("d_hinge_paper", lambda: d_hinge_loss(sr, sf, PAPER), [sr, sf]),
        ("g_adv_loss", lambda: g_adv_loss(sf), [sf]),
        ("total_loss", total, [O]),
    ]


def _discriminator(rng):
    disc = _freeze(Discriminator(DiscriminatorConfig(base_channels=2, n_layers=3), seed=5))
    x = _rand(rng, 1, 3, 4, 16, 16)
    return [("discriminator", lambda: disc(x), [x] + disc.parameters())]


SUITES = {"ops": _ops, "layer": _layer, "generator": _generator, "losses": _losses, "discriminator": _discriminator}


def run_suite(component: str = "all", seed: int = 0, n_samples: int = 12) -> list[CheckResult]:
    names = COMPONENTS if component == "all" else (component,)
    for n in names:
        if n not in SUITES:
            raise ValueError(f"unknown gradcheck component {n!r}; choose from {COMPONENTS + ('all',)}")
    results = []
    with ag.verification_mode():
        for n in names:
            rng = np.random.default_rng(seed)
            for name, f, wrt in SUITES[n](rng):
                err, cnt = check_grad(f, wrt, n_samples=n_samples, seed=seed)
                results.append(CheckResult(n, name, err, cnt))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'component':<14} {'check':<32} {'coords':>6} {'max rel err':>12}  status"]
    for r in results:
        lines.append(f"{r.component:<14} {r.name:<32} {r.n_coords:>6} {r.max_rel_err:>12.3e}  {'ok' if r.passed else 'FAIL'}")
    bad = [r.name for r in results if not r.passed]
    lines.append(f"{len(results) - len(bad)}/{len(results)} passed (tolerance {TOLERANCE:g})"
                 + (f"; failing: {', '.join(bad)}" if bad else ""))
    return "\n".join(lines) + "\n"
