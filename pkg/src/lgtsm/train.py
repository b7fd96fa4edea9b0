"""Two-stage training: generator pretraining, then adversarial fine-tuning."""
from __future__ import annotations

import json
import os
import queue
import threading
from dataclasses import dataclass, fields
from fractions import Fraction

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Batch, load_dataset, make_batch, synthetic_dataset
from .losses import (PAPER, STANDARD, FeatureExtractor, LossWeights, d_hinge_loss, g_adv_loss, l1_loss,
                     perceptual_loss, style_loss, total_loss)
from .maskgen import KINDS, MaskSpec
from .networks import (SPATIAL_MULTIPLE, DiscriminatorConfig, GeneratorConfig, ModelBundle, composite_output)
from .optim import Adam
from .tsm import FIXED, LEARNABLE

STAGES = ("pretrain", "finetune")


class ConfigError(ValueError):
    pass


class StageMismatchError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    def __init__(self, stage, step, what, last_good):
        self.last_good = last_good
        ref = last_good if last_good else "none saved yet"
        super().__init__(f"non-finite {what} at {stage} step {step}; last good checkpoint: {ref}")


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_ratio(s: str) -> tuple:
    lo, sep, hi = s.partition(":")
    if not sep:
        raise ValueError(f"ratio must look like lo:hi, got {s!r}")
    return (float(lo), float(hi))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return f"{v[0]!r}:{v[1]!r}"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "pretrain"
    steps: int = 300
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    lambda_l1: float = 1.0
    lambda_perc: float = 0.1
    lambda_style: float = 10.0
    lambda_adv: float = 0.01
    hinge_sign: str = STANDARD
    batch_size: int = 2
    clip_len: int = 8
    height: int = 64
    width: int = 64
    seed: int = 0
    causal: bool = False
    shift_mode: str = LEARNABLE
    base_channels: int = 32
    kernel_size: int = 5
    generator_sn: bool = True
    disc_channels: int = 32
    mask_kind: str = "stroke"
    mask_ratio: tuple = (0.1, 0.2)
    data: str = "synthetic"
    n_clips: int = 32
    val_clips: int = 4
    eval_every: int = 50
    checkpoint_every: int = 100
    plateau: bool = False
    out_dir: str = "runs/lgtsm"
    feature_weights: str = ""
    dtype: str = "float32"
    deterministic: bool = True
    prefetch: int = 2

    def __post_init__(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)
        need(self.stage in STAGES, f"stage must be one of {STAGES}, got {self.stage!r}")
        need(self.steps >= 0, "steps must be nonnegative")
        need(self.lr_g > 0 and self.lr_d > 0, "learning rates must be positive")
        need(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "Adam betas must lie in [0, 1)")
        need(self.hinge_sign in (STANDARD, PAPER), f"hinge_sign must be {STANDARD!r} or {PAPER!r}")
        need(self.batch_size >= 1 and self.clip_len >= 1, "batch_size and clip_len must be positive")
        need(self.height >= 16 and self.width >= 16, "frames must be at least 16x16")
        need(self.height % SPATIAL_MULTIPLE == 0 and self.width % SPATIAL_MULTIPLE == 0,
             f"height and width must be multiples of {SPATIAL_MULTIPLE}")
        need(self.shift_mode in (FIXED, LEARNABLE), f"shift_mode must be {FIXED!r} or {LEARNABLE!r}")
        need(self.base_channels >= 1 and self.disc_channels >= 1, "channel widths must be positive")
        need(self.kernel_size % 2 == 1, "kernel_size must be odd")
        need(self.mask_kind in KINDS, f"mask_kind must be one of {KINDS}")
        need(0 <= self.mask_ratio[0] < self.mask_ratio[1] <= 1, "mask_ratio must satisfy 0 <= lo < hi <= 1")
        need(self.n_clips >= 1 and self.val_clips >= 1, "dataset sizes must be positive")
        need(self.eval_every >= 1 and self.checkpoint_every >= 1, "eval_every and checkpoint_every must be positive")
        need(self.dtype in ("float32", "float64"), "dtype must be float32 or float64")
        need(self.prefetch >= 0, "prefetch must be nonnegative")
        self.loss_weights()

    def loss_weights(self) -> LossWeights:
        try:
            return LossWeights(self.lambda_l1, self.lambda_perc, self.lambda_style, self.lambda_adv)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(base_channels=self.base_channels, kernel_size=self.kernel_size,
                               shift_fraction=Fraction(1, 4), shift_mode=self.shift_mode,
                               causal=self.causal, spectral_norm=self.generator_sn)

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(base_channels=self.disc_channels)

    def mask_spec(self) -> MaskSpec:
        return MaskSpec(self.mask_kind, tuple(self.mask_ratio))

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    # -- text form -----------------------------------------------------------
    def to_dict(self) -> dict:
        return {f.name: _fmt(getattr(self, f.name)) for f in fields(self)}

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @classmethod
    def from_dict(cls, values: dict, base: "TrainConfig | None" = None) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            t = types[key]
            raw = str(raw).strip()
            try:
                if t == "bool":
                    kw[key] = _parse_bool(raw)
                elif t == "int":
                    kw[key] = int(raw)
                elif t == "float":
                    kw[key] = float(raw)
                elif t == "tuple":
                    kw[key] = _parse_ratio(raw)
                else:
                    kw[key] = raw
            except ValueError as e:
                raise ConfigError(f"bad value for {key}: {e}") from None
        start = {f.name: getattr(base, f.name) for f in fields(cls)} if base else {}
        start.update(kw)
        return cls(**start)

    @classmethod
    def from_text(cls, text: str, source="<config>") -> "TrainConfig":
        values = {}
        for n, line in enumerate(text.splitlines(), start=1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            key, sep, val = s.partition("=")
            if not sep:
                raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
            key = key.strip()
            if key in values:
                raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
            values[key] = val.strip()
        return cls.from_dict(values)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read(), str(path))


# Changing any of these between save and resume changes the model itself.
ARCH_KEYS = ("base_channels", "kernel_size", "shift_mode", "generator_sn", "disc_channels", "dtype", "causal")


def _finite(x) -> bool:
    return bool(np.isfinite(x).all())


class _Prefetcher:
    """Builds batches for upcoming steps on a worker thread (bounded queue)."""

    def __init__(self, make, steps, depth):
        self._q = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._t = threading.Thread(target=self._work, args=(make, list(steps)), daemon=True)
        self._t.start()

    def _work(self, make, steps):
        for s in steps:
            if self._stop.is_set():
                return
            try:
                item = (s, make(s), None)
            except Exception as e:  # handed to the consumer
                item = (s, None, e)
            while not self._stop.is_set():
                try:
                    self._q.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue

    def get(self, step):
        s, batch, err = self._q.get()
        if err is not None:
            raise err
        assert s == step, (s, step)
        return batch

    def close(self):
        self._stop.set()
        self._t.join(timeout=5)


class Trainer:
    """Owns the model bundle, both optimizers and the loop state."""

    def __init__(self, cfg: TrainConfig, train_set=None, val_set=None, log=None, verbose: bool = False):
        self.cfg = cfg
        dtype = cfg.np_dtype
        self.bundle = ModelBundle.build(cfg.generator_config(), cfg.discriminator_config(), seed=cfg.seed, dtype=dtype)
        self.G = self.bundle.generator
        self.D = self.bundle.discriminator
        betas = (cfg.beta1, cfg.beta2)
        self.opt_g = Adam(self.G.parameters(), cfg.lr_g, betas)
        self.opt_d = Adam(self.D.parameters(), cfg.lr_d, betas)
        self.fx = FeatureExtractor.load(cfg.feature_weights) if cfg.feature_weights else FeatureExtractor.seeded()
        self.weights = cfg.loss_weights()
        self.mask_spec = cfg.mask_spec()
        self.stage = cfg.stage
        if self.stage == "finetune":
            self.D.warmup()
        self.step = 0
        self.val_history: list[float] = []
        self.trace: list[dict] = []
        self.last_good: str | None = None
        self.verbose = verbose
        self._log_fn = log
        if train_set is None:
            if cfg.data == "synthetic":
                train_set = synthetic_dataset(cfg.n_clips, seed=cfg.seed, L=cfg.clip_len, H=cfg.height, W=cfg.width)
            else:
                train_set = load_dataset(cfg.data)
        if val_set is None:
            val_set = synthetic_dataset(cfg.val_clips, seed=cfg.seed + 10007, L=cfg.clip_len, H=cfg.height, W=cfg.width)
        if not train_set:
            raise ValueError("training set is empty")
        self.train_set, self.val_set = train_set, val_set
        self.val_batch = make_batch(val_set, self.mask_spec, len(val_set), seed=cfg.seed + 1, step=0,
                                    indices=list(range(len(val_set))), clip_len=cfg.clip_len, dtype=dtype)

    # -- data -------------------------------------------------------------------
    def batch_for(self, step: int) -> Batch:
        """Batch for ``step`` of the current stage; a pure function of (seed, stage, step)."""
        stream = [self.cfg.seed, STAGES.index(self.stage), step]
        b = make_batch(self.train_set, self.mask_spec, self.cfg.batch_size, seed=int(np.random.SeedSequence(stream).generate_state(1)[0]),
                       step=step, clip_len=self.cfg.clip_len, dtype=self.cfg.np_dtype)
        b.check()
        return b

    # -- single steps -----------------------------------------------------------
    def _reconstruction_terms(self, O, V) -> dict:
        w = self.weights
        comps = {"l1": l1_loss(O, V)}
        if w.perc > 0:
            comps["perc"] = perceptual_loss(O, V, self.fx)
        if w.style > 0:
            comps["style"] = style_loss(O, V, self.fx)
        return comps

    def _guard(self, what, value):
        if not _finite(value):
            raise TrainingDiverged(self.stage, self.step + 1, what, self.last_good)

    def _guard_grads(self, params, what):
        for p in params:
            if p.grad is not None and not _finite(p.grad):
                raise TrainingDiverged(self.stage, self.step + 1, f"{what} gradient ({p.name})", self.last_good)

    def pretrain_step(self, batch: Batch) -> dict:
        self.G.train()
        O = self.G(Tensor(batch.masked_video), batch.mask)
        comps = self._reconstruction_terms(O, batch.video)
        L = total_loss(comps, self.weights)
        self._guard("generator loss", L.data)
        self.opt_g.zero_grad()
        ag.backward(L)
        self._guard_grads(self.opt_g.params, "generator")
        self.opt_g.step()
        return self._record(comps, L, None)

    def finetune_step(self, batch: Batch) -> dict:
        self.G.train()
        self.D.train()
        V = Tensor(batch.video)
        O = self.G(Tensor(batch.masked_video), batch.mask)
        fake = composite_output(O, V, batch.mask)
        # discriminator update on a detached fake
        d_loss = d_hinge_loss(self.D(V), self.D(fake.detach()), self.cfg.hinge_sign)
        self._guard("discriminator loss", d_loss.data)
        self.opt_d.zero_grad()
        ag.backward(d_loss)
        self._guard_grads(self.opt_d.params, "discriminator")
        self.opt_d.step()
        # generator update against the refreshed discriminator
        comps = self._reconstruction_terms(O, batch.video)
        comps["adv"] = g_adv_loss(self.D(fake))
        L = total_loss(comps, self.weights)
        self._guard("generator loss", L.data)
        self.opt_g.zero_grad()
        self.opt_d.zero_grad()
        ag.backward(L)
        self._guard_grads(self.opt_g.params, "generator")
        self.opt_g.step()
        self.opt_d.zero_grad()
        return self._record(comps, L, d_loss)

    def _record(self, comps, L, d_loss) -> dict:
        self.step += 1
        rec = {"stage": self.stage, "step": self.step}
        for key in ("l1", "perc", "style", "adv"):
            if key in comps:
                rec[key] = float(comps[key].item())
                rec["w_" + key] = getattr(self.weights, key) * rec[key]
        rec["total"] = float(L.item())
        if d_loss is not None:
            rec["d_loss"] = float(d_loss.item())
        self.trace.append(rec)
        self._emit(rec)
        return rec

    def _emit(self, rec):
        if self._log_fn is not None:
            self._log_fn(rec)
        if self.verbose:
            print(format_log(rec), flush=True)

    # -- evaluation ---------------------------------------------------------------
    def validate(self) -> dict:
        """Full-frame l1 of the raw output and masked-region MSE of the composite ([0,1] scale)."""
        self.G.eval()
        vb = self.val_batch
        with ag.no_grad():
            O = self.G(Tensor(vb.masked_video), vb.mask).data
        self.G.train()
        return validation_metrics(O, vb)

    def plateaued(self, window: int = 3, tol: float = 0.01) -> bool:
        """True when the last ``window`` evaluations improved the best earlier value by < tol (relative)."""
        h = self.val_history
        if len(h) <= window:
            return False
        best_before = min(h[:-window])
        return min(h[-window:]) > best_before * (1 - tol)

    # -- loop -----------------------------------------------------------------------
    def run(self, out_dir: str | None = None, steps: int | None = None) -> list[dict]:
        """Run the current stage up to ``steps`` (default cfg.steps) total steps."""
        cfg = self.cfg
        target = cfg.steps if steps is None else steps
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        step_fn = self.pretrain_step if self.stage == "pretrain" else self.finetune_step
        todo = range(self.step + 1, target + 1)
        pre = None
        if cfg.prefetch and not cfg.deterministic:
            pre = _Prefetcher(self.batch_for, todo, cfg.prefetch)
        try:
            for s in todo:
                batch = pre.get(s) if pre else self.batch_for(s)
                step_fn(batch)
                if s % cfg.eval_every == 0:
                    m = self.validate()
                    self.val_history.append(m["l1"])
                    self._emit({"stage": self.stage, "step": s, "eval": m})
                    if cfg.plateau and self.stage == "pretrain" and self.plateaued():
                        self._emit({"stage": self.stage, "step": s, "event": "plateau"})
                        break
                if out_dir and s % cfg.checkpoint_every == 0:
                    self.save(os.path.join(out_dir, checkpoint_name(self.stage, s)))
        finally:
            if pre:
                pre.close()
        if out_dir:
            self.save(os.path.join(out_dir, checkpoint_name(self.stage, self.step)))
        return self.trace

    # -- checkpoints ----------------------------------------------------------------
    def to_checkpoint(self) -> Checkpoint:
        tensors = {}
        for name, p in self.bundle.named_parameters():
            tensors["param/" + name] = p.data
        for name, b in self.bundle.named_buffers():
            tensors["buffer/" + name] = b
        adam = {}
        for tag, opt in (("G", self.opt_g), ("D", self.opt_d)):
            st = opt.state
            for name in st.m:
                tensors[f"adam/{tag}/m/{name}"] = st.m[name]
                tensors[f"adam/{tag}/v/{name}"] = st.v[name]
            adam[tag] = {"step": st.step, "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps}
        meta = {
            "config": self.cfg.to_dict(),
            "adam": adam,
            # batches are drawn from a counter-based stream keyed by (seed, stage, step)
            "rng": {"seed": self.cfg.seed, "stream": "SeedSequence(seed, stage, step)", "next_step": self.step + 1},
            "val_history": list(self.val_history),
        }
        return Checkpoint(self.stage, self.step, tensors, meta)

    def save(self, path) -> str:
        save_checkpoint(path, self.to_checkpoint())
        self.last_good = str(path)
        return self.last_good

    def _load_weights(self, ck: Checkpoint):
        params = dict(self.bundle.named_parameters())
        missing = [n for n in params if "param/" + n not in ck.tensors]
        if missing:
            raise ValueError(f"checkpoint lacks parameters {missing[:3]}{'...' if len(missing) > 3 else ''}")
        for name, p in params.items():
            arr = ck.tensors["param/" + name]
            if arr.shape != p.shape:
                raise ValueError(f"parameter {name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype)
        owners = {}
        for m_name, mod in _named_modules(self.bundle):
            for b in mod._buffers:
                owners[(m_name + "." if m_name else "") + b] = (mod, b)
        for full, (mod, b) in owners.items():
            key = "buffer/" + full
            if key in ck.tensors:
                mod.set_buffer(b, ck.tensors[key].astype(self.cfg.np_dtype))

    def check_compatible(self, ck: Checkpoint):
        saved = ck.meta.get("config", {})
        bad = [k for k in ARCH_KEYS if k in saved and saved[k] != self.cfg.to_dict()[k]]
        if bad:
            diffs = ", ".join(f"{k}: checkpoint {saved[k]} vs config {self.cfg.to_dict()[k]}" for k in bad)
            raise ConfigError(f"checkpoint does not match the config ({diffs})")

    def resume(self, ck: Checkpoint):
        """Continue the same stage exactly where ``ck`` stopped."""
        if ck.stage != self.stage:
            raise StageMismatchError(f"checkpoint is from stage {ck.stage!r} but the config asks for {self.stage!r}"
                                     + ("; use --init to start fine-tuning from a pretrain checkpoint"
                                        if (ck.stage, self.stage) == ("pretrain", "finetune") else ""))
        self.check_compatible(ck)
        self._load_weights(ck)
        for tag, opt in (("G", self.opt_g), ("D", self.opt_d)):
            st = opt.state
            meta = ck.meta["adam"][tag]
            st.step = int(meta["step"])
            for name in st.m:
                st.m[name] = ck.tensors[f"adam/{tag}/m/{name}"].astype(st.m[name].dtype)
                st.v[name] = ck.tensors[f"adam/{tag}/v/{name}"].astype(st.v[name].dtype)
        self.step = ck.step
        self.val_history = [float(v) for v in ck.meta.get("val_history", [])]

    def init_from(self, ck: Checkpoint):
        """Start this stage from another stage's weights (optimizer state is fresh)."""
        self.check_compatible(ck)
        self._load_weights(ck)
        if self.stage == "finetune":
            self.D.warmup()
        self.step = 0


def _named_modules(module, prefix=""):
    yield prefix, module
    for name, child in module._children.items():
        yield from _named_modules(child, f"{prefix}.{name}" if prefix else name)


def checkpoint_name(stage: str, step: int) -> str:
    return f"{stage}_{step:06d}.ckpt"


def validation_metrics(O: np.ndarray, batch: Batch) -> dict:
    V, m = batch.video, batch.mask
    comp = m * O + (1 - m) * V
    n = max(float(m.sum()) * 3, 1.0)
    sq = ((comp - V) / 2.0) ** 2 * m
    zero = ((batch.masked_video - V) / 2.0) ** 2 * m
    return {"l1": float(np.abs(O - V).mean()), "masked_mse": float(sq.sum() / n), "zero_fill_mse": float(zero.sum() / n)}


def format_log(rec: dict) -> str:
    if "eval" in rec:
        body = " ".join(f"{k}={v:.6g}" for k, v in rec["eval"].items())
        return f"[{rec['stage']} {rec['step']}] eval {body}"
    if "event" in rec:
        return f"[{rec['stage']} {rec['step']}] {rec['event']}"
    parts = [f"{k}={v:.6g}" for k, v in rec.items() if k not in ("stage", "step")]
    return f"[{rec['stage']} {rec['step']}] " + " ".join(parts)


class JsonlLog:
    """Append log records as JSON lines."""

    def __init__(self, path):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)

    def __call__(self, rec):
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def train(cfg: TrainConfig, resume: str | None = None, init: str | None = None, out_dir: str | None = None,
          verbose: bool = True, train_set=None, val_set=None) -> Trainer:
    """Build a trainer, optionally resume or initialise it, and run the configured stage."""
    out_dir = out_dir or cfg.out_dir
    log = JsonlLog(os.path.join(out_dir, "train.log")) if out_dir else None
    tr = Trainer(cfg, train_set, val_set, log=log, verbose=verbose)
    if resume and init:
        raise ConfigError("--resume and --init are mutually exclusive")
    if resume:
        tr.resume(load_checkpoint(resume))
        tr.last_good = resume
    elif init:
        tr.init_from(load_checkpoint(init))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        cfg.save(os.path.join(out_dir, "config.txt"))
    tr.run(out_dir)
    return tr
