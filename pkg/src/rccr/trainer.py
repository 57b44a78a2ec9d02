"""Training loop for vanilla, RCCR and RC-Aug fine-tuning plus evaluation.

* ``vanilla``: task loss on the forward orientation.
* ``rccr``: task loss on the forward orientation plus ``lam`` times the
  divergence between forward and aligned reverse-complement predictions.
  The RC branch is a second forward pass through the same parameters and
  both branches receive gradients.
* ``rc-aug``: each training example is independently replaced by its
  reverse complement (targets re-aligned for bin heads) with probability
  ``aug_prob``; task loss only.

Optimisation is AdamW with a linear warmup then linear decay to zero.
Batch order and augmentation coin flips come from separate seeded streams,
so switching augmentation off reproduces vanilla training bit for bit.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from rccr import autodiff as ad
from rccr.data import Dataset
from rccr.metrics import EvalBatch, MetricReport, full_report
from rccr.model import ConfigError, Predictor
from rccr.seqcore import one_hot_batch, revcomp_onehot
from rccr.symmetry import (
    SymmetrySpec,
    align,
    consistency_penalty,
    symmetrize,
    task_loss,
    to_eval_space,
)

MODES = ("vanilla", "rccr", "rc-aug")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "vanilla"
    lam: float = 0.0
    lr: float = 5e-3
    epochs: int = 20
    batch_size: int = 64
    warmup_frac: float = 0.06
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 2025
    eval_tta: bool = False
    aug_prob: float = 0.5
    supervise_rc: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}", "train.mode")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}", "train.lam")
        if self.lam > 0 and self.mode != "rccr":
            raise ConfigError(f"lambda={self.lam} is only meaningful in rccr mode", "train.lam")
        if self.supervise_rc and self.mode != "rccr":
            raise ConfigError("supervise_rc combines with rccr mode only", "train.supervise_rc")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError("warmup fraction must lie in [0, 1)", "train.warmup_frac")
        if not 0.0 <= self.aug_prob <= 1.0:
            raise ConfigError("augmentation probability must lie in [0, 1]", "train.aug_prob")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be >= 1", "train.epochs")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive", "train.lr")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    lr: float = 0.0

    @classmethod
    def for_model(cls, model: Predictor) -> "TrainState":
        zeros = {k: np.zeros_like(p.data) for k, p in model.params.items()}
        return cls(0, zeros, {k: z.copy() for k, z in zeros.items()}, 0.0)


def lr_at(step: int, total_steps: int, peak: float, warmup_frac: float = 0.06) -> float:
    """Linear ramp ``0 -> peak`` over ``ceil(warmup_frac * total)`` steps, then
    linear decay to 0 at ``total_steps``."""
    if total_steps <= 0:
        raise ConfigError("total_steps must be positive", "train.epochs")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = math.ceil(warmup_frac * total_steps)
    if step < warmup:
        return peak * step / warmup
    if step >= total_steps:
        return 0.0
    return peak * (total_steps - step) / (total_steps - warmup)


def adamw_step(params: dict, grads: dict, state: TrainState, cfg: TrainConfig, lr: float) -> TrainState:
    """One AdamW update in place on ``params`` (name -> Tensor).

    Every gradient is checked before any parameter moves, so a non-finite
    gradient leaves the model untouched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}; step aborted")
    t = state.step + 1
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    decay = 1.0 - lr * cfg.weight_decay
    for name, p in params.items():
        g = grads[name]
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        p.data = p.data * decay - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    state.step = t
    state.lr = lr
    return state


# -- data plumbing ---------------------------------------------------------


def encode_split(records, head, spec: SymmetrySpec):
    """One-hot inputs and targets in model space (``log1p`` applied if asked)."""
    x = one_hot_batch(records)
    if head.is_classification:
        y = np.array([r.label for r in records], dtype=np.int64)
        if head.is_binwise:
            y = y.reshape((len(records),) + head.output_shape[:-1])
    else:
        y = np.array([np.asarray(r.label, dtype=float) for r in records], dtype=float)
        y = y.reshape((len(records),) + head.output_shape)
        if spec.target_transform == "log1p":
            y = np.log1p(y)
    return x, y


def _check_compat(model: Predictor, data: Dataset):
    if data.spec is not None:
        expected = data.spec.head()
        if model.head != expected:
            raise ConfigError(f"model head {model.head} does not match task head {expected}", "head.kind")
        if model.input_length != data.spec.length:
            raise ConfigError(
                f"model input length {model.input_length} vs task length {data.spec.length}", "task.length"
            )


def _batch_loss(model, x, y, cfg: TrainConfig, sym: SymmetrySpec):
    out = model(x)
    loss = task_loss(sym.task_loss, out, y)
    pen = None
    if cfg.mode == "rccr":
        out_rc = align(model(revcomp_onehot(x)), sym.alignment)
        pen = consistency_penalty(
            out, out_rc, sym.link, sym.divergence, sym.alignment.mask, binwise=sym.alignment.binwise
        )
        if cfg.supervise_rc:
            loss = (loss + task_loss(sym.task_loss, out_rc, y)) * 0.5
        total = loss + pen * float(cfg.lam)
    else:
        total = loss
    return total, loss, pen


def augment_batch(x: np.ndarray, y: np.ndarray, flip: np.ndarray, sym: SymmetrySpec):
    """Reverse-complement the flagged examples; bin-wise targets are re-aligned."""
    if not flip.any():
        return x, y
    x = x.copy()
    x[flip] = revcomp_onehot(x[flip])
    if sym.alignment.binwise:
        y = y.copy()
        if y.dtype.kind == "i":
            # bin-wise class indices (N, B): reverse bins, relabel classes through perm
            flipped = y[flip][:, ::-1]
            if sym.alignment.perm is not None:
                flipped = np.asarray(sym.alignment.perm)[flipped]
            y[flip] = flipped
        else:
            y[flip] = align(y[flip], sym.alignment)
    return x, y


def train(
    model: Predictor,
    data: Dataset,
    cfg: TrainConfig,
    sym: SymmetrySpec,
    log_path=None,
) -> tuple[Predictor, list[dict]]:
    """Train a copy of ``model``; returns it with one log dict per epoch.

    Log keys: ``epoch``, ``loss``, ``task_loss``, ``penalty`` (null outside
    rccr mode), ``lr`` (at the epoch's last step) and ``wall_ms``.
    Everything except ``wall_ms`` is deterministic.
    """
    _check_compat(model, data)
    model = model.copy()
    x_all, y_all = encode_split(data.train, model.head, sym)
    n = len(x_all)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    state = TrainState.for_model(model)
    order_seq, aug_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    order_rng = np.random.default_rng(order_seq)
    aug_rng = np.random.default_rng(aug_seq)
    params = model.params
    names = list(params)
    log = []
    sink = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            perm = order_rng.permutation(n)
            sums = {"loss": 0.0, "task": 0.0, "pen": 0.0, "metric": 0.0}
            for b in range(steps_per_epoch):
                idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                x, y = x_all[idx], y_all[idx]
                if cfg.mode == "rc-aug":
                    x, y = augment_batch(x, y, aug_rng.random(len(idx)) < cfg.aug_prob, sym)
                total_loss, tl, pen = _batch_loss(model, x, y, cfg, sym)
                grads = ad.grad(total_loss, [params[k] for k in names])
                lr = lr_at(state.step, total, cfg.lr, cfg.warmup_frac)
                adamw_step(params, dict(zip(names, grads)), state, cfg, lr)
                w = len(idx) / n
                sums["loss"] += w * float(total_loss.data)
                sums["task"] += w * float(tl.data)
                if pen is not None:
                    sums["pen"] += w * float(pen.data)
            entry = {
                "epoch": epoch,
                "loss": sums["loss"],
                "task_loss": sums["task"],
                "penalty": sums["pen"] if cfg.mode == "rccr" else None,
                "lr": state.lr,
                "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3),
            }
            log.append(entry)
            if sink is not None:
                sink.write(json.dumps(entry, sort_keys=True) + "\n")
                sink.flush()
    finally:
        if sink is not None:
            sink.close()
    return model, log


# -- evaluation ------------------------------------------------------------


def predict_pair(model: Predictor, x: np.ndarray, sym: SymmetrySpec, batch_size: int = 256):
    """Raw outputs on ``x`` and aligned raw outputs on ``RC(x)``."""
    fwd, rc = [], []
    for s in range(0, len(x), batch_size):
        xb = x[s : s + batch_size]
        fwd.append(model.predict(xb))
        rc.append(align(model.predict(revcomp_onehot(xb)), sym.alignment))
    return np.concatenate(fwd), np.concatenate(rc)


def evaluate(model: Predictor, records, sym: SymmetrySpec, tta: bool = False) -> tuple[EvalBatch, MetricReport]:
    """Forward and aligned-RC predictions for every record plus the full report.

    With ``tta`` both are replaced by their average, which makes the RC
    metrics exact by construction; the report flags them accordingly. The
    ``divergence`` entry is the mean consistency divergence in link space.
    """
    x, y = encode_split(records, model.head, sym)
    raw_f, raw_r = predict_pair(model, x, sym)
    if tta:
        raw_f = raw_r = symmetrize(raw_f, raw_r)
    batch = EvalBatch(to_eval_space(raw_f, sym), to_eval_space(raw_r, sym), y, model.head, symmetrized=tta)
    report = full_report(batch)
    with ad.no_grad():
        d = consistency_penalty(
            raw_f, raw_r, sym.link, sym.divergence, sym.alignment.mask, binwise=sym.alignment.binwise
        )
    report.values["divergence"] = float(d.data)
    if tta:
        report.notes["divergence"] = "exact-by-construction"
    return batch, report
