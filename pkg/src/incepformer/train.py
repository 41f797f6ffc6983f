"""Training harness: combined CE + soft-Dice loss, SGD-momentum and Adam,
cosine / polynomial learning-rate schedules, and a deterministic small-corpus
training loop with CSV history."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops
from .autodiff import Variable, backward, no_grad
from .data import Sample, augment, synth_corpus, write_corpus
from .metrics import MetricsReport, metrics_csv, metrics_text, report_from_masks, se_sp_acc
from .model import SegModel, build_model, save_checkpoint
from .tensor import make_rng

DICE_SMOOTH = 1e-6


def one_hot(mask: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """[H,W] int labels -> [K,H,W] indicator planes."""
    if mask.min() < 0 or mask.max() >= num_classes:
        raise ValueError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{int(mask.min())}, {int(mask.max())}]")
    out = np.zeros((num_classes,) + mask.shape, dtype=dtype)
    for cls in range(num_classes):
        out[cls][mask == cls] = 1.0
    return out


def seg_loss(logits: Variable, target_onehot: np.ndarray) -> tuple[Variable, dict[str, float]]:
    """0.5 * pixel cross-entropy + 0.5 * (1 - mean soft Dice over classes).

    logits [B,K,H,W]; target_onehot [B,K,H,W] (constant)."""
    b, k, h, w = logits.data.shape
    if target_onehot.shape != logits.data.shape:
        raise ValueError(f"target shape {target_onehot.shape} != logits {logits.data.shape}")
    target = Variable(target_onehot.astype(logits.data.dtype), requires_grad=False)

    log_p = ops.log_softmax(logits, axis=1)
    ce = ops.scale(ops.sum_all(ops.mul(log_p, target)), -1.0 / (b * h * w))

    p = ops.softmax(logits, axis=1)
    inter = ops.sum_reduce(ops.mul(p, target), (0, 2, 3))
    pred_sum = ops.sum_reduce(p, (0, 2, 3))
    true_sum = target_onehot.sum(axis=(0, 2, 3))
    numer = ops.add_const(ops.scale(inter, 2.0), DICE_SMOOTH)
    denom = ops.add_const(ops.add(pred_sum, Variable(true_sum, requires_grad=False)), DICE_SMOOTH)
    dice_loss = ops.add_const(ops.neg(ops.mean_all(ops.div(numer, denom))), 1.0)

    loss = ops.add(ops.scale(ce, 0.5), ops.scale(dice_loss, 0.5))
    parts = {"ce": float(ce.data), "dice_loss": float(dice_loss.data)}
    return loss, parts


# -- optimizers -------------------------------------------------------------------


class SGDMomentum:
    """Classic momentum: v <- mu*v + g; p <- p - lr*v (weight decay as L2 grad)."""

    def __init__(self, params, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params: list[tuple[str, Variable]] = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for _, p in self.params]

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        for (name, p), v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= (lr * v).astype(p.data.dtype)


class Adam:
    """Adam with bias correction; weight decay enters the gradient (L2)."""

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params: list[tuple[str, Variable]] = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, (name, p) in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + self.eps)
            p.data -= (lr * update).astype(p.data.dtype)


def make_optimizer(kind: str, params, momentum: float, weight_decay: float):
    if kind == "sgd":
        return SGDMomentum(params, momentum=momentum, weight_decay=weight_decay)
    if kind == "adam":
        return Adam(params, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer '{kind}' (expected sgd or adam)")


# -- learning-rate schedules ------------------------------------------------------


def cosine_lr(lr0: float, lr_min: float, total_steps: int, step: int) -> float:
    """Monotone half-cosine from lr0 at step 0 to lr_min at the final step."""
    if total_steps <= 1:
        return lr_min
    t = min(step, total_steps - 1) / (total_steps - 1)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t))


def poly_lr(lr0: float, total_steps: int, step: int, power: float = 0.9) -> float:
    if total_steps <= 1:
        return 0.0
    t = min(step, total_steps - 1) / (total_steps - 1)
    return lr0 * (1.0 - t) ** power


def make_schedule(kind: str, lr0: float, lr_min: float, total_steps: int):
    if kind == "cosine":
        return lambda step: cosine_lr(lr0, lr_min, total_steps, step)
    if kind == "poly":
        return lambda step: poly_lr(lr0, total_steps, step)
    if kind == "constant":
        return lambda step: lr0
    raise ValueError(f"unknown schedule '{kind}' (expected cosine, poly, or constant)")


# -- batching / loop --------------------------------------------------------------


def batch_arrays(samples: list[Sample], num_classes: int,
                 dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples]).astype(dtype)
    targets = np.stack([one_hot(s.mask, num_classes, dtype) for s in samples])
    return images, targets


class _BatchSampler:
    """Epoch-shuffled batches; drops the ragged remainder of each epoch."""

    def __init__(self, n: int, batch_size: int, rng):
        if batch_size > n:
            raise ValueError(f"batch_size {batch_size} exceeds corpus size {n}")
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self.queue: list[int] = []

    def next_batch(self) -> list[int]:
        if len(self.queue) < self.batch_size:
            self.queue = list(self.rng.permutation(self.n))
        picks = self.queue[:self.batch_size]
        del self.queue[:self.batch_size]
        return picks


@dataclass
class TrainResult:
    history: list[dict]
    report: MetricsReport
    final_loss: float
    checkpoint_path: Path | None


def history_csv(history: list[dict]) -> str:
    lines = ["step,lr,loss,ce,dice_loss"]
    for row in history:
        lines.append(f"{row['step']},{row['lr']!r},{row['loss']!r},"
                     f"{row['ce']!r},{row['dice_loss']!r}")
    return "\n".join(lines) + "\n"


def evaluate_model(model: SegModel, samples: list[Sample], num_classes: int,
                   batch_size: int = 8) -> tuple[MetricsReport, tuple[float, float, float] | None]:
    """Argmax predictions in eval mode; binary SE/SP/ACC when two classes."""
    model.set_training(False)
    preds: list[np.ndarray] = []
    dtype = model.cfg.dtype
    with no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            images = np.stack([s.image for s in chunk]).astype(dtype)
            logits = model(Variable(images, requires_grad=False))
            preds.extend(np.argmax(logits.data, axis=1).astype(np.int64))
    ids = [s.sample_id for s in samples]
    trues = [s.mask for s in samples]
    report = report_from_masks(ids, preds, trues, num_classes)
    se_sp = None
    if num_classes == 2:
        tp = fp = fn = tn = 0
        for p, t in zip(preds, trues):
            a, b, c, d = (int(((p == 1) & (t == 1)).sum()), int(((p == 1) & (t == 0)).sum()),
                          int(((p == 0) & (t == 1)).sum()), int(((p == 0) & (t == 0)).sum()))
            tp, fp, fn, tn = tp + a, fp + b, fn + c, tn + d
        se = tp / (tp + fn) if tp + fn else 1.0
        sp = tn / (tn + fp) if tn + fp else 1.0
        acc = (tp + tn) / (tp + fp + fn + tn)
        se_sp = (se, sp, acc)
    return report, se_sp


def train_model(model: SegModel, samples: list[Sample], *, steps: int,
                optimizer_kind: str, schedule_kind: str, lr: float, lr_min: float,
                momentum: float, weight_decay: float, batch_size: int,
                use_augment: bool, seed: int,
                log_every: int = 0) -> list[dict]:
    """Run the optimization loop; returns the per-step history rows."""
    num_classes = model.cfg.num_classes
    params = model.named_parameters()
    opt = make_optimizer(optimizer_kind, params, momentum, weight_decay)
    sched = make_schedule(schedule_kind, lr, lr_min, steps)
    rng = make_rng(seed)
    sampler = _BatchSampler(len(samples), batch_size, rng)
    model.set_training(True)
    model.set_update_running(True)
    dtype = model.cfg.dtype

    history: list[dict] = []
    for step in range(steps):
        picks = sampler.next_batch()
        batch = [samples[i] for i in picks]
        if use_augment:
            batch = [augment(s, rng) for s in batch]
        images, targets = batch_arrays(batch, num_classes, dtype)

        opt.zero_grad()
        logits = model(Variable(images, requires_grad=False))
        loss, parts = seg_loss(logits, targets)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise RuntimeError(
                f"non-finite loss {loss_val} at step {step} "
                f"(ce={parts['ce']}, dice_loss={parts['dice_loss']}); aborting")
        backward(loss)
        cur_lr = sched(step)
        opt.step(cur_lr)
        history.append({"step": step, "lr": cur_lr, "loss": loss_val,
                        "ce": parts["ce"], "dice_loss": parts["dice_loss"]})
        if log_every and step % log_every == 0:
            print(f"step {step:5d}  lr {cur_lr:.6f}  loss {loss_val:.5f}  "
                  f"ce {parts['ce']:.5f}  dice {parts['dice_loss']:.5f}")
    return history


def run_training(run_cfg, out_dir: Path | None, log_every: int = 0) -> TrainResult:
    """Full pipeline: corpus -> train -> evaluate -> artifacts.

    Writes checkpoint.tcck, history.csv, metrics.csv, metrics.txt, the
    resolved config, and the corpus cache under out_dir when given."""
    from .config import serialize_config, to_model_config

    model_cfg = to_model_config(run_cfg)
    samples = synth_corpus(run_cfg.corpus_size, run_cfg.image_size,
                           run_cfg.num_classes, run_cfg.seed,
                           channels=run_cfg.in_channels)
    model = build_model(model_cfg, seed=run_cfg.seed)
    history = train_model(
        model, samples, steps=run_cfg.steps, optimizer_kind=run_cfg.optimizer,
        schedule_kind=run_cfg.schedule, lr=run_cfg.lr, lr_min=run_cfg.lr_min,
        momentum=run_cfg.momentum, weight_decay=run_cfg.weight_decay,
        batch_size=run_cfg.batch_size, use_augment=run_cfg.augment,
        seed=run_cfg.seed + 1, log_every=log_every)
    report, se_sp = evaluate_model(model, samples, run_cfg.num_classes)

    checkpoint_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        config_text = serialize_config(run_cfg)
        checkpoint_path = out / "checkpoint.tcck"
        save_checkpoint(checkpoint_path, model, config_text)
        (out / "history.csv").write_text(history_csv(history))
        (out / "metrics.csv").write_text(metrics_csv(report))
        (out / "metrics.txt").write_text(metrics_text(report, se_sp))
        (out / "config.txt").write_text(config_text)
        write_corpus(out / "corpus", samples)
    final_loss = history[-1]["loss"] if history else float("nan")
    return TrainResult(history, report, final_loss, checkpoint_path)
