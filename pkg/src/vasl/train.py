"""Focal loss, Adam, learning-rate schedule and the training loop."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from ._alloc import retain_freed_memory
from .tensor import Tape, Tensor, _log_kink, _record, backward

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


class NonFiniteLoss(FloatingPointError):
    def __init__(self, epoch, batch_index, value):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch_index}")
        self.epoch = epoch
        self.batch_index = batch_index


def focal_loss(pred, target, gamma=2.0, alpha=0.25):
    """Mean binary focal loss over all pixels.

    ``pred`` holds probabilities; ``target`` (numpy array or tensor) must be
    binary and shaped like ``pred``.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != pred.dims:
        raise ValueError(f"focal_loss: target shape {t.shape} != prediction {list(pred.dims)}")
    pos = t == 1
    if not np.all(pos | (t == 0)):
        raise ValueError("focal_loss: target must be binary")
    p = pred.data
    pt_raw = np.where(pos, p, 1.0 - p)
    inside = (pt_raw > PROB_CLAMP) & (pt_raw < 1.0 - PROB_CLAMP)
    _log_kink(inside)
    pt = np.clip(pt_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    at = np.where(pos, alpha, 1.0 - alpha)
    logpt = np.log(pt)
    one_m = 1.0 - pt
    weight = one_m ** gamma
    n = p.size
    value = float(np.sum(-at * weight * logpt) / n)
    out = Tensor(np.array(value).reshape(1, 1, 1, 1))

    def bw(g):
        # dL/dpt, then dpt/dpred = +1 on positives, -1 on negatives
        if gamma == 0:
            dpt = -at / pt
        else:
            dpt = -at * (-gamma * one_m ** (gamma - 1.0) * logpt + weight / pt)
        dpred = np.where(pos, dpt, -dpt) * inside
        return (dpred * (g.reshape(-1)[0] / n),)

    return _record(out, (pred,), bw)


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over every parameter; clears grads."""
    missing = [name for name, p in store if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: no gradient for {missing[0]!r}" +
                         (f" and {len(missing) - 1} more" if len(missing) > 1 else ""))
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store:
        g = p.grad
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None
    return store


def lr_at_epoch(epoch, base_lr=1e-4, decay=0.1, schedule="exponential"):
    """Learning rate for a zero-based epoch index.

    ``exponential`` multiplies by (1 - decay) each epoch; ``linear`` subtracts
    ``decay * base_lr`` per epoch (floored at zero); ``constant`` never decays.
    """
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if schedule == "exponential":
        return base_lr * (1.0 - decay) ** epoch
    if schedule == "linear":
        return max(0.0, base_lr * (1.0 - decay * epoch))
    if schedule == "constant":
        return base_lr
    raise ValueError(f"unknown schedule {schedule!r}")


def epoch_order(n, seed, epoch):
    keys = rng.uniform_words(n, rng.derive_seed(seed, 0xE90C, epoch))
    return np.argsort(keys, kind="stable")


def batch_iou(prob, mask, threshold=0.5):
    """Mean per-image IoU of a probability batch against binary masks."""
    pred = prob >= threshold
    gt = mask >= 0.5
    axes = tuple(range(1, pred.ndim))
    inter = np.logical_and(pred, gt).sum(axis=axes)
    union = np.logical_or(pred, gt).sum(axis=axes)
    return float(np.mean(np.where(union == 0, 1.0, inter / np.maximum(union, 1))))


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    iou: float
    steps: int


@dataclass
class FitResult:
    epochs: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    epoch: int = 0


def stack_batch(samples, indices, domains):
    batch = {d: np.stack([getattr(samples[i], d) for i in indices]) for d in domains}
    batch["mask"] = np.stack([samples[i].mask for i in indices])
    return batch


def fit(net, store, samples, cfg, steps=None, on_epoch=None, start_epoch=0):
    """Train ``net`` in place on a list of samples.

    Runs ``cfg.epochs`` epochs, or exactly ``steps`` optimizer steps when
    given (epochs continue past ``cfg.epochs`` if needed).  Each epoch visits
    the samples in a seed-fixed shuffled order.  Raises
    :class:`NonFiniteLoss` on a NaN/inf loss.
    """
    if not samples:
        raise ValueError("fit: empty dataset")
    retain_freed_memory()
    net.train()
    result = FitResult()
    n = len(samples)
    bs = cfg.batch_size
    done = 0
    epoch = start_epoch
    while True:
        if steps is None and epoch >= start_epoch + cfg.epochs:
            break
        if steps is not None and done >= steps:
            break
        lr = lr_at_epoch(epoch, cfg.lr, cfg.lr_decay_per_epoch, cfg.lr_schedule)
        order = epoch_order(n, cfg.seed, epoch)
        loss_sum = iou_sum = 0.0
        seen = 0
        batches = 0
        for b, start in enumerate(range(0, n, bs)):
            if steps is not None and done >= steps:
                break
            idx = order[start:start + bs]
            batch = stack_batch(samples, idx, net.domains)
            with Tape():
                prob = net({d: Tensor(batch[d]) for d in net.domains})
                loss = focal_loss(prob, batch["mask"], cfg.focal_gamma, cfg.focal_alpha)
                value = loss.item()
                if not math.isfinite(value):
                    raise NonFiniteLoss(epoch, b, value)
                backward(loss)
            adam_step(store, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            k = len(idx)
            loss_sum += value * k
            iou_sum += batch_iou(prob.data, batch["mask"]) * k
            seen += k
            batches += 1
            done += 1
            result.losses.append(value)
        entry = EpochLog(epoch, lr, loss_sum / max(seen, 1), iou_sum / max(seen, 1), batches)
        result.epochs.append(entry)
        log.info("epoch %d lr %.6g loss %.6f iou %.4f", epoch, lr, entry.loss, entry.iou)
        if on_epoch is not None:
            on_epoch(entry)
        epoch += 1
    result.epoch = epoch
    return result


def evaluate_iou(net, samples, batch_size=4, threshold=0.5):
    """Eval-mode mean per-image IoU over ``samples``."""
    total = 0.0
    for start in range(0, len(samples), batch_size):
        idx = list(range(start, min(start + batch_size, len(samples))))
        batch = stack_batch(samples, idx, net.domains)
        prob = net.predict({d: Tensor(batch[d]) for d in net.domains})
        total += batch_iou(prob, batch["mask"], threshold) * len(idx)
    return total / len(samples)


def domain_ablation(samples, cfg, subsets, steps):
    """Train one model per domain subset for ``steps`` steps from the same seed
    and data; returns ``{subset: eval-mode training-set IoU}``."""
    from .model import build_model

    scores = {}
    for subset in subsets:
        sub_cfg = cfg.with_(enabled_domains=tuple(subset))
        net, store = build_model(sub_cfg)
        fit(net, store, samples, sub_cfg, steps=steps)
        scores[sub_cfg.enabled_domains] = evaluate_iou(net, samples, sub_cfg.batch_size)
        log.info("ablation %s iou %.4f", ",".join(sub_cfg.enabled_domains), scores[sub_cfg.enabled_domains])
    return scores
