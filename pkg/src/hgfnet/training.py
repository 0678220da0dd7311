"""Losses (cross-entropy, standard focal, adaptive focal), per-class weight
and focusing statistics, Adam with decoupled weight decay, and the epoch loop
with best-validation checkpointing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DataError, TapeError
from .metrics import confusion, scores
from .model import HgfnetModel, forward
from .tensor import Tape, Tensor, backward

PROB_FLOOR = 1e-12


@dataclass
class ClassStats:
    """Per-class counts with derived loss weights and focusing exponents.

    alpha is inverse-frequency, normalized so sum(alpha_i * n_i) equals the
    sample count; gamma grows linearly with class rarity relative to the most
    frequent class.
    """

    counts: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray

    @property
    def num_classes(self):
        return len(self.counts)


def class_stats(labels, num_classes: int, gamma_base: float = 2.0,
                gamma_scale: float = 2.0) -> ClassStats:
    """Derive alpha_i = N/(K*n_i) and gamma_i = base + scale*(1 - n_i/max_n)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("no labels given")
    if labels.min() < 1 or labels.max() > num_classes:
        raise DataError(f"labels must lie in 1..{num_classes}")
    counts = np.bincount(labels - 1, minlength=num_classes).astype(np.int64)
    if (counts == 0).any():
        empty = np.nonzero(counts == 0)[0] + 1
        raise DataError(f"classes {empty.tolist()} have no training samples")
    n = float(labels.size)
    alpha = n / (num_classes * counts.astype(np.float64))
    gamma = gamma_base + gamma_scale * (1.0 - counts / counts.max())
    return ClassStats(counts=counts, alpha=alpha, gamma=gamma)


def uniform_stats(num_classes: int, alpha: float = 1.0, gamma: float = 2.0) -> ClassStats:
    """Stats with one shared weight/exponent for every class."""
    return ClassStats(
        counts=np.zeros(num_classes, dtype=np.int64),
        alpha=np.full(num_classes, float(alpha)),
        gamma=np.full(num_classes, float(gamma)),
    )


def _pick_true_prob(probs: Tensor, labels) -> tuple:
    labels = np.asarray(labels, dtype=np.int64)
    k = probs.shape[-1]
    if labels.shape != probs.shape[:-1]:
        raise DataError(f"label shape {labels.shape} does not match batch {probs.shape[:-1]}")
    if labels.min() < 1 or labels.max() > k:
        raise DataError(f"labels must lie in 1..{k}")
    p = T.gather(probs, labels - 1)
    return T.clamp(p, PROB_FLOOR, 1.0), labels


def afl_loss(probs: Tensor, labels, stats: ClassStats) -> Tensor:
    """Batch-mean adaptive focal loss: alpha_y * (1-p_y)^gamma_y * (-log p_y)."""
    p, labels = _pick_true_prob(probs, labels)
    alpha = stats.alpha[labels - 1]
    gamma = stats.gamma[labels - 1]
    focus = T.pow_const(T.sub(1.0, p), gamma)
    per_sample = T.mul(T.mul(Tensor(alpha, dtype=str_dtype(probs)), focus), T.neg(T.log(p)))
    return T.mean(per_sample)


def focal_loss(probs: Tensor, labels, alpha: float = 1.0, gamma: float = 2.0) -> Tensor:
    """Standard focal loss: adaptive form with one shared alpha and gamma."""
    return afl_loss(probs, labels, uniform_stats(probs.shape[-1], alpha, gamma))


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Batch-mean negative log likelihood with the shared probability floor."""
    p, _ = _pick_true_prob(probs, labels)
    return T.mean(T.neg(T.log(p)))


def str_dtype(t: Tensor) -> str:
    return "f32" if t.dtype == np.float32 else "f64"


LOSSES = ("ce", "sfl", "afl")


def make_loss_fn(kind: str, stats: ClassStats = None, sfl_alpha: float = 1.0,
                 sfl_gamma: float = 2.0):
    """Bind a loss name to a (probs, labels) -> scalar Tensor callable."""
    if kind == "ce":
        return cross_entropy
    if kind == "sfl":
        return lambda probs, labels: focal_loss(probs, labels, sfl_alpha, sfl_gamma)
    if kind == "afl":
        if stats is None:
            raise DataError("adaptive focal loss requires class stats")
        return lambda probs, labels: afl_loss(probs, labels, stats)
    raise DataError(f"loss must be one of {LOSSES}, got {kind!r}")


@dataclass
class OptimizerState:
    """Adam accumulators plus hyperparameters; moments shape their params."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-6
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: OptimizerState, params) -> None:
    """One Adam update with decoupled weight decay applied before the step."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        if p.grad is None:
            raise TapeError("parameter has no gradient; run backward first")
        g = p.grad
        if state.weight_decay:
            p.data *= 1.0 - state.lr * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class FitResult:
    epochs: list
    best_epoch: int
    best_val_oa: float


def predict_probs(model: HgfnetModel, patches: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode forward over a patch array, batched; returns (N, K) probs."""
    model.set_mode("eval")
    out = []
    for start in range(0, len(patches), batch_size):
        xb = Tensor(patches[start:start + batch_size], dtype=model.config.dtype)
        out.append(forward(model, xb).data)
    return np.concatenate(out, axis=0)


def evaluate(model: HgfnetModel, patches, labels, loss_fn=None, batch_size: int = 64):
    """Mean loss (when loss_fn given) and overall accuracy on one split."""
    probs = predict_probs(model, patches, batch_size)
    preds = probs.argmax(axis=1) + 1
    k = model.config.num_classes
    oa = scores(confusion(labels, preds, k))["oa"]
    loss_val = None
    if loss_fn is not None:
        loss_val = float(loss_fn(Tensor(probs), np.asarray(labels)).item())
    return loss_val, oa, preds


def fit(model: HgfnetModel, train_set, val_set, stats: ClassStats, *,
        loss: str = "afl", epochs: int = 50, batch_size: int = 64, lr: float = 1e-3,
        weight_decay: float = 1e-6, seed: int = 0, sfl_alpha: float = 1.0,
        sfl_gamma: float = 2.0, log=None) -> FitResult:
    """Train with per-epoch shuffling and retain the best-val-OA parameters.

    train_set/val_set are (patches, labels) pairs. Deterministic for a fixed
    seed under single-threaded execution; ties on val OA keep the earlier
    epoch.
    """
    train_x, train_y = train_set
    val_x, val_y = val_set
    if len(train_x) == 0 or len(val_x) == 0:
        raise DataError("train and validation splits must be non-empty")
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    train_y = np.asarray(train_y, dtype=np.int64)
    val_y = np.asarray(val_y, dtype=np.int64)

    ss = np.random.SeedSequence(seed)
    shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    model.set_dropout_rng(dropout_rng)

    loss_fn = make_loss_fn(loss, stats, sfl_alpha, sfl_gamma)
    opt = OptimizerState(lr=lr, weight_decay=weight_decay)
    params = [p for _, p in model.parameters()]

    records = []
    best = {"oa": -1.0, "epoch": -1, "params": None}
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_x))
        model.set_mode("train")
        batch_losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            xb = Tensor(train_x[idx], dtype=model.config.dtype)
            yb = train_y[idx]
            for p in params:
                p.zero_grad()
            with Tape() as tape:
                probs = forward(model, xb)
                loss_t = loss_fn(probs, yb)
            backward(loss_t)
            adam_step(opt, params)
            batch_losses.append(loss_t.item())
            tape.release()

        val_loss, val_oa, _ = evaluate(model, val_x, val_y, loss_fn)
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "val_loss": val_loss,
            "val_oa": val_oa,
            "wall_ms": (time.perf_counter() - t0) * 1e3,
        }
        records.append(record)
        if log is not None:
            log(record)
        if val_oa > best["oa"]:
            best = {"oa": val_oa, "epoch": epoch,
                    "params": [p.data.copy() for p in params]}

    if best["params"] is not None:
        for p, data in zip(params, best["params"]):
            p.data = data
    model.set_mode("eval")
    return FitResult(epochs=records, best_epoch=best["epoch"], best_val_oa=best["oa"])
