"""Training protocol: Adam, BCE, early stopping, LR reduction on plateau.

`fit` drives the loop against real batches; the loop body itself lives in
`run_protocol`, which takes train/eval callables so the stopping and
scheduling rules can be exercised with injected loss sequences.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, NonFiniteError

IMPROVE_EPS = 1e-8  # an epoch "improves" iff val loss drops by more than this


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 10
    early_stop_patience: int = 3
    plateau_factor: float = 0.5
    plateau_patience: int = 1
    min_lr: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    class_weighting: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must lie in (0, 1)")
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ConfigError("patience values must be >= 1")


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0


def adam_step(params, state, cfg, lr):
    """One Adam update over every parameter with a populated gradient."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + cfg.eps)).astype(p.data.dtype)


def train_epoch(network, batches, state, cfg, lr):
    """Forward/loss/backward/step over every batch; weighted mean loss."""
    if not batches:
        raise ConfigError("train_epoch needs at least one batch")
    total, count = 0.0, 0
    for images, labels in batches:
        probs = network.forward(images, training=True)
        loss = T.bce_loss(probs, labels)
        network.zero_grad()
        loss.backward()
        adam_step(network.params, state, cfg, lr)
        n = labels.data.size
        total += float(loss.data) * n
        count += n
    return total / count


def evaluate_loss(network, batches):
    """(mean BCE loss, accuracy at threshold 0.5); mutates nothing."""
    total, correct, count = 0.0, 0, 0
    for images, labels in batches:
        probs = network.forward(images, training=False)
        loss = T.bce_loss(probs, labels)
        n = labels.data.size
        total += float(loss.data) * n
        correct += int(np.sum((probs.data >= 0.5) == (labels.data == 1)))
        count += n
    return total / count, correct / count


def reduce_lr_on_plateau(val_losses, current_lr, cfg):
    """Multiply the LR by plateau_factor after plateau_patience flat epochs."""
    if not val_losses:
        raise ConfigError("reduce_lr_on_plateau needs a nonempty history")
    stale = 0
    running_best = float("inf")
    for loss in val_losses:
        if loss < running_best - IMPROVE_EPS:
            running_best = loss
            stale = 0
        else:
            stale += 1
    if stale >= cfg.plateau_patience:
        return max(current_lr * cfg.plateau_factor, cfg.min_lr)
    return current_lr


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    learning_rate: float


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    def to_jsonl(self):
        lines = [json.dumps(asdict(e), sort_keys=True) for e in self.epochs]
        lines.append(json.dumps(
            {"best_epoch": self.best_epoch, "stop_reason": self.stop_reason},
            sort_keys=True,
        ))
        return "\n".join(lines) + "\n"


def run_protocol(train_fn, eval_fn, cfg, on_best=None):
    """Core epoch loop.

    train_fn(epoch, lr) -> train loss; eval_fn() -> (val loss, val accuracy).
    on_best(epoch) fires whenever validation loss improves. Epochs are
    1-indexed in the log.
    """
    log = TrainLog()
    lr = cfg.learning_rate
    best_loss = float("inf")
    stale = 0
    val_history = []
    for epoch in range(1, cfg.max_epochs + 1):
        train_loss = train_fn(epoch, lr)
        val_loss, val_acc = eval_fn()
        val_history.append(val_loss)
        log.epochs.append(EpochRecord(epoch, train_loss, val_loss, val_acc, lr))
        if val_loss < best_loss - IMPROVE_EPS:
            best_loss = val_loss
            log.best_epoch = epoch
            stale = 0
            if on_best is not None:
                on_best(epoch)
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                log.stop_reason = "early_stop"
                return log
        lr = reduce_lr_on_plateau(val_history, lr, cfg)
    log.stop_reason = "max_epochs"
    return log


def fit(network, train_batch_fn, val_batches, cfg):
    """Train a network; returns (network with best weights restored, TrainLog).

    train_batch_fn(epoch) yields the epoch's training batches, so callers
    control shuffling/augmentation per epoch.
    """
    state = AdamState(network.params)
    best_state = {"snap": network.state_copy()}

    def train_fn(epoch, lr):
        return train_epoch(network, train_batch_fn(epoch), state, cfg, lr)

    def eval_fn():
        return evaluate_loss(network, val_batches)

    def on_best(epoch):
        best_state["snap"] = network.state_copy()

    log = run_protocol(train_fn, eval_fn, cfg, on_best=on_best)
    network.load_state(best_state["snap"])
    return network, log
