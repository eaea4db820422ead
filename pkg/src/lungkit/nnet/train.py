"""Mini-batch Adam training with global-norm gradient clipping."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..dsp import as_array, fit_norm_stats
from ..errors import EmptyDataset, NonFiniteLoss
from .model import Architecture, ModelParams, batch_loss, init_params, loss_and_gradients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    arch: Architecture = field(default_factory=Architecture)

    def __post_init__(self):
        for name in ("learning_rate", "epochs", "batch_size", "clip_norm", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    final: ModelParams
    best: ModelParams
    log: list[EpochLog]
    best_epoch: int


class Adam:
    def __init__(self, params: dict, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in params:  # dict order is the architecture's fixed tensor order
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _features(x):
    return as_array(x)


def train(train_data, config: TrainConfig = TrainConfig(), val_data=None, task: str = "I", norm=None) -> TrainResult:
    """Fit one binary detector.

    ``train_data`` / ``val_data`` are sequences of ``(raw_features, targets)``
    pairs.  Normalization statistics are fitted on ``train_data`` unless
    ``norm`` is given; they are stored in the returned parameters.  Returned
    parameters are rounded to float32 so they survive a save/load bit-exactly.
    """
    if not train_data:
        raise EmptyDataset("no training recordings")
    arch = config.arch
    raw = [_features(x) for x, _ in train_data]
    if raw[0].shape[1] != arch.n_inputs:
        arch = Architecture(raw[0].shape[1], arch.conv_channels, arch.kernel, arch.hidden)
    if norm is None:
        norm = fit_norm_stats(raw)
    train_set = [(norm.apply(x), np.asarray(y, dtype=np.float64)) for x, (_, y) in zip(raw, train_data)]
    val_set = [(norm.apply(_features(x)), np.asarray(y, dtype=np.float64)) for x, y in (val_data or [])]

    rng = np.random.default_rng(config.seed)
    params = init_params(arch, rng, norm=norm, task=task)
    opt = Adam(params.tensors, config.learning_rate, config.beta1, config.beta2, config.adam_eps)

    history: list[EpochLog] = []
    best = params.copy()
    best_val = math.inf
    best_epoch = 0
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, config.batch_size):
            batch = [train_set[i] for i in order[s : s + config.batch_size]]
            loss, grads = loss_and_gradients(params, batch)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}, batch starting {s}: loss {loss}")
            clip_by_global_norm(grads, config.clip_norm)
            opt.step(params.tensors, grads)
            losses.append(loss * len(batch))
        train_loss = sum(losses) / n
        val_loss = batch_loss(params, val_set) if val_set else math.nan
        history.append(EpochLog(epoch, train_loss, val_loss))
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if val_set and val_loss < best_val:
            best_val, best, best_epoch = val_loss, params.copy(), epoch
    if not val_set:
        best, best_epoch = params.copy(), config.epochs
    meta = {"epochs": config.epochs, "seed": config.seed}
    final = params.rounded_to_storage()
    final.meta.update(meta)
    best = best.rounded_to_storage()
    best.meta.update(meta, best_epoch=best_epoch)
    return TrainResult(final=final, best=best, log=history, best_epoch=best_epoch)
