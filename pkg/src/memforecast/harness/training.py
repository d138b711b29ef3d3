"""Minibatch training with Adam and global-norm gradient clipping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .. import numerics as nx
from ..errors import ConfigError, TrainingError
from ..forecaster import Forecaster, forward_loss
from ..synthdata import Sample

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    seed: int = 0
    teacher_forcing: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    obs_fractions: list[float] = field(default_factory=lambda: [0.2, 0.3])
    pred_fraction: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("invalid Adam hyperparameters")
        if not self.obs_fractions:
            raise ConfigError("obs_fractions must not be empty")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class Adam:
    def __init__(self, params: dict[str, nx.Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict, float, float]:
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
        return grads, norm, float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    return grads, norm, norm


@dataclass
class Batch:
    labels: np.ndarray
    features: np.ndarray


def make_batches(samples: Sequence[Sample], batch_size: int,
                 rng: np.random.Generator | None = None) -> list[Batch]:
    """Group samples of equal length into batches (shuffled when ``rng`` is given)."""
    order = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    by_len: dict[int, list[int]] = {}
    for i in order:
        by_len.setdefault(len(samples[i]), []).append(int(i))
    batches = []
    for length in sorted(by_len):
        idx = by_len[length]
        for s in range(0, len(idx), batch_size):
            chunk = [samples[i] for i in idx[s:s + batch_size]]
            batches.append(Batch(np.stack([c.labels for c in chunk]),
                                 np.stack([c.features for c in chunk])))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


@dataclass
class TrainResult:
    model: Forecaster
    losses: list[float]
    grad_norms: list[tuple[float, float]] = field(default_factory=list)


def train(model: Forecaster, dataset: Sequence[Sample], config: TrainConfig,
          progress: bool = False) -> TrainResult:
    """Train ``model`` in place; returns per-epoch mean losses.

    Each batch draws one observed fraction from ``config.obs_fractions`` and
    predicts ``config.pred_fraction`` of the sequence.
    """
    if not dataset:
        raise ConfigError("empty training set")
    cfg = model.config
    if dataset[0].features.shape[1] != cfg.feature_dim:
        raise ConfigError(f"dataset feature dim {dataset[0].features.shape[1]} != model {cfg.feature_dim}")
    params = model.params.named_tensors()
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed)
    losses: list[float] = []
    norms: list[tuple[float, float]] = []
    for epoch in range(config.epochs):
        model.reset_memory()
        batches = make_batches(dataset, config.batch_size, rng)
        total, count = 0.0, 0
        for step_i, batch in enumerate(batches):
            obs = config.obs_fractions[int(rng.integers(len(config.obs_fractions)))]
            for p in params.values():
                p.grad = None
            with nx.Tape() as tape:
                loss, state = forward_loss(model.params, batch, obs, config.pred_fraction,
                                           config.teacher_forcing, model.carry_for_next(),
                                           return_state=True)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step_i}",
                                    epoch=epoch, step=step_i)
            nx.backward(loss, tape)
            del tape
            model.remember(state)
            grads = {k: (np.zeros_like(p.data) if p.grad is None else p.grad) for k, p in params.items()}
            grads, before, after = clip_by_global_norm(grads, config.clip_norm)
            norms.append((before, after))
            opt.step(grads)
            n = batch.labels.shape[0]
            total += value * n
            count += n
        losses.append(total / count)
        if progress:
            log.info("epoch %d loss %.4f", epoch, losses[-1])
    for p in params.values():
        p.grad = None
    return TrainResult(model, losses, norms)
