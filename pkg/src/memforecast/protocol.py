"""Observed/predicted window arithmetic and the frame-wise accuracy metric."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, ProtocolError


@dataclass
class EvalProtocol:
    observed_fractions: list[float] = field(default_factory=lambda: [0.2, 0.3])
    predicted_fractions: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.5])

    def __post_init__(self):
        if not self.observed_fractions or not self.predicted_fractions:
            raise ConfigError("protocol needs at least one observed and one predicted fraction")
        for f in (*self.observed_fractions, *self.predicted_fractions):
            if not 0.0 < f < 1.0:
                raise ConfigError(f"fraction {f} outside (0, 1)")
        for o in self.observed_fractions:
            for p in self.predicted_fractions:
                if o + p > 1.0 + 1e-12:
                    raise ConfigError(f"observed {o} + predicted {p} exceeds 1")

    def cells(self) -> list[tuple[float, float]]:
        return [(o, p) for o in self.observed_fractions for p in self.predicted_fractions]


def windows(T: int, obs_frac: float, pred_frac: float) -> tuple[range, range]:
    """0-based frame ranges ``(observed, predicted)`` for a length-``T`` sequence.

    ``T_obs = max(1, floor(obs_frac * T))``; the prediction window is the next
    ``floor(pred_frac * T)`` frames.
    """
    if T < 1:
        raise ProtocolError(f"sequence length {T} < 1")
    if not 0.0 < obs_frac < 1.0 or not 0.0 < pred_frac < 1.0:
        raise ProtocolError(f"fractions must lie in (0, 1), got {obs_frac}, {pred_frac}")
    # nudge guards against 0.3 * 100 = 29.999999999999996
    n_obs = max(1, math.floor(obs_frac * T + 1e-9))
    n_pred = math.floor(pred_frac * T + 1e-9)
    if n_pred < 1:
        raise ProtocolError(f"empty prediction window for T={T}, predicted fraction {pred_frac}")
    if n_obs + n_pred > T:
        raise ProtocolError(f"windows {n_obs}+{n_pred} exceed sequence length {T}")
    return range(0, n_obs), range(n_obs, n_obs + n_pred)


def frame_accuracy(predicted, truth) -> float:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ContractError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    if truth.size == 0:
        raise ContractError("cannot score an empty sequence")
    return float(np.mean(predicted == truth))


def macro_accuracy(predicted, truth) -> float:
    """Mean over classes present in ``truth`` of per-class recall."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape or truth.size == 0:
        raise ContractError("macro_accuracy needs equal non-empty sequences")
    return float(np.mean([np.mean(predicted[truth == c] == c) for c in np.unique(truth)]))
