"""Gradient check of a complete forecaster on a tiny instance."""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from .. import numerics as nx
from ..forecaster import ForecasterConfig, build, forward_loss
from ..memory import MemoryConfig


def tiny_config() -> ForecasterConfig:
    return ForecasterConfig(num_classes=3, feature_dim=8, hidden_visual=8, hidden_label=6,
                            mem_visual=MemoryConfig(4, 8), mem_label=MemoryConfig(4, 6),
                            decoder_hidden=8)


def model_gradcheck(seed: int = 0, variant: str = "full", config: ForecasterConfig | None = None,
                    observed: int = 4, horizon: int = 3, h: float = 1e-5,
                    tol: float = 1e-4) -> nx.GradCheckReport:
    """Finite-difference check of the forecasting loss w.r.t. every parameter.

    Uses a random sequence of ``observed + horizon`` frames with teacher
    forcing, so the loss is a smooth function of the parameters.
    """
    config = config or tiny_config()
    params = build(config, seed, variant)
    rng = np.random.default_rng(seed + 1)
    T = observed + horizon
    sample = SimpleNamespace(labels=rng.integers(0, config.num_classes, size=T),
                             features=rng.normal(size=(T, config.feature_dim)))
    obs_frac, pred_frac = observed / T, horizon / T

    def loss():
        return forward_loss(params, sample, obs_frac, pred_frac, teacher_forcing=True)

    return nx.grad_check(loss, params.named_tensors(), h=h, tol=tol)
