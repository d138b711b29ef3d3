"""Ablation and label-corruption sensitivity experiments."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

from ..forecaster import VARIANTS, Forecaster, ForecasterConfig, build_ablation
from ..protocol import EvalProtocol
from ..synthdata import Corpus
from .evaluation import EvalReport, corruption_transform, evaluate
from .training import TrainConfig, train

log = logging.getLogger(__name__)

ABLATION_CELL = (0.3, 0.5)
CORRUPTION_LEVELS = (0.0, 0.1, 0.3)


@dataclass
class TrainedRun:
    model: Forecaster
    losses: list[float]


@dataclass
class AblationResult:
    report: EvalReport
    runs: dict[tuple[str, int], TrainedRun] = field(default_factory=dict)


def _train_one(job):
    variant, seed, model_config, train_config, samples = job
    model = build_ablation(variant, model_config, seed)
    result = train(model, samples, replace(train_config, seed=seed))
    log.info("trained %s seed %d: final loss %.4f", variant, seed, result.losses[-1])
    return variant, seed, TrainedRun(model, result.losses)


def train_variants(corpus: Corpus, model_config: ForecasterConfig, train_config: TrainConfig,
                   variants: Sequence[str] = VARIANTS, seeds: Sequence[int] = (0, 1, 2),
                   jobs: int = 1) -> dict[tuple[str, int], TrainedRun]:
    """Train every (variant, seed) pair under identical data and epoch budget."""
    todo = [(v, s, model_config, train_config, corpus.train) for v in variants for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            done = list(pool.map(_train_one, todo))
    else:
        done = [_train_one(j) for j in todo]
    return {(v, s): run for v, s, run in sorted(done, key=lambda x: (x[0], x[1]))}


def run_ablations(corpus: Corpus, model_config: ForecasterConfig, train_config: TrainConfig,
                  variants: Sequence[str] = VARIANTS, seeds: Sequence[int] = (0, 1, 2),
                  cell: tuple[float, float] = ABLATION_CELL, jobs: int = 1,
                  runs: dict | None = None) -> AblationResult:
    """Train each variant per seed and score the single fixed protocol cell."""
    runs = runs if runs is not None else train_variants(
        corpus, model_config, train_config, variants, seeds, jobs)
    protocol = EvalProtocol([cell[0]], [cell[1]])
    report = EvalReport(meta={"experiment": "ablation", "cell": list(cell), "num_parameters": {}})
    for (variant, seed), run in sorted(runs.items()):
        report.extend(evaluate(run.model, corpus.test, protocol, seed=seed))
    report.meta["final_loss"] = {f"{v}/{s}": r.losses[-1] for (v, s), r in sorted(runs.items())}
    return AblationResult(report.sorted(), runs)


def run_sensitivity(corpus: Corpus, models: Sequence[Forecaster],
                    levels: Sequence[float] = CORRUPTION_LEVELS,
                    cell: tuple[float, float] = ABLATION_CELL) -> EvalReport:
    """Score trained models with corrupted observed-window labels.

    Rows are labelled ``<variant>/p=<level>``; one row per level per model.
    """
    protocol = EvalProtocol([cell[0]], [cell[1]])
    report = EvalReport(meta={"experiment": "sensitivity", "cell": list(cell),
                              "levels": list(levels), "num_parameters": {}})
    for model in models:
        for p in levels:
            transform = corruption_transform(p, model.seed, model.config.num_classes)
            report.extend(evaluate(model, corpus.test, protocol, seed=model.seed,
                                   variant=f"{model.variant}/p={p:g}", label_transform=transform))
    return report.sorted()
