"""Observed-%/predicted-% evaluation grid and report containers."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..errors import FormatError, ProtocolError
from ..forecaster import Forecaster, RolloutPolicy, observe, rollout
from ..protocol import EvalProtocol, frame_accuracy, macro_accuracy, windows
from ..synthdata import Sample, corrupt_labels, one_hot

log = logging.getLogger(__name__)

CSV_HEADER = ["variant", "seed", "observed_frac", "predicted_frac", "accuracy", "num_sequences"]


@dataclass
class EvalRow:
    variant: str
    seed: int
    observed_frac: float
    predicted_frac: float
    accuracy: float
    num_sequences: int
    macro_accuracy: float = float("nan")

    def sort_key(self):
        return (self.variant, self.seed, self.observed_frac, self.predicted_frac)


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def sorted(self) -> "EvalReport":
        return EvalReport(sorted(self.rows, key=EvalRow.sort_key), dict(self.meta))

    def extend(self, other: "EvalReport") -> None:
        self.rows.extend(other.rows)
        for k, v in other.meta.items():
            if isinstance(v, dict) and isinstance(self.meta.get(k), dict):
                self.meta[k].update(v)
            else:
                self.meta[k] = v

    def cell(self, variant: str, observed_frac: float, predicted_frac: float) -> list[EvalRow]:
        return [r for r in self.rows if r.variant == variant
                and np.isclose(r.observed_frac, observed_frac)
                and np.isclose(r.predicted_frac, predicted_frac)]

    def mean_accuracy(self, variant: str, observed_frac: float, predicted_frac: float) -> float:
        rows = self.cell(variant, observed_frac, predicted_frac)
        if not rows:
            raise KeyError(f"no rows for {variant} at {observed_frac}/{predicted_frac}")
        return float(np.mean([r.accuracy for r in rows]))


# ----------------------------------------------------------------- evaluation

LabelTransform = Callable[[np.ndarray, int], np.ndarray]


def _cell_accuracy(model: Forecaster, samples: Sequence[Sample], obs_frac: float,
                   pred_frac: float, transform: LabelTransform | None, batch_size: int):
    """Per-sequence (frame, macro) accuracies for one protocol cell."""
    usable = []
    for i, s in enumerate(samples):
        try:
            o, p = windows(len(s), obs_frac, pred_frac)
        except ProtocolError:
            continue
        usable.append((i, s, len(o), len(p)))
    skipped = len(samples) - len(usable)
    if skipped:
        log.warning("skipped %d sequence(s) at observed %.2f / predicted %.2f",
                    skipped, obs_frac, pred_frac)
    if not usable:
        raise ProtocolError(f"no sequence admits observed {obs_frac} / predicted {pred_frac}")

    C = model.config.num_classes
    policy = RolloutPolicy("greedy")
    # persisted memory makes sequences order-dependent: run them one at a time
    size = 1 if model.config.persist_memory else batch_size
    groups: dict[tuple[int, int, int], list] = {}
    for item in usable:
        groups.setdefault((len(item[1]), item[2], item[3]), []).append(item)
    frame = {}
    macro = {}
    for (_, n_obs, n_pred), items in sorted(groups.items()):
        for s0 in range(0, len(items), size):
            chunk = items[s0:s0 + size]
            obs_labels = np.stack([s.labels[:n_obs] for _, s, _, _ in chunk])
            if transform is not None:
                obs_labels = np.stack([transform(l, i) for l, (i, _, _, _) in zip(obs_labels, chunk)])
            feats = np.stack([s.features[:n_obs] for _, s, _, _ in chunk])
            state = model.initial_state((len(chunk),))
            state = observe(model.params, feats, one_hot(obs_labels, C), state)
            steps = rollout(model.params, state, obs_labels[:, -1], n_pred, policy)
            pred = np.stack([c for _, c in steps], axis=-1)
            for row, (i, s, _, _) in enumerate(chunk):
                truth = s.labels[n_obs:n_obs + n_pred]
                frame[i] = frame_accuracy(pred[row], truth)
                macro[i] = macro_accuracy(pred[row], truth)
            if model.config.persist_memory:
                model.remember(state)
    order = sorted(frame)
    return [frame[i] for i in order], [macro[i] for i in order]


def evaluate(model: Forecaster, test_set: Sequence[Sample], protocol: EvalProtocol | None = None,
             seed: int | None = None, variant: str | None = None,
             label_transform: LabelTransform | None = None, batch_size: int = 64) -> EvalReport:
    """Greedy-rollout frame accuracy for every (observed, predicted) cell.

    Observed-window labels are ground truth unless ``label_transform`` maps
    ``(observed_labels, sequence_index)`` to replacement labels.
    """
    if not test_set:
        raise ProtocolError("empty test set")
    protocol = protocol or EvalProtocol()
    seed = model.seed if seed is None else seed
    variant = variant or model.variant
    rows = []
    for obs_frac, pred_frac in protocol.cells():
        model.reset_memory()
        accs, macros = _cell_accuracy(model, test_set, obs_frac, pred_frac, label_transform, batch_size)
        rows.append(EvalRow(variant, seed, obs_frac, pred_frac, float(np.mean(accs)), len(accs),
                            float(np.mean(macros))))
    model.reset_memory()
    return EvalReport(rows, {"num_parameters": {variant: model.params.num_parameters()}})


def corruption_transform(p: float, seed: int, num_classes: int) -> LabelTransform:
    """Segment-level label corruption, reproducible per sequence index."""
    def transform(labels: np.ndarray, index: int) -> np.ndarray:
        rng = np.random.default_rng([seed, index])
        return corrupt_labels(labels, p, rng, num_classes)
    return transform


# ----------------------------------------------------------------- report I/O

def write_csv(path, report: EvalReport, append: bool = True) -> None:
    """Write rows sorted by (variant, seed, observed, predicted).

    With ``append`` an existing file with the canonical header is extended.
    """
    path = Path(path)
    rows = report.sorted().rows
    exists = append and path.exists() and path.stat().st_size > 0
    if exists:
        with path.open(newline="") as fh:
            header = next(csv.reader(fh), None)
        if header != CSV_HEADER:
            raise FormatError(f"{path}: existing header {header} is not {CSV_HEADER}")
    with path.open("a" if exists else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not exists:
            w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.variant, r.seed, repr(r.observed_frac), repr(r.predicted_frac),
                        repr(r.accuracy), r.num_sequences])


def read_csv(path) -> EvalReport:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise FormatError(f"{path}: header {header} is not {CSV_HEADER}")
        rows = []
        for n, rec in enumerate(reader, start=2):
            if len(rec) != len(CSV_HEADER):
                raise FormatError(f"{path}: line {n} has {len(rec)} fields")
            try:
                rows.append(EvalRow(rec[0], int(rec[1]), float(rec[2]), float(rec[3]),
                                    float(rec[4]), int(rec[5])))
            except ValueError as exc:
                raise FormatError(f"{path}: line {n}: {exc}") from None
    return EvalReport(rows)


def write_summary(path, report: EvalReport) -> None:
    """Structured summary: all rows (including macro accuracy) plus metadata."""
    doc = {"rows": [asdict(r) for r in report.sorted().rows], "meta": report.meta}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
