"""Training, evaluation protocol, experiment runners and the CLI."""

from ..protocol import EvalProtocol, frame_accuracy, macro_accuracy, windows
from .evaluation import EvalReport, EvalRow, evaluate, read_csv, write_csv, write_summary
from .runners import run_ablations, run_sensitivity, train_variants
from .training import Adam, TrainConfig, TrainResult, clip_by_global_norm, train

__all__ = [
    "EvalProtocol", "EvalReport", "EvalRow", "TrainConfig", "TrainResult", "Adam",
    "clip_by_global_norm", "evaluate", "frame_accuracy", "macro_accuracy", "read_csv",
    "run_ablations", "run_sensitivity", "train", "train_variants", "windows",
    "write_csv", "write_summary",
]
