"""Command-line entry point: ``python -m memforecast <command>``.

Exit codes: 0 success, 1 usage/config error, 2 data/format error,
3 numerical failure (non-finite loss or failed gradient check).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import ConfigError, FormatError, NumericalError, ProtocolError
from ..forecaster import build_ablation, load_checkpoint, save_checkpoint
from ..protocol import EvalProtocol
from ..synthdata import make_corpus, read_corpus, write_corpus
from .config import ExperimentConfig, load_config
from .diagnostics import model_gradcheck
from .evaluation import evaluate, read_csv, write_csv, write_summary
from .runners import run_ablations, run_sensitivity, train_variants
from .training import train

log = logging.getLogger("memforecast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(path):
    if path is None:
        raise ConfigError("--data is required")
    if not Path(path).is_dir():
        raise FormatError(f"data directory {path} does not exist")
    return read_corpus(path)


def _model_config(cfg: ExperimentConfig, corpus):
    return cfg.model.resolve(corpus.num_classes, corpus.feature_dim)


def cmd_generate(args, cfg: ExperimentConfig) -> int:
    grammar = cfg.data.make_grammar()
    corpus = make_corpus(grammar, cfg.data.corpus_spec(), args.seed)
    out = _out_dir(args)
    write_corpus(out, corpus)
    print(f"wrote {len(corpus.train)} train / {len(corpus.test)} test sequences to {out}")
    return EXIT_OK


def cmd_train(args, cfg: ExperimentConfig) -> int:
    corpus = _load_data(args.data)
    model = build_ablation(args.variant, _model_config(cfg, corpus), args.seed)
    result = train(model, corpus.train, replace(cfg.train, seed=args.seed), progress=True)
    out = _out_dir(args)
    save_checkpoint(out / "checkpoint.json", model)
    with (out / "losses.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(result.losses):
            w.writerow([i, repr(v)])
    print(f"final loss {result.losses[-1]:.4f}; checkpoint in {out / 'checkpoint.json'}")
    return EXIT_OK


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    corpus = _load_data(args.data)
    if args.checkpoint is None:
        raise ConfigError("--checkpoint is required")
    model = load_checkpoint(args.checkpoint)
    report = evaluate(model, corpus.test, cfg.protocol)
    out = _out_dir(args)
    write_csv(out / "report.csv", report)
    write_summary(out / "summary.json", report)
    for r in report.sorted().rows:
        print(f"{r.variant} seed={r.seed} obs={r.observed_frac:.0%} pred={r.predicted_frac:.0%} "
              f"acc={r.accuracy:.4f}")
    return EXIT_OK


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    corpus = _load_data(args.data)
    ex = cfg.experiment
    seeds = [args.seed + s for s in ex.seeds]
    result = run_ablations(corpus, _model_config(cfg, corpus), cfg.train, ex.variants, seeds,
                           tuple(ex.cell), ex.jobs)
    out = _out_dir(args)
    write_csv(out / "ablation.csv", result.report)
    write_summary(out / "ablation_summary.json", result.report)
    for v in ex.variants:
        acc = result.report.mean_accuracy(v, *ex.cell)
        print(f"{v:>5}: mean accuracy {acc:.4f} over {len(seeds)} seed(s)")
    return EXIT_OK


def cmd_sensitivity(args, cfg: ExperimentConfig) -> int:
    corpus = _load_data(args.data)
    ex = cfg.experiment
    if args.checkpoint:
        models = [load_checkpoint(p) for p in args.checkpoint]
    else:
        seeds = [args.seed + s for s in ex.seeds]
        runs = train_variants(corpus, _model_config(cfg, corpus), cfg.train, ["full"], seeds, ex.jobs)
        models = [r.model for r in runs.values()]
    report = run_sensitivity(corpus, models, ex.corruption_levels, tuple(ex.cell))
    out = _out_dir(args)
    write_csv(out / "sensitivity.csv", report)
    write_summary(out / "sensitivity_summary.json", report)
    for r in report.rows:
        print(f"{r.variant} seed={r.seed}: {r.accuracy:.4f}")
    return EXIT_OK


def cmd_gradcheck(args, cfg: ExperimentConfig) -> int:
    report = model_gradcheck(args.seed, args.variant, h=args.step, tol=args.tol)
    name, err = report.worst()
    total = sum(e.size for e in report.relative_errors.values())
    print(f"max relative error {report.max_relative_error:.3e} (worst: {name}); "
          f"tolerance {report.tolerance:g}, step {args.step:g}: {'PASS' if report.passed else 'FAIL'}")
    if not report.passed:
        failing = report.failures()
        print(f"{sum(failing.values())} of {total} elements exceed the tolerance; "
              f"largest |gradient| among them {report.largest_failing_gradient():.2e}, "
              f"rounding floor of the difference quotient {report.roundoff_floor():.1e}")
        for k, n in failing.items():
            print(f"  {k}: {n}")
        raise NumericalError("gradient check failed")
    return EXIT_OK


def cmd_plot(args, cfg: ExperimentConfig) -> int:
    from .plotting import plot_report

    if not args.report:
        raise ConfigError("--report is required")
    report = read_csv(args.report)
    if not report.rows:
        raise FormatError(f"{args.report}: no rows to plot")
    out = Path(args.out)
    if out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "accuracy.png"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    plot_report(report, out)
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {
    "generate": (cmd_generate, "generate a synthetic corpus from the configured grammar"),
    "train": (cmd_train, "train one model and write a checkpoint"),
    "eval": (cmd_eval, "evaluate a checkpoint over the observed/predicted grid"),
    "ablate": (cmd_ablate, "train and score the ablation variants"),
    "sensitivity": (cmd_sensitivity, "score with corrupted observed labels"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of a tiny model"),
    "plot": (cmd_plot, "plot accuracy against predicted fraction"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="memforecast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=_seed, default=0)
        p.add_argument("--out", default=".", help="output directory (or image path for plot)")
        if name in ("train", "eval", "ablate", "sensitivity"):
            p.add_argument("--data", help="corpus directory written by 'generate'")
        if name in ("train", "gradcheck"):
            p.add_argument("--variant", default="full",
                           choices=["a", "b", "c", "d", "e", "full"])
        if name == "gradcheck":
            p.add_argument("--step", type=float, default=1e-5, help="finite-difference step h")
            p.add_argument("--tol", type=float, default=1e-4, help="relative error tolerance")
        if name == "eval":
            p.add_argument("--checkpoint")
        if name == "sensitivity":
            p.add_argument("--checkpoint", action="append",
                           help="trained model(s); repeatable. Trains full models if omitted")
        if name == "plot":
            p.add_argument("--report", help="report CSV")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config)
        return handler(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ProtocolError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
