"""``lungsound`` command-line entry point.

Subcommands: synth, train, eval, score, export-png. Results are printed as
tab-separated ``key<TAB>value`` lines; figures are written next to the
primary output file. Exit codes: 0 success, 1 usage error, 2 data or I/O
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import dsp
from .dataset import filter_poor_quality, load_manifest, stratified_split
from .errors import DataError, NumericalError
from .metrics import (TaskKind, confusion_from_predictions, read_label_csv, score_confusion,
                      score_label_maps, total_score, write_label_csv, write_report)
from .models import build_model, load_checkpoint, predict_proba
from .plotting import plot_confusion, plot_history, spectrogram_to_gray
from .synth import synth_generate
from .training import (TrainConfig, build_examples, featurize_examples, fit, read_history,
                       write_history)
from .wavio import read_wav

log = logging.getLogger("lungsound")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
TASKS = [t.value for t in TaskKind]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class CliConfig:
    subcommand: str
    inputs: dict[str, object] = field(default_factory=dict)
    outputs: dict[str, Path] = field(default_factory=dict)
    task: str | None = None
    model_kind: str = "lightcnn"
    feature_kind: str = "stft"
    seed: int = 0
    overrides: dict[str, object] = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        cfg = TrainConfig(task=self.task, model_kind=self.model_kind,
                          feature_kind=self.feature_kind, seed=self.seed, **self.overrides)
        cfg.validate()
        return cfg


def _emit(pairs) -> None:
    for key, value in pairs:
        if isinstance(value, float):
            value = repr(value)
        print(f"{key}\t{value}")


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _ratio(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lungsound", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n-per-class", required=True, type=_positive_int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", choices=("recording", "event"), default="recording")

    def model_flags(p):
        p.add_argument("--manifest", required=True, type=Path)
        p.add_argument("--task", required=True, choices=TASKS)
        p.add_argument("--model", choices=("lightcnn", "resnet18"), default="lightcnn")
        p.add_argument("--features", choices=("stft", "mel"), default="stft")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--split-ratio", type=_ratio, default=0.9)
        p.add_argument("--jobs", type=_positive_int, default=os.cpu_count() or 1,
                       help="featurization worker processes (default: all CPUs)")

    p = sub.add_parser("train", help="fit a classifier and save its best checkpoint")
    model_flags(p)
    p.add_argument("--out", required=True, type=Path, help="checkpoint path")
    p.add_argument("--history", type=Path, help="history JSONL (default: <out>_history.jsonl)")
    p.add_argument("--max-epochs", type=_positive_int, default=200)
    p.add_argument("--patience", type=_positive_int, default=10)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)

    p = sub.add_parser("eval", help="score a checkpoint on a manifest")
    model_flags(p)
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="score report JSON")
    p.add_argument("--split", choices=("val", "all"), default="val",
                   help="evaluate the seeded validation split or every example")

    p = sub.add_parser("score", help="score prediction CSVs against label CSVs")
    p.add_argument("--predictions", required=True, nargs="+", type=Path)
    p.add_argument("--labels", required=True, nargs="+", type=Path)
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--all", action="store_true",
                   help="four files each, in task order 1-1 1-2 2-1 2-2; adds Total Score")
    p.add_argument("--out", type=Path, help="report JSON")

    p = sub.add_parser("export-png", help="render a dB spectrogram as a grayscale PNG")
    p.add_argument("--wav", required=True, type=Path)
    p.add_argument("--features", choices=("stft", "mel"), default="stft")
    p.add_argument("--out", required=True, type=Path)
    return parser


def to_config(args: argparse.Namespace) -> CliConfig:
    """Check cross-flag consistency and gather everything a command needs."""
    cfg = CliConfig(args.command, seed=getattr(args, "seed", 0) or 0)
    if args.command == "score":
        n = 4 if args.all else 1
        if args.all == (args.task is not None):
            raise UsageError("score needs exactly one of --task or --all")
        if len(args.predictions) != n or len(args.labels) != n:
            raise UsageError(f"score expects {n} --predictions and {n} --labels file(s)")
        cfg.inputs = {"predictions": args.predictions, "labels": args.labels}
        cfg.task = args.task
        if args.out:
            cfg.outputs["report"] = args.out
        return cfg
    if args.command in ("train", "eval"):
        cfg.task = args.task
        cfg.model_kind = args.model
        cfg.feature_kind = args.features
        cfg.inputs["manifest"] = args.manifest
        cfg.overrides = {"split_ratio": args.split_ratio, "jobs": args.jobs}
    if args.command == "train":
        cfg.outputs["checkpoint"] = args.out
        cfg.outputs["history"] = args.history or _sibling(args.out, "history.jsonl")
        cfg.overrides.update(max_epochs=args.max_epochs, patience=args.patience,
                             batch_size=args.batch_size, initial_lr=args.lr)
        if args.patience > args.max_epochs:
            raise UsageError("--patience must not exceed --max-epochs")
        if args.lr <= 0:
            raise UsageError("--lr must be positive")
    elif args.command == "eval":
        cfg.inputs.update(checkpoint=args.ckpt, split=args.split)
        cfg.outputs["report"] = args.out
    elif args.command == "synth":
        cfg.inputs["level"] = args.level
        cfg.inputs["n_per_class"] = args.n_per_class
        cfg.outputs["dir"] = args.out
    elif args.command == "export-png":
        cfg.inputs["wav"] = args.wav
        cfg.feature_kind = args.features
        cfg.outputs["png"] = args.out
    return cfg


def _load_for_task(path: Path, task: TaskKind):
    manifest = load_manifest(path)
    if task.level == "recording":
        before = len(manifest)
        manifest = filter_poor_quality(manifest)
        if len(manifest) < before:
            log.info("dropped %d Poor Quality recording(s)", before - len(manifest))
    return manifest


def cmd_synth(cfg: CliConfig) -> int:
    out = cfg.outputs["dir"]
    manifest = synth_generate(out, cfg.inputs["n_per_class"], cfg.seed, cfg.inputs["level"])
    _emit([("manifest", out / "manifest.json"), ("recordings", len(manifest))])
    return EXIT_OK


def cmd_train(cfg: CliConfig) -> int:
    tcfg = cfg.train_config()
    task = TaskKind.parse(tcfg.task)
    manifest = _load_for_task(cfg.inputs["manifest"], task)
    result = fit(manifest, tcfg)

    ckpt, hist = cfg.outputs["checkpoint"], cfg.outputs["history"]
    ckpt.write_bytes(result.best_checkpoint)
    write_history(hist, result.history)
    fig = plot_history(read_history(hist), _sibling(ckpt, "history.png"), result.best_epoch)

    best = result.best_record
    rows = [("checkpoint", ckpt), ("history", hist), ("figure", fig),
            ("epochs", len(result.history)), ("best_epoch", result.best_epoch),
            ("best_val_loss", best.val_loss)]
    if best.val_scores is not None:
        rows += [(k, v) for k, v in best.val_scores.to_report(task).items() if k != "task"]
    _emit(rows)
    return EXIT_OK


def cmd_eval(cfg: CliConfig) -> int:
    task = TaskKind.parse(cfg.task)
    tcfg = cfg.train_config()
    model = build_model(cfg.model_kind, len(task.classes), cfg.seed)
    load_checkpoint(cfg.inputs["checkpoint"], model)
    manifest = _load_for_task(cfg.inputs["manifest"], task)
    examples = build_examples(manifest, task)
    if cfg.inputs["split"] == "val":
        split = stratified_split([(ex.id, ex.label) for ex in examples], tcfg.split_ratio,
                                 tcfg.seed)
        keep = set(split.val_ids)
        examples = [ex for ex in examples if ex.id in keep]
        if not examples:
            raise DataError("validation split is empty")

    images = featurize_examples(examples, cfg.feature_kind, tcfg.jobs)
    pred = predict_proba(model, images, tcfg.batch_size).argmax(axis=1)

    true_labels = [ex.label for ex in examples]
    pred_labels = [task.classes[i] for i in pred]
    cm = confusion_from_predictions(true_labels, pred_labels, task)
    scores = score_confusion(cm, task)

    out = cfg.outputs["report"]
    pred_csv, label_csv = _sibling(out, "predictions.csv"), _sibling(out, "labels.csv")
    write_label_csv(pred_csv, {ex.id: p for ex, p in zip(examples, pred_labels)})
    write_label_csv(label_csv, {ex.id: ex.label for ex in examples})
    report = scores.to_report(task)
    write_report(out, report)
    fig = plot_confusion(cm, _sibling(out, "confusion.png"), f"task {task.value}")
    _emit([("report", out), ("predictions", pred_csv), ("labels", label_csv), ("figure", fig),
           ("n", len(examples))] + [(k, v) for k, v in report.items() if k != "task"])
    return EXIT_OK


def cmd_score(cfg: CliConfig) -> int:
    tasks = [TaskKind.parse(cfg.task)] if cfg.task else list(TaskKind)
    reports = []
    for task, p, lab in zip(tasks, cfg.inputs["predictions"], cfg.inputs["labels"]):
        _, scores = score_label_maps(read_label_csv(p), read_label_csv(lab), task)
        reports.append(scores.to_report(task))

    if len(reports) == 1:
        out_obj = reports[0]
        _emit((k, v) for k, v in out_obj.items() if k != "task")
    else:
        total = total_score({r["task"]: r["score"] for r in reports})
        out_obj = {"tasks": reports, "total_score": total}
        _emit([(f"score_{r['task']}", r["score"]) for r in reports] + [("total_score", total)])
    if "report" in cfg.outputs:
        write_report(cfg.outputs["report"], out_obj)
    return EXIT_OK


def export_png(wav: Path, kind: str, out: Path) -> Path:
    from PIL import Image

    samples, rate = read_wav(wav)
    win = dsp.StftConfig().window_length(rate)
    if len(samples) < win:
        raise DataError(f"{wav}: {len(samples)} samples is shorter than one {win}-sample window")
    gray = spectrogram_to_gray(dsp.feature_matrix(samples, rate, kind))
    Image.fromarray(gray, mode="L").save(out, format="PNG")
    return out


def cmd_export_png(cfg: CliConfig) -> int:
    out = export_png(cfg.inputs["wav"], cfg.feature_kind, cfg.outputs["png"])
    _emit([("png", out)])
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "score": cmd_score,
            "export-png": cmd_export_png}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = to_config(args)
        return COMMANDS[cfg.subcommand](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lungsound: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"lungsound: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError) as exc:
        print(f"lungsound: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
