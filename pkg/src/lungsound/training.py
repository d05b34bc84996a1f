"""Supervised training: task label maps, class weights, LR schedule, early stopping."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import dsp
from .dataset import (DatasetManifest, RecordingEntry, RecordingLabel, SplitSpec, class_counts,
                      segment_events, stratified_split)
from .errors import DataError, NumericalError, UndefinedMetricError
from .metrics import (ADVENTITIOUS, NORMAL, ChallengeScores, TaskKind, confusion_from_predictions,
                      score_confusion)
from .models import build_model, checkpoint_bytes
from .nn import Adam, Module, Tensor
from .nn import functional as F
from .wavio import read_wav

log = logging.getLogger(__name__)

# raw manifest label -> task class
TASK_LABEL_MAP: dict[TaskKind, dict[str, str]] = {
    TaskKind.EVENT_BINARY: {"N": NORMAL, **{k: ADVENTITIOUS for k in ("R", "W", "S", "CC", "FC", "WC")}},
    TaskKind.EVENT_MULTI: {k: k for k in ("N", "R", "W", "S", "CC", "FC", "WC")},
    TaskKind.RECORDING_BINARY: {"N": NORMAL, "CAS": ADVENTITIOUS, "DAS": ADVENTITIOUS,
                                "CD": ADVENTITIOUS},
    TaskKind.RECORDING_MULTI: {k: k for k in ("N", "CAS", "DAS", "CD")},
}


@dataclass
class TrainConfig:
    task: str = "2-1"
    model_kind: str = "lightcnn"
    feature_kind: str = "stft"
    # 1e-4 was used for pretrained transformer models, which are not built here
    initial_lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 50
    batch_size: int = 32
    patience: int = 10
    max_epochs: int = 200
    split_ratio: float = 0.9
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        TaskKind.parse(self.task)
        if self.feature_kind not in ("stft", "mel"):
            raise ValueError(f"feature kind must be 'stft' or 'mel', got {self.feature_kind!r}")
        for name in ("initial_lr", "lr_decay_factor", "lr_decay_every", "batch_size", "patience",
                     "max_epochs", "jobs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")


@dataclass(frozen=True)
class ClassWeights:
    labels: tuple[str, ...]
    weights: np.ndarray

    def as_dict(self) -> dict[str, float]:
        return {lab: float(w) for lab, w in zip(self.labels, self.weights)}


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    val_scores: ChallengeScores | None

    def to_json(self) -> dict:
        d = {"epoch": self.epoch, "train_loss": self.train_loss, "val_loss": self.val_loss,
             "lr": self.lr}
        d["val_scores"] = None if self.val_scores is None else {
            k: v for k, v in self.val_scores.to_report("1-1").items() if k != "task"}
        return d


@dataclass
class Example:
    id: str
    label: str          # task class
    entry: RecordingEntry
    event_index: int | None = None


@dataclass
class FitResult:
    best_checkpoint: bytes
    best_epoch: int
    history: list[EpochRecord]
    split: SplitSpec
    class_weights: ClassWeights
    classes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def best_record(self) -> EpochRecord:
        return self.history[self.best_epoch]


def compute_class_weights(counts: Mapping[str, int],
                          labels: Sequence[str] | None = None) -> ClassWeights:
    """w_c proportional to 1/sqrt(n_c), normalized to mean 1."""
    labels = tuple(labels) if labels is not None else tuple(sorted(counts))
    for lab in labels:
        if counts.get(lab, 0) < 1:
            raise ValueError(f"class {lab!r} has no samples; drop or merge it first")
    # relative to the rarest class so equal counts give exactly 1.0
    n_min = min(counts[lab] for lab in labels)
    raw = np.array([math.sqrt(n_min / counts[lab]) for lab in labels])
    return ClassWeights(labels, raw / raw.mean())


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Step decay, evaluated in decimal so 1e-3 * 0.1**k lands on the exact decimal value."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    steps = epoch // cfg.lr_decay_every
    return float(Decimal(repr(cfg.initial_lr)) * Decimal(repr(cfg.lr_decay_factor)) ** steps)


def early_stop_check(history: Sequence[float], patience: int) -> bool:
    """True once ``patience`` epochs in a row failed to strictly beat the running best."""
    if not history:
        raise ValueError("history must be nonempty")
    best = history[0]
    since = 0
    for loss in history[1:]:
        if loss < best:
            best = loss
            since = 0
        else:
            since += 1
    return since >= patience


def build_examples(manifest: DatasetManifest, task: TaskKind | str) -> list[Example]:
    task = TaskKind.parse(task)
    mapping = TASK_LABEL_MAP[task]
    out = []
    for entry in manifest.recordings:
        if task.level == "recording":
            if entry.label is RecordingLabel.PQ:
                raise DataError(
                    f"recording {entry.id!r} is Poor Quality; filter PQ recordings before "
                    f"training task {task.value}")
            out.append(Example(entry.id, mapping[entry.label.value], entry))
        else:
            for k, ev in enumerate(entry.events):
                out.append(Example(f"{entry.id}:{k}", mapping[ev.label.value], entry, k))
    if not out:
        raise DataError(f"no training examples for task {task.value}")
    return out


def _featurize_recording(job: tuple[str, str, tuple]) -> list[np.ndarray]:
    path, kind, spans = job
    samples, rate = read_wav(path)
    win = dsp.StftConfig().window_length(rate)
    out = []
    for span in spans:
        clip = samples if span is None else samples[span[0]:span[1]]
        if len(clip) < win:
            clip = np.pad(clip, (0, win - len(clip)))
        out.append(dsp.featurize(clip, rate, kind))
    return out


def featurize_examples(examples: Sequence[Example], kind: str, jobs: int = 1) -> np.ndarray:
    """Feature images for all examples, in input order.

    Audio is read once per recording; with ``jobs > 1`` recordings are
    featurized in a process pool, results reassembled in input order.
    """
    groups: dict[str, list[int]] = {}
    for pos, ex in enumerate(examples):
        groups.setdefault(ex.entry.id, []).append(pos)
    work = []
    for positions in groups.values():
        entry = examples[positions[0]].entry
        spans = []
        for p in positions:
            k = examples[p].event_index
            spans.append(None if k is None else
                         (entry.events[k].start_sample, entry.events[k].end_sample))
        work.append((entry.audio_path, kind, tuple(spans)))

    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_featurize_recording, work, chunksize=4))
    else:
        results = [_featurize_recording(job) for job in work]

    images = np.empty((len(examples), 3, dsp.IMAGE_SIZE, dsp.IMAGE_SIZE), dtype=np.float32)
    for positions, imgs in zip(groups.values(), results):
        for p, img in zip(positions, imgs):
            images[p] = img
    return images


def check_recording_lengths(examples: Sequence[Example]) -> None:
    """Audio length must match the manifest header count used for bounds checks."""
    seen = set()
    for ex in examples:
        if ex.entry.id in seen:
            continue
        seen.add(ex.entry.id)
        samples, _ = read_wav(ex.entry.audio_path)
        segment_events(ex.entry, samples)


def train_epoch(model: Module, optimizer: Adam, images: np.ndarray, targets: np.ndarray,
                weights: np.ndarray, rng: np.random.Generator, batch_size: int = 32) -> float:
    """One pass in shuffled order; returns the sample-weighted mean batch loss."""
    if len(images) == 0:
        raise ValueError("no training batches")
    model.train()
    order = rng.permutation(len(images))
    total, seen = 0.0, 0
    for b, start in enumerate(range(0, len(order), batch_size)):
        idx = order[start:start + batch_size]
        optimizer.zero_grad()
        logits = model(Tensor(images[idx]), rng)
        loss = F.weighted_softmax_cross_entropy(logits, targets[idx], weights)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite training loss {value} at batch {b}")
        loss.backward()
        optimizer.step()
        total += value * len(idx)
        seen += len(idx)
    return total / seen


def evaluate(model: Module, images: np.ndarray, targets: np.ndarray, weights: np.ndarray,
             batch_size: int = 32) -> tuple[float, np.ndarray]:
    """Eval-mode weighted loss over the whole set and argmax predictions."""
    was_training = model.training
    model.eval()
    num, den = 0.0, 0.0
    preds = []
    w = np.asarray(weights, dtype=np.float64)
    try:
        for start in range(0, len(images), batch_size):
            logits = model(Tensor(images[start:start + batch_size])).data.astype(np.float64)
            t = targets[start:start + batch_size]
            logp = F.log_softmax(logits)
            num += float(-(w[t] * logp[np.arange(len(t)), t]).sum())
            den += float(w[t].sum())
            preds.append(logits.argmax(axis=1))
    finally:
        model.train(was_training)
    return num / den, np.concatenate(preds)


def scores_or_none(true: Sequence[str], pred: Sequence[str], task: TaskKind) -> ChallengeScores | None:
    cm = confusion_from_predictions(true, pred, task)
    try:
        return score_confusion(cm, task)
    except UndefinedMetricError:
        return None


def fit(manifest: DatasetManifest, cfg: TrainConfig) -> FitResult:
    """Train until early stopping or ``max_epochs``; keep the lowest-validation-loss state."""
    cfg.validate()
    task = TaskKind.parse(cfg.task)
    classes = task.classes
    examples = build_examples(manifest, task)
    check_recording_lengths(examples)
    split = stratified_split([(ex.id, ex.label) for ex in examples], cfg.split_ratio, cfg.seed)
    by_id = {ex.id: ex for ex in examples}
    train_ex = [by_id[i] for i in split.train_ids]
    val_ex = [by_id[i] for i in split.val_ids]
    train_counts = class_counts(ex.label for ex in train_ex)
    absent = [c for c in classes if train_counts.get(c, 0) == 0]
    if absent:
        raise DataError(f"task {task.value} class(es) {absent} absent from the training split")
    if not val_ex:
        raise DataError("validation split is empty; need more examples per class")

    log.info("featurizing %d examples (%s)", len(examples), cfg.feature_kind)
    index = {c: i for i, c in enumerate(classes)}
    x_train = featurize_examples(train_ex, cfg.feature_kind, cfg.jobs)
    x_val = featurize_examples(val_ex, cfg.feature_kind, cfg.jobs)
    y_train = np.array([index[ex.label] for ex in train_ex])
    y_val = np.array([index[ex.label] for ex in val_ex])

    cw = compute_class_weights(train_counts, classes)
    model = build_model(cfg.model_kind, len(classes), cfg.seed)
    optimizer = Adam(model.named_parameters(), lr=cfg.initial_lr)

    history: list[EpochRecord] = []
    best_loss, best_epoch, best_state = math.inf, -1, b""
    for epoch in range(cfg.max_epochs):
        optimizer.lr = lr_at_epoch(cfg, epoch)
        rng = np.random.default_rng(cfg.seed + epoch)
        train_loss = train_epoch(model, optimizer, x_train, y_train, cw.weights, rng,
                                 cfg.batch_size)
        val_loss, pred = evaluate(model, x_val, y_val, cw.weights, cfg.batch_size)
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss {val_loss} at epoch {epoch}")
        scores = scores_or_none([classes[i] for i in y_val], [classes[i] for i in pred], task)
        history.append(EpochRecord(epoch, train_loss, val_loss, optimizer.lr, scores))
        log.info("epoch %d lr %.0e train %.4f val %.4f score %s", epoch, optimizer.lr, train_loss,
                 val_loss, "n/a" if scores is None else f"{scores.score:.3f}")
        if val_loss < best_loss:
            best_loss, best_epoch = val_loss, epoch
            best_state = checkpoint_bytes(model)
        if early_stop_check([r.val_loss for r in history], cfg.patience):
            log.info("early stop after epoch %d (best epoch %d)", epoch, best_epoch)
            break

    return FitResult(best_state, best_epoch, history, split, cw, classes)


def write_history(path: str | Path, history: Sequence[EpochRecord]) -> None:
    with Path(path).open("w") as fh:
        for rec in history:
            fh.write(json.dumps(rec.to_json()) + "\n")


def read_history(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
