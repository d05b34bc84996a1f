"""Challenge scoring: confusion matrices, SE/SP, AS/HS/Score and Total Score."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, UndefinedMetricError

NORMAL = "N"
ADVENTITIOUS = "Adventitious"


class TaskKind(str, Enum):
    EVENT_BINARY = "1-1"
    EVENT_MULTI = "1-2"
    RECORDING_BINARY = "2-1"
    RECORDING_MULTI = "2-2"

    @property
    def classes(self) -> tuple[str, ...]:
        return _TASK_CLASSES[self]

    @property
    def adventitious(self) -> tuple[str, ...]:
        return tuple(c for c in self.classes if c != NORMAL)

    @property
    def level(self) -> str:
        return "event" if self.value.startswith("1") else "recording"

    @classmethod
    def parse(cls, value) -> "TaskKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            raise ValueError(f"unknown task {value!r} (expected 1-1, 1-2, 2-1 or 2-2)") from None


_TASK_CLASSES = {
    TaskKind.EVENT_BINARY: (NORMAL, ADVENTITIOUS),
    TaskKind.EVENT_MULTI: (NORMAL, "R", "W", "S", "CC", "FC", "WC"),
    TaskKind.RECORDING_BINARY: (NORMAL, ADVENTITIOUS),
    TaskKind.RECORDING_MULTI: (NORMAL, "CAS", "DAS", "CD"),
}

TOTAL_SCORE_WEIGHTS = {
    TaskKind.EVENT_BINARY: Decimal("0.2"),
    TaskKind.EVENT_MULTI: Decimal("0.3"),
    TaskKind.RECORDING_BINARY: Decimal("0.2"),
    TaskKind.RECORDING_MULTI: Decimal("0.3"),
}


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray  # rows = true, cols = predicted

    def row_total(self, label: str) -> int:
        return int(self.counts[self.labels.index(label)].sum())

    def hits(self, label: str) -> int:
        i = self.labels.index(label)
        return int(self.counts[i, i])


@dataclass(frozen=True)
class ChallengeScores:
    se: float
    sp: float
    as_score: float
    hs: float
    score: float

    def to_report(self, task: TaskKind | str) -> dict:
        task = TaskKind.parse(task)
        return {"task": task.value, "se": self.se, "sp": self.sp, "as": self.as_score,
                "hs": self.hs, "score": self.score}

    def rounded(self, digits: int = 2) -> dict:
        return {k: round(v, digits) for k, v in
                (("se", self.se), ("sp", self.sp), ("as", self.as_score), ("hs", self.hs),
                 ("score", self.score))}


def confusion_from_predictions(true_labels: Sequence[str], predicted_labels: Sequence[str],
                               task: TaskKind | str) -> ConfusionMatrix:
    task = TaskKind.parse(task)
    if len(true_labels) != len(predicted_labels):
        raise DataError(
            f"{len(true_labels)} true labels but {len(predicted_labels)} predictions")
    index = {c: i for i, c in enumerate(task.classes)}
    counts = np.zeros((len(index), len(index)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        for lab in (t, p):
            if lab not in index:
                raise DataError(f"label {lab!r} is not a task {task.value} class {task.classes}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(task.classes, counts)


def sensitivity(cm: ConfusionMatrix, task: TaskKind | str) -> float:
    """Pooled exact-class hits over all adventitious ground-truth samples."""
    task = TaskKind.parse(task)
    total = sum(cm.row_total(c) for c in task.adventitious)
    if total == 0:
        raise UndefinedMetricError(
            f"sensitivity undefined for task {task.value}: no adventitious samples")
    return sum(cm.hits(c) for c in task.adventitious) / total


def specificity(cm: ConfusionMatrix) -> float:
    total = cm.row_total(NORMAL)
    if total == 0:
        raise UndefinedMetricError("specificity undefined: no Normal samples")
    return cm.hits(NORMAL) / total


def aggregate(se: float, sp: float) -> ChallengeScores:
    for name, v in (("SE", se), ("SP", sp)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    as_score = (se + sp) / 2.0
    hs = 2.0 * se * sp / (se + sp) if se + sp > 0 else 0.0
    return ChallengeScores(se, sp, as_score, hs, (as_score + hs) / 2.0)


def score_confusion(cm: ConfusionMatrix, task: TaskKind | str) -> ChallengeScores:
    return aggregate(sensitivity(cm, task), specificity(cm))


def total_score(scores: Mapping) -> float:
    """0.2*S(1-1) + 0.3*S(1-2) + 0.2*S(2-1) + 0.3*S(2-2).

    Summed in decimal so that scores given to a few decimal places produce
    the exact decimal result.
    """
    parsed = {TaskKind.parse(k): v for k, v in scores.items()}
    missing = [t.value for t in TaskKind if t not in parsed]
    if missing:
        raise ValueError(f"missing task score(s): {', '.join(missing)}")
    total = Decimal(0)
    for task, weight in TOTAL_SCORE_WEIGHTS.items():
        s = float(parsed[task])
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"score for task {task.value} must lie in [0, 1], got {s}")
        total += weight * Decimal(repr(s))
    return float(total)


def read_label_csv(path: str | Path) -> dict[str, str]:
    """``id,label`` CSV with a header row -> {id: label}."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["id", "label"]:
                raise DataError(f"{path}: expected header 'id,label'")
            out: dict[str, str] = {}
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
                rid, label = row[0].strip(), row[1].strip()
                if rid in out:
                    raise DataError(f"{path}:{lineno}: duplicate id {rid!r}")
                out[rid] = label
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return out


def write_label_csv(path: str | Path, labels: Mapping[str, str]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"])
        for rid, label in labels.items():
            writer.writerow([rid, label])


def score_label_maps(predictions: Mapping[str, str], labels: Mapping[str, str],
                     task: TaskKind | str) -> tuple[ConfusionMatrix, ChallengeScores]:
    """Score two {id: label} maps; ids are matched, so row order is irrelevant."""
    task = TaskKind.parse(task)
    if set(predictions) != set(labels):
        only_p = sorted(set(predictions) - set(labels))[:5]
        only_l = sorted(set(labels) - set(predictions))[:5]
        raise DataError(f"id sets differ (only in predictions: {only_p}; only in labels: {only_l})")
    ids = sorted(labels)
    cm = confusion_from_predictions([labels[i] for i in ids], [predictions[i] for i in ids], task)
    return cm, score_confusion(cm, task)


def write_report(path: str | Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=1) + "\n")
