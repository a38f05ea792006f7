"""Sentence-level detection/correction metrics and confusion-set coverage.

A sentence counts once in the confusion matrix:

    gold has errors, predictions exactly match        -> TP
    gold has errors, no predictions                   -> FN
    gold has errors, predictions nonempty but wrong   -> FP
    gold error-free, no predictions                   -> TN
    gold error-free, any prediction                   -> FP

"Exactly match" compares position sets for the detection task and
(position, correction) sets for the correction task, so a correction match
implies a detection match and detection metrics dominate correction
metrics on the same predictions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .data_io import LabeledCorpus
from .errors import IdMismatch
from .similarity import ConfusionSets

TASKS = ("detection", "correction")


@dataclass
class MetricReport:
    task: str
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if (p + r) else 0.0

    def to_dict(self) -> dict:
        return {"task": self.task, "tp": self.tp, "fp": self.fp,
                "tn": self.tn, "fn": self.fn,
                "accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def format_table(self) -> str:
        rows = [("task", self.task),
                ("sentences", str(self.total)),
                ("TP/FP/TN/FN", f"{self.tp}/{self.fp}/{self.tn}/{self.fn}"),
                ("accuracy", f"{self.accuracy:.4f}"),
                ("precision", f"{self.precision:.4f}"),
                ("recall", f"{self.recall:.4f}"),
                ("F1", f"{self.f1:.4f}")]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _normalize_predictions(predicted) -> dict[str, list[tuple[int, str]]]:
    """Accept CheckResult-like objects (with .id and .edits) or a mapping
    id -> [(pos, correction)] / [(pos, wrong, correction)]."""
    if hasattr(predicted, "items"):
        items = predicted.items()
    else:
        items = ((r.id, r.edits) for r in predicted)
    out: dict[str, list[tuple[int, str]]] = {}
    for sid, edits in items:
        cleaned = []
        for edit in edits:
            if len(edit) == 3:
                pos, _wrong, corr = edit
            else:
                pos, corr = edit
            cleaned.append((int(pos), corr))
        if sid in out:
            raise IdMismatch(f"duplicate prediction for sentence {sid!r}")
        out[sid] = cleaned
    return out


def sentence_metrics(gold: LabeledCorpus, predicted, task: str) -> MetricReport:
    """Sentence-level confusion matrix and metrics; gold and predictions
    must cover exactly the same sentence ids."""
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    preds = _normalize_predictions(predicted)
    gold_ids = {rec.id for rec in gold.sentences}
    missing = gold_ids - preds.keys()
    extra = preds.keys() - gold_ids
    if missing or extra:
        raise IdMismatch(
            f"gold/prediction id mismatch: {len(missing)} missing, {len(extra)} extra")

    tp = fp = tn = fn = 0
    for rec in gold.sentences:
        pred_edits = preds[rec.id]
        if task == "detection":
            gold_set = {pos for pos, _ in rec.edits}
            pred_set = {pos for pos, _ in pred_edits}
        else:
            gold_set = set(rec.edits)
            pred_set = set(pred_edits)
        if gold_set:
            if not pred_set:
                fn += 1
            elif pred_set == gold_set:
                tp += 1
            else:
                fp += 1
        else:
            if pred_set:
                fp += 1
            else:
                tn += 1
    return MetricReport(task=task, tp=tp, fp=fp, tn=tn, fn=fn)


@dataclass
class CoverageReport:
    total: int
    covered: int

    @property
    def fraction(self) -> float | None:
        return self.covered / self.total if self.total else None

    def fraction_str(self) -> str:
        f = self.fraction
        return "N/A" if f is None else f"{100.0 * f:.2f}%"

    def to_dict(self) -> dict:
        return {"unique_pairs": self.total, "covered": self.covered,
                "fraction": self.fraction}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def format_table(self) -> str:
        return (f"unique error pairs  {self.total}\n"
                f"covered by sets     {self.covered}\n"
                f"coverage            {self.covered}/{self.total} ({self.fraction_str()})")


def coverage(pairs, sets: ConfusionSets) -> CoverageReport:
    """Fraction of unique error pairs (a, b) with b in sets[a] or a in
    sets[b].  ``pairs`` is an iterable of pairs or a pair->count mapping."""
    keys = list(pairs.keys()) if hasattr(pairs, "keys") else list(pairs)
    covered = sum(1 for a, b in keys if sets.covers(a, b))
    return CoverageReport(total=len(keys), covered=covered)
