"""End-to-end checking: per-position candidate distributions, optional
similarity filtering, and detection/correction outputs.

A position is flagged when the (possibly filtered) argmax differs from the
input character.  Filtering multiplies the candidate distribution
element-wise with a similarity vector, which works identically for binary
confusion-set vectors and real-valued scored vectors.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch
from .scorer import CandidateDistribution
from .similarity import ConfusionSets, SimilarityVector, confusion_vector
from .vocab import Vocabulary


@dataclass
class Sentence:
    id: str
    text: str

    def __post_init__(self):
        if len(self.text) < 1:
            raise ValueError("sentence must contain at least one character")


@dataclass
class PositionResult:
    input: str
    predicted: str
    flagged: bool


@dataclass
class CheckResult:
    id: str
    positions: list[PositionResult]
    edits: list[tuple[int, str, str]] = field(default_factory=list)  # (pos, wrong, correction)

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id,
             "edits": [{"pos": pos, "wrong": wrong, "correction": corr}
                       for pos, wrong, corr in self.edits]},
            ensure_ascii=False, sort_keys=True)


def _argmax_char(values: np.ndarray, vocab: Vocabulary) -> str:
    # np.argmax returns the lowest index on ties, which is the tie-break contract
    return vocab.char(int(np.argmax(values)))


def predict_unfiltered(dist: CandidateDistribution | np.ndarray,
                       vocab: Vocabulary) -> str:
    values = dist.values if isinstance(dist, CandidateDistribution) else dist
    return _argmax_char(values, vocab)


def predict_filtered(dist: CandidateDistribution | np.ndarray,
                     simvec: SimilarityVector | np.ndarray,
                     vocab: Vocabulary) -> str:
    """Argmax of the element-wise product of distribution and similarity
    vector; ties break to the lowest vocabulary index.  A character whose
    similarity is exactly 0 is never predicted."""
    values = dist.values if isinstance(dist, CandidateDistribution) else dist
    sim = simvec.values if isinstance(simvec, SimilarityVector) else simvec
    if values.shape != sim.shape:
        raise LengthMismatch(
            f"distribution length {values.shape} != similarity length {sim.shape}")
    product = values * sim
    best = int(np.argmax(product))
    if product[best] == 0.0:
        # all admitted candidates carry zero mass; stay inside the admitted set
        admitted = np.flatnonzero(sim > 0.0)
        if admitted.size:
            best = int(admitted[np.argmax(values[admitted])])
    return vocab.char(best)


class ConfusionSetFilter:
    """Binary filtering against fixed confusion sets."""

    def __init__(self, sets: ConfusionSets, vocab: Vocabulary):
        self.sets = sets
        self.vocab = vocab
        self.oov_report: Counter = Counter()
        self._vectors: dict[str, SimilarityVector] = {}

    def similarity_vector(self, char: str) -> SimilarityVector:
        cached = self._vectors.get(char)
        if cached is None:
            cached = confusion_vector(char, self.sets, self.vocab, self.oov_report)
            self._vectors[char] = cached
        return cached


def check_sentence(sentence: Sentence, scorer, filt=None,
                   min_ratio: float | None = None) -> CheckResult:
    """Check one sentence with a scorer (anything with ``vocab`` and
    ``position_distribution(sentence, i)``) and an optional filter
    (anything with ``similarity_vector(char)``).

    Out-of-vocabulary input characters pass through unflagged.  With
    ``min_ratio`` set, a position is additionally flagged only when the
    predicted character's (filtered) score is at least that multiple of the
    input character's.
    """
    vocab: Vocabulary = scorer.vocab
    positions: list[PositionResult] = []
    edits: list[tuple[int, str, str]] = []
    for i, ch in enumerate(sentence.text):
        if ch not in vocab:
            positions.append(PositionResult(input=ch, predicted=ch, flagged=False))
            continue
        try:
            values = scorer.position_distribution(sentence, i)
        except Exception as exc:
            raise type(exc)(f"sentence {sentence.id!r} position {i + 1}: {exc}") from exc
        if filt is not None:
            sim = filt.similarity_vector(ch)
            scores = values * sim.values
            predicted = predict_filtered(values, sim, vocab)
        else:
            scores = values
            predicted = predict_unfiltered(values, vocab)
        flagged = predicted != ch
        if flagged and min_ratio is not None:
            own = scores[vocab.index(ch)]
            flagged = scores[vocab.index(predicted)] >= min_ratio * own
        if not flagged:
            predicted = ch
        positions.append(PositionResult(input=ch, predicted=predicted, flagged=flagged))
        if flagged:
            edits.append((i + 1, ch, predicted))
    return CheckResult(id=sentence.id, positions=positions, edits=edits)


def check_sentences(sentences, scorer, filt=None, min_ratio: float | None = None,
                    threads: int = 1) -> list[CheckResult]:
    """Check many sentences; output order matches input order and is
    independent of the worker count."""
    sentences = list(sentences)
    if threads <= 1 or len(sentences) <= 1:
        return [check_sentence(s, scorer, filt, min_ratio) for s in sentences]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(
            lambda s: check_sentence(s, scorer, filt, min_ratio), sentences))
