"""Distance and similarity scoring between character embeddings, scale
calibration, and similarity-vector construction.

Two vector kinds share one alignment contract with the vocabulary: binary
vectors derived from fixed confusion sets, and real-valued vectors scored
from embedding distances.  The distance is the L2 distance between
direction-normalized embeddings, so it lives in [0, 2] and is invariant to
positive rescaling of either embedding.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .char_tree import TreeRegistry
from .errors import DegenerateCalibration, NonFiniteInput, UnknownCharacter
from .treelstm import EmbedParams, embed_all
from .vocab import Vocabulary

NORM_FLOOR = 1e-12   # stands in for ||h|| at the all-zero fixpoint
EXP_CLAMP = 500.0    # |exp argument| bound; exp(+-500) stays finite in double
BETA_MIN = 1.0
BETA_MAX = 1e4
DEFAULT_MARGIN = 0.4


@dataclass
class FilterConfig:
    """Margin and sigmoid scale of the distance-to-similarity map."""

    beta: float
    m: float = DEFAULT_MARGIN

    def __post_init__(self):
        if not (0.0 < self.m < 2.0):
            raise ValueError(f"margin must be in (0, 2), got {self.m}")
        if not (self.beta > 0.0):
            raise ValueError(f"scale must be positive, got {self.beta}")


@dataclass
class SimilarityVector:
    """Length-N vector aligned to vocabulary order; ``kind`` is ``binary``
    (0/1 entries from a confusion set) or ``real`` (scored in (0,1))."""

    values: np.ndarray
    kind: str


def normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=-1, keepdims=True)
    return mat / np.maximum(norms, NORM_FLOOR)


def distance(h_a: np.ndarray, h_b: np.ndarray) -> float:
    """L2 distance between direction-normalized vectors, in [0, 2]."""
    h_a = np.asarray(h_a, dtype=np.float64)
    h_b = np.asarray(h_b, dtype=np.float64)
    if not (np.all(np.isfinite(h_a)) and np.all(np.isfinite(h_b))):
        raise NonFiniteInput("embedding contains NaN or Inf")
    ua = h_a / max(np.linalg.norm(h_a), NORM_FLOOR)
    ub = h_b / max(np.linalg.norm(h_b), NORM_FLOOR)
    return float(np.linalg.norm(ua - ub))


def similarity(d_ab, config: FilterConfig):
    """1 / (1 + exp(beta * (d - m))): close to 1 inside the margin, close to
    0 outside, exactly 0.5 at the margin.  Accepts scalars or arrays."""
    z = np.clip(config.beta * (np.asarray(d_ab, dtype=np.float64) - config.m),
                -EXP_CLAMP, EXP_CLAMP)
    out = 1.0 / (1.0 + np.exp(z))
    return float(out) if out.ndim == 0 else out


def pair_distances(embeddings: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Distances for an (n, 2) array of row-index pairs."""
    unit = normalize_rows(embeddings)
    diff = unit[pairs[:, 0]] - unit[pairs[:, 1]]
    return np.linalg.norm(diff, axis=1)


def mean_dissimilar_distance(embeddings: np.ndarray, pairs: np.ndarray) -> float:
    if len(pairs) == 0:
        raise DegenerateCalibration("no dissimilar pairs to calibrate on")
    return float(np.mean(pair_distances(embeddings, pairs)))


def calibrate_beta(embeddings: np.ndarray, pairs: np.ndarray, n_vocab: int,
                   m: float = DEFAULT_MARGIN) -> float:
    """Scale such that the similarity at the mean dissimilar-pair distance
    equals chance, 1/N: beta = ln(N-1) / (d_mean - m), clipped to
    [BETA_MIN, BETA_MAX].

    Raises DegenerateCalibration when the mean dissimilar distance has not
    separated beyond the margin.
    """
    d_star = mean_dissimilar_distance(embeddings, pairs)
    if d_star <= m:
        raise DegenerateCalibration(
            f"mean dissimilar distance {d_star:.4f} <= margin {m}; "
            "train further or override the scale explicitly")
    beta = np.log(n_vocab - 1) / (d_star - m)
    return float(np.clip(beta, BETA_MIN, BETA_MAX))


class ConfusionSets:
    """Head character -> set of confusable characters (head excluded in
    storage).  File format: ``head:members`` with the member characters
    concatenated, ``#`` comments; duplicate heads merge."""

    def __init__(self, sets: dict[str, set[str]]):
        self._sets = {head: frozenset(m for m in members if m != head)
                      for head, members in sets.items()}

    @classmethod
    def load(cls, path) -> "ConfusionSets":
        sets: dict[str, set[str]] = {}
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                head, sep, members = line.partition(":")
                if not sep or len(head) != 1:
                    continue
                sets.setdefault(head, set()).update(members)
        return cls(sets)

    def __len__(self) -> int:
        return len(self._sets)

    def __contains__(self, char: str) -> bool:
        return char in self._sets

    @property
    def heads(self) -> list[str]:
        return sorted(self._sets)

    def members(self, char: str) -> frozenset[str]:
        return self._sets.get(char, frozenset())

    def covers(self, a: str, b: str) -> bool:
        return b in self.members(a) or a in self.members(b)

    def all_chars(self) -> set[str]:
        chars = set(self._sets)
        for members in self._sets.values():
            chars |= members
        return chars


def confusion_vector(char: str, sets: ConfusionSets, vocab: Vocabulary,
                     oov_report: Counter | None = None) -> SimilarityVector:
    """Binary vector: 1 at the character's own index and at every in-vocab
    member of its confusion set, 0 elsewhere.  Members outside the
    vocabulary are skipped and counted in ``oov_report`` when given."""
    if char not in vocab:
        raise UnknownCharacter(f"character {char!r} is not in the vocabulary")
    values = np.zeros(len(vocab))
    values[vocab.index(char)] = 1.0
    for member in sets.members(char):
        if member in vocab:
            values[vocab.index(member)] = 1.0
        elif oov_report is not None:
            oov_report[member] += 1
    return SimilarityVector(values=values, kind="binary")


def headfilt_vector(char: str, vocab: Vocabulary, embeddings: np.ndarray,
                    config: FilterConfig) -> SimilarityVector:
    """Real-valued vector of similarity scores between one character and
    every vocabulary character, from the embedding matrix rows."""
    if char not in vocab:
        raise UnknownCharacter(f"character {char!r} is not in the vocabulary")
    if embeddings.shape[0] != len(vocab):
        raise ValueError(
            f"embedding matrix has {embeddings.shape[0]} rows for {len(vocab)} characters")
    unit = normalize_rows(embeddings)
    d = np.linalg.norm(unit - unit[vocab.index(char)], axis=1)
    return SimilarityVector(values=similarity(d, config), kind="real")


class FilterModel:
    """Embedding parameters, calibrated scale/margin, and vocabulary,
    packaged for scoring; the embedding matrix is computed once."""

    def __init__(self, params: EmbedParams, config: FilterConfig,
                 vocab: Vocabulary, registry: TreeRegistry):
        self.params = params
        self.config = config
        self.vocab = vocab
        self.registry = registry
        self._embeddings: np.ndarray | None = None
        self._vectors: dict[str, SimilarityVector] = {}

    @property
    def embeddings(self) -> np.ndarray:
        if self._embeddings is None:
            self._embeddings = embed_all(self.registry, self.vocab, self.params)
        return self._embeddings

    def similarity_vector(self, char: str) -> SimilarityVector:
        cached = self._vectors.get(char)
        if cached is None:
            cached = headfilt_vector(char, self.vocab, self.embeddings, self.config)
            self._vectors[char] = cached
        return cached

    def distance_between(self, a: str, b: str) -> float:
        e = self.embeddings
        return distance(e[self.vocab.index(a)], e[self.vocab.index(b)])
