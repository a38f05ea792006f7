"""Per-position candidate distributions over the vocabulary.

Two producers share one seam: a built-in character n-gram language model
with absolute-discount backoff, and a reader for externally computed
distributions (JSON lines), so any upstream model can stand in.

The n-gram model left-pads each sentence with n-1 boundary symbols;
boundary and unknown tokens appear only in contexts, and every emitted
distribution is over the vocabulary and sums to 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyCorpus,
    FormatError,
    IdMismatch,
    IoError,
    PositionOutOfRange,
)
from .vocab import Vocabulary

DEFAULT_ORDER = 3
DEFAULT_DISCOUNT = 0.75
_SUM_TOL = 1e-9


@dataclass
class CandidateDistribution:
    """Probability vector over the vocabulary for one sentence position."""

    position: int
    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if np.any(v < 0) or abs(float(v.sum()) - 1.0) > _SUM_TOL:
            raise ValueError("candidate distribution must be non-negative and sum to 1")


def _normalize(values: np.ndarray) -> np.ndarray:
    total = float(values.sum())
    if not np.isfinite(total) or total <= 0.0:
        return np.full(len(values), 1.0 / len(values))
    return values / total


class NgramModel:
    """Character n-gram model with absolute discounting, backing off level
    by level down to a uniform base distribution."""

    def __init__(self, order: int, vocab: Vocabulary,
                 counts: list[dict], discount: float = DEFAULT_DISCOUNT):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        self.vocab = vocab
        self.discount = discount
        self.unk = len(vocab)        # OOV slot, counted as a target
        self.bound = len(vocab) + 1  # boundary, context-only
        self._targets = len(vocab) + 1
        # counts[k-1]: context tuple of length k-1 -> {target: count}
        self._counts = counts
        self._stats = [
            {ctx: (sum(t.values()), len(t)) for ctx, t in level.items()}
            for level in counts
        ]

    # --- probabilities ---

    def _level_dist(self, ctx: tuple, k: int, lower: np.ndarray) -> np.ndarray:
        """Distribution at order k given the order-(k-1) distribution."""
        targets = self._counts[k - 1].get(ctx)
        if not targets:
            return lower
        total, distinct = self._stats[k - 1][ctx]
        lam = self.discount * distinct / total
        vec = lam * lower
        for w, c in targets.items():
            vec[w] += max(c - self.discount, 0.0) / total
        return vec

    @staticmethod
    def _suffix(context: tuple, k: int) -> tuple | None:
        """Last k-1 context tokens, or None when the context is shorter."""
        need = k - 1
        if need == 0:
            return ()
        if len(context) < need:
            return None
        return tuple(context[len(context) - need:])

    def context_distribution(self, context: tuple) -> np.ndarray:
        """P(. | context) over vocabulary plus the unknown slot."""
        vec = np.full(self._targets, 1.0 / self._targets)
        for k in range(1, self.order + 1):
            ctx = self._suffix(context, k)
            if ctx is None:
                break
            vec = self._level_dist(ctx, k, vec)
        return vec

    def cond_prob(self, target: int, context: tuple) -> float:
        p = 1.0 / self._targets
        for k in range(1, self.order + 1):
            ctx = self._suffix(context, k)
            if ctx is None:
                break
            targets = self._counts[k - 1].get(ctx)
            if not targets:
                continue
            total, distinct = self._stats[k - 1][ctx]
            lam = self.discount * distinct / total
            p = lam * p + max(targets.get(target, 0) - self.discount, 0.0) / total
        return p

    # --- tokenization ---

    def _tokens(self, text: str) -> list[int]:
        idx = self.vocab
        return [idx.index(ch) if ch in idx else self.unk for ch in text]

    # --- scoring ---

    def score_position(self, text: str, i: int) -> CandidateDistribution:
        """Distribution over corrections at position i: the product of every
        model window that overlaps i with the candidate substituted,
        renormalized over the vocabulary."""
        length = len(text)
        if not (0 <= i < length):
            raise PositionOutOfRange(f"position {i} outside sentence of length {length}")
        n = self.order
        tokens = self._tokens(text)
        padded = [self.bound] * (n - 1) + tokens
        n_vocab = len(self.vocab)
        log_scores = np.zeros(n_vocab)

        pi = i + n - 1  # position of i in the padded stream
        for t in range(i, min(i + n, length)):
            pt = t + n - 1
            if t == i:
                ctx = tuple(padded[pt - n + 1:pt])
                probs = self.context_distribution(ctx)[:n_vocab]
                log_scores += np.log(probs)
            else:
                target = padded[pt]
                base = list(padded[pt - n + 1:pt])
                slot = pi - (pt - n + 1)
                probs = np.empty(n_vocab)
                for cand in range(n_vocab):
                    base[slot] = cand
                    probs[cand] = self.cond_prob(target, tuple(base))
                log_scores += np.log(probs)

        values = _normalize(np.exp(log_scores - log_scores.max()))
        return CandidateDistribution(position=i, values=values)

    def position_distribution(self, sentence, i: int) -> np.ndarray:
        return self.score_position(sentence.text, i).values

    # --- persistence ---

    def to_header(self) -> dict:
        counts = []
        for level in self._counts:
            counts.append({
                ",".join(map(str, ctx)): {str(w): c for w, c in targets.items()}
                for ctx, targets in level.items()
            })
        return {
            "kind": "ngram-lm",
            "order": self.order,
            "discount": self.discount,
            "vocab": self.vocab.chars,
            "counts": counts,
        }

    @classmethod
    def from_header(cls, header: dict) -> "NgramModel":
        counts = []
        for level in header["counts"]:
            rebuilt = {}
            for ctx_key, targets in level.items():
                ctx = tuple(int(x) for x in ctx_key.split(",")) if ctx_key else ()
                rebuilt[ctx] = {int(w): int(c) for w, c in targets.items()}
            counts.append(rebuilt)
        return cls(order=int(header["order"]), vocab=Vocabulary(header["vocab"]),
                   counts=counts, discount=float(header["discount"]))


def ngram_train(sentences, order: int = DEFAULT_ORDER,
                vocab: Vocabulary | None = None,
                discount: float = DEFAULT_DISCOUNT) -> NgramModel:
    """Count n-grams of every order up to ``order`` over the sentences.
    With no vocabulary given, one is built from the corpus characters."""
    sentences = [s for s in sentences if s]
    if not sentences:
        raise EmptyCorpus("no sentences to train the language model on")
    if vocab is None:
        chars = sorted({ch for s in sentences for ch in s})
        vocab = Vocabulary(chars)

    unk = len(vocab)
    bound = len(vocab) + 1
    counts: list[dict] = [dict() for _ in range(order)]
    for text in sentences:
        tokens = [vocab.index(ch) if ch in vocab else unk for ch in text]
        padded = [bound] * (order - 1) + tokens
        for t in range(len(tokens)):
            pt = t + order - 1
            target = padded[pt]
            for k in range(1, order + 1):
                ctx = tuple(padded[pt - k + 1:pt])
                targets = counts[k - 1].setdefault(ctx, {})
                targets[target] = targets.get(target, 0) + 1
    return NgramModel(order=order, vocab=vocab, counts=counts, discount=discount)


class ExternalDistributions:
    """Distributions read from a JSON-lines file, keyed by sentence id.

    One object per line: ``{"id": ..., "text": ..., "positions":
    {"<1-based pos>": [[char, prob], ...], ...}}``.  Entries are projected
    onto the vocabulary (out-of-vocabulary characters are dropped and
    counted) and renormalized; positions without entries get a delta at the
    input character.
    """

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self._by_id: dict[str, np.ndarray] = {}
        self._texts: dict[str, str] = {}
        self.oov_dropped: dict[str, int] = {}

    def add_sentence(self, sid: str, text: str, per_position: dict[int, list]):
        n = len(self.vocab)
        dists = np.empty((len(text), n))
        for i, ch in enumerate(text):
            entries = per_position.get(i + 1)
            if entries:
                vec = np.zeros(n)
                for char, prob in entries:
                    if char in self.vocab:
                        vec[self.vocab.index(char)] += prob
                    else:
                        self.oov_dropped[char] = self.oov_dropped.get(char, 0) + 1
                if vec.sum() > 0.0:
                    dists[i] = _normalize(vec)
                    continue
            # no usable entries: delta at the input character when possible
            vec = np.zeros(n)
            if ch in self.vocab:
                vec[self.vocab.index(ch)] = 1.0
            else:
                vec[:] = 1.0 / n
            dists[i] = vec
        self._by_id[sid] = dists
        self._texts[sid] = text

    def sentence_ids(self) -> list[str]:
        return list(self._by_id)

    def distributions(self, sid: str) -> list[CandidateDistribution]:
        if sid not in self._by_id:
            raise IdMismatch(f"no external distributions for sentence {sid!r}")
        return [CandidateDistribution(position=i, values=row)
                for i, row in enumerate(self._by_id[sid])]

    def position_distribution(self, sentence, i: int) -> np.ndarray:
        if sentence.id not in self._by_id:
            raise IdMismatch(f"no external distributions for sentence {sentence.id!r}")
        dists = self._by_id[sentence.id]
        if not (0 <= i < len(dists)):
            raise PositionOutOfRange(
                f"position {i} outside loaded distributions for {sentence.id!r}")
        return dists[i]


def load_external(path, vocab: Vocabulary) -> ExternalDistributions:
    """Validating reader for the external-distribution format above."""
    out = ExternalDistributions(vocab)
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{line_no}: invalid JSON: {exc}") from None
        if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
            raise FormatError(f"{path}:{line_no}: need an object with id and text")
        sid, text = str(obj["id"]), str(obj["text"])
        if not text:
            raise FormatError(f"{path}:{line_no}: empty text")
        per_position: dict[int, list] = {}
        for key, entries in (obj.get("positions") or {}).items():
            try:
                pos = int(key)
            except ValueError:
                raise FormatError(f"{path}:{line_no}: bad position key {key!r}") from None
            if not (1 <= pos <= len(text)):
                raise FormatError(
                    f"{path}:{line_no}: position {pos} outside text of length {len(text)}")
            if not isinstance(entries, list):
                raise FormatError(f"{path}:{line_no}: position {pos} entries must be a list")
            cleaned = []
            for entry in entries:
                if (not isinstance(entry, (list, tuple)) or len(entry) != 2
                        or not isinstance(entry[0], str) or len(entry[0]) != 1):
                    raise FormatError(
                        f"{path}:{line_no}: entries must be [character, probability] pairs")
                char, prob = entry
                try:
                    prob = float(prob)
                except (TypeError, ValueError):
                    raise FormatError(
                        f"{path}:{line_no}: bad probability for {char!r}") from None
                if prob < 0 or not np.isfinite(prob):
                    raise FormatError(
                        f"{path}:{line_no}: negative or non-finite probability for {char!r}")
                cleaned.append((char, prob))
            per_position[pos] = cleaned
        out.add_sentence(sid, text, per_position)
    return out
