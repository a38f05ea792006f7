"""Two-stage contrastive training of the character-embedding filter.

Stage 1 imitates the given confusion sets: characters sharing a set are
positive pairs, everything else is negative.  Stage 2 (adaptation) adds
error pairs observed in a labeled corpus as further positives and keeps
training.  The loss per pair is a hinge around the margin m:

    label 1:  max(0, d - m)      pull similar characters inside the margin
    label 0:  max(0, m - d)      push dissimilar characters beyond it

Gradients flow through the distance, the direction normalization, and the
tree LSTM down to every table entry and cell weight.  All sampling,
accumulation, and update orders are fixed, so a seed fully determines the
final parameters.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .char_tree import TreeRegistry
from .data_io import LabeledCorpus, bundle_from_model, extract_error_pairs, save_model
from .errors import DegenerateCalibration, EmptySets, HeadFiltError, UnknownCharacter
from .similarity import (
    BETA_MIN,
    NORM_FLOOR,
    ConfusionSets,
    FilterConfig,
    FilterModel,
    calibrate_beta,
    distance,
    pair_distances,
)
from .treelstm import EmbedGradients, EmbedParams, backward, compile_tree, embed_all, forward
from .vocab import Vocabulary

_TINY_DISTANCE = 1e-15  # below this the pair direction is treated as zero


@dataclass(frozen=True)
class TrainPair:
    """A labeled character pair: label 1 for confusable, 0 for unrelated."""

    a: str
    b: str
    label: int

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("a training pair needs two distinct characters")
        if self.label not in (0, 1):
            raise ValueError(f"pair label must be 0 or 1, got {self.label}")


@dataclass
class TrainConfig:
    m: float = 0.4
    learning_rate: float = 3e-3
    batch_size: int = 500
    stage1_steps: int = 150_000
    stage2_steps: int = 50_000
    negatives_per_positive: int = 1
    seed: int = 0
    dim: int = 512
    dim_in: int | None = None
    calibration_pairs: int = 100_000
    eval_negatives: int = 10_000
    checkpoint_every: int = 0  # 0 disables checkpointing

    def __post_init__(self):
        for name in ("m", "learning_rate", "batch_size", "calibration_pairs",
                     "eval_negatives"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.stage1_steps < 0 or self.stage2_steps < 0 or self.checkpoint_every < 0:
            raise ValueError("step counts must be non-negative")
        if self.negatives_per_positive < 1:
            raise ValueError("need at least one negative per positive")
        if self.dim_in is None:
            self.dim_in = self.dim


@dataclass
class TrainReport:
    stage_losses: dict[str, list[float]] = field(default_factory=dict)
    pos_within_margin: float = 0.0
    neg_beyond_margin: float = 0.0
    beta: float = 0.0
    mean_dissimilar_distance: float = 0.0
    wall_time_s: float = 0.0
    skipped_pairs: Counter = field(default_factory=Counter)


def hinge(d: np.ndarray, labels: np.ndarray, m: float):
    """Vectorized pair loss and its subgradient w.r.t. the distance.

    The subgradient at d == m is 0 for both labels, so satisfied pairs
    contribute neither loss nor gradient.
    """
    pos = labels == 1
    loss = np.where(pos, np.maximum(0.0, d - m), np.maximum(0.0, m - d))
    grad = np.where(pos, (d > m).astype(np.float64), -(d < m).astype(np.float64))
    return loss, grad


def pair_loss(pair: TrainPair, embeddings: dict[str, np.ndarray], m: float):
    """Loss contribution of one pair plus d(loss)/d(distance)."""
    try:
        h_a, h_b = embeddings[pair.a], embeddings[pair.b]
    except KeyError as exc:
        raise UnknownCharacter(f"no embedding for {exc.args[0]!r}") from None
    d = distance(h_a, h_b)
    loss, grad = hinge(np.array([d]), np.array([pair.label]), m)
    return float(loss[0]), float(grad[0])


def _canonical(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


class NegativeSampler:
    """Uniform sampler over unordered vocabulary pairs, rejecting the
    positive set (and self pairs).  Deterministic given the generator."""

    def __init__(self, n_vocab: int, positives):
        self.n = n_vocab
        keys = {a * n_vocab + b for a, b in positives}
        self._forbidden = np.fromiter(keys, dtype=np.int64, count=len(keys))
        self._forbidden.sort()
        total = n_vocab * (n_vocab - 1) // 2
        if len(keys) >= total:
            raise HeadFiltError("every character pair is positive; nothing to sample")

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """(count, 2) array of vocabulary index pairs, a < b."""
        out = np.empty((count, 2), dtype=np.int64)
        filled = 0
        attempts = 0
        while filled < count:
            need = count - filled
            draw = 2 * need + 8
            a = rng.integers(0, self.n, size=draw)
            b = rng.integers(0, self.n, size=draw)
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            keys = lo * self.n + hi
            ok = (lo != hi) & ~np.isin(keys, self._forbidden)
            take = min(int(ok.sum()), need)
            out[filled:filled + take, 0] = lo[ok][:take]
            out[filled:filled + take, 1] = hi[ok][:take]
            filled += take
            attempts += 1
            if attempts > 1000:
                raise HeadFiltError("negative sampling failed to make progress")
        return out


def build_stage1_pairs(sets: ConfusionSets, vocab: Vocabulary,
                       oov_report: Counter | None = None):
    """All unordered within-set pairs (head included) as positives, plus a
    rejection sampler over the remaining pair space."""
    if len(sets) == 0:
        raise EmptySets("no confusion sets given")
    positives: set[tuple[int, int]] = set()
    for head in sets.heads:
        group = [head, *sorted(sets.members(head))]
        idx = []
        for ch in group:
            if ch in vocab:
                idx.append(vocab.index(ch))
            elif oov_report is not None:
                oov_report[ch] += 1
        for i, a in enumerate(idx):
            for b in idx[i + 1:]:
                positives.add(_canonical(a, b))
    if not positives:
        raise EmptySets("confusion sets contribute no in-vocabulary pairs")
    ordered = sorted(positives)
    return ordered, NegativeSampler(len(vocab), ordered)


def build_stage2_pairs(stage1_positives, corpus: LabeledCorpus, vocab: Vocabulary,
                       oov_report: Counter | None = None):
    """Stage-1 positives plus observed error pairs; the sampler's negative
    space excludes every observed pair as well."""
    positives = set(stage1_positives)
    for (wrong, correct), _count in extract_error_pairs(corpus).items():
        if wrong in vocab and correct in vocab:
            positives.add(_canonical(vocab.index(wrong), vocab.index(correct)))
        elif oov_report is not None:
            oov_report[wrong if wrong not in vocab else correct] += 1
    ordered = sorted(positives)
    return ordered, NegativeSampler(len(vocab), ordered)


class Adam:
    """First-order adaptive-moment update, standard defaults."""

    def __init__(self, arrays, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            a -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _compile_vocab(registry: TreeRegistry, vocab: Vocabulary, params: EmbedParams):
    return [compile_tree(registry.tree_for(c), params) for c in vocab]


def _train_step(params, scheds, positives_arr, sampler, config, rng, grads, opt):
    n_pos = config.batch_size
    n_neg = config.batch_size * config.negatives_per_positive
    pos = positives_arr[rng.integers(0, len(positives_arr), size=n_pos)]
    neg = sampler.sample(rng, n_neg)
    pairs = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(n_pos, dtype=np.int64),
                             np.zeros(n_neg, dtype=np.int64)])

    chars = np.unique(pairs)  # sorted vocabulary indices
    caches = [forward(scheds[ci], params) for ci in chars]
    H = np.stack([c.H[-1] for c in caches])
    norms = np.linalg.norm(H, axis=1, keepdims=True)
    U = H / np.maximum(norms, NORM_FLOOR)

    loc = np.searchsorted(chars, pairs)  # pair endpoints -> rows of H
    diff = U[loc[:, 0]] - U[loc[:, 1]]
    d = np.linalg.norm(diff, axis=1)
    losses, g = hinge(d, labels, config.m)
    g = g / len(pairs)  # mean reduction over the sampled batch

    active = g != 0.0
    dU = np.zeros_like(U)
    if np.any(active):
        safe_d = np.maximum(d[active], _TINY_DISTANCE)
        direction = diff[active] / safe_d[:, None]
        pull = g[active][:, None] * direction
        np.add.at(dU, loc[active, 0], pull)
        np.add.at(dU, loc[active, 1], -pull)

        # chain rule through u = h / max(||h||, floor)
        over = norms > NORM_FLOOR
        inner = np.sum(U * dU, axis=1, keepdims=True)
        dH = (dU - np.where(over, U * inner, 0.0)) / np.maximum(norms, NORM_FLOOR)

        for arr in grads.arrays():
            arr.fill(0.0)
        for k, ci in enumerate(chars):
            if np.any(dH[k]):
                backward(scheds[ci], params, caches[k], dH[k], grads)
        opt.step(params.arrays(), grads.arrays())

    return float(np.mean(losses))


def _run_stage(params, scheds, positives, sampler, config, steps, rng,
               stage: str = "", checkpoint=None):
    positives_arr = np.asarray(positives, dtype=np.int64)
    grads = EmbedGradients(params)
    opt = Adam(params.arrays(), lr=config.learning_rate)
    losses = []
    for step in range(1, steps + 1):
        losses.append(_train_step(params, scheds, positives_arr, sampler,
                                  config, rng, grads, opt))
        if checkpoint and config.checkpoint_every and step % config.checkpoint_every == 0:
            checkpoint(stage, step, params, sampler)
    return losses


def margin_stats(embeddings: np.ndarray, positives, negatives, m: float):
    """Fractions of positive pairs inside and negative pairs beyond the margin."""
    pos_frac = neg_frac = 0.0
    if len(positives):
        pos_frac = float(np.mean(pair_distances(embeddings, np.asarray(positives)) < m))
    if len(negatives):
        neg_frac = float(np.mean(pair_distances(embeddings, np.asarray(negatives)) > m))
    return pos_frac, neg_frac


def _seed_children(seed: int):
    return np.random.SeedSequence(seed).spawn(5)


def _calibrate(params, registry, vocab, sampler, config, rng_cal):
    embeddings = embed_all(registry, vocab, params)
    n_cal = min(config.calibration_pairs,
                max(1, len(vocab) * (len(vocab) - 1) // 2))
    cal_pairs = sampler.sample(rng_cal, n_cal)
    beta = calibrate_beta(embeddings, cal_pairs, len(vocab), config.m)
    d_star = float(np.mean(pair_distances(embeddings, cal_pairs)))
    return beta, d_star, embeddings


def _make_checkpointer(base, registry, vocab, config, cal_seed):
    """Writes a self-contained bundle (parameters, scale, margin, vocabulary
    hash, stage provenance) every ``checkpoint_every`` steps."""

    def save_checkpoint(stage: str, step: int, params, sampler):
        rng_cal = np.random.default_rng(cal_seed)
        provenance = {"checkpoint": {"stage": stage, "step": step},
                      "seed": config.seed, "vocab_hash": vocab.content_hash()}
        try:
            beta, _, _ = _calibrate(params, registry, vocab, sampler, config, rng_cal)
        except DegenerateCalibration:
            beta = BETA_MIN
            provenance["checkpoint"]["calibration"] = "degenerate"
        model = FilterModel(params.copy(), FilterConfig(beta=beta, m=config.m),
                            vocab, registry)
        save_model(bundle_from_model(model, provenance),
                   f"{base}.ckpt-{stage}-{step:06d}.bin")

    return save_checkpoint


def train(registry: TreeRegistry, vocab: Vocabulary, sets: ConfusionSets,
          corpus: LabeledCorpus | None = None,
          config: TrainConfig | None = None,
          progress=None, checkpoint_base=None) -> tuple[FilterModel, TrainReport]:
    """Full two-stage run: imitate the confusion sets, then adapt on the
    corpus' observed error pairs when a corpus is given.  The scale is
    recalibrated after each stage.  With ``checkpoint_base`` set and
    ``config.checkpoint_every`` positive, intermediate bundles are written
    as ``<base>.ckpt-<stage>-<step>.bin``."""
    config = config or TrainConfig()
    say = progress or (lambda msg: None)
    t0 = time.perf_counter()
    report = TrainReport()
    children = _seed_children(config.seed)

    components, operators = registry.inventories(vocab)
    params = EmbedParams.init(components, operators, dim_in=config.dim_in,
                              dim=config.dim, seed=np.random.default_rng(children[0]))
    scheds = _compile_vocab(registry, vocab, params)
    checkpoint = None
    if checkpoint_base is not None and config.checkpoint_every:
        checkpoint = _make_checkpointer(checkpoint_base, registry, vocab,
                                        config, children[3])

    positives, sampler = build_stage1_pairs(sets, vocab, report.skipped_pairs)
    say(f"stage 1: {config.stage1_steps} step(s) on {len(positives)} positive pair(s)")
    rng_stage1 = np.random.default_rng(children[1])
    report.stage_losses["stage1"] = _run_stage(
        params, scheds, positives, sampler, config, config.stage1_steps, rng_stage1,
        stage="stage1", checkpoint=checkpoint)

    rng_cal = np.random.default_rng(children[3])
    beta, d_star, embeddings = _calibrate(params, registry, vocab, sampler, config, rng_cal)

    if corpus is not None and config.stage2_steps > 0:
        positives, sampler = build_stage2_pairs(positives, corpus, vocab,
                                                report.skipped_pairs)
        say(f"stage 2: {config.stage2_steps} step(s) on {len(positives)} positive pair(s)")
        rng_stage2 = np.random.default_rng(children[2])
        report.stage_losses["stage2"] = _run_stage(
            params, scheds, positives, sampler, config, config.stage2_steps, rng_stage2,
            stage="stage2", checkpoint=checkpoint)
        beta, d_star, embeddings = _calibrate(params, registry, vocab, sampler,
                                              config, rng_cal)

    rng_eval = np.random.default_rng(children[4])
    eval_negs = sampler.sample(rng_eval, config.eval_negatives)
    report.pos_within_margin, report.neg_beyond_margin = margin_stats(
        embeddings, positives, eval_negs, config.m)
    report.beta = beta
    report.mean_dissimilar_distance = d_star
    report.wall_time_s = time.perf_counter() - t0

    model = FilterModel(params, FilterConfig(beta=beta, m=config.m), vocab, registry)
    return model, report


def adapt(model: FilterModel, sets: ConfusionSets, corpus: LabeledCorpus,
          config: TrainConfig) -> tuple[FilterModel, TrainReport]:
    """Stage 2 alone, starting from an already trained model.  Observed
    error pairs join the positives; the optimizer starts fresh."""
    t0 = time.perf_counter()
    report = TrainReport()
    children = _seed_children(config.seed)

    params = model.params.copy()
    registry, vocab = model.registry, model.vocab
    scheds = _compile_vocab(registry, vocab, params)

    stage1_positives, _ = build_stage1_pairs(sets, vocab, report.skipped_pairs)
    positives, sampler = build_stage2_pairs(stage1_positives, corpus, vocab,
                                            report.skipped_pairs)
    rng_stage2 = np.random.default_rng(children[2])
    report.stage_losses["stage2"] = _run_stage(
        params, scheds, positives, sampler, config, config.stage2_steps, rng_stage2)

    rng_cal = np.random.default_rng(children[3])
    beta, d_star, embeddings = _calibrate(params, registry, vocab, sampler,
                                          config, rng_cal)

    rng_eval = np.random.default_rng(children[4])
    eval_negs = sampler.sample(rng_eval, config.eval_negatives)
    report.pos_within_margin, report.neg_beyond_margin = margin_stats(
        embeddings, positives, eval_negs, config.m)
    report.beta = beta
    report.mean_dissimilar_distance = d_star
    report.wall_time_s = time.perf_counter() - t0

    adapted = FilterModel(params, FilterConfig(beta=beta, m=config.m), vocab, registry)
    return adapted, report
