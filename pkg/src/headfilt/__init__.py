"""Spell checking with an adaptable similarity filter built from
tree-structured character embeddings."""

from .char_tree import CharTree, TreeRegistry, load_ids_db, parse_ids
from .data_io import (
    LabeledCorpus,
    ModelBundle,
    bundle_from_model,
    extract_error_pairs,
    load_corpus,
    load_model,
    save_model,
)
from .metrics import CoverageReport, MetricReport, coverage, sentence_metrics
from .pipeline import (
    CheckResult,
    ConfusionSetFilter,
    Sentence,
    check_sentence,
    check_sentences,
    predict_filtered,
    predict_unfiltered,
)
from .scorer import CandidateDistribution, NgramModel, load_external, ngram_train
from .similarity import (
    ConfusionSets,
    FilterConfig,
    FilterModel,
    SimilarityVector,
    calibrate_beta,
    confusion_vector,
    distance,
    headfilt_vector,
    similarity,
)
from .training import TrainConfig, TrainPair, TrainReport, adapt, pair_loss, train
from .treelstm import EmbedParams, HierEmbedding, embed, embed_all, embed_grad
from .vocab import Vocabulary

__version__ = "0.1.0"

__all__ = [
    "CandidateDistribution",
    "CharTree",
    "CheckResult",
    "ConfusionSetFilter",
    "ConfusionSets",
    "CoverageReport",
    "EmbedParams",
    "FilterConfig",
    "FilterModel",
    "HierEmbedding",
    "LabeledCorpus",
    "MetricReport",
    "ModelBundle",
    "NgramModel",
    "Sentence",
    "SimilarityVector",
    "TrainConfig",
    "TrainPair",
    "TrainReport",
    "TreeRegistry",
    "Vocabulary",
    "adapt",
    "bundle_from_model",
    "calibrate_beta",
    "check_sentence",
    "check_sentences",
    "confusion_vector",
    "coverage",
    "distance",
    "embed",
    "embed_all",
    "embed_grad",
    "extract_error_pairs",
    "headfilt_vector",
    "load_corpus",
    "load_external",
    "load_ids_db",
    "load_model",
    "ngram_train",
    "pair_loss",
    "parse_ids",
    "predict_filtered",
    "predict_unfiltered",
    "save_model",
    "sentence_metrics",
    "similarity",
    "train",
]
