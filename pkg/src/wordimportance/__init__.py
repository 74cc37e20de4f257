"""Word importance for neural machine translation via integrated gradients."""

from .attribution import ContributionMatrix, ImportanceVector, integrated_gradients, merge_to_words, word_importance
from .bleu import bleu, sentence_bleu
from .data import SentencePair, SubwordSplitter, Vocab, make_pair
from .estimators import ImportanceEstimate, Method, estimate
from .evalharness import Perturbation, PerturbationSpec, perturb, run_curve
from .pipeline import ExperimentConfig, load_config, run_pipeline
from .seqmodel import LinearTestModel, ToyModel, TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "ContributionMatrix", "ImportanceVector", "integrated_gradients", "merge_to_words", "word_importance",
    "bleu", "sentence_bleu", "SentencePair", "SubwordSplitter", "Vocab", "make_pair",
    "ImportanceEstimate", "Method", "estimate", "Perturbation", "PerturbationSpec", "perturb", "run_curve",
    "ExperimentConfig", "load_config", "run_pipeline",
    "LinearTestModel", "ToyModel", "TrainConfig", "load_checkpoint", "save_checkpoint", "train",
]
