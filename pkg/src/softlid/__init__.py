"""Soft language-ID adaptation for a many-to-one neural transducer.

A desk-scale pipeline: generate a synthetic multilingual corpus, train a
language-agnostic transducer on the mixed data, train one identity-initialized
linear input network per language against the frozen base, and score
everything with per-language and traffic-weighted BLEU.
"""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .evaluation import (
    EvalReport,
    TrafficDistribution,
    corpus_bleu,
    evaluate,
    make_traffic,
    simple_average,
    weighted_average,
)
from .lin import (
    LinLayer,
    apply_lin,
    identity_lin,
    load_lin,
    reset_to_identity,
    save_lin,
    train_lin,
    verify_base_frozen,
)
from .numerics import Adam, NoamSchedule, NumericsError, ParamSet, Tensor, grad_check, logsumexp
from .synthlang import Corpus, LanguageSpec, gen_corpus, load_corpus, make_language, save_corpus
from .transducer import (
    FeatureSequence,
    LossLattice,
    ModelConfig,
    TransducerModel,
    build_lattice,
    greedy_decode,
    train_base,
    transducer_loss,
    transducer_loss_bruteforce,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Checkpoint",
    "CheckpointError",
    "Corpus",
    "EvalReport",
    "ExperimentConfig",
    "FeatureSequence",
    "LanguageSpec",
    "LinLayer",
    "LossLattice",
    "ModelConfig",
    "NoamSchedule",
    "NumericsError",
    "ParamSet",
    "Tensor",
    "TrafficDistribution",
    "TransducerModel",
    "apply_lin",
    "build_lattice",
    "corpus_bleu",
    "evaluate",
    "gen_corpus",
    "grad_check",
    "greedy_decode",
    "identity_lin",
    "load_checkpoint",
    "load_corpus",
    "load_lin",
    "logsumexp",
    "make_language",
    "make_traffic",
    "reset_to_identity",
    "save_checkpoint",
    "save_corpus",
    "save_lin",
    "simple_average",
    "train_base",
    "train_lin",
    "transducer_loss",
    "transducer_loss_bruteforce",
    "verify_base_frozen",
    "weighted_average",
]
