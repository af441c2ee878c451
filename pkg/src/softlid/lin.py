"""Per-language linear input networks (LIN).

A LIN is a square, bias-free transform applied to raw input features
before the encoder. It starts as the exact identity matrix, so a fresh or
reset LIN leaves the model's behavior bit-identical to the base model, and
it is the only tensor that moves during adaptation: training minimizes the
transducer loss of (LIN -> frozen base) on a single language's training
subset, and the base parameters are hash-verified untouched afterwards. At
inference one selected LIN handles every language's features; there is no
per-language switching.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .checkpoint import Checkpoint, CheckpointError, hash_arrays, load_checkpoint, save_checkpoint
from .numerics import Tensor
from .transducer import TransducerModel, run_training, utterance_loss

__all__ = [
    "LinLayer",
    "FrozenBaseViolation",
    "identity_lin",
    "apply_lin",
    "reset_to_identity",
    "train_lin",
    "verify_base_frozen",
    "lin_fingerprint",
    "save_lin",
    "load_lin",
]

IDENTITY_LANGUAGE = "identity"
LIN_TENSOR_NAME = "lin.weight"


class FrozenBaseViolation(RuntimeError):
    """Internal fault: a supposedly frozen base parameter changed."""


@dataclass
class LinLayer:
    """Square bias-free input transform tagged with the language it serves."""

    language: str
    weight: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[0] != self.weight.shape[1]:
            raise ValueError("weight must be a square matrix")

    @property
    def dim(self) -> int:
        return self.weight.shape[0]


def identity_lin(dim: int) -> LinLayer:
    """A fresh layer: exactly the identity matrix, language tag 'identity'."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return LinLayer(language=IDENTITY_LANGUAGE, weight=np.eye(dim))


def apply_lin(lin: LinLayer, feats):
    """Replace every frame x by W x; language tag and frame count unchanged."""
    from .transducer import FeatureSequence

    if feats.feature_dim != lin.dim:
        raise ValueError(f"feature dim {feats.feature_dim} does not match transform dim {lin.dim}")
    return FeatureSequence(language=feats.language, frames=feats.frames @ lin.weight.T)


def reset_to_identity(lin: LinLayer) -> LinLayer:
    """Graceful-degradation escape hatch: back to the exact identity."""
    return identity_lin(lin.dim)


def lin_fingerprint(weight: np.ndarray) -> str:
    """Identifier of the effective input transform (identity == no transform)."""
    return hashlib.sha256(np.ascontiguousarray(weight, dtype="<f4").tobytes()).hexdigest()


def train_lin(base: Checkpoint, corpus, config, seed: int) -> LinLayer:
    """Adapt one language: train only the LIN against the frozen base model.

    The layer starts as the identity, so its first forward pass reproduces
    the base model's loss exactly. Raises FrozenBaseViolation if any base
    parameter hash changes (internal fault).
    """
    languages = corpus.languages()
    if len(languages) != 1:
        raise ValueError(f"adapter training needs a single-language corpus, got {languages}")
    language = languages[0]
    if len(corpus) == 0:
        raise ValueError("training corpus is empty")

    model_config = base.model_config()
    if corpus.feature_dim != model_config.feature_dim:
        raise ValueError("corpus feature dim does not match base model")
    model = TransducerModel.from_arrays(model_config, base.tensors, trainable=False)
    before_hash = hash_arrays(model.parameter_arrays())

    lin_tensor = model.params.add(
        LIN_TENSOR_NAME, Tensor(np.eye(model_config.feature_dim)), trainable=True
    )
    opts = config.lin_training
    utterances = corpus.utterances

    def loss_builder(i: int) -> Tensor:
        feats, tokens = utterances[i]
        return utterance_loss(model, feats, tokens, lin=lin_tensor)

    from .synthlang import derive_seed

    run_training(
        model.params,
        loss_builder,
        len(utterances),
        epochs=opts.epochs,
        batch_size=opts.batch_size,
        schedule=nm.NoamSchedule(opts.peak_lr, opts.warmup_steps),
        seed=derive_seed(seed, "lin-shuffle", language),
    )

    after_hash = hash_arrays(model.parameter_arrays())
    if after_hash != before_hash:
        raise FrozenBaseViolation(
            "base parameters changed during adapter training "
            f"({before_hash[:12]} -> {after_hash[:12]})"
        )
    return LinLayer(language=language, weight=lin_tensor.data.copy())


def verify_base_frozen(before: Checkpoint, after: Checkpoint) -> bool:
    """True iff every non-LIN parameter tensor is byte-identical."""
    if before.version != after.version:
        raise CheckpointError(
            f"checkpoint version mismatch ({before.version} vs {after.version})"
        )
    names_before = [n for n in before.tensors if n != LIN_TENSOR_NAME]
    names_after = [n for n in after.tensors if n != LIN_TENSOR_NAME]
    if names_before != names_after:
        return False
    for name in names_before:
        a = np.ascontiguousarray(before.tensors[name], dtype="<f4")
        b = np.ascontiguousarray(after.tensors[name], dtype="<f4")
        if a.shape != b.shape or a.tobytes() != b.tobytes():
            return False
    return True


def save_lin(path, lin: LinLayer, base_hash: str) -> None:
    """Persist as a one-tensor checkpoint with {language, base hash} metadata."""
    ckpt = Checkpoint(
        tensors={LIN_TENSOR_NAME: lin.weight},
        meta={"kind": "lin", "language": lin.language, "base_checkpoint_hash": base_hash},
    )
    save_checkpoint(path, ckpt)


def load_lin(path) -> tuple[LinLayer, dict]:
    ckpt = load_checkpoint(path)
    if ckpt.meta.get("kind") != "lin" or LIN_TENSOR_NAME not in ckpt.tensors:
        raise CheckpointError(f"{path}: not an input-transform artifact")
    lin = LinLayer(language=str(ckpt.meta.get("language", IDENTITY_LANGUAGE)), weight=ckpt.tensors[LIN_TENSOR_NAME])
    return lin, ckpt.meta
