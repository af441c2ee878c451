"""Neural transducer for many-to-one translation at desk scale.

Three networks over the closed autodiff op set:

* encoder: two per-frame affine-tanh layers plus an additive per-chunk
  context, an affine map of the running mean of every frame in the current
  and earlier chunks. Frame t therefore sees nothing past the end of its
  own chunk (streaming causality at chunk granularity; a chunk size >= T
  is offline full-context mode).
* prediction network: token embedding table (row 0 doubles as BOS) and a
  single tanh recurrence over the label prefix.
* joint network: affine maps of encoder and predictor states, tanh
  combine, affine projection to vocab_size + 1 logits (index 0 = blank).

The loss marginalizes over every monotone frame/token alignment with a
log-space forward-backward recursion; a path-enumeration oracle double
checks it on small instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numerics as nm
from .numerics import ParamSet, Tensor

BLANK_ID = 0

__all__ = [
    "BLANK_ID",
    "ModelConfig",
    "FeatureSequence",
    "TransducerModel",
    "LossLattice",
    "build_lattice",
    "transducer_loss",
    "transducer_loss_bruteforce",
    "greedy_decode",
    "train_base",
    "TrainStats",
]


@dataclass(frozen=True)
class ModelConfig:
    """Shape hyperparameters; vocab_size excludes the blank symbol."""

    feature_dim: int
    hidden_dim: int
    vocab_size: int
    embed_dim: int
    chunk_size: int
    max_symbols_per_frame: int = 3

    def __post_init__(self):
        for name in ("feature_dim", "hidden_dim", "vocab_size", "embed_dim", "chunk_size", "max_symbols_per_frame"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "hidden_dim": self.hidden_dim,
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "chunk_size": self.chunk_size,
            "max_symbols_per_frame": self.max_symbols_per_frame,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**{k: int(d[k]) for k in (
            "feature_dim", "hidden_dim", "vocab_size", "embed_dim", "chunk_size", "max_symbols_per_frame")})


@dataclass
class FeatureSequence:
    """One utterance: a language tag and a (num_frames, feature_dim) matrix."""

    language: str
    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("frames must be a (T >= 1, feature_dim) matrix")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames must be finite")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


def validate_tokens(tokens: Sequence[int], vocab_size: int) -> list[int]:
    toks = [int(t) for t in tokens]
    for t in toks:
        if not (1 <= t <= vocab_size):
            raise ValueError(f"token id {t} out of range [1, {vocab_size}]")
    return toks


# parameter table: name -> shape builder; insertion order is the
# checkpoint order and must stay stable
def _param_shapes(c: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {
        "enc.in_w": (c.hidden_dim, c.feature_dim),
        "enc.in_b": (c.hidden_dim,),
        "enc.hid_w": (c.hidden_dim, c.hidden_dim),
        "enc.hid_b": (c.hidden_dim,),
        "enc.ctx_w": (c.hidden_dim, c.feature_dim),
        "enc.ctx_b": (c.hidden_dim,),
        "pred.embed": (c.vocab_size + 1, c.embed_dim),
        "pred.in_w": (c.hidden_dim, c.embed_dim),
        "pred.rec_w": (c.hidden_dim, c.hidden_dim),
        "pred.b": (c.hidden_dim,),
        "joint.enc_w": (c.hidden_dim, c.hidden_dim),
        "joint.enc_b": (c.hidden_dim,),
        "joint.pred_w": (c.hidden_dim, c.hidden_dim),
        "joint.pred_b": (c.hidden_dim,),
        "joint.out_w": (c.vocab_size + 1, c.hidden_dim),
        "joint.out_b": (c.vocab_size + 1,),
    }


class TransducerModel:
    """Parameter container plus graph builders for the three networks."""

    def __init__(self, config: ModelConfig, params: ParamSet):
        expected = _param_shapes(config)
        for name, shape in expected.items():
            if name not in params:
                raise ValueError(f"missing parameter '{name}'")
            if params[name].data.shape != shape:
                raise ValueError(
                    f"parameter '{name}' has shape {params[name].data.shape}, expected {shape}"
                )
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "TransducerModel":
        """Seeded random init; weights scaled by 1/sqrt(fan_in), biases zero."""
        rng = np.random.default_rng(seed)
        params = ParamSet()
        for name, shape in _param_shapes(config).items():
            if name.endswith(("_b", ".b")):
                data = np.zeros(shape)
            elif name == "pred.embed":
                data = rng.normal(0.0, 1.0, shape)
            else:
                fan_in = shape[-1]
                data = rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape)
            params.add(name, Tensor(data), trainable=True)
        return cls(config, params)

    @classmethod
    def from_arrays(
        cls, config: ModelConfig, arrays: Mapping[str, np.ndarray], trainable: bool = False
    ) -> "TransducerModel":
        params = ParamSet()
        for name in _param_shapes(config):
            if name not in arrays:
                raise ValueError(f"missing parameter '{name}'")
            params.add(name, Tensor(np.array(arrays[name], dtype=np.float64)), trainable=trainable)
        return cls(config, params)

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        """Copies of the model parameters only (no adapter entries)."""
        return {n: self.params[n].data.copy() for n in _param_shapes(self.config)}

    # -- encoder ------------------------------------------------------------

    def encode(self, feats: FeatureSequence, lin: Tensor | None = None) -> Tensor:
        """Encoder states for all frames, shape (num_frames, hidden_dim)."""
        c = self.config
        if feats.feature_dim != c.feature_dim:
            raise ValueError(
                f"feature dim {feats.feature_dim} does not match model dim {c.feature_dim}"
            )
        x = Tensor(feats.frames)
        if lin is not None:
            if lin.data.shape != (c.feature_dim, c.feature_dim):
                raise ValueError("input transform must be square in the feature dim")
            x = nm.matmul(x, lin, transpose_b=True)
        p = self.params
        h = nm.tanh(nm.add(nm.matmul(x, p["enc.in_w"], transpose_b=True), p["enc.in_b"]))
        h = nm.tanh(nm.add(nm.matmul(h, p["enc.hid_w"], transpose_b=True), p["enc.hid_b"]))
        num_frames = feats.num_frames
        averager = Tensor(_chunk_average_matrix(num_frames, c.chunk_size))
        running_mean = nm.matmul(averager, x)
        context = nm.add(nm.matmul(running_mean, p["enc.ctx_w"], transpose_b=True), p["enc.ctx_b"])
        chunk_of_frame = np.arange(num_frames) // c.chunk_size
        return nm.add(h, nm.gather_rows(context, chunk_of_frame))

    # -- prediction network ---------------------------------------------------

    def predictor_step(self, state: Tensor | None, token: int) -> Tensor:
        """Advance the label recurrence by one token (0 = BOS); state is (1, hidden)."""
        p = self.params
        if state is None:
            state = Tensor(np.zeros((1, self.config.hidden_dim)))
        emb = nm.gather_rows(p["pred.embed"], [token])
        drive = nm.add(
            nm.matmul(emb, p["pred.in_w"], transpose_b=True),
            nm.matmul(state, p["pred.rec_w"], transpose_b=True),
        )
        return nm.tanh(nm.add(drive, p["pred.b"]))

    def predict(self, tokens: Sequence[int]) -> Tensor:
        """Predictor states g_0..g_U for the BOS-prefixed token sequence."""
        toks = validate_tokens(tokens, self.config.vocab_size)
        state: Tensor | None = None
        states = []
        for tok in [BLANK_ID] + toks:
            state = self.predictor_step(state, tok)
            states.append(state)
        return nm.concat_rows(states)

    # -- joint network --------------------------------------------------------

    def joint(self, enc_state: Tensor, pred_state: Tensor) -> Tensor:
        """Pre-softmax logits over vocab_size + 1 outputs for one (t, u) pair."""
        p = self.params
        enc_part = nm.add(nm.matmul(enc_state, p["joint.enc_w"], transpose_b=True), p["joint.enc_b"])
        pred_part = nm.add(nm.matmul(pred_state, p["joint.pred_w"], transpose_b=True), p["joint.pred_b"])
        hidden = nm.tanh(nm.add(enc_part, pred_part))
        return nm.add(nm.matmul(hidden, p["joint.out_w"], transpose_b=True), p["joint.out_b"])

    def joint_log_probs(self, enc: Tensor, pred: Tensor) -> Tensor:
        """Normalized log-probs for every (frame, prefix) pair, t-major rows."""
        p = self.params
        num_frames = enc.data.shape[0]
        num_states = pred.data.shape[0]
        enc_part = nm.add(nm.matmul(enc, p["joint.enc_w"], transpose_b=True), p["joint.enc_b"])
        pred_part = nm.add(nm.matmul(pred, p["joint.pred_w"], transpose_b=True), p["joint.pred_b"])
        t_index = np.repeat(np.arange(num_frames), num_states)
        u_index = np.tile(np.arange(num_states), num_frames)
        hidden = nm.tanh(nm.add(nm.gather_rows(enc_part, t_index), nm.gather_rows(pred_part, u_index)))
        logits = nm.add(nm.matmul(hidden, p["joint.out_w"], transpose_b=True), p["joint.out_b"])
        return nm.log_softmax(logits)


def _chunk_average_matrix(num_frames: int, chunk_size: int) -> np.ndarray:
    """(num_chunks, num_frames) rows averaging frames 1..end-of-chunk-k."""
    num_chunks = (num_frames + chunk_size - 1) // chunk_size
    out = np.zeros((num_chunks, num_frames))
    for k in range(num_chunks):
        end = min((k + 1) * chunk_size, num_frames)
        out[k, :end] = 1.0 / end
    return out


# ---------------------------------------------------------------------------
# Alignment lattice and loss
# ---------------------------------------------------------------------------


class LossLattice:
    """Per-utterance alignment lattice.

    ``log_probs`` holds one normalized log-distribution per (t, u) grid
    point, t-major: row t*(U+1)+u, columns 0..vocab_size with blank at 0.
    ``alpha``/``beta`` are filled by :func:`transducer_loss`.
    """

    def __init__(self, log_probs: Tensor, tokens: Sequence[int], num_frames: int):
        toks = [int(t) for t in tokens]
        num_outputs = log_probs.data.shape[1]
        if any(not (1 <= t < num_outputs) for t in toks):
            raise ValueError("token id out of range for lattice log-probs")
        if log_probs.data.ndim != 2 or log_probs.data.shape[0] != num_frames * (len(toks) + 1):
            raise ValueError(
                f"log_probs must have num_frames*(U+1) = {num_frames * (len(toks) + 1)} rows"
            )
        self.log_probs = log_probs
        self.tokens = toks
        self.num_frames = num_frames
        self.alpha: np.ndarray | None = None
        self.beta: np.ndarray | None = None

    @property
    def num_tokens(self) -> int:
        return len(self.tokens)

    def _grid(self) -> np.ndarray:
        return self.log_probs.data.reshape(self.num_frames, self.num_tokens + 1, -1)

    def blank_log_probs(self) -> np.ndarray:
        """(T, U+1) matrix of blank log-probs."""
        return self._grid()[:, :, BLANK_ID].copy()

    def emit_log_probs(self) -> np.ndarray:
        """(T, U) matrix: column u holds log P(y_{u+1} | t, u)."""
        grid = self._grid()
        u = np.arange(self.num_tokens)
        return grid[:, u, np.asarray(self.tokens, dtype=np.intp)].copy()


def build_lattice(
    model: TransducerModel,
    feats: FeatureSequence,
    tokens: Sequence[int],
    lin: Tensor | None = None,
) -> LossLattice:
    toks = validate_tokens(tokens, model.config.vocab_size)
    enc = model.encode(feats, lin=lin)
    pred = model.predict(toks)
    log_probs = model.joint_log_probs(enc, pred)
    return LossLattice(log_probs, toks, feats.num_frames)


def _lse2(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def transducer_loss(lattice: LossLattice) -> Tensor:
    """Negative log-likelihood summed over all alignments, differentiable.

    Fills ``lattice.alpha``/``lattice.beta`` and attaches an analytic
    backward that scatters the per-cell occupancy gradient into the
    lattice log-probs (a fused graph op; see the op-set note in numerics).

    ``alpha[t, u]``: log prob of arriving at grid node (t, u), i.e. u tokens
    out and frames before t consumed. ``beta[t, u]``: log prob of completing
    from (t, u) taking frame t's blank first. A path leaves each frame
    through exactly one blank, so for every t the alpha+beta sum over u
    recovers the total log-likelihood.
    """
    num_frames = lattice.num_frames
    num_tokens = lattice.num_tokens
    blank = lattice.blank_log_probs()
    emit = lattice.emit_log_probs()
    if np.any(np.isnan(blank)) or np.any(np.isnan(emit)):
        raise nm.NumericsError("NaN in lattice log-probs")

    alpha = np.full((num_frames, num_tokens + 1), -math.inf)
    alpha[0, 0] = 0.0
    for t in range(1, num_frames):
        alpha[t, 0] = alpha[t - 1, 0] + blank[t - 1, 0]
    for u in range(1, num_tokens + 1):
        alpha[0, u] = alpha[0, u - 1] + emit[0, u - 1]
    for t in range(1, num_frames):
        for u in range(1, num_tokens + 1):
            alpha[t, u] = _lse2(
                alpha[t - 1, u] + blank[t - 1, u],
                alpha[t, u - 1] + emit[t, u - 1],
            )

    # completion including emissions at the current frame (gradient helper)
    resume = np.full((num_frames, num_tokens + 1), -math.inf)
    resume[num_frames - 1, num_tokens] = blank[num_frames - 1, num_tokens]
    for t in range(num_frames - 2, -1, -1):
        resume[t, num_tokens] = blank[t, num_tokens] + resume[t + 1, num_tokens]
    for u in range(num_tokens - 1, -1, -1):
        resume[num_frames - 1, u] = emit[num_frames - 1, u] + resume[num_frames - 1, u + 1]
    for t in range(num_frames - 2, -1, -1):
        for u in range(num_tokens - 1, -1, -1):
            resume[t, u] = _lse2(
                blank[t, u] + resume[t + 1, u],
                emit[t, u] + resume[t, u + 1],
            )

    log_likelihood = alpha[num_frames - 1, num_tokens] + blank[num_frames - 1, num_tokens]
    if math.isnan(log_likelihood) or log_likelihood == math.inf:
        raise nm.NumericsError("transducer loss is not finite")

    after_blank = np.full_like(resume, -math.inf)
    after_blank[:-1, :] = resume[1:, :]
    after_blank[num_frames - 1, num_tokens] = 0.0
    beta = blank + after_blank
    lattice.alpha = alpha
    lattice.beta = beta

    # occupancy gradients of -logP wrt blank/emit entries
    with np.errstate(invalid="ignore"):
        d_blank = -np.exp(alpha + beta - log_likelihood)
        d_emit = -np.exp(alpha[:, :num_tokens] + emit + resume[:, 1:] - log_likelihood)
    d_blank = np.nan_to_num(d_blank, nan=0.0, posinf=0.0, neginf=0.0)
    d_emit = np.nan_to_num(d_emit, nan=0.0, posinf=0.0, neginf=0.0)

    grid_shape = lattice.log_probs.data.shape
    unit_grad = np.zeros(grid_shape)
    unit_view = unit_grad.reshape(num_frames, num_tokens + 1, -1)
    unit_view[:, :, BLANK_ID] = d_blank
    unit_view[:, np.arange(num_tokens), np.asarray(lattice.tokens, dtype=np.intp)] += d_emit

    log_probs = lattice.log_probs

    def bw(g: np.ndarray) -> None:
        nm.accumulate_grad(log_probs, unit_grad * g)

    return nm.graph_node(
        np.asarray(-log_likelihood), "transducer_nll", (log_probs,), bw
    )


_BRUTEFORCE_MAX_FRAMES = 6
_BRUTEFORCE_MAX_TOKENS = 4


def transducer_loss_bruteforce(lattice: LossLattice) -> float:
    """Oracle: enumerate every monotone alignment path and sum probabilities.

    Independent of the forward-backward recursion; asserts the path count
    binomial(T+U-1, U). Only for small instances.
    """
    num_frames = lattice.num_frames
    num_tokens = lattice.num_tokens
    if num_frames > _BRUTEFORCE_MAX_FRAMES or num_tokens > _BRUTEFORCE_MAX_TOKENS:
        raise ValueError(
            f"instance too large to enumerate (T <= {_BRUTEFORCE_MAX_FRAMES}, "
            f"U <= {_BRUTEFORCE_MAX_TOKENS})"
        )
    blank = lattice.blank_log_probs()
    emit = lattice.emit_log_probs()
    total = 0.0
    paths = 0

    def walk(t: int, u: int, acc: float) -> None:
        nonlocal total, paths
        if t == num_frames - 1 and u == num_tokens:
            total += math.exp(acc + blank[t, u])
            paths += 1
            return
        if u < num_tokens:
            walk(t, u + 1, acc + emit[t, u])
        if t < num_frames - 1:
            walk(t + 1, u, acc + blank[t, u])

    walk(0, 0, 0.0)
    expected_paths = math.comb(num_frames + num_tokens - 1, num_tokens)
    assert paths == expected_paths, f"enumerated {paths} paths, expected {expected_paths}"
    return -math.log(total)


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def greedy_decode(
    model: TransducerModel,
    feats: FeatureSequence,
    max_symbols_per_frame: int | None = None,
    lin: Tensor | None = None,
    trace: list | None = None,
) -> list[int]:
    """Frame-synchronous greedy decoding.

    At each frame, repeatedly take the argmax of the joint (ties resolve to
    the lowest index); emit while it is a real token and the per-frame cap
    is not exhausted, otherwise advance to the next frame. The output never
    contains blank. ``trace``, when given, collects each step's logits.
    """
    cap = model.config.max_symbols_per_frame if max_symbols_per_frame is None else max_symbols_per_frame
    if cap < 1:
        raise ValueError("max_symbols_per_frame must be >= 1")
    enc = model.encode(feats, lin=lin)
    state = model.predictor_step(None, BLANK_ID)
    out: list[int] = []
    for t in range(feats.num_frames):
        enc_row = nm.gather_rows(enc, [t])
        emitted = 0
        while True:
            logits = model.joint(enc_row, state).data[0]
            if trace is not None:
                trace.append(logits.copy())
            best = int(np.argmax(logits))
            if best == BLANK_ID or emitted >= cap:
                break
            out.append(best)
            state = model.predictor_step(state, best)
            emitted += 1
    return out


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainStats:
    steps: int
    epoch_mean_loss: list[float] = field(default_factory=list)


def run_training(
    params: ParamSet,
    loss_builder: Callable[[int], Tensor],
    num_items: int,
    epochs: int,
    batch_size: int,
    schedule: nm.NoamSchedule,
    seed: int,
) -> TrainStats:
    """Shuffled mini-batch loop shared by base and adapter training.

    ``loss_builder(i)`` returns the scalar loss graph for item i; batches
    average the item losses. Deterministic given the seed.
    """
    if num_items < 1:
        raise ValueError("nothing to train on")
    optimizer = nm.Adam(params)
    rng = np.random.default_rng(seed)
    stats = TrainStats(steps=0)
    for _ in range(epochs):
        order = rng.permutation(num_items)
        epoch_total = 0.0
        for start in range(0, num_items, batch_size):
            batch = order[start : start + batch_size]
            params.zero_grad()
            loss = nm.scale(_sum_losses([loss_builder(int(i)) for i in batch]), 1.0 / len(batch))
            loss.backward()
            stats.steps += 1
            optimizer.step(schedule.lr(stats.steps))
            epoch_total += loss.data.item() * len(batch)
        stats.epoch_mean_loss.append(epoch_total / num_items)
    return stats


def _sum_losses(losses: list[Tensor]) -> Tensor:
    total = losses[0]
    for item in losses[1:]:
        total = nm.add(total, item)
    return total


def utterance_loss(
    model: TransducerModel,
    feats: FeatureSequence,
    tokens: Sequence[int],
    lin: Tensor | None = None,
) -> Tensor:
    return transducer_loss(build_lattice(model, feats, tokens, lin=lin))


def train_base(config, corpus, seed: int):
    """Train the language-agnostic base model on a mixed-language corpus.

    The model never consumes a language id. Returns an in-memory
    checkpoint; deterministic given the seed.
    """
    from .checkpoint import Checkpoint  # local import, checkpoint has no deps on us

    utterances = _filtered_utterances(config, corpus)
    if not utterances:
        raise ValueError("training corpus is empty")
    model_config = config.model_config()
    for feats, tokens in utterances:
        if feats.feature_dim != model_config.feature_dim:
            raise ValueError("corpus feature dim does not match model config")
        validate_tokens(tokens, model_config.vocab_size)

    model = TransducerModel.init(model_config, _derived_seed(seed, "init"))
    opts = config.base_training

    def loss_builder(i: int) -> Tensor:
        feats, tokens = utterances[i]
        return utterance_loss(model, feats, tokens)

    stats = run_training(
        model.params,
        loss_builder,
        len(utterances),
        epochs=opts.epochs,
        batch_size=opts.batch_size,
        schedule=nm.NoamSchedule(opts.peak_lr, opts.warmup_steps),
        seed=_derived_seed(seed, "shuffle"),
    )
    meta = {
        "kind": "transducer",
        "model": model_config.to_dict(),
        "seed": seed,
        "steps": stats.steps,
        "epoch_mean_loss": stats.epoch_mean_loss,
    }
    return Checkpoint(tensors=model.parameter_arrays(), meta=meta)


def _filtered_utterances(config, corpus):
    filters = getattr(config, "filters", None)
    out = []
    for feats, tokens in corpus.utterances:
        if filters is not None:
            if filters.max_frames is not None and feats.num_frames > filters.max_frames:
                continue
            if filters.min_tokens is not None and len(tokens) < filters.min_tokens:
                continue
            if filters.max_tokens is not None and len(tokens) > filters.max_tokens:
                continue
        out.append((feats, tokens))
    return out


def _derived_seed(seed: int, label: str) -> int:
    from .synthlang import derive_seed

    return derive_seed(seed, label)
