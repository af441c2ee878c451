"""Deterministic synthetic multilingual corpus generator.

Each synthetic language is an invertible linear mixing of canonical
per-token feature emissions: token y emits k frames of M_l (e(y) + noise),
with e(.) a fixed per-suite codebook of well-separated vectors. A linear
compensator back to canonical space therefore exists for every language by
construction, which is the designed headroom for input-transform
adaptation. All randomness flows from explicit seeds through
:func:`derive_seed`, so regeneration is byte-identical.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .transducer import FeatureSequence

__all__ = [
    "LanguageSpec",
    "Corpus",
    "derive_seed",
    "make_language",
    "make_codebook",
    "synth_utterance",
    "gen_corpus",
    "save_corpus",
    "load_corpus",
    "corpus_hash",
]

DATASET_MAGIC = b"SLDT"
DATASET_VERSION = 1

_MAX_CONDITION = 20.0
_MAX_ATTEMPTS = 64
_MIN_CODEBOOK_DISTANCE = 1.0


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a label path; independent of interpreter hash state."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class LanguageSpec:
    """One synthetic language: an invertible mixing plus noise and pacing."""

    language: str
    mixing: np.ndarray  # (feature_dim, feature_dim)
    noise_sigma: float
    frames_per_token_min: int
    frames_per_token_max: int
    seed: int

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not (1 <= self.frames_per_token_min <= self.frames_per_token_max):
            raise ValueError("frames-per-token range must satisfy 1 <= min <= max")


def make_language(
    language: str,
    seed: int,
    feature_dim: int,
    noise_sigma: float,
    frames_per_token_min: int = 2,
    frames_per_token_max: int = 2,
) -> LanguageSpec:
    """Build a language spec whose mixing has condition number <= 20.

    The mixing composes two seeded random orthogonal matrices around a
    diagonal scaling with entries in [0.5, 2]; retries (bounded) if the
    measured condition number is somehow out of bounds.
    """
    if feature_dim < 2:
        raise ValueError("feature_dim must be >= 2")
    rng = np.random.default_rng(derive_seed(seed, "language", language))
    for _ in range(_MAX_ATTEMPTS):
        q_left = _random_orthogonal(rng, feature_dim)
        q_right = _random_orthogonal(rng, feature_dim)
        scales = rng.uniform(0.5, 2.0, size=feature_dim)
        mixing = q_left @ np.diag(scales) @ q_right
        if np.linalg.cond(mixing) <= _MAX_CONDITION:
            return LanguageSpec(
                language=language,
                mixing=mixing,
                noise_sigma=noise_sigma,
                frames_per_token_min=frames_per_token_min,
                frames_per_token_max=frames_per_token_max,
                seed=seed,
            )
    raise RuntimeError(f"could not build a well-conditioned mixing for '{language}'")


def _random_orthogonal(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


def make_codebook(vocab_size: int, feature_dim: int, seed: int) -> np.ndarray:
    """Per-suite canonical emissions, one row per token, pairwise distance >= 1.

    Values are snapped to the float32 grid so datasets round-trip through
    the on-disk format losslessly.
    """
    rng = np.random.default_rng(derive_seed(seed, "codebook"))
    for _ in range(_MAX_ATTEMPTS):
        book = rng.normal(size=(vocab_size, feature_dim))
        diffs = book[:, None, :] - book[None, :, :]
        dist = np.sqrt((diffs**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        if dist.min() >= _MIN_CODEBOOK_DISTANCE:
            return _snap_f32(book)
    raise RuntimeError("could not draw a well-separated codebook")


def _snap_f32(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


def synth_utterance(
    spec: LanguageSpec, tokens: Sequence[int], seed: int, codebook: np.ndarray
) -> FeatureSequence:
    """Emit frames for a token sequence: per token, k noisy codebook copies mixed by M_l."""
    if len(tokens) == 0:
        raise ValueError("tokens must be nonempty")
    rng = np.random.default_rng(seed)
    rows = []
    for tok in tokens:
        k = int(rng.integers(spec.frames_per_token_min, spec.frames_per_token_max + 1))
        noise = spec.noise_sigma * rng.standard_normal((k, codebook.shape[1]))
        rows.append((codebook[tok - 1] + noise) @ spec.mixing.T)
    frames = _snap_f32(np.concatenate(rows, axis=0))
    return FeatureSequence(language=spec.language, frames=frames)


@dataclass
class Corpus:
    """A split of (features, reference tokens) pairs across languages."""

    utterances: list[tuple[FeatureSequence, list[int]]]
    vocab_size: int
    feature_dim: int
    split: str = ""
    suite_seed: int | None = None

    def __len__(self) -> int:
        return len(self.utterances)

    def languages(self) -> list[str]:
        seen: dict[str, None] = {}
        for feats, _ in self.utterances:
            seen.setdefault(feats.language, None)
        return list(seen)

    def filter_language(self, language: str) -> "Corpus":
        kept = [(f, t) for f, t in self.utterances if f.language == language]
        return Corpus(kept, self.vocab_size, self.feature_dim, self.split, self.suite_seed)


def gen_corpus(
    specs: Sequence[LanguageSpec],
    train_counts: Mapping[str, int],
    test_counts: Mapping[str, int],
    tokens_min: int,
    tokens_max: int,
    vocab_size: int,
    suite_seed: int,
    out_dir=None,
) -> tuple[Corpus, Corpus]:
    """Generate interleaved mixed-language train/test splits.

    Train and test draw from disjoint seed streams, so no
    (language, token-sequence, utterance-seed) triple can repeat across
    splits. When ``out_dir`` is given the two splits are also written as
    ``train.sldt`` / ``test.sldt``.
    """
    if not specs:
        raise ValueError("no languages given")
    if not (1 <= tokens_min <= tokens_max):
        raise ValueError("token length range must satisfy 1 <= min <= max")
    for counts in (train_counts, test_counts):
        for spec in specs:
            if counts.get(spec.language, 0) < 1:
                raise ValueError(f"count for language '{spec.language}' must be >= 1")
    feature_dim = specs[0].mixing.shape[0]
    codebook = make_codebook(vocab_size, feature_dim, suite_seed)

    splits = {}
    for split, counts in (("train", train_counts), ("test", test_counts)):
        per_language: dict[str, list] = {}
        for spec in specs:
            items = []
            for index in range(counts[spec.language]):
                utt_seed = derive_seed(suite_seed, split, spec.language, index)
                rng = np.random.default_rng(derive_seed(utt_seed, "tokens"))
                length = int(rng.integers(tokens_min, tokens_max + 1))
                tokens = [int(t) for t in rng.integers(1, vocab_size + 1, size=length)]
                feats = synth_utterance(spec, tokens, derive_seed(utt_seed, "frames"), codebook)
                items.append((feats, tokens))
            per_language[spec.language] = items
        interleaved = []
        for index in range(max(len(v) for v in per_language.values())):
            for spec in specs:
                items = per_language[spec.language]
                if index < len(items):
                    interleaved.append(items[index])
        splits[split] = Corpus(interleaved, vocab_size, feature_dim, split, suite_seed)

    train, test = splits["train"], splits["test"]
    if out_dir is not None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_corpus(train, out / "train.sldt")
        save_corpus(test, out / "test.sldt")
    return train, test


# ---------------------------------------------------------------------------
# Dataset container (little-endian)
# ---------------------------------------------------------------------------


def _serialize(corpus: Corpus) -> bytes:
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<I", DATASET_VERSION))
    buf.write(struct.pack("<III", corpus.feature_dim, corpus.vocab_size, len(corpus.utterances)))
    for feats, tokens in corpus.utterances:
        lang = feats.language.encode("utf-8")
        buf.write(struct.pack("<I", len(lang)))
        buf.write(lang)
        buf.write(struct.pack("<II", feats.num_frames, len(tokens)))
        buf.write(feats.frames.astype("<f4").tobytes(order="C"))
        buf.write(np.asarray(tokens, dtype="<u4").tobytes())
    return buf.getvalue()


def save_corpus(corpus: Corpus, path) -> None:
    data = _serialize(corpus)
    with open(path, "wb") as fh:
        fh.write(data)


def load_corpus(path, split: str | None = None) -> Corpus:
    from pathlib import Path

    raw = Path(path).read_bytes()
    view = memoryview(raw)
    if bytes(view[:4]) != DATASET_MAGIC:
        raise ValueError(f"{path}: not a dataset file (bad magic)")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    feature_dim, vocab_size, count = struct.unpack_from("<III", view, 8)
    offset = 20
    utterances = []
    try:
        for _ in range(count):
            (lang_len,) = struct.unpack_from("<I", view, offset)
            offset += 4
            language = bytes(view[offset : offset + lang_len]).decode("utf-8")
            offset += lang_len
            num_frames, num_tokens = struct.unpack_from("<II", view, offset)
            offset += 8
            frame_bytes = num_frames * feature_dim * 4
            frames = (
                np.frombuffer(view, dtype="<f4", count=num_frames * feature_dim, offset=offset)
                .astype(np.float64)
                .reshape(num_frames, feature_dim)
            )
            offset += frame_bytes
            tokens = np.frombuffer(view, dtype="<u4", count=num_tokens, offset=offset).tolist()
            offset += num_tokens * 4
            utterances.append((FeatureSequence(language, frames), [int(t) for t in tokens]))
    except (struct.error, ValueError) as exc:
        raise ValueError(f"{path}: truncated or corrupt dataset file") from exc
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes in dataset file")
    inferred = split if split is not None else Path(path).stem
    return Corpus(utterances, int(vocab_size), int(feature_dim), inferred)


def corpus_hash(corpus: Corpus) -> str:
    """SHA-256 of the serialized dataset bytes (matches the on-disk file)."""
    return hashlib.sha256(_serialize(corpus)).hexdigest()
