"""Corpus BLEU on integer token sequences and traffic-weighted reporting.

BLEU: modified n-gram precisions for n = 1..4 with clipped counts pooled
over the corpus, geometric mean, brevity penalty exp(1 - r/c) for c < r.
Smoothing: a zero clipped-count numerator is replaced by 0.1 for orders
n >= 2, while a zero order-1 numerator yields score 0; orders with no
hypothesis n-grams at all are excluded from the mean. Scores live on the
0-100 scale. Reports carry per-language scores, their plain mean, and one
weighted average per assumed traffic distribution.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import lin as lin_mod
from .numerics import Tensor
from .synthlang import Corpus, corpus_hash
from .transducer import TransducerModel, greedy_decode

__all__ = [
    "TrafficDistribution",
    "EvalReport",
    "corpus_bleu",
    "simple_average",
    "weighted_average",
    "make_traffic",
    "evaluate",
]

_WEIGHT_TOL = 1e-9
_MAX_ORDER = 4
_ZERO_COUNT_SMOOTHING = 0.1


@dataclass(frozen=True)
class TrafficDistribution:
    """Assumed share of incoming traffic per language; sums to one."""

    name: str
    weights: dict[str, float]

    def __post_init__(self):
        if not self.weights:
            raise ValueError("traffic distribution needs at least one language")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("traffic weights must be >= 0")
        total = sum(self.weights.values())
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"traffic weights sum to {total}, expected 1")


def make_traffic(dominant: str, share: float, languages: Sequence[str], name: str | None = None) -> TrafficDistribution:
    """Give ``dominant`` probability ``share``; split the rest equally."""
    langs = list(languages)
    if dominant not in langs:
        raise ValueError(f"dominant language '{dominant}' not in suite")
    if not (0.0 <= share <= 1.0):
        raise ValueError("share must lie in [0, 1]")
    if len(langs) == 1 and share < 1.0:
        raise ValueError("single-language suite requires share = 1")
    weights = {}
    for lang in langs:
        if lang == dominant:
            weights[lang] = share
        else:
            weights[lang] = (1.0 - share) / (len(langs) - 1)
    if name is None:
        name = f"p{share * 100:g}-{dominant}"
    return TrafficDistribution(name=name, weights=weights)


def _ngrams(seq: Sequence[int], order: int) -> Counter:
    return Counter(tuple(seq[i : i + order]) for i in range(len(seq) - order + 1))


def corpus_bleu(hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]]) -> float:
    """Corpus-level BLEU of integer token sequences, one reference each."""
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    if not references:
        raise ValueError("empty evaluation set")
    if any(len(ref) == 0 for ref in references):
        raise ValueError("references must be nonempty")

    clipped = [0] * (_MAX_ORDER + 1)
    total = [0] * (_MAX_ORDER + 1)
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for order in range(1, _MAX_ORDER + 1):
            hyp_counts = _ngrams(hyp, order)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref, order)
            total[order] += sum(hyp_counts.values())
            clipped[order] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())

    if hyp_len == 0:
        return 0.0
    # orders with no hypothesis n-grams at all carry no signal and are
    # excluded (effective order), so an exact match scores 100 even when
    # every sequence is shorter than the max order
    log_precision_sum = 0.0
    orders_used = 0
    for order in range(1, _MAX_ORDER + 1):
        if total[order] == 0:
            continue
        orders_used += 1
        numerator = float(clipped[order])
        if numerator == 0.0:
            if order == 1:
                return 0.0
            numerator = _ZERO_COUNT_SMOOTHING
        log_precision_sum += np.log(numerator / total[order])
    brevity = 1.0 if hyp_len >= ref_len else float(np.exp(1.0 - ref_len / hyp_len))
    return 100.0 * brevity * float(np.exp(log_precision_sum / orders_used))


def simple_average(per_language: Mapping[str, float]) -> float:
    if not per_language:
        raise ValueError("no per-language scores")
    return sum(per_language.values()) / len(per_language)


def weighted_average(per_language: Mapping[str, float], traffic: TrafficDistribution) -> float:
    missing = [l for l in traffic.weights if l not in per_language]
    if missing:
        raise ValueError(f"languages {missing} missing from scores")
    return sum(w * per_language[l] for l, w in traffic.weights.items())


@dataclass
class EvalReport:
    """Per-language BLEU plus the averages, self-checking on construction."""

    per_language: dict[str, float]
    average: float
    weighted: list[dict]
    model_id: str
    lin_id: str
    corpus_hash: str

    def validate(self) -> None:
        if abs(self.average - simple_average(self.per_language)) > _WEIGHT_TOL:
            raise ValueError("average does not match per-language scores")
        for entry in self.weighted:
            traffic = TrafficDistribution(entry["name"], dict(entry["weights"]))
            if abs(entry["value"] - weighted_average(self.per_language, traffic)) > _WEIGHT_TOL:
                raise ValueError(f"weighted average '{entry['name']}' inconsistent")

    def to_json(self) -> str:
        doc = {
            "per_language": {k: self.per_language[k] for k in sorted(self.per_language)},
            "average": self.average,
            "weighted": self.weighted,
            "model_id": self.model_id,
            "lin_id": self.lin_id,
            "corpus_hash": self.corpus_hash,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        report = cls(
            per_language={k: float(v) for k, v in doc["per_language"].items()},
            average=float(doc["average"]),
            weighted=list(doc["weighted"]),
            model_id=str(doc["model_id"]),
            lin_id=str(doc["lin_id"]),
            corpus_hash=str(doc["corpus_hash"]),
        )
        report.validate()
        return report


def evaluate(
    model: TransducerModel,
    corpus: Corpus,
    lin: "lin_mod.LinLayer | None" = None,
    traffics: Sequence[TrafficDistribution] = (),
    model_id: str | None = None,
    decode_fn: Callable | None = None,
) -> EvalReport:
    """Greedy-decode every test utterance (through the one selected input
    transform when given, regardless of the utterance language) and score
    per-language corpus BLEU."""
    from .checkpoint import hash_arrays

    if len(corpus) == 0:
        raise ValueError("empty test split")
    if corpus.feature_dim != model.config.feature_dim:
        raise ValueError(
            f"corpus feature dim {corpus.feature_dim} does not match model "
            f"dim {model.config.feature_dim}"
        )
    if model_id is None:
        model_id = hash_arrays(model.parameter_arrays())
    weight = lin.weight if lin is not None else np.eye(model.config.feature_dim)
    lin_identifier = lin_mod.lin_fingerprint(weight)

    if decode_fn is None:
        lin_tensor = None if lin is None else Tensor(lin.weight)

        def decode_fn(feats, _tokens):
            return greedy_decode(model, feats, lin=lin_tensor)

    by_language: dict[str, tuple[list, list]] = {}
    for feats, tokens in corpus.utterances:
        hyps_refs = by_language.setdefault(feats.language, ([], []))
        hyps_refs[0].append(decode_fn(feats, tokens))
        hyps_refs[1].append(list(tokens))

    per_language = {
        lang: corpus_bleu(hyps, refs) for lang, (hyps, refs) in sorted(by_language.items())
    }
    weighted = []
    for traffic in traffics:
        weighted.append(
            {
                "name": traffic.name,
                "weights": dict(traffic.weights),
                "value": weighted_average(per_language, traffic),
            }
        )
    report = EvalReport(
        per_language=per_language,
        average=simple_average(per_language),
        weighted=weighted,
        model_id=model_id,
        lin_id=lin_identifier,
        corpus_hash=corpus_hash(corpus),
    )
    report.validate()
    return report
