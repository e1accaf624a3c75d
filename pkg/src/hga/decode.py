"""Score-tensor decoding and entity-level evaluation.

Decoding: keep cells above the threshold, keep only the best-scoring type
per span, then accept spans greedily by descending score, dropping any
candidate that overlaps an accepted span. Evaluation converts both entity
sets through BIO tags and back, matching the BIO-based protocol used to
compare span models against sequence taggers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .docmodel import Entity, LabelSet, bio_to_entities, entities_to_bio
from .head import ScoreTensor

__all__ = ["DecodeConfig", "EvalReport", "decode", "evaluate", "evaluate_many"]

OVERLAP_POLICIES = ("greedy_by_score",)


@dataclass(frozen=True)
class DecodeConfig:
    threshold: float = 0.0
    overlap_policy: str = "greedy_by_score"

    def __post_init__(self):
        if self.overlap_policy not in OVERLAP_POLICIES:
            raise ValueError(f"unknown overlap policy: {self.overlap_policy!r}")


def decode(s: ScoreTensor | np.ndarray, cfg: DecodeConfig = DecodeConfig()) -> list[Entity]:
    """Entities from a (D, L, L) score array.

    Ties: the lower type index wins a span, and the greedy pass orders equal
    scores by (earlier start, shorter span, lower type index).
    """
    arr = s.scores if isinstance(s, ScoreTensor) else np.asarray(s, dtype=np.float64)
    D, L, _ = arr.shape
    best: dict[tuple[int, int], tuple[float, int]] = {}
    for t in range(D):
        for i, j in np.argwhere(arr[t] > cfg.threshold):
            if i > j:
                continue
            cell = (int(i), int(j))
            val = float(arr[t, i, j])
            if cell not in best or val > best[cell][0]:
                best[cell] = (val, t)
    ranked = sorted(
        ((val, i, j, t) for (i, j), (val, t) in best.items()),
        key=lambda c: (-c[0], c[1], c[2] - c[1], c[3]),
    )
    taken = np.zeros(L, dtype=bool)
    out: list[Entity] = []
    for val, i, j, t in ranked:
        if taken[i:j + 1].any():
            continue
        taken[i:j + 1] = True
        out.append(Entity(t, i, j))
    return sorted(out, key=lambda e: (e.start, e.end, e.type_index))


@dataclass(frozen=True)
class TypeMetrics:
    precision: float
    recall: float
    f1: float
    gold: int
    predicted: int
    correct: int


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    gold: int
    predicted: int
    correct: int
    per_type: dict[str, TypeMetrics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "counts": {"gold": self.gold, "predicted": self.predicted, "correct": self.correct},
            "per_type": {
                name: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "gold": m.gold,
                    "predicted": m.predicted,
                    "correct": m.correct,
                }
                for name, m in self.per_type.items()
            },
        }


def _prf(correct: int, predicted: int, gold: int) -> tuple[float, float, float]:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def _bio_round_trip(entities, length: int, label_set: LabelSet) -> set[Entity]:
    return set(bio_to_entities(entities_to_bio(entities, length, label_set), label_set))


def evaluate_many(pairs, label_set: LabelSet) -> EvalReport:
    """Micro P/R/F1 over (predicted, gold, length) triples.

    Matching is exact (type, start, end), computed after a BIO round trip of
    both sides so results are identical to tag-level comparison.
    """
    gold_n = pred_n = correct_n = 0
    by_type = {name: [0, 0, 0] for name in label_set}  # gold, predicted, correct
    for predicted, gold, length in pairs:
        pset = _bio_round_trip(predicted, length, label_set)
        gset = _bio_round_trip(gold, length, label_set)
        inter = pset & gset
        gold_n += len(gset)
        pred_n += len(pset)
        correct_n += len(inter)
        for e in gset:
            by_type[label_set.name(e.type_index)][0] += 1
        for e in pset:
            by_type[label_set.name(e.type_index)][1] += 1
        for e in inter:
            by_type[label_set.name(e.type_index)][2] += 1
    p, r, f1 = _prf(correct_n, pred_n, gold_n)
    per_type = {}
    for name, (g, pr, c) in by_type.items():
        tp, tr, tf = _prf(c, pr, g)
        per_type[name] = TypeMetrics(tp, tr, tf, g, pr, c)
    return EvalReport(p, r, f1, gold_n, pred_n, correct_n, per_type)


def evaluate(predicted, gold, label_set: LabelSet, length: int | None = None) -> EvalReport:
    """Entity-level exact-match scores for one document."""
    if length is None:
        spans = list(predicted) + list(gold)
        length = max((e.end for e in spans), default=-1) + 1
    return evaluate_many([(predicted, gold, length)], label_set)
