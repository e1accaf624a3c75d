"""Balanced span loss over the per-type score tensor.

Per type, the positive loss is log(1 + sum exp(-s)) over gold spans and
the negative loss is log(1 + sum exp(s)) over every other valid
upper-triangle cell; both are combined as (1+b)*Lp + (1-b)*Ln and summed
over types. Lower-triangle and padding cells are excluded from the
negative set outright, so they carry exactly zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .docmodel import Entity
from .head import ScoreTensor

__all__ = ["BalanceConfig", "HyperedgeLabels", "default_balance", "build_labels",
           "loss_parts", "loss_vectors", "balanced_loss"]


@dataclass(frozen=True)
class BalanceConfig:
    b: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.b < 1.0:
            raise ValueError(f"balance factor must be in [0, 1), got {self.b}")


def default_balance(num_types: int) -> float:
    """0.4 once the type count makes the score tensor sparse, else 0."""
    return 0.4 if num_types >= 10 else 0.0


@dataclass(frozen=True)
class HyperedgeLabels:
    """Per-type positive spans plus boolean masks of positive and negative cells."""

    positives: tuple[tuple[tuple[int, int], ...], ...]
    positive_mask: np.ndarray  # (D, L, L) bool
    negative_mask: np.ndarray  # (D, L, L) bool

    @property
    def num_types(self) -> int:
        return len(self.positives)

    @property
    def length(self) -> int:
        return self.negative_mask.shape[1]


def build_labels(gold: Sequence[Entity], length: int, num_types: int,
                 attention_keep) -> HyperedgeLabels:
    """Split the (D, L, L) grid into positives, negatives, and excluded cells."""
    keep = np.asarray(attention_keep, dtype=bool)
    if keep.shape != (length,):
        raise ValueError("attention_keep length must match sequence length")
    valid = np.triu(np.ones((length, length), dtype=bool)) & keep[:, None] & keep[None, :]
    negative = np.repeat(valid[None, :, :], num_types, axis=0)
    positive = np.zeros((num_types, length, length), dtype=bool)
    positives: list[list[tuple[int, int]]] = [[] for _ in range(num_types)]
    for e in gold:
        if not 0 <= e.type_index < num_types:
            raise ValueError(f"entity type {e.type_index} out of range for {num_types} types")
        if e.end >= length:
            raise ValueError(f"entity {e} exceeds length {length}")
        if not (keep[e.start] and keep[e.end]):
            raise ValueError(f"entity {e} touches padding")
        positives[e.type_index].append((e.start, e.end))
        positive[e.type_index, e.start, e.end] = True
        negative[e.type_index, e.start, e.end] = False
    return HyperedgeLabels(tuple(tuple(sorted(p)) for p in positives), positive, negative)


def loss_parts(scores: Tensor | ScoreTensor, labels: HyperedgeLabels) -> list[tuple[Tensor, Tensor]]:
    """Per-type (positive, negative) log-sum-exp losses as graph tensors."""
    if isinstance(scores, ScoreTensor):
        scores = Tensor(scores.scores)
    D, L, _ = scores.shape
    if D != labels.num_types or L != labels.length:
        raise ValueError("score tensor does not match labels")
    parts = []
    for t in range(D):
        base = t * L * L
        pos_idx = np.array([base + i * L + j for i, j in labels.positives[t]], dtype=np.int64)
        neg_idx = np.flatnonzero(labels.negative_mask[t]) + base
        lp = ad.log1p_sum_exp(ad.neg(ad.take(scores, pos_idx)))
        ln = ad.log1p_sum_exp(ad.take(scores, neg_idx))
        parts.append((lp, ln))
    return parts


def loss_vectors(scores: Tensor | ScoreTensor, labels: HyperedgeLabels) -> tuple[Tensor, Tensor]:
    """(Lp, Ln) vectors of length D, via the fused masked reduction."""
    if isinstance(scores, ScoreTensor):
        scores = Tensor(scores.scores)
    D, L, _ = scores.shape
    if D != labels.num_types or L != labels.length:
        raise ValueError("score tensor does not match labels")
    lp = ad.masked_log1p_sum_exp(ad.neg(scores), labels.positive_mask)
    ln = ad.masked_log1p_sum_exp(scores, labels.negative_mask)
    return lp, ln


def balanced_loss(scores: Tensor | ScoreTensor, labels: HyperedgeLabels,
                  cfg: BalanceConfig | float) -> Tensor:
    """Sum over types of (1+b) * Lp + (1-b) * Ln."""
    b = cfg.b if isinstance(cfg, BalanceConfig) else BalanceConfig(float(cfg)).b
    lp, ln = loss_vectors(scores, labels)
    return ad.sum_all(ad.scale(lp, 1.0 + b) + ad.scale(ln, 1.0 - b))
