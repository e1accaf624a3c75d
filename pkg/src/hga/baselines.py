"""Linear and MLP baseline heads: per-token BIO classification over the
encoder features, trained with token-level cross entropy."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .docmodel import Entity, LabelSet, bio_tag_names, bio_to_entities

__all__ = [
    "num_bio_tags",
    "init_linear_head",
    "init_mlp_head",
    "linear_logits",
    "mlp_logits",
    "dropout_mask",
    "bio_targets",
    "token_cross_entropy",
    "decode_bio_logits",
]


def num_bio_tags(num_types: int) -> int:
    return 2 * num_types + 1


def init_linear_head(store: ParamStore, hidden_size: int, num_types: int,
                     rng: np.random.Generator, prefix: str = "cls") -> None:
    store.add(f"{prefix}.w", rng.normal(0.0, 0.02, size=(hidden_size, num_bio_tags(num_types))))
    store.add(f"{prefix}.b", np.zeros(num_bio_tags(num_types)))


def init_mlp_head(store: ParamStore, hidden_size: int, num_types: int,
                  rng: np.random.Generator, prefix: str = "cls") -> None:
    store.add(f"{prefix}.w1", rng.normal(0.0, 0.02, size=(hidden_size, hidden_size)))
    store.add(f"{prefix}.b1", np.zeros(hidden_size))
    store.add(f"{prefix}.w2", rng.normal(0.0, 0.02, size=(hidden_size, num_bio_tags(num_types))))
    store.add(f"{prefix}.b2", np.zeros(num_bio_tags(num_types)))


def linear_logits(h: Tensor, store: ParamStore, prefix: str = "cls") -> Tensor:
    return h @ store[f"{prefix}.w"] + store[f"{prefix}.b"]


def mlp_logits(h: Tensor, store: ParamStore, prefix: str = "cls",
               dropout_mask: np.ndarray | None = None) -> Tensor:
    """Hidden gelu layer, optional (pre-scaled) dropout mask, output projection."""
    hidden = ad.gelu(h @ store[f"{prefix}.w1"] + store[f"{prefix}.b1"])
    if dropout_mask is not None:
        hidden = ad.mul(hidden, Tensor(dropout_mask))
    return hidden @ store[f"{prefix}.w2"] + store[f"{prefix}.b2"]


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray | None:
    """Inverted-dropout multiplier, or None when the rate is zero."""
    if rate <= 0.0:
        return None
    keep = (rng.random(shape) >= rate).astype(np.float64)
    return keep / (1.0 - rate)


def bio_targets(gold: list[Entity], length: int, label_set: LabelSet) -> np.ndarray:
    """Per-token tag indices in the bio_tag_names order (O = 0)."""
    targets = np.zeros(length, dtype=np.int64)
    for e in gold:
        targets[e.start] = 1 + 2 * e.type_index
        targets[e.start + 1:e.end + 1] = 2 + 2 * e.type_index
    return targets


def token_cross_entropy(logits: Tensor, targets: np.ndarray, attention_keep) -> Tensor:
    """Mean negative log likelihood over the real (non-padding) tokens."""
    L, C = logits.shape
    keep_rows = np.flatnonzero(np.asarray(attention_keep, dtype=bool))
    if keep_rows.size == 0:
        raise ValueError("cross entropy needs at least one real token")
    lse = ad.logsumexp(logits)
    picked = ad.take(logits, keep_rows * C + targets[keep_rows])
    return ad.mean_all(ad.take(lse, keep_rows) - picked)


def decode_bio_logits(logits: np.ndarray, attention_keep, label_set: LabelSet) -> list[Entity]:
    """Argmax tags (ties to the lowest index), padding forced to O, then
    span extraction with conll-style repair."""
    names = bio_tag_names(label_set)
    keep = np.asarray(attention_keep, dtype=bool)
    picks = np.argmax(logits, axis=-1)
    tags = [names[p] if k else "O" for p, k in zip(picks, keep)]
    return bio_to_entities(tags, label_set)
