"""Per-type span scoring head.

Every entity type gets its own query/key projection of the encoder features;
the score of candidate span [i, j] is the rotary-encoded inner product of
query i and key j. Rotary angles come from span positions (the node index
shared by all tokens of a node), so scores depend only on relative node
offsets. The lower triangle and padding rows/columns carry a large negative
additive mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .docmodel import TokenSequence

__all__ = [
    "HeadConfig",
    "HeadParams",
    "ScoreTensor",
    "init_head_params",
    "head_params_from_store",
    "span_positions",
    "token_positions",
    "rotary_apply",
    "score",
    "score_mask",
]

MASK_VALUE = -1e12


@dataclass(frozen=True)
class HeadConfig:
    num_types: int
    head_hidden: int = 64
    rope_base: float = 10000.0
    mask_value: float = MASK_VALUE

    def __post_init__(self):
        if self.num_types < 1:
            raise ValueError("num_types must be >= 1")
        if self.head_hidden % 2:
            raise ValueError("head_hidden must be even (rotary pairs)")
        if self.mask_value >= 0:
            raise ValueError("mask_value must be strongly negative")


@dataclass(frozen=True)
class HeadParams:
    """Per-type projection tensors, in type order."""

    wq: tuple[Tensor, ...]
    bq: tuple[Tensor, ...]
    wk: tuple[Tensor, ...]
    bk: tuple[Tensor, ...]

    @property
    def num_types(self) -> int:
        return len(self.wq)


def init_head_params(cfg: HeadConfig, hidden_size: int, store: ParamStore,
                     rng: np.random.Generator, prefix: str = "head") -> HeadParams:
    wq, bq, wk, bk = [], [], [], []
    for t in range(cfg.num_types):
        wq.append(store.add(f"{prefix}.t{t}.wq", rng.normal(0.0, 0.02, size=(hidden_size, cfg.head_hidden))))
        bq.append(store.add(f"{prefix}.t{t}.bq", np.zeros(cfg.head_hidden)))
        wk.append(store.add(f"{prefix}.t{t}.wk", rng.normal(0.0, 0.02, size=(hidden_size, cfg.head_hidden))))
        bk.append(store.add(f"{prefix}.t{t}.bk", np.zeros(cfg.head_hidden)))
    return HeadParams(tuple(wq), tuple(bq), tuple(wk), tuple(bk))


def head_params_from_store(store: ParamStore, num_types: int, prefix: str = "head") -> HeadParams:
    """Re-bind a HeadParams view onto already-registered tensors."""

    def pick(field: str) -> tuple[Tensor, ...]:
        return tuple(store[f"{prefix}.t{t}.{field}"] for t in range(num_types))

    return HeadParams(pick("wq"), pick("bq"), pick("wk"), pick("bk"))


def span_positions(seq: TokenSequence) -> np.ndarray:
    """Position of each token = index of the node it came from."""
    return np.asarray(seq.node_of_token, dtype=np.int64)


def token_positions(length: int) -> np.ndarray:
    """Plain 0..L-1 token positions (the conventional-rotary ablation arm)."""
    return np.arange(length, dtype=np.int64)


def rotary_apply(v: Tensor, positions, rope_base: float) -> Tensor:
    """Rotate each row's interleaved pairs by its position-scaled angles."""
    dim = v.shape[-1]
    cos, sin = ad.rotary_tables(positions, dim, rope_base)
    return ad.rotary(v, cos, sin)


def score_mask(length: int, attention_keep, mask_value: float = MASK_VALUE) -> np.ndarray:
    """Additive (L, L) mask: mask_value on the lower triangle and on any cell
    whose row or column is padding, zero elsewhere."""
    keep = np.asarray(attention_keep, dtype=bool)
    lower = np.tril(np.ones((length, length), dtype=bool), k=-1)
    invalid = lower | ~keep[:, None] | ~keep[None, :]
    return np.where(invalid, mask_value, 0.0)


def score(h: Tensor, positions: np.ndarray | None, params: HeadParams, cfg: HeadConfig,
          attention_keep) -> Tensor:
    """Score tensor of shape (num_types, L, L).

    positions=None skips rotary encoding entirely (the "no position" arm).
    Types are scored independently; the per-type projections are stacked
    into one batched matmul purely for speed.
    """
    L = h.shape[0]
    if params.num_types != cfg.num_types:
        raise ValueError("head params do not match num_types")
    tables = None
    if positions is not None:
        if len(positions) != L:
            raise ValueError("positions length must match sequence length")
        tables = ad.rotary_tables(positions, cfg.head_hidden, cfg.rope_base)
    d = cfg.head_hidden
    q = h @ ad.stack(params.wq, axis=0) + ad.reshape(ad.stack(params.bq, axis=0), (cfg.num_types, 1, d))
    k = h @ ad.stack(params.wk, axis=0) + ad.reshape(ad.stack(params.bk, axis=0), (cfg.num_types, 1, d))
    if tables is not None:
        q = ad.rotary(q, *tables)
        k = ad.rotary(k, *tables)
    stacked = q @ ad.transpose(k, (0, 2, 1))
    return stacked + Tensor(score_mask(L, attention_keep, cfg.mask_value))


@dataclass(frozen=True)
class ScoreTensor:
    """Plain (num_types, L, L) score array, the decode-side view."""

    scores: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
            raise ValueError(f"score tensor must be (D, L, L), got {arr.shape}")
        object.__setattr__(self, "scores", arr)

    @classmethod
    def from_tensor(cls, t: Tensor) -> "ScoreTensor":
        return cls(t.data.copy())

    @property
    def num_types(self) -> int:
        return self.scores.shape[0]

    @property
    def length(self) -> int:
        return self.scores.shape[1]
