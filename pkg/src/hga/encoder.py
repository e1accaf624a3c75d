"""Small trainable document encoder: token/position/layout embeddings
followed by pre-norm self-attention blocks, producing one feature vector
per token."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .docmodel import TokenSequence

__all__ = ["EncoderConfig", "init_encoder_params", "encode"]

ATTN_MASK = -1e12


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_size: int = 128
    layers: int = 4
    attn_heads: int = 4
    ffn_size: int | None = None
    max_seq_len: int = 512
    use_layout: bool = True
    layout_buckets: int = 32

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must cover <pad> and <unk>")
        if self.hidden_size % self.attn_heads:
            raise ValueError("hidden_size must be divisible by attn_heads")
        if self.max_seq_len < 1:
            raise ValueError("max_seq_len must be >= 1")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")

    @property
    def ffn(self) -> int:
        return self.ffn_size if self.ffn_size is not None else 4 * self.hidden_size

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.attn_heads


_LAYOUT_CHANNELS = ("x0", "y0", "x1", "y1")


def init_encoder_params(cfg: EncoderConfig, store: ParamStore, rng: np.random.Generator,
                        prefix: str = "enc") -> None:
    """Register encoder parameters.

    Embeddings and projection weights start at normal(0, 0.02); biases and
    the final projection of each residual branch start at zero, so a fresh
    encoder is the identity on top of the embedding sum.
    """
    H = cfg.hidden_size
    store.add(f"{prefix}.tok_emb", rng.normal(0.0, 0.02, size=(cfg.vocab_size, H)))
    store.add(f"{prefix}.pos_emb", rng.normal(0.0, 0.02, size=(cfg.max_seq_len, H)))
    if cfg.use_layout:
        for channel in _LAYOUT_CHANNELS:
            store.add(f"{prefix}.layout_{channel}", rng.normal(0.0, 0.02, size=(cfg.layout_buckets, H)))
    for i in range(cfg.layers):
        base = f"{prefix}.l{i}"
        store.add(f"{base}.ln1_g", np.ones(H))
        store.add(f"{base}.ln1_b", np.zeros(H))
        for name in ("wq", "wk", "wv"):
            store.add(f"{base}.{name}", rng.normal(0.0, 0.02, size=(H, H)))
        store.add(f"{base}.wo", np.zeros((H, H)))
        # no key bias: softmax ignores per-query constant logit shifts, so a
        # key bias would be a provably dead parameter
        for name in ("bq", "bv", "bo"):
            store.add(f"{base}.{name}", np.zeros(H))
        store.add(f"{base}.ln2_g", np.ones(H))
        store.add(f"{base}.ln2_b", np.zeros(H))
        store.add(f"{base}.w1", rng.normal(0.0, 0.02, size=(H, cfg.ffn)))
        store.add(f"{base}.b1", np.zeros(cfg.ffn))
        store.add(f"{base}.w2", np.zeros((cfg.ffn, H)))
        store.add(f"{base}.b2", np.zeros(H))


def _attention(x: Tensor, store: ParamStore, base: str, cfg: EncoderConfig,
               key_bias: np.ndarray) -> Tensor:
    L = x.shape[0]
    heads, dh = cfg.attn_heads, cfg.head_dim

    def split(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (L, heads, dh)), (1, 0, 2))

    q = split(x @ store[f"{base}.wq"] + store[f"{base}.bq"])
    k = split(x @ store[f"{base}.wk"])
    v = split(x @ store[f"{base}.wv"] + store[f"{base}.bv"])
    scores = ad.scale(q @ ad.transpose(k, (0, 2, 1)), 1.0 / np.sqrt(dh))
    att = ad.softmax(scores + Tensor(key_bias))
    ctx = ad.reshape(ad.transpose(att @ v, (1, 0, 2)), (L, cfg.hidden_size))
    return ctx @ store[f"{base}.wo"] + store[f"{base}.bo"]


def encode(seq: TokenSequence, layout: tuple[np.ndarray, np.ndarray] | None,
           cfg: EncoderConfig, store: ParamStore, prefix: str = "enc") -> Tensor:
    """Feature sequence for one document, shape (L, hidden_size).

    Padding positions are kept in the output but masked out of every
    attention so real positions never depend on them.
    """
    L = seq.length
    if L > cfg.max_seq_len:
        raise ValueError(f"sequence length {L} exceeds max_seq_len {cfg.max_seq_len}")
    ids = np.asarray(seq.token_ids, dtype=np.int64)
    if ids.size and int(ids.max()) >= cfg.vocab_size:
        raise ValueError("token id out of vocabulary range")
    x = ad.embedding(store[f"{prefix}.tok_emb"], ids) + \
        ad.embedding(store[f"{prefix}.pos_emb"], np.arange(L, dtype=np.int64))
    if cfg.use_layout and layout is not None:
        coords, has_box = layout
        buckets = np.clip((coords * cfg.layout_buckets).astype(np.int64), 0, cfg.layout_buckets - 1)
        gate = Tensor(has_box.astype(np.float64).reshape(L, 1))
        for c, channel in enumerate(_LAYOUT_CHANNELS):
            x = x + ad.mul(ad.embedding(store[f"{prefix}.layout_{channel}"], buckets[:, c]), gate)
    keep = np.asarray(seq.attention_keep, dtype=bool)
    key_bias = np.where(keep, 0.0, ATTN_MASK)  # broadcast over key axis
    for i in range(cfg.layers):
        base = f"{prefix}.l{i}"
        a = ad.layer_norm(x, store[f"{base}.ln1_g"], store[f"{base}.ln1_b"])
        x = x + _attention(a, store, base, cfg, key_bias)
        f = ad.layer_norm(x, store[f"{base}.ln2_g"], store[f"{base}.ln2_b"])
        x = x + ad.gelu(f @ store[f"{base}.w1"] + store[f"{base}.b1"]) @ store[f"{base}.w2"] + store[f"{base}.b2"]
    return x
