"""Deterministic generator of synthetic form-like documents.

Each entity type owns a small word pool (with a sliver of shared words), so
the type of a node is learnable from its lexical content alone. Nodes are
laid out row-major on a virtual 1000x1000 page.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .docmodel import Document, LabelSet, TextNode, OTHER_LABEL, save_funsd_json
from .util import derive_rng

__all__ = ["SynthConfig", "gen_dataset", "write_dataset"]

PAGE = (1000, 1000)
_COLS = 4
_CELL_W = PAGE[0] // _COLS
_CELL_H = 40


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    n_docs: int
    label_set: LabelSet
    nodes_per_doc: tuple[int, int] = (6, 12)
    tokens_per_node: tuple[int, int] = (1, 4)
    other_fraction: float = 0.3
    vocab_size_per_type: int = 20
    shared_fraction: float = 0.1

    def __post_init__(self):
        if self.n_docs < 0:
            raise ValueError("n_docs must be >= 0")
        if self.nodes_per_doc[0] > self.nodes_per_doc[1] or self.nodes_per_doc[0] < 1:
            raise ValueError(f"bad nodes_per_doc range: {self.nodes_per_doc}")
        if self.tokens_per_node[0] > self.tokens_per_node[1] or self.tokens_per_node[0] < 1:
            raise ValueError(f"bad tokens_per_node range: {self.tokens_per_node}")
        if not 0.0 <= self.other_fraction <= 1.0:
            raise ValueError("other_fraction must be within [0, 1]")
        if self.vocab_size_per_type <= 0:
            raise ValueError("vocab_size_per_type must be positive")


def _pools(cfg: SynthConfig) -> tuple[dict[str, tuple[list[str], list[str]]], list[str]]:
    """Per-label (opener, body) word pools plus the label-agnostic shared pool.

    The first word of every node comes from its label's small opener pool,
    mimicking the field labels that open real form entries; body words are
    drawn per label with a sliver of shared vocabulary mixed in.
    """
    size = cfg.vocab_size_per_type
    openers = max(2, size // 4)
    pools: dict[str, tuple[list[str], list[str]]] = {}
    for t, name in enumerate(cfg.label_set):
        pools[name] = ([f"w{t}s_{i}" for i in range(openers)], [f"w{t}_{i}" for i in range(size)])
    pools[OTHER_LABEL] = ([f"wos_{i}" for i in range(openers)], [f"wo_{i}" for i in range(size)])
    shared = [f"ws_{i}" for i in range(max(1, round(size * cfg.shared_fraction)))]
    return pools, shared


def _node_box(index: int) -> tuple[int, int, int, int]:
    col = index % _COLS
    row = index // _COLS
    x0 = col * _CELL_W + 5
    y0 = (row * _CELL_H) % (PAGE[1] - _CELL_H) + 5
    return (x0, y0, x0 + _CELL_W - 10, y0 + _CELL_H - 10)


def _gen_doc(cfg: SynthConfig, index: int, pools, shared) -> Document:
    rng = derive_rng(cfg.seed, index)
    types = list(cfg.label_set)
    n = int(rng.integers(cfg.nodes_per_doc[0], cfg.nodes_per_doc[1] + 1))
    if cfg.other_fraction >= 1.0:
        n_labeled = 0
    else:
        n_labeled = max(1, round(n * (1.0 - cfg.other_fraction)))
    is_labeled = [True] * n_labeled + [False] * (n - n_labeled)
    rng.shuffle(is_labeled)
    # cycle types with a per-document offset so every type is covered once
    # the corpus has at least len(types) documents
    offset = index % len(types)
    labels = []
    k = 0
    for flag in is_labeled:
        if flag:
            labels.append(types[(offset + k) % len(types)])
            k += 1
        else:
            labels.append(OTHER_LABEL)
    nodes = []
    for node_id, label in enumerate(labels):
        opener_pool, body_pool = pools[label]
        count = int(rng.integers(cfg.tokens_per_node[0], cfg.tokens_per_node[1] + 1))
        words = [opener_pool[int(rng.integers(len(opener_pool)))]]
        for _ in range(count - 1):
            if rng.random() < cfg.shared_fraction:
                words.append(shared[int(rng.integers(len(shared)))])
            else:
                words.append(body_pool[int(rng.integers(len(body_pool)))])
        nodes.append(TextNode(id=node_id, text=" ".join(words), label=label, box=_node_box(node_id)))
    return Document(id=f"synth-{cfg.seed}-{index:05d}", nodes=tuple(nodes), page_size=PAGE)


def gen_dataset(cfg: SynthConfig) -> list[Document]:
    """Generate cfg.n_docs documents; identical configs give identical output."""
    pools, shared = _pools(cfg)
    return [_gen_doc(cfg, i, pools, shared) for i in range(cfg.n_docs)]


def write_dataset(docs, out_dir) -> list[Path]:
    """Write one FUNSD-style JSON file per document into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for doc in docs:
        path = out / f"{doc.id}.json"
        save_funsd_json(doc, path)
        paths.append(path)
    return paths
