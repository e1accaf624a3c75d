"""Document data model: FUNSD-style ingestion, word vocabulary, token
sequences with node-aligned span positions, and BIO conversion."""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "OTHER_LABEL",
    "PAD_ID",
    "UNK_ID",
    "PAD_TOKEN",
    "UNK_TOKEN",
    "FunsdParseError",
    "FunsdSchemaError",
    "LabelSet",
    "TextNode",
    "Document",
    "TokenSequence",
    "Entity",
    "Vocabulary",
    "build_vocab",
    "tokenize",
    "gold_entities",
    "entities_to_bio",
    "bio_to_entities",
    "bio_tag_names",
    "check_non_overlapping",
    "load_funsd_json",
    "document_to_funsd",
    "save_funsd_json",
    "token_layout",
    "doc_words",
]

OTHER_LABEL = "other"
PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class FunsdParseError(ValueError):
    """A file could not be parsed as JSON."""


class FunsdSchemaError(ValueError):
    """A parsed file does not match the expected form schema."""


@dataclass(frozen=True)
class LabelSet:
    """Ordered entity-type names; "other" is never a member."""

    types: tuple[str, ...]

    def __init__(self, types: Iterable[str]):
        object.__setattr__(self, "types", tuple(types))
        if not self.types:
            raise ValueError("label set must contain at least one type")
        if len(set(self.types)) != len(self.types):
            raise ValueError("label set contains duplicate names")
        if OTHER_LABEL in self.types:
            raise ValueError(f'"{OTHER_LABEL}" cannot be an entity type')
        if any(not name for name in self.types):
            raise ValueError("entity type names must be non-empty")

    def __len__(self) -> int:
        return len(self.types)

    def __iter__(self) -> Iterator[str]:
        return iter(self.types)

    def __contains__(self, name: str) -> bool:
        return name in self.types

    @property
    def num_types(self) -> int:
        return len(self.types)

    def index(self, name: str) -> int:
        try:
            return self.types.index(name)
        except ValueError:
            raise ValueError(f"unknown entity type: {name!r}") from None

    def name(self, index: int) -> str:
        return self.types[index]


@dataclass(frozen=True)
class TextNode:
    """A discrete positioned text fragment; the unit that carries a label."""

    id: int
    text: str
    label: str = OTHER_LABEL
    box: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"node {self.id}: text must be non-empty")
        if self.box is not None:
            x0, y0, x1, y1 = self.box
            if x0 > x1 or y0 > y1:
                raise ValueError(f"node {self.id}: box corners out of order: {self.box}")


@dataclass(frozen=True)
class Document:
    """Ordered text nodes; order is the reading order used everywhere."""

    id: str
    nodes: tuple[TextNode, ...]
    page_size: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise ValueError(f"document {self.id}: node ids must be 0..m-1 in order, got {node.id} at {i}")

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class TokenSequence:
    """Tokens plus the token->node surjection and derived span positions."""

    token_ids: tuple[int, ...]
    node_of_token: tuple[int, ...]
    span_positions: tuple[int, ...]
    attention_keep: tuple[bool, ...]

    def __post_init__(self):
        n = len(self.token_ids)
        if not (len(self.node_of_token) == len(self.span_positions) == len(self.attention_keep) == n):
            raise ValueError("token sequence field lengths differ")

    @property
    def length(self) -> int:
        return len(self.token_ids)

    @property
    def num_real(self) -> int:
        return sum(self.attention_keep)

    def to_bytes(self) -> bytes:
        """Canonical packed encoding, used for determinism checks."""
        n = self.length
        return struct.pack(
            f"<I{n}q{n}q{n}q{n}?",
            n, *self.token_ids, *self.node_of_token, *self.span_positions, *self.attention_keep,
        )


@dataclass(frozen=True)
class Entity:
    """A typed inclusive token span [start, end]."""

    type_index: int
    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.start > self.end:
            raise ValueError(f"invalid span [{self.start}, {self.end}]")

    def overlaps(self, other: "Entity") -> bool:
        return self.start <= other.end and other.start <= self.end


def check_non_overlapping(entities: Sequence[Entity]) -> None:
    ordered = sorted(entities, key=lambda e: (e.start, e.end, e.type_index))
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.start <= prev.end:
            raise ValueError(f"overlapping entities: {prev} and {cur}")


# ---------------------------------------------------------------------------
# vocabulary and tokenization


@dataclass(frozen=True)
class Vocabulary:
    """Word -> id map with reserved <pad>=0 and <unk>=1."""

    word_to_id: dict[str, int] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.word_to_id)

    def id_of(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def to_tsv(self) -> str:
        lines = [f"{word}\t{idx}" for word, idx in sorted(self.word_to_id.items(), key=lambda kv: kv[1])]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def from_tsv(cls, text: str) -> "Vocabulary":
        mapping: dict[str, int] = {}
        for line in text.splitlines():
            if not line:
                continue
            word, _, idx = line.rpartition("\t")
            mapping[word] = int(idx)
        return cls(mapping)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_tsv(Path(path).read_text(encoding="utf-8"))


def build_vocab(docs: Sequence[Document], min_count: int = 1) -> Vocabulary:
    """Whitespace-word vocabulary over the corpus.

    Words with count >= min_count get ids from 2 upward, ordered by count
    descending then lexicographic, so identical corpora serialize
    byte-identically.
    """
    if not docs:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for doc in docs:
        for node in doc.nodes:
            counts.update(node.text.split())
    mapping = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    for offset, word in enumerate(kept):
        mapping[word] = 2 + offset
    return Vocabulary(mapping)


def doc_words(doc: Document) -> list[tuple[int, str]]:
    """(node id, word) pairs in reading order, whitespace split."""
    out = []
    for node in doc.nodes:
        out.extend((node.id, word) for word in node.text.split())
    return out


def tokenize(doc: Document, vocab: Vocabulary, max_seq_len: int) -> TokenSequence:
    """Word-level tokenization, truncated then padded to max_seq_len.

    All tokens of a node share its node index as their span position;
    padding is marked in attention_keep and never contributes tokens.
    """
    if max_seq_len < 1:
        raise ValueError("max_seq_len must be >= 1")
    ids: list[int] = []
    node_of: list[int] = []
    for node_id, word in doc_words(doc):
        if len(ids) == max_seq_len:
            break
        ids.append(vocab.id_of(word))
        node_of.append(node_id)
    pad = max_seq_len - len(ids)
    keep = [True] * len(ids) + [False] * pad
    pad_node = node_of[-1] if node_of else 0
    ids.extend([PAD_ID] * pad)
    node_of.extend([pad_node] * pad)
    return TokenSequence(tuple(ids), tuple(node_of), tuple(node_of), tuple(keep))


def gold_entities(doc: Document, seq: TokenSequence, label_set: LabelSet) -> list[Entity]:
    """One entity per labeled node fully covered by the token sequence.

    Nodes labeled "other" contribute nothing; a node with any token lost to
    truncation is dropped rather than clipped.
    """
    full_counts = {node.id: len(node.text.split()) for node in doc.nodes}
    runs: list[tuple[int, int, int]] = []
    for pos in range(seq.length):
        if not seq.attention_keep[pos]:
            break
        nid = seq.node_of_token[pos]
        if runs and runs[-1][0] == nid:
            runs[-1] = (nid, runs[-1][1], pos)
        else:
            runs.append((nid, pos, pos))
    entities: list[Entity] = []
    for nid, start, end in runs:
        node = doc.nodes[nid]
        if node.label == OTHER_LABEL:
            continue
        if node.label not in label_set:
            raise ValueError(f"document {doc.id}: node {nid} has label {node.label!r} outside the label set")
        if end - start + 1 < full_counts[nid]:
            continue
        entities.append(Entity(label_set.index(node.label), start, end))
    return entities


# ---------------------------------------------------------------------------
# BIO conversion


def bio_tag_names(label_set: LabelSet) -> list[str]:
    """Tag order O, then B-t/I-t per type: the class axis of baseline heads."""
    tags = ["O"]
    for name in label_set:
        tags.extend((f"B-{name}", f"I-{name}"))
    return tags


def entities_to_bio(entities: Sequence[Entity], length: int, label_set: LabelSet) -> list[str]:
    check_non_overlapping(entities)
    tags = ["O"] * length
    for e in entities:
        if e.end >= length:
            raise ValueError(f"entity {e} exceeds sequence length {length}")
        name = label_set.name(e.type_index)
        tags[e.start] = f"B-{name}"
        for pos in range(e.start + 1, e.end + 1):
            tags[pos] = f"I-{name}"
    return tags


def bio_to_entities(tags: Sequence[str], label_set: LabelSet) -> list[Entity]:
    """Maximal typed spans; an orphan I- opens a span (conll-style repair)."""
    entities: list[Entity] = []
    open_type: int | None = None
    open_start = 0

    def close(pos: int) -> None:
        nonlocal open_type
        if open_type is not None:
            entities.append(Entity(open_type, open_start, pos - 1))
            open_type = None

    for pos, tag in enumerate(tags):
        if tag == "O":
            close(pos)
            continue
        if len(tag) < 3 or tag[1] != "-" or tag[0] not in "BI":
            raise ValueError(f"malformed BIO tag at {pos}: {tag!r}")
        type_index = label_set.index(tag[2:])
        if tag[0] == "B" or open_type != type_index:
            close(pos)
            open_type = type_index
            open_start = pos
    close(len(tags))
    return entities


# ---------------------------------------------------------------------------
# FUNSD-style JSON ingestion and emission


def _load_one(path: Path, label_set: LabelSet | None) -> Document:
    text = path.read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FunsdParseError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno} (offset {exc.pos})"
        ) from exc
    if not isinstance(payload, dict) or not isinstance(payload.get("form"), list):
        raise FunsdSchemaError(f"{path}: missing top-level 'form' array")
    nodes: list[TextNode] = []
    for i, raw in enumerate(payload["form"]):
        if not isinstance(raw, dict) or "text" not in raw:
            raise FunsdSchemaError(f"{path}: form[{i}] (id={raw.get('id', '?') if isinstance(raw, dict) else '?'}) has no 'text'")
        node_text = str(raw["text"])
        if not node_text.strip():
            continue  # empty fragments carry no tokens or labels
        label = str(raw.get("label", OTHER_LABEL)).lower()
        if label_set is not None and label != OTHER_LABEL and label not in label_set:
            label = OTHER_LABEL
        box = raw.get("box")
        box_tuple = tuple(int(v) for v in box) if box is not None else None
        nodes.append(TextNode(id=len(nodes), text=node_text, label=label, box=box_tuple))
    page = payload.get("page_size")
    page_tuple = tuple(int(v) for v in page) if page is not None else None
    doc_id = str(payload.get("id", path.stem))
    return Document(id=doc_id, nodes=tuple(nodes), page_size=page_tuple)


def load_funsd_json(path, label_set: LabelSet | None) -> list[Document]:
    """Load one FUNSD-style JSON file, or every *.json in a directory (sorted).

    Labels are lowercased; when a label set is given, labels outside it map
    to "other". With label_set=None all labels are kept as read.
    """
    p = Path(path)
    if p.is_dir():
        files = sorted(f for f in p.glob("*.json") if f.name != "manifest.json")
        if not files:
            raise FunsdParseError(f"{p}: no .json files found")
    else:
        files = [p]
    return [_load_one(f, label_set) for f in files]


def document_to_funsd(doc: Document) -> dict:
    form = []
    for node in doc.nodes:
        words = node.text.split()
        entry: dict = {"id": node.id, "text": node.text, "label": node.label, "linking": []}
        if node.box is not None:
            x0, y0, x1, y1 = node.box
            entry["box"] = [x0, y0, x1, y1]
            n = max(1, len(words))
            step = (x1 - x0) / n
            entry["words"] = [
                {"text": w, "box": [int(x0 + k * step), y0, int(x0 + (k + 1) * step), y1]}
                for k, w in enumerate(words)
            ]
        else:
            entry["words"] = [{"text": w} for w in words]
        form.append(entry)
    payload: dict = {"form": form, "id": doc.id}
    if doc.page_size is not None:
        payload["page_size"] = [doc.page_size[0], doc.page_size[1]]
    return payload


def save_funsd_json(doc: Document, path) -> None:
    Path(path).write_text(
        json.dumps(document_to_funsd(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def token_layout(doc: Document, seq: TokenSequence) -> tuple[np.ndarray, np.ndarray]:
    """Per-token node boxes normalized to [0, 1], plus a has-box mask.

    Falls back to the document's coordinate extent when page_size is absent;
    padding tokens get zeros and a false mask.
    """
    coords = np.zeros((seq.length, 4), dtype=np.float64)
    has_box = np.zeros(seq.length, dtype=bool)
    if doc.page_size is not None:
        page_w, page_h = doc.page_size
    else:
        page_w = max((n.box[2] for n in doc.nodes if n.box), default=0)
        page_h = max((n.box[3] for n in doc.nodes if n.box), default=0)
    page_w = max(1, page_w)
    page_h = max(1, page_h)
    for pos in range(seq.length):
        if not seq.attention_keep[pos]:
            break
        node = doc.nodes[seq.node_of_token[pos]]
        if node.box is None:
            continue
        x0, y0, x1, y1 = node.box
        coords[pos] = (x0 / page_w, y0 / page_h, x1 / page_w, y1 / page_h)
        has_box[pos] = True
    np.clip(coords, 0.0, 1.0, out=coords)
    return coords, has_box
