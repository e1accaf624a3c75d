"""Document model tests: ingestion, vocabulary, tokenization, gold span
extraction, and the BIO round trip."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hga.docmodel import (
    Document,
    Entity,
    FunsdParseError,
    FunsdSchemaError,
    LabelSet,
    TextNode,
    Vocabulary,
    bio_to_entities,
    build_vocab,
    document_to_funsd,
    entities_to_bio,
    gold_entities,
    load_funsd_json,
    save_funsd_json,
    token_layout,
    tokenize,
)

LABELS = LabelSet(["header", "question", "answer"])


def make_doc(texts_labels, doc_id="doc", boxes=False):
    nodes = []
    for i, (text, label) in enumerate(texts_labels):
        box = (10 * i, 5, 10 * i + 8, 12) if boxes else None
        nodes.append(TextNode(id=i, text=text, label=label, box=box))
    return Document(id=doc_id, nodes=tuple(nodes), page_size=(100, 20) if boxes else None)


# ---------------------------------------------------------------------------
# types


def test_label_set_rejects_other_and_duplicates():
    with pytest.raises(ValueError):
        LabelSet(["question", "other"])
    with pytest.raises(ValueError):
        LabelSet(["a", "a"])
    with pytest.raises(ValueError):
        LabelSet([])
    assert LABELS.index("answer") == 2
    with pytest.raises(ValueError):
        LABELS.index("missing")


def test_text_node_invariants():
    with pytest.raises(ValueError):
        TextNode(id=0, text="")
    with pytest.raises(ValueError):
        TextNode(id=0, text="x", box=(5, 0, 1, 3))


def test_document_requires_contiguous_ids():
    with pytest.raises(ValueError):
        Document(id="d", nodes=(TextNode(id=1, text="x"),))


def test_entity_span_order():
    with pytest.raises(ValueError):
        Entity(0, 3, 1)


# ---------------------------------------------------------------------------
# vocabulary


def test_build_vocab_min_count():
    doc = make_doc([("to to", "other"), ("from", "other")])
    vocab = build_vocab([doc], min_count=2)
    assert "to" in vocab.word_to_id and "from" not in vocab.word_to_id
    both = build_vocab([doc], min_count=1)
    assert {"to", "from"} <= set(both.word_to_id)


def test_build_vocab_rejects_empty_corpus():
    with pytest.raises(ValueError):
        build_vocab([])


def test_vocab_determinism_and_roundtrip(tmp_path):
    docs = [make_doc([("b a a", "other"), ("c b", "other")])]
    a = build_vocab(docs)
    b = build_vocab([make_doc([("b a a", "other"), ("c b", "other")])])
    assert a.to_tsv() == b.to_tsv()
    # count desc then lexicographic: a(2), b(2) tie -> a first, then c
    assert a.word_to_id == {"<pad>": 0, "<unk>": 1, "a": 2, "b": 3, "c": 4}
    path = tmp_path / "vocab.tsv"
    a.save(path)
    assert Vocabulary.load(path) == a


# ---------------------------------------------------------------------------
# tokenization


def test_tokenize_node_alignment():
    doc = make_doc([("TO:", "question"), ("John Smith", "answer")])
    vocab = build_vocab([doc])
    seq = tokenize(doc, vocab, max_seq_len=6)
    assert seq.node_of_token[:3] == (0, 1, 1)
    assert seq.span_positions[:3] == (0, 1, 1)
    assert seq.attention_keep == (True, True, True, False, False, False)
    assert seq.token_ids[3:] == (0, 0, 0)


def test_tokenize_unknown_words_map_to_unk():
    doc = make_doc([("hello world", "other")])
    vocab = build_vocab([make_doc([("hello", "other")])])
    seq = tokenize(doc, vocab, max_seq_len=4)
    assert seq.token_ids[0] != 1 and seq.token_ids[1] == 1


def test_tokenize_truncation_drops_cut_entities():
    doc = make_doc([("a b", "question"), ("c d e", "answer"), ("f", "header")])
    vocab = build_vocab([doc])
    seq = tokenize(doc, vocab, max_seq_len=4)
    gold = gold_entities(doc, seq, LABELS)
    # oracle: a labeled node survives iff all its tokens fit under the cut
    surviving, used = [], 0
    for node in doc.nodes:
        count = len(node.text.split())
        if used + count <= 4 and node.label != "other":
            surviving.append(node.id)
        used += count
    kept_nodes = sorted({seq.node_of_token[e.start] for e in gold})
    assert kept_nodes == surviving == [0]  # node 1 loses its third token, node 2 is fully out
    assert gold == [Entity(LABELS.index("question"), 0, 1)]


def test_tokenize_empty_document():
    doc = Document(id="empty", nodes=())
    vocab = Vocabulary({"<pad>": 0, "<unk>": 1})
    seq = tokenize(doc, vocab, max_seq_len=3)
    assert seq.num_real == 0
    assert all(not k for k in seq.attention_keep)
    assert gold_entities(doc, seq, LABELS) == []


def test_tokenize_deterministic_bytes():
    doc = make_doc([("a b c", "question"), ("d", "other")])
    vocab = build_vocab([doc])
    assert tokenize(doc, vocab, 8).to_bytes() == tokenize(doc, vocab, 8).to_bytes()


# ---------------------------------------------------------------------------
# gold entities


def test_gold_entities_basic_and_other():
    doc = make_doc([("x", "other"), ("John Smith", "answer"), ("q", "question")])
    vocab = build_vocab([doc])
    seq = tokenize(doc, vocab, 8)
    gold = gold_entities(doc, seq, LABELS)
    assert gold == [Entity(2, 1, 2), Entity(1, 3, 3)]


def test_gold_entities_adjacent_same_type_not_merged():
    doc = make_doc([("q one", "question"), ("q two", "question")])
    vocab = build_vocab([doc])
    seq = tokenize(doc, vocab, 8)
    gold = gold_entities(doc, seq, LABELS)
    # oracle: group tokens by node id, keep labeled groups
    groups = {}
    for pos in range(seq.num_real):
        groups.setdefault(seq.node_of_token[pos], []).append(pos)
    expect = [
        Entity(LABELS.index(doc.nodes[nid].label), min(ps), max(ps))
        for nid, ps in sorted(groups.items())
        if doc.nodes[nid].label != "other"
    ]
    assert gold == expect
    assert len(gold) == 2


def test_gold_entities_never_cross_node_boundary():
    doc = make_doc([("a b", "header"), ("c d", "header")])
    vocab = build_vocab([doc])
    seq = tokenize(doc, vocab, 8)
    for e in gold_entities(doc, seq, LABELS):
        nodes = {seq.node_of_token[p] for p in range(e.start, e.end + 1)}
        assert len(nodes) == 1


def test_gold_entities_unknown_label_errors():
    doc = make_doc([("x", "mystery")])
    vocab = build_vocab([doc])
    seq = tokenize(doc, vocab, 4)
    with pytest.raises(ValueError):
        gold_entities(doc, seq, LABELS)


# ---------------------------------------------------------------------------
# BIO conversion


def test_entities_to_bio_example():
    tags = entities_to_bio([Entity(1, 2, 4)], 6, LABELS)
    assert tags == ["O", "O", "B-question", "I-question", "I-question", "O"]
    assert entities_to_bio([], 3, LABELS) == ["O", "O", "O"]


def test_entities_to_bio_rejects_overlap():
    with pytest.raises(ValueError):
        entities_to_bio([Entity(0, 0, 2), Entity(1, 2, 3)], 5, LABELS)


def test_bio_to_entities_repair_rules():
    assert bio_to_entities(["B-header", "I-header", "O"], LABELS) == [Entity(0, 0, 1)]
    # orphan I- opens a span
    assert bio_to_entities(["I-header", "I-header"], LABELS) == [Entity(0, 0, 1)]
    # B- starts a fresh span
    assert bio_to_entities(["B-header", "B-header"], LABELS) == [Entity(0, 0, 0), Entity(0, 1, 1)]
    # type switch inside I- run splits
    assert bio_to_entities(["I-header", "I-answer"], LABELS) == [Entity(0, 0, 0), Entity(2, 1, 1)]


def test_bio_to_entities_rejects_unknown():
    with pytest.raises(ValueError):
        bio_to_entities(["B-mystery"], LABELS)
    with pytest.raises(ValueError):
        bio_to_entities(["X-header"], LABELS)


def _seqeval_reference(tags):
    """Independent conll-style span extractor for repair comparison."""
    spans, start, kind = [], None, None
    for i, tag in enumerate(tags + ["O"]):
        head, _, name = tag.partition("-")
        if kind is not None and (head in ("O", "B") or name != kind):
            spans.append((kind, start, i - 1))
            start, kind = None, None
        if head == "B" or (head == "I" and kind is None):
            start, kind = i, name
    return spans


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(
    ["O", "B-header", "I-header", "B-question", "I-question", "B-answer", "I-answer"]),
    min_size=0, max_size=24))
def test_bio_repair_matches_seqeval_reference(tags):
    got = [(LABELS.name(e.type_index), e.start, e.end) for e in bio_to_entities(tags, LABELS)]
    assert got == _seqeval_reference(tags)


@st.composite
def random_entities(draw):
    length = draw(st.integers(min_value=1, max_value=64))
    n_types = draw(st.integers(min_value=1, max_value=5))
    cuts = sorted(draw(st.sets(st.integers(min_value=0, max_value=length - 1), max_size=10)))
    entities, prev_end = [], -1
    for start in cuts:
        if start <= prev_end:
            continue
        end = draw(st.integers(min_value=start, max_value=min(length - 1, start + 5)))
        entities.append(Entity(draw(st.integers(0, n_types - 1)), start, end))
        prev_end = end
    return length, n_types, entities


@settings(max_examples=300, deadline=None)
@given(random_entities())
def test_bio_round_trip_property(case):
    length, n_types, entities = case
    label_set = LabelSet([f"t{i}" for i in range(n_types)])
    tags = entities_to_bio(entities, length, label_set)
    back = bio_to_entities(tags, label_set)
    assert back == sorted(entities, key=lambda e: e.start)
    assert entities_to_bio(back, length, label_set) == tags


# ---------------------------------------------------------------------------
# FUNSD ingestion


def test_load_funsd_round_trip(tmp_path):
    doc = make_doc([("TO: mark", "question"), ("ok then", "answer")], doc_id="rt", boxes=True)
    path = tmp_path / "rt.json"
    save_funsd_json(doc, path)
    loaded = load_funsd_json(path, LABELS)
    assert loaded == [doc]


def test_load_funsd_normalizes_labels(tmp_path):
    payload = {"form": [
        {"id": 0, "text": "hi", "label": "OTHER"},
        {"id": 1, "text": "q", "label": "Question"},
        {"id": 2, "text": "zz", "label": "weird"},
    ]}
    path = tmp_path / "x.json"
    path.write_text(json.dumps(payload))
    (doc,) = load_funsd_json(path, LABELS)
    assert [n.label for n in doc.nodes] == ["other", "question", "other"]
    seq = tokenize(doc, build_vocab([doc]), 8)
    assert len(gold_entities(doc, seq, LABELS)) == 1


def test_load_funsd_empty_form(tmp_path):
    path = tmp_path / "e.json"
    path.write_text(json.dumps({"form": []}))
    (doc,) = load_funsd_json(path, LABELS)
    assert doc.nodes == ()


def test_load_funsd_parse_error_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"form": [}')
    with pytest.raises(FunsdParseError) as err:
        load_funsd_json(path, LABELS)
    assert "bad.json" in str(err.value) and "offset" in str(err.value)


def test_load_funsd_missing_text_names_node(tmp_path):
    path = tmp_path / "schema.json"
    path.write_text(json.dumps({"form": [{"id": 7, "label": "question"}]}))
    with pytest.raises(FunsdSchemaError) as err:
        load_funsd_json(path, LABELS)
    assert "id=7" in str(err.value)


def test_load_funsd_directory_sorted(tmp_path):
    for name in ("b.json", "a.json"):
        save_funsd_json(make_doc([("x", "other")], doc_id=name[0]), tmp_path / name)
    docs = load_funsd_json(tmp_path, LABELS)
    assert [d.id for d in docs] == ["a", "b"]


def test_ingestion_determinism(tmp_path):
    doc = make_doc([("a b", "question"), ("c", "other")], boxes=True)
    path = tmp_path / "d.json"
    save_funsd_json(doc, path)
    first = load_funsd_json(path, LABELS)[0]
    second = load_funsd_json(path, LABELS)[0]
    vocab = build_vocab([first])
    assert tokenize(first, vocab, 8).to_bytes() == tokenize(second, vocab, 8).to_bytes()


def test_token_layout_normalization():
    doc = make_doc([("a b", "question"), ("c", "other")], boxes=True)
    seq = tokenize(doc, build_vocab([doc]), 5)
    coords, has_box = token_layout(doc, seq)
    assert coords.shape == (5, 4) and has_box.tolist() == [True, True, True, False, False]
    assert coords.min() >= 0.0 and coords.max() <= 1.0
    np.testing.assert_array_equal(coords[0], coords[1])  # same node, same box


def test_document_to_funsd_schema_fields():
    doc = make_doc([("one two", "header")], boxes=True)
    payload = document_to_funsd(doc)
    node = payload["form"][0]
    assert set(node) == {"id", "text", "label", "linking", "box", "words"}
    assert [w["text"] for w in node["words"]] == ["one", "two"]
    assert all(len(w["box"]) == 4 for w in node["words"])
