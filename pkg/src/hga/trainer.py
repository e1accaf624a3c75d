"""End-to-end training: encoder plus one of the three heads, Adam, seeded
shuffling, periodic dev evaluation, best-checkpoint tracking, and the
sweep/compare experiment drivers."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import baselines
from .autodiff import NonFiniteError, ParamStore, Tensor
from .decode import DecodeConfig, EvalReport, decode, evaluate_many
from .docmodel import (
    Document,
    Entity,
    LabelSet,
    OTHER_LABEL,
    TokenSequence,
    Vocabulary,
    build_vocab,
    gold_entities,
    token_layout,
    tokenize,
)
from .encoder import EncoderConfig, encode, init_encoder_params
from .head import (
    HeadConfig,
    ScoreTensor,
    head_params_from_store,
    init_head_params,
    score,
    span_positions,
    token_positions,
)
from .loss import HyperedgeLabels, balanced_loss, build_labels, default_balance
from .optim import adam_step
from .util import derive_rng

__all__ = [
    "HEAD_KINDS",
    "POSITION_MODES",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "Model",
    "build_model",
    "derive_label_set",
    "train",
    "sweep_balance",
    "sweep_positions",
    "compare_heads",
    "history_csv",
    "format_table",
    "gradcheck_pipeline",
]

HEAD_KINDS = ("hga", "linear", "mlp")
POSITION_MODES = ("none", "token", "span")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    head_kind: str = "hga"
    position_mode: str = "span"
    balance_b: float | None = None  # None: 0.4 when >= 10 types, else 0.0
    lr: float = 1e-3
    batch_size: int = 4
    grad_accum: int = 1
    max_steps: int = 2000
    warmup_steps: int = 0
    seed: int = 0
    eval_every: int = 200
    max_seq_len: int = 512
    min_count: int = 1
    hidden_size: int = 64
    encoder_layers: int = 2
    attn_heads: int = 4
    ffn_size: int | None = None
    use_layout: bool = True
    layout_buckets: int = 32
    head_hidden: int = 64
    rope_base: float = 10000.0
    threshold: float = 0.0
    mlp_dropout: float = 0.1

    def __post_init__(self):
        if self.head_kind not in HEAD_KINDS:
            raise ValueError(f"head_kind must be one of {HEAD_KINDS}, got {self.head_kind!r}")
        if self.position_mode not in POSITION_MODES:
            raise ValueError(f"position_mode must be one of {POSITION_MODES}, got {self.position_mode!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.balance_b is not None and not 0.0 <= self.balance_b < 1.0:
            raise ValueError("balance_b must be in [0, 1)")
        if self.batch_size < 1 or self.grad_accum < 1:
            raise ValueError("batch_size and grad_accum must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class _Item:
    doc: Document
    seq: TokenSequence
    layout: tuple[np.ndarray, np.ndarray]
    gold: list[Entity]
    labels: HyperedgeLabels | None
    bio: np.ndarray | None
    keep: np.ndarray


@dataclass
class Model:
    """Parameter store plus the configs needed to rebuild the forward pass."""

    cfg: TrainConfig
    enc_cfg: EncoderConfig
    head_cfg: HeadConfig | None
    store: ParamStore
    label_set: LabelSet
    vocab: Vocabulary
    balance: float = 0.0

    def positions(self, seq: TokenSequence) -> np.ndarray | None:
        if self.cfg.position_mode == "none":
            return None
        if self.cfg.position_mode == "token":
            return token_positions(seq.length)
        return span_positions(seq)

    def features(self, item: _Item) -> Tensor:
        layout = item.layout if self.cfg.use_layout else None
        return encode(item.seq, layout, self.enc_cfg, self.store)

    def scores(self, item: _Item) -> Tensor:
        assert self.head_cfg is not None
        params = head_params_from_store(self.store, self.head_cfg.num_types)
        return score(self.features(item), self.positions(item.seq), params, self.head_cfg,
                     item.seq.attention_keep)

    def logits(self, item: _Item, drop_rng: np.random.Generator | None = None) -> Tensor:
        h = self.features(item)
        if self.cfg.head_kind == "linear":
            return baselines.linear_logits(h, self.store)
        mask = None
        if drop_rng is not None:
            mask = baselines.dropout_mask((item.seq.length, self.cfg.hidden_size),
                                          self.cfg.mlp_dropout, drop_rng)
        return baselines.mlp_logits(h, self.store, dropout_mask=mask)

    def doc_loss(self, item: _Item, drop_rng: np.random.Generator | None = None) -> Tensor:
        if self.cfg.head_kind == "hga":
            assert item.labels is not None
            return balanced_loss(self.scores(item), item.labels, self.balance)
        assert item.bio is not None
        return baselines.token_cross_entropy(self.logits(item, drop_rng), item.bio, item.keep)

    def predict(self, item: _Item) -> list[Entity]:
        with ad.no_grad():
            if self.cfg.head_kind == "hga":
                return decode(ScoreTensor.from_tensor(self.scores(item)),
                              DecodeConfig(threshold=self.cfg.threshold))
            logits = self.logits(item)
        return baselines.decode_bio_logits(logits.data, item.keep, self.label_set)

    def evaluate(self, items: Sequence[_Item]) -> EvalReport:
        pairs = [(self.predict(it), it.gold, it.seq.length) for it in items]
        return evaluate_many(pairs, self.label_set)


def derive_label_set(docs: Sequence[Document]) -> LabelSet:
    """Sorted entity-type names present in the corpus (excluding "other")."""
    names = sorted({node.label for doc in docs for node in doc.nodes if node.label != OTHER_LABEL})
    if not names:
        raise ValueError("corpus contains no labeled nodes")
    return LabelSet(names)


def build_model(cfg: TrainConfig, vocab: Vocabulary, label_set: LabelSet) -> Model:
    store = ParamStore()
    rng = derive_rng(cfg.seed, "init")
    enc_cfg = EncoderConfig(
        vocab_size=vocab.size,
        hidden_size=cfg.hidden_size,
        layers=cfg.encoder_layers,
        attn_heads=cfg.attn_heads,
        ffn_size=cfg.ffn_size,
        max_seq_len=cfg.max_seq_len,
        use_layout=cfg.use_layout,
        layout_buckets=cfg.layout_buckets,
    )
    init_encoder_params(enc_cfg, store, rng)
    head_cfg = None
    if cfg.head_kind == "hga":
        head_cfg = HeadConfig(num_types=label_set.num_types, head_hidden=cfg.head_hidden,
                              rope_base=cfg.rope_base)
        init_head_params(head_cfg, cfg.hidden_size, store, rng)
    elif cfg.head_kind == "linear":
        baselines.init_linear_head(store, cfg.hidden_size, label_set.num_types, rng)
    else:
        baselines.init_mlp_head(store, cfg.hidden_size, label_set.num_types, rng)
    balance = cfg.balance_b if cfg.balance_b is not None else default_balance(label_set.num_types)
    return Model(cfg, enc_cfg, head_cfg, store, label_set, vocab, balance)


def _prepare(doc: Document, model: Model) -> _Item:
    cfg = model.cfg
    seq = tokenize(doc, model.vocab, cfg.max_seq_len)
    gold = gold_entities(doc, seq, model.label_set)
    keep = np.asarray(seq.attention_keep, dtype=bool)
    labels = bio = None
    if cfg.head_kind == "hga":
        labels = build_labels(gold, seq.length, model.label_set.num_types, keep)
    else:
        bio = baselines.bio_targets(gold, seq.length, model.label_set)
    return _Item(doc, seq, token_layout(doc, seq), gold, labels, bio, keep)


@dataclass
class TrainResult:
    config: TrainConfig
    label_set: LabelSet
    vocab: Vocabulary
    history: list[tuple[int, str, str, float]]
    best_step: int
    best_f1: float
    best_report: EvalReport
    best_params: dict[str, np.ndarray]
    final_params: dict[str, np.ndarray]

    def rebuild(self, use_best: bool = True) -> Model:
        model = build_model(self.config, self.vocab, self.label_set)
        model.store.load(self.best_params if use_best else self.final_params)
        return model


def history_csv(history: Sequence[tuple[int, str, str, float]]) -> str:
    lines = ["step,split,metric,value"]
    lines.extend(f"{step},{split},{metric},{value!r}" for step, split, metric, value in history)
    return "\n".join(lines) + "\n"


def format_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    lines = ["\t".join(headers)]
    for row in rows:
        lines.append("\t".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return derive_rng(seed, "shuffle", epoch).permutation(n)


def train(cfg: TrainConfig, train_docs: Sequence[Document], dev_docs: Sequence[Document]) -> TrainResult:
    """Run the optimizer for cfg.max_steps, evaluating on dev every
    eval_every steps; returns the best-F1 snapshot and the full history."""
    if not train_docs:
        raise ValueError("training set is empty")
    label_set = derive_label_set(list(train_docs) + list(dev_docs))
    vocab = build_vocab(train_docs, cfg.min_count)
    model = build_model(cfg, vocab, label_set)
    train_items = [_prepare(d, model) for d in train_docs]
    dev_items = [_prepare(d, model) for d in dev_docs]

    history: list[tuple[int, str, str, float]] = []

    def run_eval(step: int) -> EvalReport:
        report = model.evaluate(dev_items)
        history.append((step, "dev", "f1", report.f1))
        return report

    report = run_eval(0)
    best_step, best_f1, best_report = 0, report.f1, report
    best_params = model.store.export()

    order = _epoch_order(len(train_items), cfg.seed, 0)
    cursor, epoch = 0, 0
    for step in range(1, cfg.max_steps + 1):
        model.store.zero_grad()
        step_loss = 0.0
        drop_rng = derive_rng(cfg.seed, "dropout", step) if cfg.head_kind == "mlp" else None
        for _ in range(cfg.grad_accum):
            batch = []
            for _ in range(cfg.batch_size):
                if cursor == len(order):
                    epoch += 1
                    order = _epoch_order(len(train_items), cfg.seed, epoch)
                    cursor = 0
                batch.append(train_items[int(order[cursor])])
                cursor += 1
            try:
                losses = [model.doc_loss(it, drop_rng) for it in batch]
                micro = ad.scale(_sum(losses), 1.0 / (len(batch) * cfg.grad_accum))
                micro.backward()
            except NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite loss at step {step}: {exc}") from exc
            step_loss += float(micro.data)
        if not np.isfinite(step_loss):
            raise TrainingDiverged(f"loss diverged at step {step}")
        history.append((step, "train", "loss", step_loss))
        lr = cfg.lr
        if cfg.warmup_steps > 0:
            lr *= min(1.0, step / cfg.warmup_steps)
        adam_step(model.store, lr, step=step)
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            report = run_eval(step)
            if report.f1 > best_f1:
                best_step, best_f1, best_report = step, report.f1, report
                best_params = model.store.export()
    return TrainResult(cfg, label_set, vocab, history, best_step, best_f1, best_report,
                       best_params, model.store.export())


def _sum(tensors: Sequence[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = total + t
    return total


def sweep_balance(cfg: TrainConfig, values: Sequence[float], train_docs, dev_docs) -> list[tuple[float, TrainResult]]:
    """One full training per balance factor, same seed and data."""
    for b in values:
        if not 0.0 <= b < 1.0:
            raise ValueError(f"balance value {b} outside [0, 1)")
    return [(float(b), train(replace(cfg, balance_b=float(b), head_kind="hga"), train_docs, dev_docs))
            for b in values]


def sweep_positions(cfg: TrainConfig, modes: Sequence[str], train_docs, dev_docs) -> list[tuple[str, TrainResult]]:
    """One full training per position mode, same seed and data."""
    for mode in modes:
        if mode not in POSITION_MODES:
            raise ValueError(f"unknown position mode: {mode!r}")
    return [(mode, train(replace(cfg, position_mode=mode, head_kind="hga"), train_docs, dev_docs))
            for mode in modes]


def compare_heads(cfg: TrainConfig, train_docs, dev_docs) -> list[tuple[str, TrainResult]]:
    """Train linear, MLP, and span heads under identical budgets and seed."""
    return [(kind, train(replace(cfg, head_kind=kind), train_docs, dev_docs))
            for kind in HEAD_KINDS]


# ---------------------------------------------------------------------------
# gradient-check pipeline


def gradcheck_pipeline(L: int = 12, D: int = 3, H: int = 16, d: int = 8, layers: int = 1,
                       seed: int = 0, vocab_size: int = 16):
    """A full random encoder+head+loss instance for finite-difference checks.

    Returns (graph, params, inputs) for forward_backward / finite_diff_check.
    """
    rng = derive_rng(seed, "gradcheck")
    store = ParamStore()
    enc_cfg = EncoderConfig(vocab_size=vocab_size, hidden_size=H, layers=layers, attn_heads=max(1, H // 8),
                            ffn_size=2 * H, max_seq_len=L, use_layout=False)
    init_encoder_params(enc_cfg, store, rng)
    head_cfg = HeadConfig(num_types=D, head_hidden=d)
    init_head_params(head_cfg, H, store, rng)
    # redraw every parameter at a moderate scale: near-zero training init
    # leaves gradients below the central-difference noise floor, and large
    # weights saturate the loss; 0.25 keeps the instance well conditioned
    for _, t in store.items():
        t.data = rng.normal(0.0, 0.25, size=t.data.shape)

    ids = rng.integers(2, vocab_size, size=L)
    node_of = np.sort(rng.integers(0, max(2, L // 3), size=L))
    node_of = np.unique(node_of, return_inverse=True)[1]  # contiguous node ids
    keep = [True] * L
    seq = TokenSequence(tuple(int(i) for i in ids), tuple(int(n) for n in node_of),
                        tuple(int(n) for n in node_of), tuple(keep))
    third = max(1, L // 3)
    gold = [Entity(0, 0, third - 1), Entity(min(1, D - 1), third, 2 * third - 1)]
    labels = build_labels(gold, L, D, keep)

    def graph(params: ParamStore, _inputs) -> Tensor:
        h = encode(seq, None, enc_cfg, params)
        s = score(h, span_positions(seq), head_params_from_store(params, D), head_cfg,
                  seq.attention_keep)
        return balanced_loss(s, labels, 0.3)

    return graph, store, None
