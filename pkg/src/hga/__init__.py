"""Span-scoring semantic entity recognition for form-like documents.

A per-type attention head scores every candidate token span of a document,
with rotary position encoding driven by node-level span positions and a
balanced positive/negative log-sum-exp loss. The package bundles a small
trainable encoder, FUNSD-style ingestion, a synthetic data generator,
baseline BIO heads, and a reproducible training CLI.
"""

__version__ = "0.1.0"

from .autodiff import (  # noqa: F401
    FiniteDiffReport,
    NonFiniteError,
    ParamStore,
    Tensor,
    finite_diff_check,
    forward_backward,
)
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: F401
from .decode import DecodeConfig, EvalReport, decode, evaluate, evaluate_many  # noqa: F401
from .docmodel import (  # noqa: F401
    Document,
    Entity,
    LabelSet,
    TextNode,
    TokenSequence,
    Vocabulary,
    bio_to_entities,
    build_vocab,
    entities_to_bio,
    gold_entities,
    load_funsd_json,
    tokenize,
)
from .encoder import EncoderConfig, encode, init_encoder_params  # noqa: F401
from .head import (  # noqa: F401
    HeadConfig,
    HeadParams,
    ScoreTensor,
    init_head_params,
    rotary_apply,
    score,
    span_positions,
)
from .loss import BalanceConfig, HyperedgeLabels, balanced_loss, build_labels  # noqa: F401
from .optim import adam_step  # noqa: F401
from .synth import SynthConfig, gen_dataset  # noqa: F401
from .trainer import TrainConfig, TrainResult, compare_heads, sweep_balance, train  # noqa: F401
