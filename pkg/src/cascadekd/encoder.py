"""BERT-style encoder whose forward pass exposes every hidden output and
per-head attention matrix.

Layer k transforms hidden output k into hidden output k+1, so a model with
n layers yields n+1 hidden outputs (the first being the embedding output)
and n attention records. Architecture follows the BERT-base conventions:
GELU feed-forward, post-layer-norm residual blocks, learned absolute
positions, first-token pooling for classification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidConfigError,
    LayerIndexOutOfRangeError,
    SequenceTooLongError,
    TokenOutOfRangeError,
)
from .tensor import Tensor, gather_rows, gelu, softmax_rows

INIT_STD = 0.02
LAYER_NORM_EPS = 1e-12

PRE_SOFTMAX_SCALED = "pre_softmax_scaled"
POST_SOFTMAX = "post_softmax"
CAPTURE_MODES = (PRE_SOFTMAX_SCALED, POST_SOFTMAX)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden_dim: int
    num_layers: int
    num_heads: int
    ffn_dim: int
    max_seq_len: int = 128
    dropout_rate: float = 0.1
    attention_capture: str = PRE_SOFTMAX_SCALED

    def __post_init__(self):
        if self.vocab_size <= 0 or self.hidden_dim <= 0 or self.num_heads <= 0 \
                or self.ffn_dim <= 0 or self.max_seq_len <= 0:
            raise InvalidConfigError("all model extents must be positive")
        if self.num_layers < 0:
            raise InvalidConfigError("num_layers must be >= 0")
        if self.hidden_dim % self.num_heads != 0:
            raise InvalidConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfigError("dropout_rate must lie in [0, 1)")
        if self.attention_capture not in CAPTURE_MODES:
            raise InvalidConfigError(f"unknown attention_capture {self.attention_capture!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def with_layers(self, num_layers: int) -> "ModelConfig":
        return ModelConfig(**{**self.__dict__, "num_layers": num_layers})

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class EncoderLayer:
    """Weights of one encoder layer.

    Attention projections are stored fused over heads (d x d); the forward
    pass reshapes them into per-head blocks.
    """

    PARAM_NAMES = (
        "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
        "w_ffn_in", "b_ffn_in", "w_ffn_out", "b_ffn_out",
        "ln_attn_gain", "ln_attn_bias", "ln_ffn_gain", "ln_ffn_bias",
    )

    def __init__(self, config: ModelConfig, rng: Optional[np.random.Generator] = None):
        d, f = config.hidden_dim, config.ffn_dim

        def weight(*shape):
            if rng is None:
                return Tensor(np.zeros(shape), requires_grad=True)
            return Tensor(rng.normal(0.0, INIT_STD, size=shape), requires_grad=True)

        def zeros(*shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        def ones(*shape):
            return Tensor(np.ones(shape), requires_grad=True)

        self.wq, self.bq = weight(d, d), zeros(d)
        self.wk, self.bk = weight(d, d), zeros(d)
        self.wv, self.bv = weight(d, d), zeros(d)
        self.wo, self.bo = weight(d, d), zeros(d)
        self.w_ffn_in, self.b_ffn_in = weight(d, f), zeros(f)
        self.w_ffn_out, self.b_ffn_out = weight(f, d), zeros(d)
        self.ln_attn_gain, self.ln_attn_bias = ones(d), zeros(d)
        self.ln_ffn_gain, self.ln_ffn_bias = ones(d), zeros(d)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, getattr(self, name)) for name in self.PARAM_NAMES]

    def copy(self, config: ModelConfig) -> "EncoderLayer":
        dup = EncoderLayer(config)
        for name, tensor in self.parameters():
            getattr(dup, name).data = tensor.data.copy()
        return dup


@dataclass
class ForwardTrace:
    """Everything a forward pass exposes: hidden outputs 1..n+1 of shape
    (batch, T, d), attention records 1..n of shape (batch, heads, T, T),
    and the attention mask they were computed under."""

    hidden: list[Tensor]
    attentions: list[Tensor]
    attention_mask: np.ndarray
    capture_mode: str = PRE_SOFTMAX_SCALED

    @property
    def depth(self) -> int:
        return len(self.attentions)

    def hidden_at(self, k: int) -> Tensor:
        """Hidden output k, counting from 1 at the embedding output."""
        if not 1 <= k <= len(self.hidden):
            raise LayerIndexOutOfRangeError(
                f"hidden output {k} outside 1..{len(self.hidden)}")
        return self.hidden[k - 1]

    def attention_at(self, j: int) -> Tensor:
        """Attention record of layer j, counting from 1."""
        if not 1 <= j <= len(self.attentions):
            raise LayerIndexOutOfRangeError(
                f"attention layer {j} outside 1..{len(self.attentions)}")
        return self.attentions[j - 1]


class EncoderModel:
    """Embeddings plus a stack of encoder layers."""

    def __init__(self, config: ModelConfig, seed: Optional[int] = None,
                 embeddings_frozen: bool = True):
        self.config = config
        self.embeddings_frozen = embeddings_frozen
        rng = np.random.default_rng(seed) if seed is not None else None
        d = config.hidden_dim

        def emb(*shape):
            data = np.zeros(shape) if rng is None else rng.normal(0.0, INIT_STD, size=shape)
            return Tensor(data, requires_grad=not embeddings_frozen)

        self.token_embeddings = emb(config.vocab_size, d)
        self.position_embeddings = emb(config.max_seq_len, d)
        self.emb_ln_gain = Tensor(np.ones(d), requires_grad=not embeddings_frozen)
        self.emb_ln_bias = Tensor(np.zeros(d), requires_grad=not embeddings_frozen)
        self.layers = [EncoderLayer(config, rng) for _ in range(config.num_layers)]

    # -- parameter plumbing ------------------------------------------------

    EMBEDDING_PARAM_NAMES = ("token_embeddings", "position_embeddings",
                             "emb_ln_gain", "emb_ln_bias")

    def embedding_parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, getattr(self, name)) for name in self.EMBEDDING_PARAM_NAMES]

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = self.embedding_parameters()
        for i, layer in enumerate(self.layers):
            params.extend((f"layers.{i}.{name}", t) for name, t in layer.parameters())
        return params

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, t) for name, t in self.parameters() if t.requires_grad]

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.zero_grad()

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    # -- forward ------------------------------------------------------------

    def forward(self, token_ids, attention_mask, training_mode: bool = False,
                dropout_seed: int = 0) -> ForwardTrace:
        """Run the encoder, capturing all hidden outputs and attentions.

        With `training_mode` set, dropout is applied at the configured rate,
        reproducibly for a given `dropout_seed`; otherwise the pass is
        deterministic.
        """
        token_ids = np.asarray(token_ids, dtype=np.int64)
        mask = np.asarray(attention_mask, dtype=bool)
        if token_ids.ndim != 2:
            raise DimensionMismatchError(f"token_ids must be (batch, T), got {token_ids.shape}")
        if mask.shape != token_ids.shape:
            raise DimensionMismatchError(
                f"attention_mask shape {mask.shape} != token_ids shape {token_ids.shape}")
        seq_len = token_ids.shape[1]
        if seq_len > self.config.max_seq_len:
            raise SequenceTooLongError(
                f"sequence length {seq_len} exceeds max {self.config.max_seq_len}")
        if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= self.config.vocab_size):
            raise TokenOutOfRangeError("token id outside [0, vocab_size)")

        rng = np.random.default_rng(dropout_seed)
        dropping = training_mode and self.config.dropout_rate > 0.0

        x = gather_rows(self.token_embeddings, token_ids) \
            + self.position_embeddings[:seq_len]
        x = _layer_norm(x, self.emb_ln_gain, self.emb_ln_bias)
        x = _dropout(x, self.config.dropout_rate, rng, dropping)

        hidden = [x]
        attentions = []
        for layer in self.layers:
            x, attn = self._layer_forward(layer, x, mask, rng, dropping)
            hidden.append(x)
            attentions.append(attn)
        return ForwardTrace(hidden=hidden, attentions=attentions,
                            attention_mask=mask, capture_mode=self.config.attention_capture)

    def _layer_forward(self, layer: EncoderLayer, x: Tensor, mask: np.ndarray,
                       rng, dropping: bool) -> tuple[Tensor, Tensor]:
        cfg = self.config
        batch, seq_len, d = x.shape
        heads, head_dim = cfg.num_heads, cfg.head_dim

        def split_heads(t):
            # (B, T, d) -> (B, H, T, d/H)
            return t.reshape(batch, seq_len, heads, head_dim).permute(0, 2, 1, 3)

        q = split_heads(x @ layer.wq + layer.bq)
        k = split_heads(x @ layer.wk + layer.bk)
        v = split_heads(x @ layer.wv + layer.bv)

        scores = (q @ k.permute(0, 1, 3, 2)) * (1.0 / np.sqrt(head_dim))
        key_mask = mask[:, None, None, :]
        probs = softmax_rows(scores, mask=key_mask)
        captured = scores if cfg.attention_capture == PRE_SOFTMAX_SCALED else probs

        context = (probs @ v).permute(0, 2, 1, 3).reshape(batch, seq_len, d)
        attn_out = context @ layer.wo + layer.bo
        attn_out = _dropout(attn_out, cfg.dropout_rate, rng, dropping)
        x = _layer_norm(x + attn_out, layer.ln_attn_gain, layer.ln_attn_bias)

        ffn = gelu(x @ layer.w_ffn_in + layer.b_ffn_in) @ layer.w_ffn_out + layer.b_ffn_out
        ffn = _dropout(ffn, cfg.dropout_rate, rng, dropping)
        x = _layer_norm(x + ffn, layer.ln_ffn_gain, layer.ln_ffn_bias)
        return x, captured


def _layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * ((var + eps) ** -0.5) * gain + bias


def _dropout(x: Tensor, rate: float, rng, dropping: bool) -> Tensor:
    if not dropping:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


def init_random(config: ModelConfig, seed: int, embeddings_frozen: bool = True) -> EncoderModel:
    """Fresh model: weights ~ Normal(0, 0.02), layer-norm gains 1, biases 0.

    Deterministic for a fixed seed.
    """
    return EncoderModel(config, seed=seed, embeddings_frozen=embeddings_frozen)


class ClassifierHead:
    """First-token pooler plus a linear output layer (3 classes by default)."""

    def __init__(self, hidden_dim: int, num_classes: int = 3,
                 seed: Optional[int] = None):
        if num_classes < 2:
            raise InvalidConfigError("need at least 2 output classes")
        self.hidden_dim = hidden_dim
        self.num_classes = num_classes
        rng = np.random.default_rng(seed) if seed is not None else None

        def weight(*shape):
            data = np.zeros(shape) if rng is None else rng.normal(0.0, INIT_STD, size=shape)
            return Tensor(data, requires_grad=True)

        self.pooler_w = weight(hidden_dim, hidden_dim)
        self.pooler_b = Tensor(np.zeros(hidden_dim), requires_grad=True)
        self.out_w = weight(hidden_dim, num_classes)
        self.out_b = Tensor(np.zeros(num_classes), requires_grad=True)

    PARAM_NAMES = ("pooler_w", "pooler_b", "out_w", "out_b")

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, getattr(self, name)) for name in self.PARAM_NAMES]

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.zero_grad()


def classify(model: EncoderModel, head: ClassifierHead, token_ids, attention_mask,
             training_mode: bool = False, dropout_seed: int = 0) -> Tensor:
    """Logits (batch, num_classes) from first-token pooling of the top hidden output."""
    if head.hidden_dim != model.config.hidden_dim:
        raise DimensionMismatchError(
            f"head dim {head.hidden_dim} != model hidden dim {model.config.hidden_dim}")
    trace = model.forward(token_ids, attention_mask,
                          training_mode=training_mode, dropout_seed=dropout_seed)
    cls = trace.hidden[-1][:, 0, :]
    pooled = (cls @ head.pooler_w + head.pooler_b).tanh()
    return pooled @ head.out_w + head.out_b
