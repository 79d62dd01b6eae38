"""Encoder-decoder transformer with a path-addressable parameter tree.

Layers are post-norm (layer norm after the residual add). The parameter
manifest (path -> shape) is the single source of truth shared by model
construction, checkpointing and the counting/accounting paths, so parameter
arithmetic can be done without allocating a full-size model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .paramtree import ParamTree, count_entries
from .rand import rng_for
from .vocab import PAD_ID

NEG_INF = -1e9
NORM_EPS = 1e-5


@dataclass
class ModelConfig:
    d_model: int = 64
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 4
    vocab_size: int = 256
    d_ffn: int | None = None          # defaults to 4 * d_model
    max_positions: int = 512
    tie_embeddings: bool = True
    dropout: float = 0.1
    attn_dropout: float = 0.0

    def __post_init__(self):
        if self.d_ffn is None:
            self.d_ffn = 4 * self.d_model
        self.validate()

    def validate(self):
        if self.d_model <= 0 or self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be a positive multiple of n_heads ({self.n_heads})")
        if min(self.n_enc_layers, self.n_dec_layers, self.vocab_size, self.max_positions) < 1:
            raise ConfigError("layer counts, vocab_size and max_positions must be >= 1")
        if not 0.0 <= self.dropout < 1.0 or not 0.0 <= self.attn_dropout < 1.0:
            raise ConfigError("dropout rates must be in [0, 1)")


def profile_config(name: str) -> ModelConfig:
    """Shipped model profiles: desk-scale toy plus the two paper-scale shapes."""
    if name == "toy":
        return ModelConfig()
    if name == "bart":
        return ModelConfig(d_model=1024, n_enc_layers=12, n_dec_layers=12, n_heads=16,
                           vocab_size=40000, max_positions=1024, dropout=0.3)
    if name == "mbart":
        return ModelConfig(d_model=1024, n_enc_layers=12, n_dec_layers=12, n_heads=16,
                           vocab_size=250000, max_positions=1024, dropout=0.3)
    raise ConfigError(f"unknown profile {name!r} (expected toy, bart or mbart)")


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _attn_entries(manifest: dict, prefix: str, d: int) -> None:
    for name in ("q_proj", "k_proj", "v_proj", "out_proj"):
        manifest[f"{prefix}/{name}/weight"] = (d, d)
        manifest[f"{prefix}/{name}/bias"] = (d,)


def _norm_entries(manifest: dict, prefix: str, d: int) -> None:
    manifest[f"{prefix}/scale"] = (d,)
    manifest[f"{prefix}/bias"] = (d,)


def _ffn_entries(manifest: dict, prefix: str, d: int, d_ffn: int) -> None:
    manifest[f"{prefix}/fc1/weight"] = (d, d_ffn)
    manifest[f"{prefix}/fc1/bias"] = (d_ffn,)
    manifest[f"{prefix}/fc2/weight"] = (d_ffn, d)
    manifest[f"{prefix}/fc2/bias"] = (d,)


def encoder_layer_entries(manifest: dict, prefix: str, d: int, d_ffn: int) -> None:
    _attn_entries(manifest, f"{prefix}/self_attn", d)
    _norm_entries(manifest, f"{prefix}/self_attn_norm", d)
    _ffn_entries(manifest, f"{prefix}/ffn", d, d_ffn)
    _norm_entries(manifest, f"{prefix}/ffn_norm", d)


def decoder_layer_entries(manifest: dict, prefix: str, d: int, d_ffn: int) -> None:
    _attn_entries(manifest, f"{prefix}/self_attn", d)
    _norm_entries(manifest, f"{prefix}/self_attn_norm", d)
    _attn_entries(manifest, f"{prefix}/cross_attn", d)
    _norm_entries(manifest, f"{prefix}/cross_attn_norm", d)
    _ffn_entries(manifest, f"{prefix}/ffn", d, d_ffn)
    _norm_entries(manifest, f"{prefix}/ffn_norm", d)


def model_manifest(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Path -> shape for every trainable tensor of the bare body."""
    d, d_ffn = config.d_model, config.d_ffn
    m: dict[str, tuple[int, ...]] = {}
    m["embed/tokens"] = (config.vocab_size, d)
    m["encoder/embed/positions"] = (config.max_positions, d)
    m["decoder/embed/positions"] = (config.max_positions, d)
    for i in range(config.n_enc_layers):
        encoder_layer_entries(m, f"encoder/layer{i}", d, d_ffn)
    for i in range(config.n_dec_layers):
        decoder_layer_entries(m, f"decoder/layer{i}", d, d_ffn)
    if not config.tie_embeddings:
        m["output_proj/weight"] = (d, config.vocab_size)
    return m


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def init_param_data(path: str, shape: tuple[int, ...], seed: int,
                    dtype=np.float32) -> np.ndarray:
    """Deterministic per-path initialization, independent of creation order.

    Weight std is 0.02 at the paper width (1024) and grows as 1/sqrt(width)
    below it; a flat 0.02 leaves narrow desk-scale models too contractive to
    train in a small step budget.
    """
    leaf = path.rsplit("/", 1)[-1]
    if leaf == "scale":
        return np.ones(shape, dtype=dtype)
    if leaf == "bias" or leaf == "w_up":
        # w_up zero-init makes freshly inserted adapters exact identities.
        return np.zeros(shape, dtype=dtype)
    std = 0.02 * math.sqrt(1024 / shape[-1])
    return rng_for(seed, path).normal(0.0, std, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class Seq2SeqModel:
    """Encoder-decoder stacks plus optional adapters and a grafted input module."""

    def __init__(self, config: ModelConfig, params: ParamTree, seed: int = 0):
        self.config = config
        self.params = params
        self.adapters: dict[str, object] = {}   # side -> AdapterConfig
        self.input_module = None
        self.training = True
        self.init_seed = seed

    def train(self, mode: bool = True) -> "Seq2SeqModel":
        self.training = mode
        return self

    def eval(self) -> "Seq2SeqModel":
        return self.train(False)

    def trainable_paths(self) -> list[str]:
        return [p for p, t in self.params.items() if t.requires_grad]

    def frozen_paths(self) -> list[str]:
        return [p for p, t in self.params.items() if not t.requires_grad]


def build_model(config: ModelConfig, seed: int = 0) -> Seq2SeqModel:
    config.validate()
    params = ParamTree()
    for path, shape in model_manifest(config).items():
        params.add(path, T.Tensor(init_param_data(path, shape, seed), requires_grad=True))
    return Seq2SeqModel(config, params, seed=seed)


def count_params(model: Seq2SeqModel, selector: str = "**", weights_only: bool = False) -> int:
    """Exact scalar-parameter count under a path pattern (0 if nothing matches)."""
    return count_entries(model.params.shapes(), selector, weights_only=weights_only)


# ---------------------------------------------------------------------------
# forward pieces (shared with the input module, which reuses encoder layers)
# ---------------------------------------------------------------------------

def linear(params: ParamTree, prefix: str, x: T.Tensor) -> T.Tensor:
    return T.add(T.matmul(x, params[f"{prefix}/weight"]), params[f"{prefix}/bias"])


def attention_block(params: ParamTree, prefix: str, query: T.Tensor, memory: T.Tensor,
                    mask: T.Tensor | None, n_heads: int, attn_dropout: float) -> T.Tensor:
    b, tq, d = query.shape
    tk = memory.shape[1]
    dh = d // n_heads
    q = linear(params, f"{prefix}/q_proj", query)
    k = linear(params, f"{prefix}/k_proj", memory)
    v = linear(params, f"{prefix}/v_proj", memory)
    q = T.transpose(T.reshape(q, (b, tq, n_heads, dh)), (0, 2, 1, 3))
    k = T.transpose(T.reshape(k, (b, tk, n_heads, dh)), (0, 2, 3, 1))
    v = T.transpose(T.reshape(v, (b, tk, n_heads, dh)), (0, 2, 1, 3))
    scores = T.scale(T.matmul(q, k), 1.0 / math.sqrt(dh))
    if mask is not None:
        scores = T.add(scores, mask)
    attn = T.dropout(T.softmax_lastdim(scores), attn_dropout)
    ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, tq, d))
    return linear(params, f"{prefix}/out_proj", ctx)


def _sublayer_out(params: ParamTree, norm_prefix: str, residual: T.Tensor,
                  out: T.Tensor, dropout_p: float) -> T.Tensor:
    # post-norm: LN(residual + dropout(sublayer(x)))
    summed = T.add(residual, T.dropout(out, dropout_p))
    return T.layer_norm(summed, params[f"{norm_prefix}/scale"], params[f"{norm_prefix}/bias"],
                        eps=NORM_EPS)


def ffn_block(params: ParamTree, prefix: str, x: T.Tensor, dropout_p: float) -> T.Tensor:
    h = T.gelu(linear(params, f"{prefix}/fc1", x))
    return linear(params, f"{prefix}/fc2", T.dropout(h, dropout_p))


def encoder_layer_forward(params: ParamTree, prefix: str, x: T.Tensor,
                          mask: T.Tensor | None, n_heads: int,
                          dropout_p: float, attn_dropout: float) -> T.Tensor:
    a = attention_block(params, f"{prefix}/self_attn", x, x, mask, n_heads, attn_dropout)
    x = _sublayer_out(params, f"{prefix}/self_attn_norm", x, a, dropout_p)
    f = ffn_block(params, f"{prefix}/ffn", x, dropout_p)
    return _sublayer_out(params, f"{prefix}/ffn_norm", x, f, dropout_p)


def decoder_layer_forward(params: ParamTree, prefix: str, x: T.Tensor, enc_out: T.Tensor,
                          self_mask: T.Tensor | None, cross_mask: T.Tensor | None,
                          n_heads: int, dropout_p: float, attn_dropout: float) -> T.Tensor:
    a = attention_block(params, f"{prefix}/self_attn", x, x, self_mask, n_heads, attn_dropout)
    x = _sublayer_out(params, f"{prefix}/self_attn_norm", x, a, dropout_p)
    c = attention_block(params, f"{prefix}/cross_attn", x, enc_out, cross_mask,
                        n_heads, attn_dropout)
    x = _sublayer_out(params, f"{prefix}/cross_attn_norm", x, c, dropout_p)
    f = ffn_block(params, f"{prefix}/ffn", x, dropout_p)
    return _sublayer_out(params, f"{prefix}/ffn_norm", x, f, dropout_p)


def pad_attention_mask(ids: np.ndarray, pad_id: int = PAD_ID) -> T.Tensor | None:
    """Additive [B,1,1,S] mask suppressing attention to padding keys."""
    if not (ids == pad_id).any():
        return None
    mask = np.where(ids == pad_id, NEG_INF, 0.0).astype(np.float32)
    return T.Tensor(mask[:, None, None, :])


def causal_attention_mask(t: int) -> T.Tensor:
    mask = np.triu(np.full((t, t), NEG_INF, dtype=np.float32), k=1)
    return T.Tensor(mask[None, None])


def positions_for(params: ParamTree, table_path: str, length: int,
                  max_positions: int) -> T.Tensor:
    """Learned positional rows, sqrt(width)-scaled like token embeddings.

    Scaling positions along with tokens keeps the two signals commensurate;
    scaling only tokens buries position information at small widths.
    """
    if length > max_positions:
        raise IndexError(f"sequence length {length} exceeds positional table ({max_positions})")
    table = params[table_path]
    return T.scale(T.embedding_lookup(table, np.arange(length)), math.sqrt(table.shape[1]))


def token_embeddings(model: Seq2SeqModel, ids: np.ndarray) -> T.Tensor:
    return T.scale(T.embedding_lookup(model.params["embed/tokens"], ids),
                   math.sqrt(model.config.d_model))


def _apply_adapter(model: Seq2SeqModel, side: str, layer: int, x: T.Tensor) -> T.Tensor:
    cfg = model.adapters.get(side)
    if cfg is None:
        return x
    from .adapters import adapter_forward
    return adapter_forward(model.params, f"{side}/layer{layer}/adapter", cfg, x)


def encode(model: Seq2SeqModel, src_ids: np.ndarray,
           encoder_input: T.Tensor | None = None) -> T.Tensor:
    """Encoder stack over token embeddings, IM output, or an injected input.

    `encoder_input` overrides the embedding/IM stage; it exists for the
    substitution-identity check and ablations.
    """
    cfg = model.config
    if encoder_input is not None:
        x = encoder_input
    elif model.input_module is not None:
        x = model.input_module.forward(src_ids)
    else:
        if src_ids.size and src_ids.max() >= cfg.vocab_size:
            raise IndexError(f"source token id out of range [0, {cfg.vocab_size})")
        x = token_embeddings(model, src_ids)
    pos = positions_for(model.params, "encoder/embed/positions", src_ids.shape[1],
                        cfg.max_positions)
    x = T.dropout(T.add(x, pos), cfg.dropout)
    mask = pad_attention_mask(src_ids)
    for i in range(cfg.n_enc_layers):
        x = encoder_layer_forward(model.params, f"encoder/layer{i}", x, mask,
                                  cfg.n_heads, cfg.dropout, cfg.attn_dropout)
        x = _apply_adapter(model, "encoder", i, x)
    return x


def decode(model: Seq2SeqModel, dec_in_ids: np.ndarray, enc_out: T.Tensor,
           src_ids: np.ndarray) -> T.Tensor:
    cfg = model.config
    if dec_in_ids.size and dec_in_ids.max() >= cfg.vocab_size:
        raise IndexError(f"target token id out of range [0, {cfg.vocab_size})")
    t = dec_in_ids.shape[1]
    x = token_embeddings(model, dec_in_ids)
    pos = positions_for(model.params, "decoder/embed/positions", t, cfg.max_positions)
    x = T.dropout(T.add(x, pos), cfg.dropout)
    self_mask = causal_attention_mask(t)
    cross_mask = pad_attention_mask(src_ids)
    for i in range(cfg.n_dec_layers):
        x = decoder_layer_forward(model.params, f"decoder/layer{i}", x, enc_out,
                                  self_mask, cross_mask, cfg.n_heads,
                                  cfg.dropout, cfg.attn_dropout)
        x = _apply_adapter(model, "decoder", i, x)
    return x


def output_logits(model: Seq2SeqModel, dec_states: T.Tensor) -> T.Tensor:
    if model.config.tie_embeddings:
        emb = model.params["embed/tokens"]
        return T.matmul(dec_states, T.transpose(emb, (1, 0)))
    return T.matmul(dec_states, model.params["output_proj/weight"])


def forward_logits(model: Seq2SeqModel, src_ids: np.ndarray, dec_in_ids: np.ndarray,
                   encoder_input: T.Tensor | None = None) -> T.Tensor:
    enc_out = encode(model, src_ids, encoder_input=encoder_input)
    return output_logits(model, decode(model, dec_in_ids, enc_out, src_ids))


def forward_train(model: Seq2SeqModel, src_ids: np.ndarray, tgt_ids: np.ndarray,
                  label_smoothing: float = 0.0, reduction: str = "mean",
                  encoder_input: T.Tensor | None = None) -> tuple[T.Tensor, int]:
    """Teacher-forced label-smoothed loss; returns (loss, non-pad token count)."""
    src_ids, tgt_ids = np.asarray(src_ids), np.asarray(tgt_ids)
    if src_ids.size == 0 or tgt_ids.size == 0 or tgt_ids.shape[1] < 2:
        raise ContractError("forward_train: empty batch")
    dec_in, labels = tgt_ids[:, :-1], tgt_ids[:, 1:]
    logits = forward_logits(model, src_ids, dec_in, encoder_input=encoder_input)
    b, t, v = logits.shape
    loss = T.cross_entropy_label_smoothed(
        T.reshape(logits, (b * t, v)), labels.reshape(-1), label_smoothing, PAD_ID,
        reduction=reduction)
    return loss, int((labels != PAD_ID).sum())


def per_token_nll(model: Seq2SeqModel, src_ids: np.ndarray, tgt_ids: np.ndarray) -> np.ndarray:
    """Plain (unsmoothed) NLL per target position; pads report 0.

    Intended for evaluation: call without an active tape so nothing is recorded.
    """
    dec_in, labels = tgt_ids[:, :-1], tgt_ids[:, 1:]
    logits = forward_logits(model, src_ids, dec_in).data
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    safe = np.where(labels == PAD_ID, 0, labels)
    nll = -np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    return np.where(labels == PAD_ID, 0.0, nll)


def sentence_nlls(model: Seq2SeqModel, src_ids: np.ndarray, tgt_ids: np.ndarray) -> np.ndarray:
    """Mean per-token NLL for each sentence in the batch."""
    nll = per_token_nll(model, src_ids, tgt_ids)
    counts = (tgt_ids[:, 1:] != PAD_ID).sum(axis=1)
    return nll.sum(axis=1) / np.maximum(counts, 1)
