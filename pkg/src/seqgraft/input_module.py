"""Grafted source-side network mapping new-language tokens to body inputs.

The pipeline per source sentence is: learned token + positional embeddings
(positions at the embedding layer only), a stack of transformer layers that
each receive an extra fixed sinusoidal signal at their input, then per token
alpha * LN(W x), projecting the smaller hidden size up to the body width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, StateError
from .paramtree import ParamTree
from .transformer import (
    Seq2SeqModel,
    encoder_layer_entries,
    encoder_layer_forward,
    init_param_data,
    pad_attention_mask,
    positions_for,
)


@dataclass
class InputModuleConfig:
    d_s: int = 32                      # module hidden size (paper scale: 512)
    n_layers: int = 2                  # 6 at paper scale
    src_vocab_size: int = 512
    max_positions: int = 512
    n_heads: int | None = None         # defaults to max(1, d_s // 16)
    alpha: float | None = None         # defaults to sqrt(d_body)
    add_fixed_per_layer: bool = True
    sinusoid_scheme: str = "split"     # "split" (half sin / half cos) or "interleaved"
    apply_out_norm: bool = True        # ablation switch back to bare up-projection
    dropout: float = 0.2
    attn_dropout: float = 0.2

    def __post_init__(self):
        if self.n_heads is None:
            self.n_heads = max(1, self.d_s // 16)
        if self.d_s % 2 != 0 or self.d_s < 4:
            raise ConfigError(f"d_s must be even and >= 4, got {self.d_s}")
        if self.d_s % self.n_heads != 0:
            raise ConfigError(f"d_s ({self.d_s}) must be a multiple of n_heads ({self.n_heads})")
        if self.sinusoid_scheme not in ("split", "interleaved"):
            raise ConfigError(f"unknown sinusoid scheme {self.sinusoid_scheme!r}")


def sinusoidal(l: int, i: int, d_s: int) -> float:
    """Fixed positional value at position l, dimension i (split scheme).

    sin(l / 10000^(i/(d_s/2-1))) for the first half of the dimensions and
    cos(l / 10000^((i-(d_s/2-1))/(d_s/2-1))) for the second half.
    """
    if d_s % 2 != 0 or d_s < 4:
        raise ConfigError(f"sinusoidal: d_s must be even and >= 4, got {d_s}")
    if not 0 <= i < d_s:
        raise IndexError(f"sinusoidal: dimension {i} out of range [0, {d_s})")
    half = d_s // 2
    if i < half:
        return math.sin(l / 10000 ** (i / (half - 1)))
    return math.cos(l / 10000 ** ((i - (half - 1)) / (half - 1)))


def sinusoid_table(n_positions: int, d_s: int, scheme: str = "split") -> np.ndarray:
    """[n_positions, d_s] table; extending n_positions never changes old rows."""
    if d_s % 2 != 0 or d_s < 4:
        raise ConfigError(f"sinusoid_table: d_s must be even and >= 4, got {d_s}")
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    half = d_s // 2
    if scheme == "split":
        sin_exp = np.arange(half, dtype=np.float64) / (half - 1)
        # the cos branch exponent is (i - (half-1))/(half-1), i.e. it starts
        # at 1/(half-1) rather than 0: that asymmetry is intentional
        cos_exp = (np.arange(half, d_s, dtype=np.float64) - (half - 1)) / (half - 1)
        table = np.concatenate([np.sin(pos / 10000 ** sin_exp),
                                np.cos(pos / 10000 ** cos_exp)], axis=1)
    elif scheme == "interleaved":
        i = np.arange(half, dtype=np.float64)
        angle = pos / 10000 ** (2 * i / d_s)
        table = np.empty((n_positions, d_s))
        table[:, 0::2] = np.sin(angle)
        table[:, 1::2] = np.cos(angle)
    else:
        raise ConfigError(f"unknown sinusoid scheme {scheme!r}")
    return table.astype(np.float32)


def im_manifest(cfg: InputModuleConfig, d_body: int) -> dict[str, tuple[int, ...]]:
    m: dict[str, tuple[int, ...]] = {}
    m["embed/tokens"] = (cfg.src_vocab_size, cfg.d_s)
    m["embed/positions"] = (cfg.max_positions, cfg.d_s)
    for i in range(cfg.n_layers):
        encoder_layer_entries(m, f"layer{i}", cfg.d_s, 4 * cfg.d_s)
    m["proj/weight"] = (cfg.d_s, d_body)
    m["out_norm/scale"] = (d_body,)
    m["out_norm/bias"] = (d_body,)
    return m


class InputModule:
    def __init__(self, cfg: InputModuleConfig, d_body: int, params: ParamTree):
        self.config = cfg
        self.d_body = d_body
        self.params = params
        self.alpha = cfg.alpha if cfg.alpha is not None else math.sqrt(d_body)
        self._sin_cache: np.ndarray | None = None

    def _sinusoids(self, length: int) -> T.Tensor:
        if self._sin_cache is None or self._sin_cache.shape[0] < length:
            self._sin_cache = sinusoid_table(max(length, 64), self.config.d_s,
                                             self.config.sinusoid_scheme)
        return T.Tensor(self._sin_cache[:length])

    def forward(self, src_ids: np.ndarray) -> T.Tensor:
        cfg = self.config
        if src_ids.size and src_ids.max() >= cfg.src_vocab_size:
            raise IndexError(f"source token id out of range [0, {cfg.src_vocab_size})")
        length = src_ids.shape[1]
        x = T.scale(T.embedding_lookup(self.params["embed/tokens"], src_ids),
                    math.sqrt(cfg.d_s))
        pos = positions_for(self.params, "embed/positions", length, cfg.max_positions)
        x = T.dropout(T.add(x, pos), cfg.dropout)
        mask = pad_attention_mask(src_ids)
        for i in range(cfg.n_layers):
            if cfg.add_fixed_per_layer:
                x = T.add(x, self._sinusoids(length))
            x = encoder_layer_forward(self.params, f"layer{i}", x, mask,
                                      cfg.n_heads, cfg.dropout, cfg.attn_dropout)
        y = T.matmul(x, self.params["proj/weight"])
        if cfg.apply_out_norm:
            y = T.layer_norm(y, self.params["out_norm/scale"], self.params["out_norm/bias"])
        return T.scale(y, self.alpha)


def build_input_module(cfg: InputModuleConfig, d_body: int, seed: int = 0) -> InputModule:
    params = ParamTree()
    for path, shape in im_manifest(cfg, d_body).items():
        params.add(path, T.Tensor(init_param_data(f"input_module/{path}", shape, seed),
                                  requires_grad=True))
    return InputModule(cfg, d_body, params)


def graft(body: Seq2SeqModel, im: InputModule) -> Seq2SeqModel:
    """Route the body encoder through the input module's outputs.

    The body encoder's own token embedding is bypassed; the target side is
    untouched. Module parameters join the body tree under input_module/.
    """
    if im.d_body != body.config.d_model:
        raise DimensionError(
            f"graft: module output width {im.d_body} != body d_model {body.config.d_model}")
    if body.input_module is not None:
        raise StateError("graft: body already has an input module")
    for path, t in im.params.items():
        body.params.add(f"input_module/{path}", t)
    body.input_module = im
    return body
