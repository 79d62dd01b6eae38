"""Bottleneck adapter layers inserted at the end of transformer layers.

Plain:  z = gelu(W_d h);            h_out = tanh(W_u z) + h
GLU:    z = 2*sigmoid(W_g h) (.) gelu(W_d h);  h_out = tanh(W_u z) + h

W_u starts at zero, so a freshly inserted adapter is an exact identity and
fine-tuning departs from the unmodified pretrained function. The tanh bounds
the perturbation to 1 per coordinate. Adapters carry no biases.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError, DimensionError, StateError
from .paramtree import ParamTree


def glu_width(plain_width: int) -> int:
    """Bottleneck width for the gated variant: round(2/3 * plain width)."""
    return round(2 * plain_width / 3)


@dataclass
class AdapterConfig:
    kind: str = "plain"          # "plain" or "glu"
    d_hidden: int = 16
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.kind not in ("plain", "glu"):
            raise ConfigError(f"adapter kind must be 'plain' or 'glu', got {self.kind!r}")
        if self.d_hidden < 1:
            raise ConfigError(f"adapter d_hidden must be >= 1, got {self.d_hidden}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"adapter dropout_p must be in [0, 1), got {self.dropout_p}")


def default_adapter_config(kind: str, d_model: int, dropout_p: float = 0.1) -> AdapterConfig:
    base = 128 if d_model >= 512 else 16
    width = glu_width(base) if kind == "glu" else base
    return AdapterConfig(kind=kind, d_hidden=width, dropout_p=dropout_p)


def adapter_entries(cfg: AdapterConfig, d_model: int) -> dict[str, tuple[int, ...]]:
    entries = {"w_down": (d_model, cfg.d_hidden), "w_up": (cfg.d_hidden, d_model)}
    if cfg.kind == "glu":
        entries["w_gate"] = (d_model, cfg.d_hidden)
    return entries


def adapter_forward(params: ParamTree, prefix: str, cfg: AdapterConfig, h: T.Tensor) -> T.Tensor:
    if h.shape[-1] != params[f"{prefix}/w_down"].shape[0]:
        raise DimensionError(
            f"adapter: input width {h.shape[-1]} != w_down rows "
            f"{params[f'{prefix}/w_down'].shape[0]}")
    z = T.gelu(T.matmul(h, params[f"{prefix}/w_down"]))
    if cfg.kind == "glu":
        gate = T.scale(T.sigmoid(T.matmul(h, params[f"{prefix}/w_gate"])), 2.0)
        z = T.elementwise_mul(gate, z)
    z = T.dropout(z, cfg.dropout_p)
    return T.add(T.tanh(T.matmul(z, params[f"{prefix}/w_up"])), h)


def insert_adapters(model, where: str, cfg: AdapterConfig):
    """Append one adapter after the final sublayer of each selected layer.

    Model output is unchanged immediately after insertion (zero-init W_u).
    """
    from .transformer import init_param_data

    if where not in ("encoder", "decoder", "both"):
        raise ConfigError(f"insert_adapters: where must be encoder/decoder/both, got {where!r}")
    sides = ("encoder", "decoder") if where == "both" else (where,)
    for side in sides:
        if side in model.adapters:
            raise StateError(f"insert_adapters: {side} already has adapters")
    n_layers = {"encoder": model.config.n_enc_layers, "decoder": model.config.n_dec_layers}
    for side in sides:
        for i in range(n_layers[side]):
            for name, shape in adapter_entries(cfg, model.config.d_model).items():
                path = f"{side}/layer{i}/adapter/{name}"
                data = init_param_data(path, shape, model.init_seed)
                model.params.add(path, T.Tensor(data, requires_grad=True))
        model.adapters[side] = cfg
    return model
