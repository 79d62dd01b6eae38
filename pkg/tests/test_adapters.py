import math

import numpy as np
import pytest

import seqgraft.tensor as T
from seqgraft.adapters import (
    AdapterConfig,
    adapter_entries,
    adapter_forward,
    glu_width,
    insert_adapters,
)
from seqgraft.errors import ConfigError, StateError
from seqgraft.paramtree import ParamTree
from seqgraft.transformer import ModelConfig, build_model, count_params, forward_logits
from seqgraft.vocab import BOS_ID, EOS_ID

from conftest import small_config
from helpers import check_gradients


def make_adapter(kind="plain", d_model=4, d_hidden=3, seed=0, dtype=np.float32):
    cfg = AdapterConfig(kind=kind, d_hidden=d_hidden, dropout_p=0.0)
    params = ParamTree()
    rng = np.random.default_rng(seed)
    params.add("a/w_down", T.Tensor(rng.normal(0, 0.5, (d_model, d_hidden)).astype(dtype),
                                    requires_grad=True))
    params.add("a/w_up", T.Tensor(np.zeros((d_hidden, d_model), dtype=dtype),
                                  requires_grad=True))
    if kind == "glu":
        params.add("a/w_gate", T.Tensor(rng.normal(0, 0.5, (d_model, d_hidden)).astype(dtype),
                                        requires_grad=True))
    return cfg, params


def test_glu_width_rounding():
    assert glu_width(128) == 85    # floor-round of 85.33
    assert glu_width(16) == 11


def test_identity_at_init():
    cfg, params = make_adapter()
    h = T.Tensor(np.random.default_rng(1).normal(size=(2, 3, 4)))
    out = adapter_forward(params, "a", cfg, h)
    np.testing.assert_array_equal(out.data, h.data)


def test_glu_gate_at_zero_matches_plain():
    # gate = 2*sigmoid(0) = 1, so the gated bottleneck equals the plain one
    cfg, params = make_adapter("glu")
    params["a/w_gate"].data[:] = 0.0
    h = T.Tensor(np.random.default_rng(2).normal(size=(5, 4)))
    z_plain = T.gelu(T.matmul(h, params["a/w_down"])).data
    gate = 2.0 / (1.0 + np.exp(-(h.data @ params["a/w_gate"].data)))
    np.testing.assert_allclose(gate, np.ones_like(gate))
    z_glu = gate * z_plain
    np.testing.assert_allclose(z_glu, z_plain)


def test_scalar_hand_case():
    # d_model = d_hidden = 1, W_d = W_u = 1, h = 1:
    # z = gelu(1) = 0.8413447, h_out = tanh(z) + 1 = 1.6865207 (direct evaluation)
    cfg, params = make_adapter(d_model=1, d_hidden=1)
    params["a/w_down"].data[:] = 1.0
    params["a/w_up"].data[:] = 1.0
    out = adapter_forward(params, "a", cfg, T.Tensor([[1.0]]))
    expected = math.tanh(0.5 * (1 + math.erf(1 / math.sqrt(2)))) + 1.0
    assert abs(out.item() - expected) < 1e-6
    assert abs(expected - 1.6865207) < 1e-6


@pytest.mark.parametrize("kind", ["plain", "glu"])
def test_bounded_perturbation_any_params(kind):
    cfg, params = make_adapter(kind, d_model=8, d_hidden=5)
    rng = np.random.default_rng(3)
    params["a/w_up"].data = rng.normal(0, 10.0, params["a/w_up"].shape).astype(np.float32)
    params["a/w_down"].data = rng.normal(0, 10.0, params["a/w_down"].shape).astype(np.float32)
    h = T.Tensor(rng.normal(0, 5.0, size=(6, 8)))
    out = adapter_forward(params, "a", cfg, h)
    assert np.abs(out.data - h.data).max() <= 1.0 + 1e-6


def test_gate_range():
    cfg, params = make_adapter("glu", d_model=6, d_hidden=4)
    h = np.random.default_rng(4).normal(0, 20.0, size=(10, 6))
    gate = 2.0 / (1.0 + np.exp(-(h @ params["a/w_gate"].data)))
    assert gate.min() > 0.0 and gate.max() < 2.0


@pytest.mark.parametrize("kind", ["plain", "glu"])
def test_gradients_reach_all_projections(kind):
    cfg, params = make_adapter(kind, d_model=4, d_hidden=3, dtype=np.float64)
    rng = np.random.default_rng(5)
    params["a/w_up"].data = rng.normal(0, 0.3, params["a/w_up"].shape)
    h = T.Tensor(rng.normal(size=(3, 4)), dtype=np.float64)
    leaves = list(params.tensors())
    check_gradients(
        lambda: T.reduce_sum(T.tanh(adapter_forward(params, "a", cfg, h))), leaves)


def test_insertion_preserves_logits_exactly():
    for kind in ("plain", "glu"):
        model = build_model(small_config(dropout=0.1), seed=0).eval()
        src = np.array([[7, 8, 9, EOS_ID]])
        dec_in = np.array([[BOS_ID, 7, 8]])
        before = forward_logits(model, src, dec_in).data.copy()
        insert_adapters(model, "both", AdapterConfig(kind=kind, d_hidden=5))
        after = forward_logits(model, src, dec_in).data
        np.testing.assert_array_equal(before, after)


def test_insertion_parameter_counts():
    # decoder-only plain: 2 layers * (64*16 + 16*64) = 4096 extra weights
    cfg = ModelConfig(d_model=64, n_enc_layers=2, n_dec_layers=2, n_heads=4, vocab_size=64)
    model = build_model(cfg, seed=0)
    base = count_params(model)
    insert_adapters(model, "decoder", AdapterConfig(kind="plain", d_hidden=16))
    assert count_params(model) - base == 4096
    assert count_params(model, "decoder/*/adapter/**") == 4096

    model2 = build_model(cfg, seed=0)
    insert_adapters(model2, "decoder", AdapterConfig(kind="glu", d_hidden=glu_width(16)))
    assert count_params(model2, "decoder/*/adapter/**") == 2 * 3 * 64 * 11 == 4224


def test_double_insertion_raises():
    model = build_model(small_config(), seed=0)
    insert_adapters(model, "encoder", AdapterConfig(d_hidden=4))
    with pytest.raises(StateError):
        insert_adapters(model, "encoder", AdapterConfig(d_hidden=4))
    insert_adapters(model, "decoder", AdapterConfig(d_hidden=4))  # other side still fine
    with pytest.raises(StateError):
        insert_adapters(model, "both", AdapterConfig(d_hidden=4))


def test_adapter_config_validation():
    with pytest.raises(ConfigError):
        AdapterConfig(kind="bottleneck")
    with pytest.raises(ConfigError):
        AdapterConfig(d_hidden=0)


def test_adapter_entries_shapes():
    entries = adapter_entries(AdapterConfig(kind="glu", d_hidden=11), 64)
    assert entries == {"w_down": (64, 11), "w_up": (11, 64), "w_gate": (64, 11)}
