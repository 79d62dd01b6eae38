import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import seqgraft.tensor as T
from seqgraft.adapters import AdapterConfig, insert_adapters
from seqgraft.errors import ConfigError
from seqgraft.freeze import (
    FreezePolicy,
    apply_policy,
    get_recipe,
    load_recipe,
    memory_report,
    memory_report_for,
    recipe_catalog,
    resolve_recipe,
    save_recipe,
)
from seqgraft.input_module import InputModuleConfig, build_input_module, graft
from seqgraft.optim import Adam, Schedule
from seqgraft.paramtree import path_matches
from seqgraft.transformer import build_model, forward_train, model_manifest, profile_config
from seqgraft.vocab import BOS_ID, EOS_ID

from conftest import small_config


# ---------------------------------------------------------------------------
# pattern language
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("pattern,path,expected", [
    ("**", "encoder/layer0/ffn/fc1/weight", True),
    ("encoder/**", "encoder/layer3/self_attn/q_proj/weight", True),
    ("encoder/**", "decoder/layer0/ffn/fc1/weight", False),
    ("*/layer0/self_attn/**", "decoder/layer0/self_attn/out_proj/bias", True),
    ("**/*_norm/*", "decoder/layer1/cross_attn_norm/scale", True),
    ("**/*_norm/*", "decoder/layer1/cross_attn/q_proj/weight", False),
    ("embed/*", "embed/tokens", True),
    ("embed/*", "encoder/embed/positions", False),
    ("**/adapter/**", "decoder/layer0/adapter/w_up", True),
    ("decoder/layer1/**", "decoder/layer10/ffn/fc1/weight", False),
])
def test_path_patterns(pattern, path, expected):
    assert path_matches(pattern, path) is expected


def test_empty_policy_freezes_nothing():
    model = build_model(small_config(), seed=0)
    apply_policy(model, FreezePolicy())
    assert all(t.requires_grad for t in model.params.tensors())


def test_last_rule_wins():
    policy = FreezePolicy((("**", False), ("encoder/**", True), ("encoder/layer0/**", False)))
    assert policy.trainable("encoder/layer1/ffn/fc1/weight")
    assert not policy.trainable("encoder/layer0/ffn/fc1/weight")
    assert not policy.trainable("decoder/layer0/ffn/fc1/weight")


# ---------------------------------------------------------------------------
# shipped recipes
# ---------------------------------------------------------------------------

def grafted_toy():
    model = build_model(small_config(dropout=0.0), seed=0)
    im = build_input_module(
        InputModuleConfig(d_s=16, n_layers=1, src_vocab_size=30, max_positions=64,
                          dropout=0.0, attn_dropout=0.0), 32, seed=0)
    graft(model, im)
    return model


def test_bart_frozen_trainable_set():
    model = grafted_toy()
    apply_policy(model, get_recipe("bart-frozen", 1).policy)
    trainable = set(model.trainable_paths())
    for p in trainable:
        assert (p.startswith("input_module/") or "_norm/" in p
                or p.startswith("encoder/layer0/self_attn/")), p
    # the whole module, every body norm, and first-layer self-attention are in
    assert all(p in trainable for p in model.params.paths() if p.startswith("input_module/"))
    assert all(p in trainable for p in model.params.paths()
               if "_norm/" in p and not p.startswith("input_module/"))
    assert "encoder/layer0/self_attn/q_proj/weight" in trainable
    assert "encoder/layer0/self_attn/q_proj/bias" in trainable
    # token and positional embeddings stay frozen
    assert "embed/tokens" not in trainable
    assert "encoder/embed/positions" not in trainable
    assert "decoder/embed/positions" not in trainable
    assert "encoder/layer0/ffn/fc1/weight" not in trainable


def test_mbart_freeze_decoder_trainable_set():
    model = build_model(profile_config("toy"), seed=0)   # 2/2 layers
    apply_policy(model, get_recipe("mbart-freeze-decoder", 2).policy)
    trainable = set(model.trainable_paths())
    assert "encoder/layer1/ffn/fc1/weight" in trainable          # encoder unfrozen
    assert "embed/tokens" in trainable                            # token embeddings
    assert "decoder/embed/positions" in trainable                 # positional embeddings
    assert "decoder/layer0/self_attn/q_proj/weight" in trainable  # first-layer self-attn
    assert "decoder/layer0/cross_attn/q_proj/weight" not in trainable
    assert "decoder/layer1/ffn/fc1/weight" not in trainable
    assert "decoder/layer1/ffn_norm/scale" in trainable           # norms stay trainable


def test_ft_enc_attn_extends_freeze_decoder():
    model = build_model(profile_config("toy"), seed=0)
    recipe = get_recipe("ft-enc-attn", 2)
    assert recipe.adapters == "decoder"
    insert_adapters(model, "decoder", AdapterConfig(kind="plain", d_hidden=8))
    apply_policy(model, recipe.policy)
    trainable = set(model.trainable_paths())
    assert "decoder/layer1/cross_attn/q_proj/weight" in trainable
    assert "decoder/layer1/self_attn/q_proj/weight" not in trainable
    assert "decoder/layer0/adapter/w_down" in trainable


def test_recipe_aliases_and_unknown():
    assert get_recipe("+decoder-adapters").name == "mbart-freeze-decoder+decoder-adapters"
    with pytest.raises(ConfigError):
        get_recipe("freeze-everything")


def test_partition_covers_tree_for_every_recipe():
    shapes = model_manifest(profile_config("toy"))
    for name, recipe in recipe_catalog(2).items():
        trainable, frozen = recipe.policy.partition(shapes)
        assert len(trainable) + len(frozen) == len(shapes), name
        assert set(trainable).isdisjoint(frozen), name


def test_recipe_roundtrip_via_file(tmp_path):
    recipe = get_recipe("ft-enc-attn", 12)
    path = tmp_path / "recipe.json"
    save_recipe(recipe, path)
    loaded = load_recipe(path)
    assert loaded == recipe
    assert resolve_recipe(str(path)).name == "ft-enc-attn"


# ---------------------------------------------------------------------------
# freezing during training
# ---------------------------------------------------------------------------

def test_frozen_tensors_bit_identical_after_steps():
    model = grafted_toy()
    apply_policy(model, get_recipe("bart-frozen", 1).policy)
    snapshot = {p: t.data.copy() for p, t in model.params.items()}
    opt = Adam(model, Schedule.constant(1e-3))
    rng = np.random.default_rng(0)
    for step in range(1, 11):
        src = rng.integers(5, 30, size=(4, 6))
        tgt = rng.integers(5, 30, size=(4, 7))
        tgt[:, 0], tgt[:, -1] = BOS_ID, EOS_ID
        with T.Tape(seed=0, step=step):
            loss, ntok = forward_train(model, src, tgt, 0.1, reduction="sum")
            T.backward(T.scale(loss, 1.0 / ntok))
        opt.step()
    changed = 0
    for p, t in model.params.items():
        if t.requires_grad:
            changed += int(not np.array_equal(snapshot[p], t.data))
        else:
            np.testing.assert_array_equal(snapshot[p], t.data, err_msg=p)
    assert changed > 0
    # moment buffers exist only for trainable tensors
    assert set(opt.m) <= set(model.trainable_paths())


def test_apply_policy_idempotent_and_clears_grads():
    model = build_model(small_config(), seed=0)
    t = model.params["decoder/layer0/ffn/fc1/weight"]
    t.grad = np.zeros_like(t.data)
    policy = get_recipe("mbart-freeze-decoder", 1).policy
    apply_policy(model, policy)
    first = [t.requires_grad for t in model.params.tensors()]
    assert t.grad is None
    apply_policy(model, policy)
    assert [t.requires_grad for t in model.params.tensors()] == first


# ---------------------------------------------------------------------------
# memory accounting
# ---------------------------------------------------------------------------

def test_memory_hand_example():
    shapes = {"a": (750,), "b": (250,)}
    policy = FreezePolicy((("a", False),))
    report = memory_report_for(shapes, policy, optimizer_kind="adam")
    assert report.bytes_params_total == 4000
    assert report.bytes_grads == 1000
    assert report.bytes_optimizer_state == 2000
    assert report.bytes_total == 7000
    assert report.trainable_fraction == 0.25


def test_memory_sgd_norms_only():
    model = build_model(small_config(), seed=0)
    apply_policy(model, FreezePolicy((("**", False), ("**/*_norm/*", True))))
    report = memory_report(model, optimizer_kind="sgd")
    norm_scalars = sum(t.size for p, t in model.params.items() if "_norm/" in p)
    assert report.bytes_optimizer_state == 0
    assert report.bytes_grads == 4 * norm_scalars


PATTERN_POOL = ["**", "encoder/**", "decoder/**", "embed/**", "**/*_norm/*",
                "decoder/*/cross_attn/**", "encoder/layer0/self_attn/**",
                "**/bias", "**/weight", "decoder/layer1/**"]


@settings(max_examples=30, deadline=None)
@given(rules=st.lists(st.tuples(st.sampled_from(PATTERN_POOL), st.booleans()), max_size=6))
def test_memory_monotone_under_extra_freezing(rules):
    shapes = model_manifest(profile_config("toy"))
    base = FreezePolicy(tuple(rules))
    base_total = memory_report_for(shapes, base).bytes_total
    for extra in PATTERN_POOL:
        more = FreezePolicy(tuple(rules) + ((extra, False),))
        assert memory_report_for(shapes, more).bytes_total <= base_total


@settings(max_examples=30, deadline=None)
@given(rules=st.lists(st.tuples(st.sampled_from(PATTERN_POOL), st.booleans()), max_size=6))
def test_policy_partition_is_deterministic_partition(rules):
    shapes = model_manifest(small_config())
    policy = FreezePolicy(tuple(rules))
    t1, f1 = policy.partition(shapes)
    t2, f2 = policy.partition(shapes)
    assert t1 == t2 and f1 == f2
    assert sorted(t1 + f1) == sorted(shapes)
