import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from seqgraft.data import (
    NoiseSpec,
    SyntheticLangSpec,
    base_inventory,
    foreign_inventory,
    gen_monolingual,
    gen_parallel,
    make_corpus,
)
from seqgraft.training import TrainPlan, pretrain_denoise
from seqgraft.transformer import ModelConfig, build_model
from seqgraft.vocab import SPECIAL_TOKENS, Vocab


def small_config(**overrides) -> ModelConfig:
    base = dict(d_model=32, n_enc_layers=1, n_dec_layers=1, n_heads=2,
                vocab_size=40, max_positions=64, dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


# shared toy language family: one base language, several ciphered variants
BASE_LANG = dict(vocab_size=64, inventory_seed=7, min_len=3, max_len=9)
REV_PAIR = SyntheticLangSpec(**BASE_LANG, cipher_seed=3, reorder="reverse", sentence_seed=5)
BODY_CFG = dict(d_model=64, n_enc_layers=2, n_dec_layers=2, n_heads=4,
                max_positions=128, dropout=0.1)
PRETRAIN_NOISE = NoiseSpec(mask_ratio=0.2, mean_span_len=2.0,
                           sentence_shuffle=False, rotate_start=False)

MULTI_PAIRS = {
    "pa": SyntheticLangSpec(**BASE_LANG, cipher_seed=201, reorder="swap-adjacent",
                            sentence_seed=301),
    "pb": SyntheticLangSpec(**BASE_LANG, cipher_seed=202, reorder="rotate-k", rotate_k=2,
                            sentence_seed=302),
    "pc": SyntheticLangSpec(**BASE_LANG, cipher_seed=203, reorder="none", sentence_seed=303),
}


def base_vocab() -> Vocab:
    return Vocab(SPECIAL_TOKENS + sorted(base_inventory(SyntheticLangSpec(**BASE_LANG))))


def multi_vocab() -> Vocab:
    tokens = set(base_inventory(SyntheticLangSpec(**BASE_LANG)))
    for spec in MULTI_PAIRS.values():
        tokens |= set(foreign_inventory(spec))
    return Vocab(SPECIAL_TOKENS + sorted(tokens))


@pytest.fixture(scope="session")
def toy_vocab():
    return base_vocab()


@pytest.fixture(scope="session")
def toy_body(tmp_path_factory, toy_vocab):
    """Denoising-pretrained monolingual body shared by training-level tests."""
    out = tmp_path_factory.mktemp("toy_body")
    mono = SyntheticLangSpec(**BASE_LANG, sentence_seed=900)
    train = gen_monolingual(mono, 4000, "train")
    valid = gen_monolingual(mono, 100, "valid")
    cfg = ModelConfig(vocab_size=len(toy_vocab), **BODY_CFG)
    plan = TrainPlan(max_steps=1500, batch_tokens=1024, warmup_steps=80, max_lr=2e-3,
                     label_smoothing=0.1, eval_interval=500, seed=1)
    ckpt = pretrain_denoise(build_model(cfg, seed=1), train, valid, PRETRAIN_NOISE,
                            plan, toy_vocab, out)
    return {"checkpoint": ckpt, "dir": out, "vocab": toy_vocab, "config": cfg,
            "mono_spec": mono, "noise": PRETRAIN_NOISE, "plan": plan}


@pytest.fixture(scope="session")
def multi_body(tmp_path_factory):
    """Body pretrained on the base language plus three foreign languages."""
    out = tmp_path_factory.mktemp("multi_body")
    vocab = multi_vocab()
    mono = SyntheticLangSpec(**BASE_LANG, sentence_seed=900)
    train = gen_monolingual(mono, 3000, "train")
    for spec in MULTI_PAIRS.values():
        shifted = SyntheticLangSpec(**BASE_LANG, cipher_seed=spec.cipher_seed,
                                    reorder=spec.reorder, rotate_k=spec.rotate_k,
                                    sentence_seed=spec.sentence_seed + 500_000)
        train += [src for src, _ in gen_parallel(shifted, 1000, "train")]
    valid = gen_monolingual(mono, 100, "valid")
    cfg = ModelConfig(vocab_size=len(vocab), **BODY_CFG)
    plan = TrainPlan(max_steps=1500, batch_tokens=1024, warmup_steps=80, max_lr=2e-3,
                     label_smoothing=0.2, eval_interval=500, seed=1)
    ckpt = pretrain_denoise(build_model(cfg, seed=1), train, valid, PRETRAIN_NOISE,
                            plan, vocab, out)
    return {"checkpoint": ckpt, "dir": out, "vocab": vocab, "config": cfg}


@pytest.fixture(scope="session")
def rev_corpus():
    """Low-resource reversed-cipher pair used by the directional experiments."""
    return make_corpus(REV_PAIR, "rev", n_train=150, n_valid=40, n_test=40)
