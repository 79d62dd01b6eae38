"""Synthetic parallel languages and denoising noise.

A "language pair" is built from a base token inventory with Zipfian
frequencies: the target side is a base-language sentence, the source side is
a bijective token substitution (cipher) of it under a word-order transform.
Translating is therefore exactly invertible, which gives the test-set oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError
from .rand import rng_for
from .vocab import MASK_TOKEN

SPLIT_OFFSETS = {"train": 0, "valid": 1_000_000, "test": 2_000_000}
REORDER_KINDS = ("none", "reverse", "swap-adjacent", "rotate-k")

_CONSONANTS = "bdfgklmnprstvz"   # no q: foreign words get a q suffix, keeping
_VOWELS = "aeiou"                # the two inventories disjoint by construction


@dataclass
class SyntheticLangSpec:
    vocab_size: int = 96
    zipf_exponent: float = 1.1
    inventory_seed: int = 0
    cipher_kind: str = "substitution"   # or "identity"
    cipher_seed: int = 1
    reorder: str = "none"
    rotate_k: int = 1
    sentence_seed: int = 0
    min_len: int = 3
    max_len: int = 12
    branching: int = 0   # 0: tokens i.i.d.; k>0: Markov grammar, k successors/word

    def __post_init__(self):
        if self.reorder not in REORDER_KINDS:
            raise ConfigError(f"unknown reorder {self.reorder!r}; expected one of {REORDER_KINDS}")
        if self.cipher_kind not in ("substitution", "identity"):
            raise ConfigError(f"unknown cipher kind {self.cipher_kind!r}")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        max_words = (len(_CONSONANTS) * len(_VOWELS)) ** 2
        if not 2 <= self.vocab_size <= max_words:
            raise ConfigError(f"vocab_size must be in [2, {max_words}]")
        if not 0 <= self.branching <= self.vocab_size:
            raise ConfigError("branching must be in [0, vocab_size]")


def _all_words() -> list[str]:
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]
    return [a + b for a in syllables for b in syllables]


def base_inventory(spec: SyntheticLangSpec) -> list[str]:
    words = _all_words()
    order = rng_for(spec.inventory_seed, "inventory").permutation(len(words))
    return [words[i] for i in order[: spec.vocab_size]]


def foreign_inventory(spec: SyntheticLangSpec) -> list[str]:
    words = _all_words()
    order = rng_for(spec.cipher_seed, "foreign").permutation(len(words))
    return [words[i] + "q" for i in order[: spec.vocab_size]]


def cipher_map(spec: SyntheticLangSpec) -> dict[str, str]:
    base = base_inventory(spec)
    if spec.cipher_kind == "identity":
        return {w: w for w in base}
    return dict(zip(base, foreign_inventory(spec)))


def _zipf_probs(spec: SyntheticLangSpec) -> np.ndarray:
    ranks = np.arange(1, spec.vocab_size + 1, dtype=np.float64)
    p = ranks ** (-spec.zipf_exponent)
    return p / p.sum()


def _successor_table(spec: SyntheticLangSpec) -> np.ndarray:
    """[vocab, branching] allowed-successor ids of the Markov grammar.

    Derived from the inventory seed, so every language sharing an inventory
    shares the same underlying grammar (ciphers relabel words, not structure).
    """
    rng = rng_for(spec.inventory_seed, "grammar", spec.branching)
    return np.stack([rng.choice(spec.vocab_size, size=spec.branching, replace=False)
                     for _ in range(spec.vocab_size)])


def apply_reorder(tokens: list[str], kind: str, k: int = 1) -> list[str]:
    if kind == "none":
        return list(tokens)
    if kind == "reverse":
        return tokens[::-1]
    if kind == "swap-adjacent":
        out = list(tokens)
        for i in range(0, len(out) - 1, 2):
            out[i], out[i + 1] = out[i + 1], out[i]
        return out
    if kind == "rotate-k":
        k = k % len(tokens) if tokens else 0
        return tokens[k:] + tokens[:k]
    raise ConfigError(f"unknown reorder {kind!r}")


def invert_reorder(tokens: list[str], kind: str, k: int = 1) -> list[str]:
    if kind == "rotate-k":
        k = k % len(tokens) if tokens else 0
        return apply_reorder(tokens, "rotate-k", len(tokens) - k if tokens else 0)
    return apply_reorder(tokens, kind, k)   # reverse and swap are involutions


def _sample_sentence(spec: SyntheticLangSpec, inventory: list[str], probs: np.ndarray,
                     successors: np.ndarray | None, split: str, index: int) -> list[str]:
    rng = rng_for(spec.sentence_seed, SPLIT_OFFSETS[split] + index)
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    if successors is None:
        picks = rng.choice(spec.vocab_size, size=length, p=probs)
    else:
        branch_probs = _zipf_probs(
            SyntheticLangSpec(vocab_size=spec.branching, zipf_exponent=spec.zipf_exponent))
        picks = [int(rng.choice(spec.vocab_size, p=probs))]
        while len(picks) < length:
            nxt = successors[picks[-1]][int(rng.choice(spec.branching, p=branch_probs))]
            picks.append(int(nxt))
    return [inventory[i] for i in picks]


def gen_monolingual(spec: SyntheticLangSpec, n: int, split: str = "train") -> list[list[str]]:
    inventory = base_inventory(spec)
    probs = _zipf_probs(spec)
    successors = _successor_table(spec) if spec.branching else None
    return [_sample_sentence(spec, inventory, probs, successors, split, i) for i in range(n)]


def gen_parallel(spec: SyntheticLangSpec, n: int,
                 split: str = "train") -> list[tuple[list[str], list[str]]]:
    """n (src, tgt) pairs with src = reorder(cipher(tgt)); deterministic under seed."""
    if n < 1:
        raise ContractError("gen_parallel: n must be >= 1")
    cipher = cipher_map(spec)
    pairs = []
    for tgt in gen_monolingual(spec, n, split):
        src = apply_reorder([cipher[w] for w in tgt], spec.reorder, spec.rotate_k)
        pairs.append((src, tgt))
    return pairs


def translate_oracle(spec: SyntheticLangSpec, src: list[str]) -> list[str]:
    """Exact reference translation: invert the reorder, then the cipher."""
    inverse = {f: b for b, f in cipher_map(spec).items()}
    return [inverse[w] for w in invert_reorder(src, spec.reorder, spec.rotate_k)]


# ---------------------------------------------------------------------------
# denoising noise
# ---------------------------------------------------------------------------

@dataclass
class NoiseSpec:
    mask_ratio: float = 0.3
    mean_span_len: float = 3.0
    sentence_shuffle: bool = True
    rotate_start: bool = True

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError(f"mask_ratio must be in [0, 1], got {self.mask_ratio}")
        if self.mean_span_len < 0:
            raise ConfigError("mean_span_len must be >= 0")


def noise_document(doc: list[list[str]], spec: NoiseSpec,
                   rng: np.random.Generator) -> list[str]:
    """Noised flat token sequence; the reconstruction target stays the original.

    Order of operations: rotate the document start, shuffle sentences, then
    replace token spans with single mask tokens. Zero-length spans insert a
    mask without consuming tokens.
    """
    if not doc:
        raise ContractError("noise_document: empty document")
    sents = [list(s) for s in doc]
    if spec.rotate_start and len(sents) > 1:
        k = int(rng.integers(len(sents)))
        sents = sents[k:] + sents[:k]
    if spec.sentence_shuffle and len(sents) > 1:
        order = rng.permutation(len(sents))
        sents = [sents[i] for i in order]
    tokens = [w for s in sents for w in s]
    if spec.mask_ratio == 0.0:
        return tokens
    n = len(tokens)
    if spec.mask_ratio >= 1.0:
        return [MASK_TOKEN]

    need = int(round(spec.mask_ratio * n))
    masked = np.zeros(n, dtype=bool)
    span_start = np.zeros(n, dtype=bool)
    insert_at = []
    tries = 0
    while need > 0 and tries < 200:
        length = int(rng.poisson(spec.mean_span_len))
        if length == 0:
            insert_at.append(int(rng.integers(n + 1)))
            tries += 1
            continue
        length = min(length, need)
        start = int(rng.integers(n - length + 1))
        if masked[start:start + length].any():
            tries += 1
            continue
        masked[start:start + length] = True
        span_start[start] = True
        need -= length
    out = []
    for i, tok in enumerate(tokens):
        out.extend([MASK_TOKEN] * insert_at.count(i))
        if span_start[i]:
            out.append(MASK_TOKEN)
        if not masked[i]:
            out.append(tok)
    out.extend([MASK_TOKEN] * insert_at.count(n))
    return out


# ---------------------------------------------------------------------------
# corpora on disk
# ---------------------------------------------------------------------------

@dataclass
class ParallelCorpus:
    name: str
    train: list[tuple[list[str], list[str]]] = field(default_factory=list)
    valid: list[tuple[list[str], list[str]]] = field(default_factory=list)
    test: list[tuple[list[str], list[str]]] = field(default_factory=list)


def make_corpus(spec: SyntheticLangSpec, name: str, n_train: int, n_valid: int,
                n_test: int) -> ParallelCorpus:
    return ParallelCorpus(
        name=name,
        train=gen_parallel(spec, n_train, "train"),
        valid=gen_parallel(spec, n_valid, "valid"),
        test=gen_parallel(spec, n_test, "test"),
    )


def save_sentences(path, sentences: list[list[str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in sentences:
            f.write(" ".join(s) + "\n")


def load_sentences(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f if line.strip()]


def save_corpus(corpus: ParallelCorpus, directory) -> None:
    directory = Path(directory)
    for split in ("train", "valid", "test"):
        pairs = getattr(corpus, split)
        save_sentences(directory / f"{corpus.name}.{split}.src", [p[0] for p in pairs])
        save_sentences(directory / f"{corpus.name}.{split}.tgt", [p[1] for p in pairs])


def load_corpus(directory, name: str) -> ParallelCorpus:
    directory = Path(directory)
    corpus = ParallelCorpus(name=name)
    for split in ("train", "valid", "test"):
        srcs = load_sentences(directory / f"{name}.{split}.src")
        tgts = load_sentences(directory / f"{name}.{split}.tgt")
        if len(srcs) != len(tgts):
            raise ContractError(f"{name}.{split}: src/tgt line counts differ")
        setattr(corpus, split, list(zip(srcs, tgts)))
    return corpus
