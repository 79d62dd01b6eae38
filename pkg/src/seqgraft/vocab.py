"""Token/id vocabularies: word-level tables and a small character BPE learner.

Both kinds share the same special-token layout so models are agnostic to
which tokenizer produced their ids.
"""

from __future__ import annotations

import json
from collections import Counter

from .errors import ConfigError

PAD_ID, BOS_ID, EOS_ID, UNK_ID, MASK_ID = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ["<pad>", "<s>", "</s>", "<unk>", "<mask>"]
MASK_TOKEN = "<mask>"

_WORD_END = "</w>"


class Vocab:
    """Word-level vocabulary; token ids are stable across save/load."""

    def __init__(self, tokens: list[str]):
        if tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            tokens = SPECIAL_TOKENS + [t for t in tokens if t not in SPECIAL_TOKENS]
        self.tokens = tokens
        self.ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_corpus(cls, sentences: list[list[str]]) -> "Vocab":
        words = sorted({w for sent in sentences for w in sent})
        return cls(SPECIAL_TOKENS + words)

    def encode(self, words: list[str], add_bos: bool = False, add_eos: bool = True) -> list[int]:
        ids = [self.ids.get(w, UNK_ID) for w in words]
        if add_bos:
            ids.insert(0, BOS_ID)
        if add_eos:
            ids.append(EOS_ID)
        return ids

    def decode(self, ids: list[int]) -> list[str]:
        out = []
        for i in ids:
            if i == EOS_ID:
                break
            if i in (PAD_ID, BOS_ID):
                continue
            out.append(self.tokens[i])
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self.tokens):
                f.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        tokens = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.rstrip("\n"):
                    tokens.append(line.rstrip("\n").split("\t")[0])
        return cls(tokens)


class BpeVocab:
    """Character-level byte-pair-encoding vocabulary.

    Merges are learned greedily on highest pair frequency with lexicographic
    tie-breaking, so learning is deterministic. Encoding applies merges in
    learned order; decoding is exact for any sentence over the alphabet.
    """

    def __init__(self, alphabet: list[str], merges: list[tuple[str, str]]):
        self.alphabet = sorted(alphabet)
        self.merges = merges
        self.tokens = SPECIAL_TOKENS + self.alphabet + [a + b for a, b in merges]
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        self._merge_ranks = {pair: r for r, pair in enumerate(merges)}
        self._cache: dict[str, list[str]] = {}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        """Learned inventory size: alphabet plus merges (specials excluded)."""
        return len(self.alphabet) + len(self.merges)

    @classmethod
    def learn(cls, sentences: list[list[str]], target_size: int) -> "BpeVocab":
        word_freq = Counter(w for sent in sentences for w in sent)
        if not word_freq:
            raise ConfigError("bpe_learn: empty corpus")
        alphabet = sorted({c for w in word_freq for c in w} | {_WORD_END})
        if target_size < len(alphabet):
            raise ConfigError(
                f"bpe_learn: target_size {target_size} below alphabet size {len(alphabet)}")
        pieces = {w: tuple(w) + (_WORD_END,) for w in word_freq}
        merges: list[tuple[str, str]] = []
        while len(alphabet) + len(merges) < target_size:
            pair_freq: Counter = Counter()
            for w, sym in pieces.items():
                f = word_freq[w]
                for a, b in zip(sym, sym[1:]):
                    pair_freq[(a, b)] += f
            if not pair_freq:
                break
            top = max(pair_freq.values())
            best = min(p for p, c in pair_freq.items() if c == top)
            merges.append(best)
            merged = best[0] + best[1]
            for w, sym in pieces.items():
                pieces[w] = _apply_merge(sym, best, merged)
        return cls(alphabet, merges)

    def _segment(self, word: str) -> list[str]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        sym = tuple(word) + (_WORD_END,)
        for pair in self.merges:
            if len(sym) < 2:
                break
            sym = _apply_merge(sym, pair, pair[0] + pair[1])
        self._cache[word] = list(sym)
        return list(sym)

    def encode(self, words: list[str], add_bos: bool = False, add_eos: bool = True) -> list[int]:
        ids = []
        for w in words:
            ids.extend(self.ids.get(s, UNK_ID) for s in self._segment(w))
        if add_bos:
            ids.insert(0, BOS_ID)
        if add_eos:
            ids.append(EOS_ID)
        return ids

    def decode(self, ids: list[int]) -> list[str]:
        text = []
        for i in ids:
            if i == EOS_ID:
                break
            if i < len(SPECIAL_TOKENS):
                continue
            text.append(self.tokens[i])
        words = "".join(text).split(_WORD_END)
        return [w for w in words if w]

    def save(self, path) -> None:
        payload = {"kind": "bpe", "alphabet": self.alphabet,
                   "merges": [list(m) for m in self.merges]}
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, sort_keys=True)

    @classmethod
    def load(cls, path) -> "BpeVocab":
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
        return cls(payload["alphabet"], [tuple(m) for m in payload["merges"]])


def _apply_merge(sym: tuple[str, ...], pair: tuple[str, str], merged: str) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(sym):
        if i + 1 < len(sym) and sym[i] == pair[0] and sym[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(sym[i])
            i += 1
    return tuple(out)
