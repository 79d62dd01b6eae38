"""Beam-search decoding with length-normalized scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .transformer import Seq2SeqModel, decode, encode, output_logits
from .vocab import BOS_ID, EOS_ID, PAD_ID


@dataclass
class Hypothesis:
    tokens: list[int]       # generated ids, EOS included when finished
    score: float            # length-normalized log probability
    truncated: bool = False


def _normalized(logp_sum: float, length: int) -> float:
    return logp_sum / max(length, 1)


def beam_search(score_fn, *, vocab_size: int, beam: int = 5, max_len: int = 64,
                bos_id: int = BOS_ID, eos_id: int = EOS_ID) -> Hypothesis:
    """Best completed hypothesis under sum(logp)/length.

    `score_fn(prefix)` returns next-token log-probabilities given the prefix
    (which starts with BOS). Beam width 1 is exactly greedy decoding. If no
    hypothesis finishes within max_len the best unfinished one is returned
    with `truncated=True`. Ties break on token ids, so results are
    deterministic.
    """
    k = min(beam, vocab_size)
    live: list[tuple[list[int], float]] = [([bos_id], 0.0)]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        candidates: list[tuple[float, list[int], float]] = []
        for prefix, logp_sum in live:
            logp = score_fn(prefix)
            top = np.argsort(-logp, kind="stable")[:k]
            for tok in top:
                total = logp_sum + float(logp[tok])
                candidates.append((-total, prefix + [int(tok)], total))
        candidates.sort(key=lambda c: (c[0], c[1]))
        live = []
        for _, prefix, total in candidates[:k]:
            gen_len = len(prefix) - 1
            if prefix[-1] == eos_id:
                finished.append(Hypothesis(prefix[1:], _normalized(total, gen_len)))
            else:
                live.append((prefix, total))
        if not live:
            break
    if finished:
        return min(finished, key=lambda h: (-h.score, h.tokens))
    prefix, total = min(live, key=lambda c: (-_normalized(c[1], len(c[0]) - 1), c[0]))
    return Hypothesis(prefix[1:], _normalized(total, len(prefix) - 1), truncated=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def model_score_fn(model: Seq2SeqModel, src_ids: np.ndarray):
    """Per-sentence scorer; the encoder runs once and is reused across steps."""
    src = np.asarray(src_ids).reshape(1, -1)
    enc_out = encode(model, src)

    def score(prefix: list[int]) -> np.ndarray:
        dec_in = np.asarray(prefix, dtype=np.int64).reshape(1, -1)
        logits = output_logits(model, decode(model, dec_in, enc_out, src)).data[0, -1]
        return _log_softmax(logits)

    return score


def decode_sentence(model: Seq2SeqModel, src_ids, beam: int = 5,
                    max_len: int | None = None) -> Hypothesis:
    """Decode one source id sequence; call in eval mode (no active tape)."""
    src_ids = [i for i in src_ids if i != PAD_ID]
    if max_len is None:
        max_len = 2 * len(src_ids) + 8
    score = model_score_fn(model, np.asarray(src_ids))
    hyp = beam_search(score, vocab_size=model.config.vocab_size, beam=beam, max_len=max_len)
    if hyp.tokens and hyp.tokens[-1] == EOS_ID:
        hyp.tokens = hyp.tokens[:-1]
    return hyp


def translate_corpus(model: Seq2SeqModel, srcs: list[list[int]], beam: int = 5,
                     max_len: int | None = None) -> list[Hypothesis]:
    return [decode_sentence(model, s, beam=beam, max_len=max_len) for s in srcs]
