"""Corpus BLEU, exact match, and paired bootstrap significance."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from .errors import ContractError
from .rand import rng_for

MAX_ORDER = 4


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _corpus_stats(hyps: list[list[str]], refs: list[list[str]]):
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            hyp_counts = _ngrams(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    return matches, totals, hyp_len, ref_len


def _score_from_stats(matches, totals, hyp_len, ref_len) -> float:
    log_precisions = []
    for n in range(MAX_ORDER):
        if totals[n] == 0:
            continue  # effective order: skip orders with no candidate n-grams
        if matches[n] == 0:
            if n == 0:
                return 0.0
            p = 1.0 / (totals[n] + 1.0)  # add-one smoothing for zero counts, n >= 2
        else:
            p = matches[n] / totals[n]
        log_precisions.append(math.log(p))
    if not log_precisions or hyp_len == 0:
        return 0.0
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(sum(log_precisions) / len(log_precisions))


def bleu_corpus(hyps: list[list[str]], refs: list[list[str]]) -> float:
    """Corpus BLEU, orders 1-4, brevity penalty, 0-100."""
    if len(hyps) != len(refs):
        raise ContractError(f"bleu_corpus: {len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise ContractError("bleu_corpus: empty corpus")
    return _score_from_stats(*_corpus_stats(hyps, refs))


def exact_match(hyps: list[list[str]], refs: list[list[str]]) -> float:
    if len(hyps) != len(refs):
        raise ContractError("exact_match: length mismatch")
    if not hyps:
        return 0.0
    return sum(h == r for h, r in zip(hyps, refs)) / len(hyps)


def paired_bootstrap(hyps_a: list[list[str]], hyps_b: list[list[str]],
                     refs: list[list[str]], n_resamples: int = 1000,
                     seed: int = 0) -> float:
    """p = fraction of resamples where the corpus-level worse system wins or ties."""
    if not (len(hyps_a) == len(hyps_b) == len(refs)):
        raise ContractError("paired_bootstrap: aligned lists required")
    base_a = bleu_corpus(hyps_a, refs)
    base_b = bleu_corpus(hyps_b, refs)
    better_is_a = base_a >= base_b
    rng = rng_for(seed, "bootstrap")
    n = len(refs)
    wins = 0
    for _ in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        sa = bleu_corpus([hyps_a[i] for i in idx], [refs[i] for i in idx])
        sb = bleu_corpus([hyps_b[i] for i in idx], [refs[i] for i in idx])
        worse, better = (sb, sa) if better_is_a else (sa, sb)
        if worse >= better:
            wins += 1
    return wins / n_resamples
