"""Independent oracles used by the test suite.

These deliberately avoid the library's fast paths: gradients come from
central finite differences, BLEU from a naive loop-based n-gram counter,
and decoding from exhaustive enumeration.
"""

from __future__ import annotations

import math

import numpy as np

from seqgraft.tensor import Tape, Tensor, backward


def fd_gradient(loss_fn, tensor: Tensor, index: tuple, h: float = 1e-5) -> float:
    """Central finite difference of loss_fn() w.r.t. one tensor coordinate."""
    original = tensor.data[index]
    tensor.data[index] = original + h
    f_plus = loss_fn()
    tensor.data[index] = original - h
    f_minus = loss_fn()
    tensor.data[index] = original
    return (f_plus - f_minus) / (2.0 * h)


def check_gradients(build_loss, leaves: list[Tensor], n_coords: int = 5,
                    h: float = 1e-5, rtol: float = 1e-4, seed: int = 0) -> float:
    """Compare backward() gradients with finite differences on sampled coords.

    `build_loss()` must run a fresh forward pass and return the scalar loss
    tensor. Returns the worst relative error seen.
    """
    for t in leaves:
        assert t.dtype == np.float64, "gradient checks require 64-bit leaves"
        t.grad = None
    with Tape(seed=seed, step=0, training=True):
        loss = build_loss()
        backward(loss)

    def loss_value() -> float:
        with Tape(seed=seed, step=0, training=True):
            return build_loss().item()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in leaves:
        assert t.grad is not None, "leaf did not receive a gradient"
        flat_indices = rng.choice(t.size, size=min(n_coords, t.size), replace=False)
        for flat in flat_indices:
            index = np.unravel_index(flat, t.shape)
            numeric = fd_gradient(loss_value, t, index, h)
            analytic = float(t.grad[index])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, err)
            assert err < rtol, (
                f"gradient mismatch at {index}: analytic {analytic:.8g} "
                f"vs numeric {numeric:.8g} (rel err {err:.3g})")
    return worst


def to_float64(model) -> None:
    for t in model.params.tensors():
        t.data = t.data.astype(np.float64)


# ---------------------------------------------------------------------------
# brute-force BLEU
# ---------------------------------------------------------------------------

def bleu_oracle(hyps: list[list[str]], refs: list[list[str]]) -> float:
    """Naive corpus BLEU: explicit loops, dict counting, same stated formula
    (orders 1-4, per-sentence clipping, add-one smoothing for zero counts at
    orders >= 2, skip orders with no candidate n-grams, brevity penalty)."""
    matches = [0, 0, 0, 0]
    totals = [0, 0, 0, 0]
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in (1, 2, 3, 4):
            hyp_grams = [tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1)]
            ref_grams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
            totals[n - 1] += len(hyp_grams)
            for gram in set(hyp_grams):
                matches[n - 1] += min(hyp_grams.count(gram), ref_grams.count(gram))
    log_sum = 0.0
    used = 0
    for n in (1, 2, 3, 4):
        if totals[n - 1] == 0:
            continue
        if matches[n - 1] == 0:
            if n == 1:
                return 0.0
            p = 1.0 / (totals[n - 1] + 1.0)
        else:
            p = matches[n - 1] / totals[n - 1]
        log_sum += math.log(p)
        used += 1
    if used == 0 or hyp_len == 0:
        return 0.0
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_sum / used)


# ---------------------------------------------------------------------------
# exhaustive decoding
# ---------------------------------------------------------------------------

def enumerate_best(score_fn, vocab_size: int, max_len: int, bos_id: int,
                   eos_id: int) -> tuple[list[int], float]:
    """Best EOS-terminated sequence up to max_len under sum(logp)/length."""
    best_tokens, best_score = None, -math.inf
    stack = [([bos_id], 0.0)]
    while stack:
        prefix, total = stack.pop()
        gen = len(prefix) - 1
        if gen > 0 and prefix[-1] == eos_id:
            score = total / gen
            if score > best_score or (score == best_score and prefix[1:] < best_tokens):
                best_tokens, best_score = prefix[1:], score
            continue
        if gen >= max_len:
            continue
        logp = score_fn(prefix)
        for tok in range(vocab_size):
            stack.append((prefix + [tok], total + float(logp[tok])))
    return best_tokens, best_score
