"""Pretraining/fine-tuning loops, round-robin scheduling, evaluation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .adapters import default_adapter_config, insert_adapters
from .checkpoint import (
    load_checkpoint,
    load_optimizer_state,
    save_checkpoint,
    save_optimizer_state,
)
from .data import NoiseSpec, ParallelCorpus, noise_document
from .decoding import translate_corpus
from .errors import ConfigError, TrainingDiverged
from .freeze import Recipe, apply_policy, resolve_recipe
from .input_module import InputModuleConfig, build_input_module, graft
from .metrics import bleu_corpus, exact_match
from .optim import Adam, Schedule, accumulate_cycle
from .rand import rng_for
from .transformer import Seq2SeqModel, forward_train, per_token_nll
from .vocab import BOS_ID, EOS_ID, PAD_ID, BpeVocab, Vocab


@dataclass
class TrainPlan:
    recipe: str = "finetune-all"
    max_steps: int = 300
    batch_tokens: int = 512
    warmup_steps: int = 40
    max_lr: float = 1e-3
    lr_decay: str = "inverse_sqrt"
    label_smoothing: float = 0.1
    selection: str = "best-valid"    # or "fixed-step"
    eval_interval: int = 100
    seed: int = 0
    beam: int = 5
    max_decode_len: int | None = None
    adapter_dropout: float = 0.1
    max_grad_norm: float | None = None

    def schedule(self) -> Schedule:
        return Schedule(self.warmup_steps, self.max_lr, self.lr_decay)


@dataclass
class EvalResult:
    bleu: float
    exact_match: float
    valid_nll: float
    p_value: float | None = None


class MetricsWriter:
    """Line-oriented tab-delimited training records for plotting."""

    HEADER = "step\tsplit\tpair\tnll\tbleu\n"

    def __init__(self, path):
        self.path = Path(path)
        self._f = open(self.path, "w", encoding="utf-8")
        self._f.write(self.HEADER)

    def row(self, step: int, split: str, pair: str = "-",
            nll: float | None = None, bleu: float | None = None) -> None:
        nll_s = "" if nll is None else f"{nll:.6f}"
        bleu_s = "" if bleu is None else f"{bleu:.4f}"
        self._f.write(f"{step}\t{split}\t{pair}\t{nll_s}\t{bleu_s}\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def pack_batch(pairs: list[tuple[list[int], list[int]]]) -> tuple[np.ndarray, np.ndarray]:
    max_s = max(len(p[0]) for p in pairs)
    max_t = max(len(p[1]) for p in pairs)
    src = np.full((len(pairs), max_s), PAD_ID, dtype=np.int64)
    tgt = np.full((len(pairs), max_t), PAD_ID, dtype=np.int64)
    for i, (s, t) in enumerate(pairs):
        src[i, :len(s)] = s
        tgt[i, :len(t)] = t
    return src, tgt


def make_batches(encoded: list[tuple[list[int], list[int]]], batch_tokens: int,
                 seed: int, epoch: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffle then greedily pack sentence pairs up to a padded token budget."""
    order = rng_for(seed, "batches", epoch).permutation(len(encoded))
    batches = []
    current: list = []
    max_s = max_t = 0
    for idx in order:
        s, t = encoded[idx]
        new_s, new_t = max(max_s, len(s)), max(max_t, len(t))
        if current and (len(current) + 1) * (new_s + new_t) > batch_tokens:
            batches.append(pack_batch(current))
            current, max_s, max_t = [], 0, 0
            new_s, new_t = len(s), len(t)
        current.append((s, t))
        max_s, max_t = new_s, new_t
    if current:
        batches.append(pack_batch(current))
    return batches


class BatchSchedule:
    """Maps a global 1-based step to a deterministic (epoch, batch).

    Epoch batch lists come from a pure builder function, so training can be
    resumed mid-run and replay the exact same sequence of batches.
    """

    def __init__(self, build_epoch):
        self._build = build_epoch
        self._epoch = 0
        self._start = 1
        self._batches = build_epoch(0)

    def batch_at(self, step: int):
        while step >= self._start + len(self._batches):
            self._start += len(self._batches)
            self._epoch += 1
            self._batches = self._build(self._epoch)
        return self._batches[step - self._start]


def corpus_nll(model: Seq2SeqModel, batches) -> float:
    total, count = 0.0, 0
    for src, tgt in batches:
        nll = per_token_nll(model, src, tgt)
        total += float(nll.sum())
        count += int((tgt[:, 1:] != PAD_ID).sum())
    return total / max(count, 1)


def _train_step(model: Seq2SeqModel, opt: Adam, src: np.ndarray, tgt: np.ndarray,
                plan: TrainPlan, step: int) -> float:
    with T.Tape(seed=plan.seed, step=step, training=model.training):
        loss_sum, ntok = forward_train(model, src, tgt, plan.label_smoothing,
                                       reduction="sum")
        T.backward(T.scale(loss_sum, 1.0 / ntok))
    opt.step()
    return loss_sum.item() / ntok


def _write_figures(out_dir: Path, metrics_path: Path) -> None:
    from .report import plot_training_curves
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    plot_training_curves(metrics_path, fig_dir / "training_curves.png")


# ---------------------------------------------------------------------------
# denoising pretraining
# ---------------------------------------------------------------------------

def _documents(sentences: list[list[str]], doc_len: int) -> list[list[list[str]]]:
    return [sentences[i:i + doc_len] for i in range(0, len(sentences), doc_len)]


def _denoise_pairs(docs, noise: NoiseSpec, vocab: Vocab, seed: int, label: str,
                   epoch: int) -> list[tuple[list[int], list[int]]]:
    out = []
    for i, doc in enumerate(docs):
        noised = noise_document(doc, noise, rng_for(seed, label, epoch, i))
        original = [w for sent in doc for w in sent]
        src = vocab.encode(noised, add_eos=True)
        tgt = vocab.encode(original, add_bos=True, add_eos=True)
        out.append((src, tgt))
    return out


def pretrain_denoise(model: Seq2SeqModel, train_sentences, valid_sentences,
                     noise: NoiseSpec, plan: TrainPlan, vocab: Vocab, out_dir,
                     doc_len: int = 3, resume_from=None) -> Path:
    """Train src=noised document, tgt=original; returns the selected checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_docs = _documents(train_sentences, doc_len)
    valid_docs = _documents(valid_sentences, doc_len)
    # validation noise is fixed across evals so the NLL series is comparable
    valid_pairs = _denoise_pairs(valid_docs, noise, vocab, plan.seed, "valid-noise", 0)
    valid_batches = make_batches(valid_pairs, plan.batch_tokens, plan.seed, 0)

    schedule = BatchSchedule(lambda epoch: make_batches(
        _denoise_pairs(train_docs, noise, vocab, plan.seed, "noise", epoch),
        plan.batch_tokens, plan.seed, epoch))
    metrics = MetricsWriter(out_dir / "metrics.tsv")
    start_step = 1
    if resume_from is not None:
        resume_from = Path(resume_from)
        state = json.loads((resume_from / "train_state.json").read_text())
        start_step = state["step"] + 1
        model = load_checkpoint(resume_from / "last.ckpt").train()
        opt = Adam(model, plan.schedule(), max_grad_norm=plan.max_grad_norm)
        load_optimizer_state(resume_from / "optimizer.bin", opt)
        initial_nll = state["initial_valid_nll"]
        best_nll, best_step = state["best_valid_nll"], state["best_step"]
    else:
        opt = Adam(model, plan.schedule(), max_grad_norm=plan.max_grad_norm)
        model.eval()
        initial_nll = corpus_nll(model, valid_batches)
        model.train()
        metrics.row(0, "valid", nll=initial_nll)
        best_nll, best_step = initial_nll, 0
        save_checkpoint(out_dir / "best.ckpt", model)
    bad_evals = 0
    running: list[float] = []
    for step in range(start_step, plan.max_steps + 1):
        src, tgt = schedule.batch_at(step)
        running.append(_train_step(model, opt, src, tgt, plan, step))
        if step % plan.eval_interval == 0 or step == plan.max_steps:
            metrics.row(step, "train", nll=float(np.mean(running)))
            running.clear()
            model.eval()
            nll = corpus_nll(model, valid_batches)
            model.train()
            metrics.row(step, "valid", nll=nll)
            if nll < best_nll:
                best_nll, best_step = nll, step
                save_checkpoint(out_dir / "best.ckpt", model)
            if not np.isfinite(nll) or nll > 2.0 * initial_nll:
                bad_evals += 1
                if bad_evals >= 3:
                    metrics.close()
                    raise TrainingDiverged(
                        f"valid NLL {nll:.4f} > 2x initial {initial_nll:.4f} "
                        f"for 3 consecutive evals (step {step})")
            else:
                bad_evals = 0
    save_checkpoint(out_dir / "last.ckpt", model)
    save_optimizer_state(out_dir / "optimizer.bin", opt)
    (out_dir / "train_state.json").write_text(
        json.dumps({"step": plan.max_steps, "best_step": best_step,
                    "best_valid_nll": best_nll, "initial_valid_nll": initial_nll},
                   sort_keys=True))
    metrics.close()
    _write_figures(out_dir, out_dir / "metrics.tsv")
    return out_dir / ("best.ckpt" if plan.selection == "best-valid" else "last.ckpt")


# ---------------------------------------------------------------------------
# bilingual fine-tuning
# ---------------------------------------------------------------------------

def _encode_pairs(pairs, src_tok, tgt_vocab):
    return [(src_tok.encode(s, add_eos=True), tgt_vocab.encode(t, add_bos=True, add_eos=True))
            for s, t in pairs]


def prepare_finetune_model(body_ckpt, plan: TrainPlan,
                           graft_cfg: InputModuleConfig | None,
                           train_src_sentences) -> tuple[Seq2SeqModel, Recipe, BpeVocab | None]:
    """Load body, learn source BPE + graft if requested, insert adapters, freeze."""
    model = load_checkpoint(body_ckpt)
    recipe = resolve_recipe(plan.recipe, model.config.n_dec_layers)
    if recipe.requires_input_module and graft_cfg is None:
        raise ConfigError(f"recipe {recipe.name!r} requires a grafted input module")
    src_bpe = None
    if graft_cfg is not None:
        if model.input_module is not None:
            raise ConfigError("body checkpoint already contains an input module")
        src_bpe = BpeVocab.learn(train_src_sentences, graft_cfg.src_vocab_size)
        im_cfg = dataclasses.replace(graft_cfg, src_vocab_size=len(src_bpe.tokens))
        im = build_input_module(im_cfg, model.config.d_model, seed=plan.seed)
        graft(model, im)
    if recipe.adapters is not None and recipe.adapters not in model.adapters:
        cfg = default_adapter_config(recipe.adapter_kind, model.config.d_model,
                                     plan.adapter_dropout)
        insert_adapters(model, recipe.adapters, cfg)
    apply_policy(model, recipe.policy)
    return model, recipe, src_bpe


def evaluate_model(model: Seq2SeqModel, test_pairs, src_tok, tgt_vocab,
                   beam: int = 5, max_len: int | None = None) -> tuple[EvalResult, list[list[str]]]:
    model.eval()
    srcs = [src_tok.encode(s, add_eos=True) for s, _ in test_pairs]
    refs = [t for _, t in test_pairs]
    hyps = [tgt_vocab.decode(h.tokens) for h in translate_corpus(model, srcs, beam, max_len)]
    valid = corpus_nll(model, make_batches(_encode_pairs(test_pairs, src_tok, tgt_vocab),
                                           4096, 0, 0))
    result = EvalResult(bleu=bleu_corpus(hyps, refs), exact_match=exact_match(hyps, refs),
                        valid_nll=valid)
    return result, hyps


def finetune_bilingual(body_ckpt, corpus: ParallelCorpus, plan: TrainPlan,
                       tgt_vocab: Vocab, out_dir,
                       graft_cfg: InputModuleConfig | None = None
                       ) -> tuple[Path, EvalResult]:
    """Fine-tune a pretrained body on one language pair and score the test set."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, recipe, src_bpe = prepare_finetune_model(
        body_ckpt, plan, graft_cfg, [s for s, _ in corpus.train])
    src_tok = src_bpe if src_bpe is not None else tgt_vocab

    train_enc = _encode_pairs(corpus.train, src_tok, tgt_vocab)
    valid_batches = make_batches(_encode_pairs(corpus.valid, src_tok, tgt_vocab),
                                 plan.batch_tokens, plan.seed, 0)
    schedule = BatchSchedule(
        lambda epoch: make_batches(train_enc, plan.batch_tokens, plan.seed, epoch))
    opt = Adam(model, plan.schedule(), max_grad_norm=plan.max_grad_norm)
    metrics = MetricsWriter(out_dir / "metrics.tsv")

    model.eval()
    best_nll = corpus_nll(model, valid_batches)
    model.train()
    metrics.row(0, "valid", corpus.name, nll=best_nll)
    save_checkpoint(out_dir / "best.ckpt", model)
    running: list[float] = []
    for step in range(1, plan.max_steps + 1):
        src, tgt = schedule.batch_at(step)
        running.append(_train_step(model, opt, src, tgt, plan, step))
        if step % plan.eval_interval == 0 or step == plan.max_steps:
            metrics.row(step, "train", corpus.name, nll=float(np.mean(running)))
            running.clear()
            model.eval()
            nll = corpus_nll(model, valid_batches)
            model.train()
            metrics.row(step, "valid", corpus.name, nll=nll)
            if nll < best_nll:
                best_nll = nll
                save_checkpoint(out_dir / "best.ckpt", model)
    save_checkpoint(out_dir / "last.ckpt", model)
    selected = out_dir / ("best.ckpt" if plan.selection == "best-valid" else "last.ckpt")

    scored = load_checkpoint(selected)
    result, hyps = evaluate_model(scored, corpus.test, src_tok, tgt_vocab,
                                  beam=plan.beam, max_len=plan.max_decode_len)
    metrics.row(plan.max_steps, "test", corpus.name, nll=result.valid_nll, bleu=result.bleu)
    metrics.close()

    tgt_vocab.save(out_dir / "target_vocab.txt")
    if src_bpe is not None:
        src_bpe.save(out_dir / "source_bpe.json")
    with open(out_dir / "translations.txt", "w", encoding="utf-8") as f:
        for h in hyps:
            f.write(" ".join(h) + "\n")
    (out_dir / "report.json").write_text(json.dumps(
        {"pair": corpus.name, "recipe": recipe.name, "bleu": result.bleu,
         "exact_match": result.exact_match, "valid_nll": result.valid_nll},
        indent=2, sort_keys=True))
    _write_figures(out_dir, out_dir / "metrics.tsv")
    return selected, result


# ---------------------------------------------------------------------------
# round-robin multilingual fine-tuning
# ---------------------------------------------------------------------------

@dataclass
class RoundRobinResult:
    checkpoint: Path
    results: dict[str, EvalResult]
    n_updates: int
    n_passes: int


def round_robin(body_ckpt, corpora: dict[str, ParallelCorpus], plan: TrainPlan,
                tgt_vocab: Vocab, out_dir) -> RoundRobinResult:
    """One batch per pair per cycle in fixed name order, one update per cycle.

    Pair iterators rewind on exhaustion (epoch wrap); nothing is skipped or
    frequency-weighted. Evaluation happens once at the fixed step count.
    """
    if len(corpora) < 2:
        raise ConfigError("round_robin: need at least 2 language pairs")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = load_checkpoint(body_ckpt)
    recipe = resolve_recipe(plan.recipe, model.config.n_dec_layers)
    if recipe.requires_input_module:
        raise ConfigError(f"recipe {recipe.name!r} needs a graft; round_robin trains bodies")
    if recipe.adapters is not None and recipe.adapters not in model.adapters:
        insert_adapters(model, recipe.adapters,
                        default_adapter_config(recipe.adapter_kind, model.config.d_model,
                                               plan.adapter_dropout))
    apply_policy(model, recipe.policy)

    names = sorted(corpora)   # fixed round-robin order
    schedules = {
        name: BatchSchedule(lambda epoch, _n=name: make_batches(
            _encode_pairs(corpora[_n].train, tgt_vocab, tgt_vocab),
            plan.batch_tokens, plan.seed, epoch))
        for name in names
    }
    opt = Adam(model, plan.schedule(), max_grad_norm=plan.max_grad_norm)
    metrics = MetricsWriter(out_dir / "metrics.tsv")
    n_passes = 0
    history: dict[str, list[float]] = {n: [] for n in names}
    for cycle in range(1, plan.max_steps + 1):
        batches = [(name, *schedules[name].batch_at(cycle)) for name in names]
        losses = accumulate_cycle(opt, batches, plan.label_smoothing, plan.seed, cycle)
        n_passes += len(batches)
        for name, value in losses.items():
            history[name].append(value)
        if cycle % plan.eval_interval == 0 or cycle == plan.max_steps:
            for name in names:
                metrics.row(cycle, "train", name, nll=float(np.mean(history[name])))
                history[name].clear()
    ckpt = save_checkpoint(out_dir / "last.ckpt", model)

    results: dict[str, EvalResult] = {}
    for name in names:
        result, _hyps = evaluate_model(model, corpora[name].test, tgt_vocab, tgt_vocab,
                                       beam=plan.beam, max_len=plan.max_decode_len)
        model.train()
        results[name] = result
        metrics.row(plan.max_steps, "test", name, nll=result.valid_nll, bleu=result.bleu)
    metrics.close()
    (out_dir / "report.json").write_text(json.dumps(
        {name: {"bleu": r.bleu, "exact_match": r.exact_match, "valid_nll": r.valid_nll}
         for name, r in results.items()}, indent=2, sort_keys=True))
    _write_figures(out_dir, out_dir / "metrics.tsv")
    return RoundRobinResult(ckpt, results, n_updates=opt.step_count, n_passes=n_passes)
