"""Command-line entry point: gen-data | pretrain | finetune | round-robin |
translate | evaluate | params | memory.

Every run command reads a JSON config (sections: model, data, noise, plan,
input_module, plus command-specific keys), applies flag overrides, and writes
the fully resolved config next to its outputs so a run is reproducible from
the output directory alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .adapters import default_adapter_config
from .checkpoint import load_checkpoint
from .data import (
    NoiseSpec,
    SyntheticLangSpec,
    base_inventory,
    foreign_inventory,
    gen_monolingual,
    gen_parallel,
    load_corpus,
    load_sentences,
    make_corpus,
    save_corpus,
    save_sentences,
)
from .decoding import translate_corpus
from .errors import ConfigError, SeqgraftError
from .freeze import memory_report_for, recipe_catalog, resolve_recipe
from .input_module import InputModuleConfig, im_manifest
from .metrics import bleu_corpus, exact_match, paired_bootstrap
from .paramtree import count_entries
from .training import (
    EvalResult,
    TrainPlan,
    finetune_bilingual,
    pretrain_denoise,
    round_robin,
)
from .transformer import ModelConfig, model_manifest, profile_config
from .vocab import SPECIAL_TOKENS, BpeVocab, Vocab
from .adapters import adapter_entries


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(p, encoding="utf-8") as f:
        return json.load(f)


def _model_config(cfg: dict, profile: str | None) -> ModelConfig:
    base = profile_config(profile or cfg.get("profile", "toy"))
    overrides = cfg.get("model", {})
    return dataclasses.replace(base, **overrides)


def _plan(cfg: dict, args) -> TrainPlan:
    plan = TrainPlan(**cfg.get("plan", {}))
    if getattr(args, "seed", None) is not None:
        plan.seed = args.seed
    if getattr(args, "recipe", None) is not None:
        plan.recipe = args.recipe
    if getattr(args, "beam", None) is not None:
        plan.beam = args.beam
    return plan


def _im_config(cfg: dict) -> InputModuleConfig | None:
    section = cfg.get("input_module")
    if section is None:
        return None
    return InputModuleConfig(**section)


def default_im_config(model_cfg: ModelConfig) -> InputModuleConfig:
    if model_cfg.d_model >= 512:
        return InputModuleConfig(d_s=512, n_layers=6, src_vocab_size=5000,
                                 max_positions=model_cfg.max_positions)
    return InputModuleConfig(d_s=model_cfg.d_model // 2, n_layers=2, src_vocab_size=512,
                             max_positions=model_cfg.max_positions)


def _write_resolved(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=str))


def _resolved_payload(cfg: dict, args, **extra) -> dict:
    payload = dict(cfg)
    payload.update(extra)
    for key in ("seed", "recipe", "beam", "profile"):
        value = getattr(args, key, None)
        if value is not None:
            payload.setdefault("overrides", {})[key] = value
    return payload


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def _lang_spec(base: dict, pair: dict | None = None, seed_shift: int = 0) -> SyntheticLangSpec:
    fields = {k: v for k, v in base.items() if k in
              {"vocab_size", "zipf_exponent", "inventory_seed", "min_len", "max_len"}}
    if pair:
        fields.update({k: v for k, v in pair.items() if k in
                       {"cipher_kind", "cipher_seed", "reorder", "rotate_k", "sentence_seed"}})
    spec = SyntheticLangSpec(**fields)
    return dataclasses.replace(spec, sentence_seed=spec.sentence_seed + seed_shift)


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    data = cfg.get("data")
    if not data or "base" not in data:
        raise ConfigError("gen-data needs a config with a data.base section")
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_shift = args.seed or 0
    base = data["base"]
    mono_cfg = data.get("mono", {})
    pairs_cfg = data.get("pairs", [])

    vocab_tokens = sorted(base_inventory(_lang_spec(base)))
    corpora = []
    for pair in pairs_cfg:
        spec = _lang_spec(base, pair, seed_shift)
        corpus = make_corpus(spec, pair["name"], pair.get("n_train", 400),
                             pair.get("n_valid", 50), pair.get("n_test", 50))
        save_corpus(corpus, out_dir)
        corpora.append(pair["name"])
        if mono_cfg.get("include_pairs"):
            vocab_tokens = sorted(set(vocab_tokens) | set(foreign_inventory(spec)))

    mono_spec = _lang_spec(base, None, seed_shift)
    mono_spec = dataclasses.replace(
        mono_spec, sentence_seed=mono_cfg.get("sentence_seed", 1000) + seed_shift)
    n_train, n_valid = mono_cfg.get("n_train", 3000), mono_cfg.get("n_valid", 300)
    mono_train = gen_monolingual(mono_spec, n_train, "train")
    mono_valid = gen_monolingual(mono_spec, n_valid, "valid")
    if mono_cfg.get("include_pairs"):
        # multilingual body: foreign-language text joins the mono corpus,
        # drawn from a sentence stream disjoint from the parallel data
        for pair in pairs_cfg:
            spec = _lang_spec(base, pair, seed_shift + 500_000)
            mono_train += [src for src, _ in gen_parallel(spec, n_train // max(len(pairs_cfg), 1),
                                                          "train")]
            mono_valid += [src for src, _ in gen_parallel(spec, n_valid // max(len(pairs_cfg), 1),
                                                          "valid")]
    save_sentences(out_dir / "mono.train.txt", mono_train)
    save_sentences(out_dir / "mono.valid.txt", mono_valid)
    Vocab(SPECIAL_TOKENS + vocab_tokens).save(out_dir / "vocab.txt")
    _write_resolved(out_dir, _resolved_payload(cfg, args, command="gen-data"))
    print(f"wrote {len(corpora)} pair(s) ({', '.join(corpora) or 'none'}), "
          f"{len(mono_train)}+{len(mono_valid)} mono sentences, vocab size "
          f"{len(vocab_tokens) + len(SPECIAL_TOKENS)} -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# training commands
# ---------------------------------------------------------------------------

def cmd_pretrain(args) -> int:
    cfg = _load_config(args.config)
    data_dir = Path(cfg.get("data_dir", args.data_dir or "."))
    out_dir = Path(args.output_dir)
    plan = _plan(cfg, args)
    noise = NoiseSpec(**cfg.get("noise", {}))
    vocab = Vocab.load(data_dir / "vocab.txt")
    model_cfg = _model_config(cfg, args.profile)
    model_cfg = dataclasses.replace(model_cfg, vocab_size=len(vocab))
    from .transformer import build_model
    model = build_model(model_cfg, seed=plan.seed)
    train_sents = load_sentences(data_dir / "mono.train.txt")
    valid_sents = load_sentences(data_dir / "mono.valid.txt")
    _write_resolved(out_dir, _resolved_payload(
        cfg, args, command="pretrain", model=dataclasses.asdict(model_cfg),
        plan=dataclasses.asdict(plan), noise=dataclasses.asdict(noise)))
    ckpt = pretrain_denoise(model, train_sents, valid_sents, noise, plan, vocab, out_dir,
                            doc_len=cfg.get("doc_len", 3))
    vocab.save(out_dir / "target_vocab.txt")
    print(f"pretraining done; selected checkpoint: {ckpt}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_config(args.config)
    body = cfg.get("body_checkpoint", args.body_checkpoint)
    if body is None:
        raise ConfigError("finetune needs body_checkpoint (config key or --body-checkpoint)")
    data_dir = Path(cfg.get("data_dir", args.data_dir or "."))
    pair = cfg.get("pair", args.pair)
    if pair is None:
        raise ConfigError("finetune needs a pair name (config key 'pair' or --pair)")
    plan = _plan(cfg, args)
    resolve_recipe(plan.recipe)   # fail fast on unknown recipe
    corpus = load_corpus(data_dir, pair)
    tgt_vocab = Vocab.load(data_dir / "vocab.txt")
    graft_cfg = _im_config(cfg)
    out_dir = Path(args.output_dir)
    _write_resolved(out_dir, _resolved_payload(
        cfg, args, command="finetune", plan=dataclasses.asdict(plan),
        input_module=dataclasses.asdict(graft_cfg) if graft_cfg else None))
    ckpt, result = finetune_bilingual(body, corpus, plan, tgt_vocab, out_dir,
                                      graft_cfg=graft_cfg)
    print(f"finetune done: BLEU {result.bleu:.2f}, exact match {result.exact_match:.3f}, "
          f"valid NLL {result.valid_nll:.4f}; checkpoint: {ckpt}")
    return 0


def cmd_round_robin(args) -> int:
    cfg = _load_config(args.config)
    body = cfg.get("body_checkpoint", args.body_checkpoint)
    if body is None:
        raise ConfigError("round-robin needs body_checkpoint")
    data_dir = Path(cfg.get("data_dir", args.data_dir or "."))
    pair_names = cfg.get("pairs", [])
    if len(pair_names) < 2:
        raise ConfigError("round-robin needs a 'pairs' list with >= 2 names")
    plan = _plan(cfg, args)
    resolve_recipe(plan.recipe)
    corpora = {name: load_corpus(data_dir, name) for name in pair_names}
    tgt_vocab = Vocab.load(data_dir / "vocab.txt")
    out_dir = Path(args.output_dir)
    _write_resolved(out_dir, _resolved_payload(
        cfg, args, command="round-robin", plan=dataclasses.asdict(plan)))
    rr = round_robin(body, corpora, plan, tgt_vocab, out_dir)
    for name, result in sorted(rr.results.items()):
        print(f"{name}: BLEU {result.bleu:.2f}, exact match {result.exact_match:.3f}")
    print(f"{rr.n_updates} updates, {rr.n_passes} forward/backward passes; "
          f"checkpoint: {rr.checkpoint}")
    return 0


# ---------------------------------------------------------------------------
# translate / evaluate
# ---------------------------------------------------------------------------

def cmd_translate(args) -> int:
    model = load_checkpoint(args.checkpoint).eval()
    ckpt_dir = Path(args.checkpoint).parent
    tgt_vocab = Vocab.load(args.target_vocab or ckpt_dir / "target_vocab.txt")
    if model.input_module is not None:
        src_tok = BpeVocab.load(args.source_bpe or ckpt_dir / "source_bpe.json")
    else:
        src_tok = tgt_vocab
    sentences = load_sentences(args.input)
    srcs = [src_tok.encode(s, add_eos=True) for s in sentences]
    hyps = translate_corpus(model, srcs, beam=args.beam, max_len=args.max_len)
    out_path = Path(args.output)
    with open(out_path, "w", encoding="utf-8") as f:
        for h in hyps:
            f.write(" ".join(tgt_vocab.decode(h.tokens)) + "\n")
    print(f"translated {len(hyps)} sentences -> {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    hyps = load_sentences(args.hyps)
    refs = load_sentences(args.refs)
    result = EvalResult(bleu=bleu_corpus(hyps, refs), exact_match=exact_match(hyps, refs),
                        valid_nll=float("nan"))
    print(f"BLEU: {result.bleu:.4f}")
    print(f"exact match: {result.exact_match:.4f}")
    payload = {"bleu": result.bleu, "exact_match": result.exact_match}
    if args.compare:
        hyps_b = load_sentences(args.compare)
        payload["bleu_compare"] = bleu_corpus(hyps_b, refs)
        p = paired_bootstrap(hyps, hyps_b, refs, n_resamples=args.resamples, seed=args.seed or 0)
        payload["p_value"] = p
        print(f"compare BLEU: {payload['bleu_compare']:.4f}  bootstrap p: {p:.4f}")
    if args.output_dir:
        out_dir = Path(args.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# accounting commands
# ---------------------------------------------------------------------------

def _manifest_for_recipe(model_cfg: ModelConfig, recipe) -> dict[str, tuple[int, ...]]:
    shapes = model_manifest(model_cfg)
    if recipe.adapters is not None:
        sides = ("encoder", "decoder") if recipe.adapters == "both" else (recipe.adapters,)
        acfg = default_adapter_config(recipe.adapter_kind, model_cfg.d_model)
        layer_counts = {"encoder": model_cfg.n_enc_layers, "decoder": model_cfg.n_dec_layers}
        for side in sides:
            for i in range(layer_counts[side]):
                for name, shape in adapter_entries(acfg, model_cfg.d_model).items():
                    shapes[f"{side}/layer{i}/adapter/{name}"] = shape
    if recipe.requires_input_module:
        for path, shape in im_manifest(default_im_config(model_cfg), model_cfg.d_model).items():
            shapes[f"input_module/{path}"] = shape
    return shapes


def cmd_params(args) -> int:
    cfg = _load_config(args.config)
    model_cfg = _model_config(cfg, args.profile)
    recipe = resolve_recipe(args.recipe or "finetune-all", model_cfg.n_dec_layers)
    shapes = _manifest_for_recipe(model_cfg, recipe)
    trainable_paths, frozen_paths = recipe.policy.partition(shapes)
    trainable_set = set(trainable_paths)
    d = model_cfg.d_model

    lines = [f"profile: d_model={d}, layers={model_cfg.n_enc_layers}/{model_cfg.n_dec_layers}, "
             f"vocab={model_cfg.vocab_size}, recipe={recipe.name}"]
    lines.append(f"{'subtree':<16}{'trainable':>14}{'frozen':>14}{'total':>14}")
    subtrees = sorted({p.split('/', 1)[0] for p in shapes})
    for sub in subtrees:
        subset = {p: s for p, s in shapes.items() if p.split('/', 1)[0] == sub}
        n_train = count_entries({p: s for p, s in subset.items() if p in trainable_set})
        n_total = count_entries(subset)
        lines.append(f"{sub:<16}{n_train:>14,}{n_total - n_train:>14,}{n_total:>14,}")
    n_train_all = count_entries({p: shapes[p] for p in trainable_paths})
    n_all = count_entries(shapes)
    lines.append(f"{'all':<16}{n_train_all:>14,}{n_all - n_train_all:>14,}{n_all:>14,}")

    lines.append("")
    lines.append(f"first-encoder self-attention (bias-free): "
                 f"{count_entries(shapes, 'encoder/layer0/self_attn/**', weights_only=True)}")
    lines.append(f"encoder-decoder attention, all decoder layers (bias-free): "
                 f"{count_entries(shapes, 'decoder/*/cross_attn/**', weights_only=True)}")
    lines.append(f"decoder self-attention, all decoder layers (bias-free): "
                 f"{count_entries(shapes, 'decoder/*/self_attn/**', weights_only=True)}")
    k = min(3, model_cfg.n_dec_layers)
    last = range(model_cfg.n_dec_layers - k, model_cfg.n_dec_layers)
    n_last = sum(count_entries(shapes, f"decoder/layer{i}/**", weights_only=True) for i in last)
    lines.append(f"last {k} decoder layers (bias-free): {n_last}")
    norm_scalars = count_entries({p: s for p, s in shapes.items()
                                  if "_norm/" in p and not p.startswith("input_module/")})
    norm_modules = len({p.rsplit('/', 1)[0] for p in shapes
                        if "_norm/" in p and not p.startswith("input_module/")})
    lines.append(f"body layer-norm parameters: {norm_scalars} across {norm_modules} modules "
                 f"(24*2d reference: {24 * 2 * d}; post-norm stacks carry more norm modules "
                 f"than the reference inventory)")
    text = "\n".join(lines)
    print(text)
    if args.output_dir:
        out_dir = Path(args.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "params.txt").write_text(text + "\n")
    return 0


_MEMORY_RECIPES = ("finetune-all", "ft-enc-attn", "mbart-freeze-encoder",
                   "mbart-freeze-decoder+decoder-adapters")


def cmd_memory(args) -> int:
    cfg = _load_config(args.config)
    model_cfg = _model_config(cfg, args.profile)
    names = [args.recipe] if args.recipe else list(_MEMORY_RECIPES)
    reports = {}
    for name in names:
        recipe = resolve_recipe(name, model_cfg.n_dec_layers)
        shapes = _manifest_for_recipe(model_cfg, recipe)
        reports[recipe.name] = memory_report_for(shapes, recipe.policy,
                                                 optimizer_kind=args.optimizer)
    ordered = sorted(reports, key=lambda n: -reports[n].bytes_total)
    header = (f"{'recipe':<40}{'params MiB':>12}{'grads MiB':>12}"
              f"{'state MiB':>12}{'total MiB':>12}{'bytes_total':>16}{'trainable':>11}")
    rows = [header]
    for name in ordered:
        r = reports[name]
        rows.append(f"{name:<40}{r.bytes_params_total / 2**20:>12.1f}"
                    f"{r.bytes_grads / 2**20:>12.1f}{r.bytes_optimizer_state / 2**20:>12.1f}"
                    f"{r.bytes_total / 2**20:>12.1f}{r.bytes_total:>16,}"
                    f"{r.trainable_fraction:>10.1%}")
    text = "\n".join(rows)
    print(text)
    if args.output_dir:
        out_dir = Path(args.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "memory.tsv", "w", encoding="utf-8") as f:
            f.write("recipe\tbytes_params\tbytes_grads\tbytes_optimizer_state\t"
                    "bytes_total\ttrainable_fraction\n")
            for name in ordered:
                r = reports[name]
                f.write(f"{name}\t{r.bytes_params_total}\t{r.bytes_grads}\t"
                        f"{r.bytes_optimizer_state}\t{r.bytes_total}\t"
                        f"{r.trainable_fraction:.6f}\n")
        from .report import plot_memory_bars
        fig_dir = out_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        plot_memory_bars({n: reports[n] for n in ordered}, fig_dir / "memory.png")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(sub, output_required=True):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--seed", type=int, help="override the run seed")
    if output_required:
        sub.add_argument("--output-dir", required=True, help="directory for run outputs")
    else:
        sub.add_argument("--output-dir", help="optional directory for reports/figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqgraft",
                                     description="frozen-body grafting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic corpora and vocab files")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="denoising pretraining on monolingual data")
    _add_common(p)
    p.add_argument("--data-dir", help="directory produced by gen-data")
    p.add_argument("--profile", choices=["toy", "bart", "mbart"])
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="bilingual fine-tuning of a pretrained body")
    _add_common(p)
    p.add_argument("--data-dir")
    p.add_argument("--pair", help="pair name inside data dir")
    p.add_argument("--body-checkpoint")
    p.add_argument("--recipe", help="freeze recipe name or JSON recipe file")
    p.add_argument("--beam", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("round-robin", help="multilingual round-robin fine-tuning")
    _add_common(p)
    p.add_argument("--data-dir")
    p.add_argument("--body-checkpoint")
    p.add_argument("--recipe")
    p.add_argument("--beam", type=int)
    p.set_defaults(func=cmd_round_robin)

    p = sub.add_parser("translate", help="decode a source file with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", type=int)
    p.add_argument("--target-vocab")
    p.add_argument("--source-bpe")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--hyps", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--compare", help="second hypothesis file for paired bootstrap")
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("params", help="trainable/frozen parameter accounting")
    p.add_argument("--config")
    p.add_argument("--profile", choices=["toy", "bart", "mbart"])
    p.add_argument("--recipe")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("memory", help="training-memory accounting per recipe")
    p.add_argument("--config")
    p.add_argument("--profile", choices=["toy", "bart", "mbart"])
    p.add_argument("--recipe")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_memory)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"seqgraft: {e}", file=sys.stderr)
        return 2
    except (SeqgraftError, OSError) as e:
        print(f"seqgraft: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
