"""Seq2seq transformer toolkit: input-module grafting, adapters, freezing."""

from .adapters import AdapterConfig, adapter_forward, glu_width, insert_adapters
from .checkpoint import load_checkpoint, save_checkpoint
from .data import NoiseSpec, ParallelCorpus, SyntheticLangSpec, gen_parallel, noise_document
from .decoding import beam_search, decode_sentence
from .errors import SeqgraftError
from .freeze import FreezePolicy, Recipe, apply_policy, get_recipe, memory_report
from .input_module import InputModule, InputModuleConfig, build_input_module, graft, sinusoidal
from .metrics import bleu_corpus, exact_match, paired_bootstrap
from .optim import Adam, Schedule, accumulate_cycle
from .tensor import Tape, Tensor, backward, primitive_forward
from .training import EvalResult, TrainPlan, finetune_bilingual, pretrain_denoise, round_robin
from .transformer import (
    ModelConfig,
    Seq2SeqModel,
    build_model,
    count_params,
    forward_train,
    profile_config,
)
from .vocab import BpeVocab, Vocab

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig", "Adam", "BpeVocab", "EvalResult", "FreezePolicy",
    "InputModule", "InputModuleConfig", "ModelConfig", "NoiseSpec",
    "ParallelCorpus", "Recipe", "Schedule", "Seq2SeqModel", "SeqgraftError",
    "SyntheticLangSpec", "Tape", "Tensor", "TrainPlan", "Vocab",
    "accumulate_cycle", "adapter_forward", "apply_policy", "backward",
    "beam_search", "bleu_corpus", "build_input_module", "build_model",
    "count_params", "decode_sentence", "exact_match", "finetune_bilingual",
    "forward_train", "gen_parallel", "get_recipe", "glu_width", "graft",
    "insert_adapters", "load_checkpoint", "memory_report", "noise_document",
    "paired_bootstrap", "pretrain_denoise", "primitive_forward",
    "profile_config", "round_robin", "save_checkpoint", "sinusoidal",
]
