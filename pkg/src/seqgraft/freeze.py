"""Freezing policies over parameter paths, shipped recipes, memory accounting.

A policy is an ordered list of (pattern, trainable) rules; later rules win.
Everything is trainable until a rule says otherwise, so the empty policy
freezes nothing. Recipes bundle a policy with the architecture choices that
go with it (adapter placement/kind, whether a grafted input module is
required) plus the decoder subset the recipe newly unfreezes, used for the
equal-subset arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .paramtree import count_entries, path_matches


@dataclass(frozen=True)
class FreezePolicy:
    rules: tuple[tuple[str, bool], ...] = ()
    name: str | None = None

    def trainable(self, path: str) -> bool:
        flag = True
        for pattern, value in self.rules:
            if path_matches(pattern, path):
                flag = value
        return flag

    def partition(self, paths) -> tuple[list[str], list[str]]:
        trainable, frozen = [], []
        for p in paths:
            (trainable if self.trainable(p) else frozen).append(p)
        return trainable, frozen


@dataclass(frozen=True)
class Recipe:
    name: str
    policy: FreezePolicy
    adapters: str | None = None          # encoder / decoder / both
    adapter_kind: str = "plain"
    requires_input_module: bool = False
    subset_selectors: tuple[str, ...] = ()   # decoder subset the recipe unfreezes


def apply_policy(model, policy: FreezePolicy):
    """Set requires_grad per policy; frozen tensors lose any grad buffer."""
    for path, t in model.params.items():
        t.requires_grad = policy.trainable(path)
        if not t.requires_grad:
            t.grad = None
    return model


# --- shipped recipes -------------------------------------------------------

def _bart_frozen_rules() -> tuple:
    return (
        ("**", False),
        ("input_module/**", True),
        ("**/adapter/**", True),
        ("**/*_norm/*", True),
        ("encoder/layer0/self_attn/**", True),
    )


def _freeze_side_rules(side: str) -> tuple:
    # freeze one stack, keep its norms, first-layer self-attention,
    # positional embeddings and any adapters trainable
    return (
        (f"{side}/**", False),
        (f"{side}/**/*_norm/*", True),
        (f"{side}/layer0/self_attn/**", True),
        (f"{side}/embed/**", True),
        ("**/adapter/**", True),
    )


def _last_layers_rules(n_dec_layers: int, k: int = 3) -> tuple[tuple[str, bool], ...]:
    first = max(0, n_dec_layers - k)
    return tuple((f"decoder/layer{i}/**", True) for i in range(first, n_dec_layers))


def recipe_catalog(n_dec_layers: int = 12) -> dict[str, Recipe]:
    freeze_dec = _freeze_side_rules("decoder")
    freeze_enc = _freeze_side_rules("encoder")
    last3 = _last_layers_rules(n_dec_layers)
    catalog = [
        Recipe("finetune-all", FreezePolicy((), "finetune-all")),
        Recipe("bart-frozen", FreezePolicy(_bart_frozen_rules(), "bart-frozen"),
               requires_input_module=True),
        Recipe("bart-frozen+enc-adapters",
               FreezePolicy(_bart_frozen_rules(), "bart-frozen+enc-adapters"),
               adapters="encoder", requires_input_module=True),
        Recipe("mbart-freeze-decoder", FreezePolicy(freeze_dec, "mbart-freeze-decoder")),
        Recipe("mbart-freeze-encoder", FreezePolicy(freeze_enc, "mbart-freeze-encoder")),
        Recipe("mbart-freeze-decoder+decoder-adapters",
               FreezePolicy(freeze_dec, "mbart-freeze-decoder+decoder-adapters"),
               adapters="decoder"),
        Recipe("mbart-freeze-encoder+encoder-adapters",
               FreezePolicy(freeze_enc, "mbart-freeze-encoder+encoder-adapters"),
               adapters="encoder"),
        Recipe("ft-enc-attn",
               FreezePolicy(freeze_dec + (("decoder/*/cross_attn/**", True),), "ft-enc-attn"),
               adapters="decoder",
               subset_selectors=("decoder/*/cross_attn/**",)),
        Recipe("ft-self-attn",
               FreezePolicy(freeze_dec + (("decoder/*/self_attn/**", True),), "ft-self-attn"),
               adapters="decoder",
               subset_selectors=("decoder/*/self_attn/**",)),
        Recipe("ft-last3",
               FreezePolicy(freeze_dec + last3, "ft-last3"),
               adapters="decoder",
               subset_selectors=tuple(p for p, _ in last3)),
    ]
    return {r.name: r for r in catalog}


_ALIASES = {
    "+decoder-adapters": "mbart-freeze-decoder+decoder-adapters",
    "+encoder-adapters": "mbart-freeze-encoder+encoder-adapters",
}

RECIPE_NAMES = list(recipe_catalog())


def get_recipe(name: str, n_dec_layers: int = 12) -> Recipe:
    catalog = recipe_catalog(n_dec_layers)
    key = _ALIASES.get(name, name)
    if key not in catalog:
        raise ConfigError(f"unknown recipe {name!r}; shipped: {', '.join(catalog)}")
    return catalog[key]


def save_recipe(recipe: Recipe, path) -> None:
    payload = {
        "name": recipe.name,
        "rules": [[p, f] for p, f in recipe.policy.rules],
        "adapters": recipe.adapters,
        "adapter_kind": recipe.adapter_kind,
        "requires_input_module": recipe.requires_input_module,
        "subset_selectors": list(recipe.subset_selectors),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def load_recipe(path) -> Recipe:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    rules = tuple((p, bool(f)) for p, f in payload.get("rules", []))
    return Recipe(
        name=payload["name"],
        policy=FreezePolicy(rules, payload["name"]),
        adapters=payload.get("adapters"),
        adapter_kind=payload.get("adapter_kind", "plain"),
        requires_input_module=bool(payload.get("requires_input_module", False)),
        subset_selectors=tuple(payload.get("subset_selectors", ())),
    )


def resolve_recipe(name_or_path: str, n_dec_layers: int = 12) -> Recipe:
    """`--recipe` accepts a shipped name or a JSON recipe file."""
    try:
        return get_recipe(name_or_path, n_dec_layers)
    except ConfigError:
        import os
        if os.path.exists(name_or_path):
            return load_recipe(name_or_path)
        raise


# --- memory accounting -----------------------------------------------------

@dataclass
class MemoryReport:
    bytes_params_total: int
    bytes_grads: int
    bytes_optimizer_state: int
    trainable_fraction: float

    @property
    def bytes_total(self) -> int:
        return self.bytes_params_total + self.bytes_grads + self.bytes_optimizer_state


def _report_from_counts(n_total: int, n_trainable: int, optimizer_kind: str,
                        bytes_per_scalar: int) -> MemoryReport:
    if optimizer_kind not in ("adam", "sgd"):
        raise ConfigError(f"optimizer_kind must be adam or sgd, got {optimizer_kind!r}")
    state_mult = 2 if optimizer_kind == "adam" else 0  # adam: first + second moments
    return MemoryReport(
        bytes_params_total=n_total * bytes_per_scalar,
        bytes_grads=n_trainable * bytes_per_scalar,
        bytes_optimizer_state=state_mult * n_trainable * bytes_per_scalar,
        trainable_fraction=n_trainable / n_total if n_total else 0.0,
    )


def memory_report(model, optimizer_kind: str = "adam", bytes_per_scalar: int = 4) -> MemoryReport:
    """Byte accounting from the model's applied requires_grad flags."""
    n_total = sum(t.size for t in model.params.tensors())
    n_trainable = sum(t.size for t in model.params.tensors() if t.requires_grad)
    return _report_from_counts(n_total, n_trainable, optimizer_kind, bytes_per_scalar)


def memory_report_for(shapes: dict[str, tuple[int, ...]], policy: FreezePolicy,
                      optimizer_kind: str = "adam", bytes_per_scalar: int = 4) -> MemoryReport:
    """Same accounting from a manifest, without allocating parameters."""
    n_total = count_entries(shapes)
    trainable_paths, _ = policy.partition(shapes)
    n_trainable = count_entries({p: shapes[p] for p in trainable_paths})
    return _report_from_counts(n_total, n_trainable, optimizer_kind, bytes_per_scalar)
