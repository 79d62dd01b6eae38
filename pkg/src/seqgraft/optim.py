"""Adam with frozen-parameter exclusion, warmup schedule, cycle accumulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, StateError
from .transformer import Seq2SeqModel, forward_train
from .vocab import PAD_ID


@dataclass
class Schedule:
    """Linear warmup to max_lr, then inverse-square-root decay."""

    warmup_steps: int = 4000
    max_lr: float = 1e-4
    decay: str = "inverse_sqrt"   # or "constant"

    def lr(self, step: int) -> float:
        if step <= 0:
            return 0.0
        if step <= self.warmup_steps:
            return self.max_lr * (step / self.warmup_steps)
        if self.decay == "constant":
            return self.max_lr
        return self.max_lr * (max(self.warmup_steps, 1) / step) ** 0.5

    @classmethod
    def constant(cls, lr: float) -> "Schedule":
        return cls(warmup_steps=0, max_lr=lr, decay="constant")

    @classmethod
    def for_profile(cls, name: str) -> "Schedule":
        presets = {
            "bart": (5000, 7e-4),       # frozen body + input module
            "mbart": (2500, 3e-5),
            "multilingual": (4000, 1e-4),
        }
        if name not in presets:
            raise ConfigError(f"unknown schedule preset {name!r}")
        warmup, max_lr = presets[name]
        return cls(warmup_steps=warmup, max_lr=max_lr)


class Adam:
    """Bias-corrected Adam over trainable tensors only.

    Moment buffers are allocated lazily and only for trainable tensors;
    frozen tensors are skipped entirely, stale grad buffers included.
    """

    def __init__(self, model: Seq2SeqModel, schedule: Schedule,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 max_grad_norm: float | None = None):
        self.model = model
        self.schedule = schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.max_grad_norm = max_grad_norm
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for t in self.model.params.tensors():
            t.grad = None

    def _clip(self, trainable) -> None:
        total = 0.0
        for _, t in trainable:
            total += float((t.grad.astype(np.float64) ** 2).sum())
        norm = total ** 0.5
        if norm > self.max_grad_norm:
            factor = self.max_grad_norm / (norm + 1e-12)
            for _, t in trainable:
                t.grad = t.grad * factor

    def step(self) -> float:
        """Apply one update; returns the learning rate used."""
        trainable = [(p, t) for p, t in self.model.params.items() if t.requires_grad]
        for path, t in trainable:
            if t.grad is None:
                raise StateError(f"optimizer step: missing gradient for {path}")
        if self.max_grad_norm is not None:
            self._clip(trainable)
        self.step_count += 1
        lr = self.schedule.lr(self.step_count)
        correct1 = 1.0 - self.beta1 ** self.step_count
        correct2 = 1.0 - self.beta2 ** self.step_count
        for path, t in trainable:
            g = t.grad
            m = self.m.get(path)
            if m is None:
                m = np.zeros_like(t.data)
                v = np.zeros_like(t.data)
            else:
                v = self.v[path]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[path], self.v[path] = m, v
            update = (m / correct1) / (np.sqrt(v / correct2) + self.eps)
            t.data = t.data - lr * update
            t.grad = None
        return lr

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for path in self.m:
            out[f"{path}/adam_m"] = self.m[path]
            out[f"{path}/adam_v"] = self.v[path]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        self.step_count = step_count
        self.m.clear()
        self.v.clear()
        for key, arr in arrays.items():
            path, kind = key.rsplit("/", 1)
            (self.m if kind == "adam_m" else self.v)[path] = arr


def accumulate_cycle(opt: Adam, batches: list[tuple[str, np.ndarray, np.ndarray]],
                     label_smoothing: float = 0.0, seed: int = 0,
                     step: int = 0) -> dict[str, float]:
    """One optimizer update from gradients summed over a cycle of batches.

    Gradients are normalized by the total non-pad token count across the
    cycle, so the update is invariant to how tokens are split into batches.
    Returns the per-pair mean token loss.
    """
    if not batches:
        raise ContractError("accumulate_cycle: empty cycle")
    model = opt.model
    total_tokens = 0
    for name, src, tgt in batches:
        if np.asarray(src).size == 0 or np.asarray(tgt).size == 0:
            raise ContractError(f"accumulate_cycle: empty batch for {name!r}")
        total_tokens += int((np.asarray(tgt)[:, 1:] != PAD_ID).sum())
    loss_sums: dict[str, float] = {}
    token_sums: dict[str, int] = {}
    for j, (name, src, tgt) in enumerate(batches):
        with T.Tape(seed=seed, step=step * 8191 + j, training=model.training):
            loss_sum, ntok = forward_train(model, src, tgt, label_smoothing, reduction="sum")
            T.backward(T.scale(loss_sum, 1.0 / total_tokens))
        loss_sums[name] = loss_sums.get(name, 0.0) + loss_sum.item()
        token_sums[name] = token_sums.get(name, 0) + ntok
    opt.step()
    return {name: loss_sums[name] / max(token_sums[name], 1) for name in loss_sums}
