"""Dense tensors with reverse-mode automatic differentiation.

Values live in numpy arrays; gradients are produced by replaying an explicit
tape of primitive operations in reverse. The tape also owns the training flag
and the deterministic dropout state, so a forward pass is fully reproducible
given (seed, step).
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import (
    ConfigError,
    ContractError,
    DegenerateBatchError,
    DimensionError,
    NumericError,
    StateError,
)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A dense n-dimensional value with an optional gradient slot.

    `grad` is only ever allocated for tensors with `requires_grad=True`;
    everything else stays a plain value.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self._node_id: int = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


class _Node:
    """One recorded primitive: input node ids plus a backward closure."""

    __slots__ = ("op", "inputs", "backward", "leaf")

    def __init__(self, op: str, inputs: tuple[int, ...], backward, leaf: Tensor | None = None):
        self.op = op
        self.inputs = inputs
        self.backward = backward
        self.leaf = leaf


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Nodes are appended in execution order, which is a topological order by
    construction. Dropout masks are drawn from a counter-based generator
    keyed by (seed, step, node index) so replays are bit-identical.
    """

    def __init__(self, seed: int = 0, step: int = 0, training: bool = True,
                 strict_finite: bool = False):
        self.nodes: list[_Node] = []
        self.seed = int(seed)
        self.step = int(step)
        self.training = training
        self.strict_finite = strict_finite
        self._leaf_ids: dict[int, int] = {}
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()

    def _leaf_node(self, t: Tensor) -> int:
        nid = self._leaf_ids.get(id(t))
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(_Node("leaf", (), None, leaf=t))
            self._leaf_ids[id(t)] = nid
        return nid


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _node_id_on(tape: Tape, t: Tensor) -> int:
    if t._tape is tape and t._node_id >= 0:
        return t._node_id
    return tape._leaf_node(t)


def _tracked(tape: Tape, t: Tensor) -> bool:
    """Whether `t` carries gradient information on this tape."""
    if t._tape is tape and t._node_id >= 0:
        return True
    return t.requires_grad


def _record(op: str, out: Tensor, inputs: Sequence[Tensor],
            backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    tape = active_tape()
    if tape is None:
        return out
    if tape.strict_finite:
        for t in inputs:
            if not np.all(np.isfinite(t.data)):
                raise NumericError(f"{op}: non-finite input under strict-finite mode")
    if not any(_tracked(tape, t) for t in inputs):
        return out
    ids = tuple(_node_id_on(tape, t) for t in inputs)
    out._tape = tape
    out._node_id = len(tape.nodes)
    tape.nodes.append(_Node(op, ids, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every requires_grad leaf reachable from `loss`.

    Unreachable requires_grad leaves registered on the same tape receive a
    zero gradient. The tape is consumed: a second backward without a new
    forward raises StateError.
    """
    tape = loss._tape
    if tape is None or loss._node_id < 0:
        raise StateError("backward: loss is not attached to a tape")
    if loss.ndim != 0 and loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if tape._consumed:
        raise StateError("backward: tape already consumed; run a new forward first")
    tape._consumed = True

    # Restrict the reverse sweep to nodes that actually feed the loss.
    reachable = np.zeros(len(tape.nodes), dtype=bool)
    stack = [loss._node_id]
    while stack:
        nid = stack.pop()
        if reachable[nid]:
            continue
        reachable[nid] = True
        stack.extend(tape.nodes[nid].inputs)

    grads: dict[int, np.ndarray] = {loss._node_id: np.ones_like(loss.data)}
    for nid in range(loss._node_id, -1, -1):
        if not reachable[nid]:
            continue
        node = tape.nodes[nid]
        g = grads.pop(nid, None)
        if node.op == "leaf":
            leaf = node.leaf
            if leaf is not None and leaf.requires_grad:
                if g is None:
                    g = np.zeros_like(leaf.data)
                g = g.astype(leaf.data.dtype, copy=False)
                leaf.grad = g if leaf.grad is None else leaf.grad + g
            continue
        if g is None:
            continue
        for in_id, ig in zip(node.inputs, node.backward(g)):
            if ig is None:
                continue
            prev = grads.get(in_id)
            grads[in_id] = ig if prev is None else prev + ig

    # leaves registered on the tape but unreachable from the loss get zeros
    for node in tape.nodes:
        if node.op == "leaf" and node.leaf.requires_grad and node.leaf.grad is None:
            node.leaf.grad = np.zeros_like(node.leaf.data)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must have ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape)
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape)
        return ga, gb

    return _record("matmul", out, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes not broadcastable: {a.shape} + {b.shape}") from None
    out = Tensor(out_data)
    a_shape, b_shape = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _record("add", out, (a, b), bwd)


def scale(x: Tensor, factor: float) -> Tensor:
    out = Tensor(x.data * factor)
    return _record("scale", out, (x,), lambda g: (g * factor,))


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data * b.data
    except ValueError:
        raise DimensionError(f"elementwise_mul: shapes not broadcastable: {a.shape} * {b.shape}") from None
    out = Tensor(out_data)
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record("elementwise_mul", out, (a, b), bwd)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be 2-d, got {table.shape}")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"embedding_lookup: token id out of range [0, {vocab})")
    out = Tensor(table.data[ids])
    tshape, tdtype = table.shape, table.data.dtype

    def bwd(g):
        gt = np.zeros(tshape, dtype=g.dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, tshape[1]))
        return (gt,)

    return _record("embedding_lookup", out, (table,), bwd)


def softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)

    def bwd(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _record("softmax_lastdim", out, (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma/beta must have shape ({d},), got {gamma.shape} and {beta.shape}")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)  # population variance
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = Tensor(xhat * gamma.data + beta.data)
    gdata = gamma.data

    def bwd(g):
        sum_axes = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=sum_axes)
        gbeta = g.sum(axis=sum_axes)
        gx_hat = g * gdata
        gx = inv_std * (gx_hat
                        - gx_hat.mean(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _record("layer_norm", out, (x, gamma, beta), bwd)


def gelu(x: Tensor) -> Tensor:
    # exact erf form: x * Phi(x)
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * phi)
    xd = x.data

    def bwd(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
        return (g * (phi + xd * pdf),)

    return _record("gelu", out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t)
    return _record("tanh", out, (x,), lambda g: (g * (1.0 - t * t),))


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s)
    return _record("sigmoid", out, (x,), lambda g: (g * s * (1.0 - s),))


def _dropout_rng(seed: int, step: int, node_index: int) -> np.random.Generator:
    key = np.array([np.uint64(seed % (1 << 64)),
                    np.uint64(((step % (1 << 32)) << 32) | (node_index % (1 << 32)))],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def dropout(x: Tensor, p: float) -> Tensor:
    """Inverted dropout; identity in eval mode or when no tape is active."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout: p must be in [0, 1), got {p}")
    tape = active_tape()
    if tape is None or not tape.training or p == 0.0:
        return x
    rng = _dropout_rng(tape.seed, tape.step, len(tape.nodes))
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    out = Tensor(x.data * mask)
    return _record("dropout", out, (x,), lambda g: (g * mask,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = x.shape
    out = Tensor(x.data.reshape(shape))
    return _record("reshape", out, (x,), lambda g: (g.reshape(orig),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes))
    return _record("transpose", out, (x,), lambda g: (g.transpose(inv),))


def reduce_sum(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    shape, dtype = x.shape, x.data.dtype

    def bwd(g):
        return (np.full(shape, g, dtype=g.dtype),)

    return _record("reduce_sum", out, (x,), bwd)


def cross_entropy_label_smoothed(logits: Tensor, targets: np.ndarray, eps_ls: float,
                                 pad_id: int, reduction: str = "mean") -> Tensor:
    """Label-smoothed NLL over non-pad positions.

    Per token: -[(1-eps)*log p(target) + eps*mean_v log p(v)]; positions whose
    target equals `pad_id` contribute zero and are excluded from the mean.
    """
    if not 0.0 <= eps_ls < 1.0:
        raise ConfigError(f"cross_entropy: eps_ls must be in [0, 1), got {eps_ls}")
    if reduction not in ("mean", "sum"):
        raise ContractError(f"cross_entropy: unknown reduction {reduction!r}")
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(
            f"cross_entropy: expected logits [n, vocab] and targets [n], got {logits.shape} / {targets.shape}")
    vocab = logits.shape[1]
    nonpad = targets != pad_id
    live = targets[nonpad]
    if live.size and (live.min() < 0 or live.max() >= vocab):
        raise IndexError(f"cross_entropy: target id out of range [0, {vocab})")
    n_eff = int(nonpad.sum())
    if n_eff == 0:
        raise DegenerateBatchError("cross_entropy: every position is padding")

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    safe_targets = np.where(nonpad, targets, 0)
    nll_target = -logp[np.arange(logp.shape[0]), safe_targets]
    nll_uniform = -logp.mean(axis=-1)
    per_token = ((1.0 - eps_ls) * nll_target + eps_ls * nll_uniform) * nonpad
    total = per_token.sum()
    out = Tensor(total / n_eff if reduction == "mean" else total)

    def bwd(g):
        p = np.exp(logp)
        dlogits = p.copy()
        dlogits[np.arange(p.shape[0]), safe_targets] -= (1.0 - eps_ls)
        dlogits -= eps_ls / vocab
        dlogits *= nonpad[:, None]
        if reduction == "mean":
            dlogits /= n_eff
        return (dlogits * g,)

    return _record("cross_entropy", out, (logits,), bwd)


_PRIMITIVES = {
    "matmul": lambda inputs, attrs: matmul(*inputs),
    "add": lambda inputs, attrs: add(*inputs),
    "scale": lambda inputs, attrs: scale(inputs[0], attrs["factor"]),
    "embedding_lookup": lambda inputs, attrs: embedding_lookup(inputs[0], attrs["ids"]),
    "softmax_lastdim": lambda inputs, attrs: softmax_lastdim(*inputs),
    "layer_norm": lambda inputs, attrs: layer_norm(*inputs, eps=attrs.get("eps", 1e-5)),
    "gelu": lambda inputs, attrs: gelu(*inputs),
    "tanh": lambda inputs, attrs: tanh(*inputs),
    "sigmoid": lambda inputs, attrs: sigmoid(*inputs),
    "elementwise_mul": lambda inputs, attrs: elementwise_mul(*inputs),
    "dropout": lambda inputs, attrs: dropout(inputs[0], attrs["p"]),
}


def primitive_forward(kind: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Dispatch a primitive by name; the uniform entry point used by checks."""
    if kind not in _PRIMITIVES:
        raise ContractError(f"unknown primitive kind {kind!r}")
    return _PRIMITIVES[kind](list(inputs), attrs or {})
