"""Named parameter hierarchy addressed by slash-separated paths.

The tree is the unit of freezing and counting. Patterns use `*` for a single
path segment (fnmatch inside the segment) and `**` for any number of
segments; `encoder/layer0/self_attn/**` selects a whole subtree.
"""

from __future__ import annotations

from fnmatch import fnmatchcase
from functools import lru_cache

from .errors import StateError
from .tensor import Tensor


@lru_cache(maxsize=65536)
def _match_cached(pattern: str, path: str) -> bool:
    return _match(pattern.split("/"), path.split("/"))


def _match(pat: list[str], segs: list[str]) -> bool:
    if not pat:
        return not segs
    head = pat[0]
    if head == "**":
        return any(_match(pat[1:], segs[i:]) for i in range(len(segs) + 1))
    return bool(segs) and fnmatchcase(segs[0], head) and _match(pat[1:], segs[1:])


def path_matches(pattern: str, path: str) -> bool:
    return _match_cached(pattern, path)


class ParamTree:
    """Ordered map from parameter path to Tensor; paths are unique."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, path: str, tensor: Tensor) -> Tensor:
        if path in self._entries:
            raise StateError(f"parameter path already registered: {path}")
        self._entries[path] = tensor
        return tensor

    def __getitem__(self, path: str) -> Tensor:
        return self._entries[path]

    def __contains__(self, path: str) -> bool:
        return path in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def paths(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def tensors(self):
        return self._entries.values()

    def match(self, pattern: str) -> list[str]:
        return [p for p in self._entries if path_matches(pattern, p)]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {p: t.shape for p, t in self._entries.items()}


def count_entries(shapes: dict[str, tuple[int, ...]], selector: str = "**",
                  weights_only: bool = False) -> int:
    """Count scalar parameters under `selector`.

    `weights_only` counts rank>=2 tensors only (no biases, no norm scale/bias),
    which reproduces the bias-free arithmetic used in reported counts.
    A selector matching nothing counts 0.
    """
    total = 0
    for path, shape in shapes.items():
        if weights_only and len(shape) < 2:
            continue
        if path_matches(selector, path):
            n = 1
            for s in shape:
                n *= s
            total += n
    return total
