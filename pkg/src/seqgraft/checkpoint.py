"""Checkpoint files: one JSON header line, then raw little-endian float32 data.

The header carries the model/adapter/input-module configs, a format version
and a parameter manifest (path, shape, byte offset) in write order, so a
checkpoint rebuilds the exact same model and save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .adapters import AdapterConfig, insert_adapters
from .errors import ConfigError
from .input_module import InputModule, InputModuleConfig, build_input_module, graft
from .optim import Adam
from .transformer import ModelConfig, Seq2SeqModel, build_model

FORMAT_VERSION = 1


def _write_blob(path: Path, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    manifest = []
    offset = 0
    for name, arr in arrays:
        manifest.append({"path": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 4
    header = dict(header, format_version=FORMAT_VERSION, manifest=manifest)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        for _, arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_blob(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        blob = f.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format: {header.get('format_version')}")
    arrays = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[entry["path"]] = np.frombuffer(
            blob, dtype="<f4", count=n, offset=start).reshape(shape).copy()
    return header, arrays


def save_checkpoint(path, model: Seq2SeqModel) -> Path:
    path = Path(path)
    header = {
        "kind": "seq2seq",
        "norm_style": "post",
        "config": asdict(model.config),
        "adapters": {side: asdict(cfg) for side, cfg in model.adapters.items()},
        "input_module": asdict(model.input_module.config) if model.input_module else None,
    }
    _write_blob(path, header, [(p, t.data) for p, t in model.params.items()])
    return path


def load_checkpoint(path) -> Seq2SeqModel:
    header, arrays = _read_blob(Path(path))
    config = ModelConfig(**header["config"])
    model = build_model(config, seed=0)
    for side, cfg in header.get("adapters", {}).items():
        insert_adapters(model, side, AdapterConfig(**cfg))
    if header.get("input_module"):
        im = build_input_module(InputModuleConfig(**header["input_module"]), config.d_model)
        graft(model, im)
    expected = set(model.params.paths())
    if expected != set(arrays):
        missing = sorted(expected - set(arrays))[:3]
        extra = sorted(set(arrays) - expected)[:3]
        raise ConfigError(f"checkpoint manifest mismatch (missing={missing}, extra={extra})")
    for p, arr in arrays.items():
        t = model.params[p]
        if t.shape != arr.shape:
            raise ConfigError(f"checkpoint shape mismatch at {p}: {t.shape} vs {arr.shape}")
        t.data = arr
    return model


def save_optimizer_state(path, opt: Adam) -> Path:
    path = Path(path)
    header = {"kind": "adam_state", "step_count": opt.step_count}
    _write_blob(path, header, sorted(opt.state_arrays().items()))
    return path


def load_optimizer_state(path, opt: Adam) -> None:
    header, arrays = _read_blob(Path(path))
    if header.get("kind") != "adam_state":
        raise ConfigError("not an optimizer state file")
    opt.load_state_arrays(arrays, int(header["step_count"]))
