"""Self-describing JSON checkpoints with little-endian float64 arrays (base64)."""
from __future__ import annotations

import base64
import json

import numpy as np

__all__ = ["FORMAT_VERSION", "CheckpointError", "save_checkpoint", "load_checkpoint", "model_from_dict",
           "model_to_dict", "encode_array", "decode_array"]

FORMAT_VERSION = 1
_MAGIC = "anhp-checkpoint"


class CheckpointError(ValueError):
    pass


def encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(np.ascontiguousarray(a).tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def model_to_dict(model, training: dict | None = None, extra: dict | None = None) -> dict:
    return {"format": _MAGIC, "version": FORMAT_VERSION, "kind": model.kind, "config": model.config(),
            "params": {k: encode_array(v.value) for k, v in model.params.items()},
            "training": training or {}, "extra": extra or {}}


def model_from_dict(obj: dict):
    from .andtt import AndttModel
    from .flat import AnhpModel

    if obj.get("format") != _MAGIC:
        raise CheckpointError("not a model checkpoint")
    if obj.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {obj.get('version')!r} (expected {FORMAT_VERSION})")
    kinds = {"anhp": AnhpModel, "andtt": AndttModel}
    if obj.get("kind") not in kinds:
        raise CheckpointError(f"unknown model kind {obj.get('kind')!r}")
    model = kinds[obj["kind"]].from_config(obj["config"])
    model.params.load_arrays({k: decode_array(v) for k, v in obj["params"].items()})
    return model


def save_checkpoint(model, path, training: dict | None = None, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model, training, extra), fh)


def load_checkpoint(path):
    """Return ``(model, checkpoint dict)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc.msg})") from None
    return model_from_dict(obj), obj
