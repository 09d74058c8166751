"""Portable JSON checkpoint container.

Schema (version 1): a single JSON object with
  format:     "skillseg-checkpoint"
  version:    1
  dtype:      "float64-le"
  meta:       free-form dict (architecture card, iteration, config echo)
  parameters: {name: {"shape": [...], "data": base64(little-endian float64)}}
  optimizer:  null, or {"alpha","beta1","beta2","eps","weight_decay",
              "step_count", "m": {name: array-entry}, "v": {...}}
Keys are serialized sorted, so identical contents give identical bytes.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from skillseg.errors import DataError

FORMAT_NAME = "skillseg-checkpoint"
FORMAT_VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode_array(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return arr.reshape(entry["shape"])


def save_checkpoint(path, parameters: dict[str, np.ndarray],
                    optimizer: dict | None = None, meta: dict | None = None):
    payload = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dtype": "float64-le",
        "meta": meta or {},
        "parameters": {k: _encode_array(v) for k, v in parameters.items()},
        "optimizer": None,
    }
    if optimizer is not None:
        payload["optimizer"] = {
            **{k: optimizer[k] for k in ("alpha", "beta1", "beta2", "eps",
                                         "weight_decay", "step_count")},
            "m": {k: _encode_array(v) for k, v in optimizer["m"].items()},
            "v": {k: _encode_array(v) for k, v in optimizer["v"].items()},
        }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict | None, dict]:
    """Returns (parameters, optimizer_state or None, meta)."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read checkpoint {path}: {err}") from err
    if payload.get("format") != FORMAT_NAME:
        raise DataError(f"{path} is not a {FORMAT_NAME} file")
    if payload.get("version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {payload.get('version')}")
    params = {k: _decode_array(v) for k, v in payload["parameters"].items()}
    opt = payload.get("optimizer")
    if opt is not None:
        opt = {
            **{k: opt[k] for k in ("alpha", "beta1", "beta2", "eps",
                                   "weight_decay", "step_count")},
            "m": {k: _decode_array(v) for k, v in opt["m"].items()},
            "v": {k: _decode_array(v) for k, v in opt["v"].items()},
        }
    return params, opt, payload.get("meta", {})
