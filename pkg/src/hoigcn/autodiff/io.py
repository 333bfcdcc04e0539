"""Model JSON: ``{"config": {...}, "params": [{"name", "shape", "data"}]}``.

Keys are written sorted and floats use Python's shortest round-trip repr, so
64-bit values survive a save/load cycle bit for bit.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np


def dumps_state(config: dict, tensors: Iterable[tuple[str, np.ndarray]]) -> str:
    params = [
        {"name": name, "shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
        for name, arr in tensors
    ]
    return json.dumps({"config": config, "params": params}, sort_keys=True)


def loads_state(text: str, dtype=np.float64) -> tuple[dict, dict[str, np.ndarray]]:
    doc = json.loads(text)
    arrays = {}
    for entry in doc["params"]:
        arr = np.asarray(entry["data"], dtype=np.float64).astype(dtype).reshape(entry["shape"])
        if entry["name"] in arrays:
            raise ValueError(f"duplicate tensor name {entry['name']!r}")
        arrays[entry["name"]] = arr
    return doc["config"], arrays


def save_state(path: str | Path, config: dict, tensors: Iterable[tuple[str, np.ndarray]]) -> None:
    Path(path).write_text(dumps_state(config, tensors))


def load_state(path: str | Path, dtype=np.float64) -> tuple[dict, dict[str, np.ndarray]]:
    return loads_state(Path(path).read_text(), dtype=dtype)
