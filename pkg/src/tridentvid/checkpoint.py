"""Checkpoint archives shared by every trained component.

An archive is a single ``.npz`` file.  Each parameter tensor is stored as a
little-endian float32 ``.npy`` member (which carries its own shape header),
and the member ``__config__`` holds a UTF-8 JSON record with the component's
configuration.
"""

from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch

CONFIG_KEY = "__config__"


class CheckpointError(RuntimeError):
    pass


def save_archive(path: str | Path, arrays: Mapping[str, torch.Tensor | np.ndarray], config: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {}
    for name, value in arrays.items():
        if name == CONFIG_KEY:
            raise CheckpointError(f"reserved array name {CONFIG_KEY!r}")
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        payload[name] = np.ascontiguousarray(value, dtype="<f4")
    payload[CONFIG_KEY] = np.frombuffer(json.dumps(config, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    # write through a buffer so the file name is used verbatim (np.savez appends .npz)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    path.write_bytes(buf.getvalue())
    return path


def load_archive(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if CONFIG_KEY not in data.files:
            raise CheckpointError(f"{path} has no config record")
        config = json.loads(bytes(data[CONFIG_KEY]).decode("utf-8"))
        arrays = {k: torch.from_numpy(np.array(data[k], dtype=np.float32)) for k in data.files if k != CONFIG_KEY}
    return arrays, config


def state_checksum(state: Mapping[str, torch.Tensor]) -> str:
    """SHA-256 over names, shapes and raw float32 bytes, in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(state):
        t = state[name].detach().cpu().to(torch.float32).contiguous()
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def config_to_json(obj: Any) -> Any:
    """Turn dataclass-ish config values (tuples, paths) into JSON-safe values."""
    if isinstance(obj, dict):
        return {k: config_to_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [config_to_json(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj
