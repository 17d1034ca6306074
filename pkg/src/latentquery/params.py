"""Named parameter collections and the checkpoint file format.

A checkpoint is a single ``.npz`` archive.  Arrays are stored under
``param/<name>`` (and ``state/<name>`` for optimizer moments); the entry
``__meta__`` holds a UTF-8 JSON document with ``format_version`` plus any
caller metadata (model config, merge table, training step).
"""
from __future__ import annotations

import io
import json
import os
import tempfile
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .autodiff import Tensor

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ModelParams(OrderedDict):
    """Ordered ``name -> Tensor`` map; names are unique."""

    def add(self, name: str, value) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(np.asarray(value), requires_grad=True, name=name)
        t.requires_grad = True
        t.name = name
        self[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.values()))

    def copy(self) -> "ModelParams":
        out = ModelParams()
        for k, t in self.items():
            out.add(k, t.data.copy())
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.items()}


def save_checkpoint(path, params: ModelParams, meta: dict | None = None,
                    state: dict[str, np.ndarray] | None = None) -> None:
    """Write atomically (temp file + rename)."""
    payload = {f"param/{k}": t.data for k, t in params.items()}
    for k, v in (state or {}).items():
        payload[f"state/{k}"] = np.asarray(v)
    doc = dict(meta or {})
    doc["format_version"] = FORMAT_VERSION
    doc["param_names"] = list(params.keys())
    payload["__meta__"] = np.frombuffer(json.dumps(doc).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Return ``(params, meta, state)``."""
    try:
        archive = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive:
        if "__meta__" not in archive.files:
            raise CheckpointError(f"{path}: missing __meta__ entry")
        meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {meta.get('format_version')}")
        params = ModelParams()
        for name in meta["param_names"]:
            params.add(name, archive[f"param/{name}"].copy())
        state = {k[len("state/"):]: archive[k].copy() for k in archive.files if k.startswith("state/")}
    return params, meta, state
