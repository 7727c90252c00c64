"""Binary parameter checkpoints.

Layout: 8-byte magic, u32 format version, u64 header length (all
little-endian), a UTF-8 JSON header, then the flat parameter vector as
little-endian float64.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"TEQPCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def shape_hash(signature: str) -> str:
    return hashlib.sha256(signature.encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    params: np.ndarray
    header: dict

    @property
    def shape_hash(self) -> str:
        return self.header["shape_hash"]


def to_bytes(params: np.ndarray, header: dict) -> bytes:
    params = np.asarray(params, dtype=np.float64).ravel()
    head = dict(header, version=VERSION, n_params=int(params.size))
    blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + params.astype("<f8").tobytes()


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    body = data[start + hlen:]
    n = header.get("n_params")
    if n is None or len(body) != 8 * n:
        raise CheckpointError("parameter block size does not match header")
    return Checkpoint(np.frombuffer(body, dtype="<f8").astype(np.float64), header)


def save(path: str | Path, params: np.ndarray, model, config: dict | None = None, extra: dict | None = None) -> None:
    header = {
        "kind": model.kind,
        "shape_hash": shape_hash(model.shape_signature()),
        "config": config or {},
    }
    if extra:
        header.update(extra)
    Path(path).write_bytes(to_bytes(params, header))


def load(path: str | Path, model=None) -> Checkpoint:
    """Read a checkpoint; with ``model`` given, refuse a layout mismatch."""
    ckpt = from_bytes(Path(path).read_bytes())
    if model is not None:
        expected = shape_hash(model.shape_signature())
        if ckpt.shape_hash != expected or ckpt.params.size != model.n_params:
            raise CheckpointError(
                f"checkpoint layout {ckpt.shape_hash} ({ckpt.params.size} params) does not match "
                f"model {expected} ({model.n_params} params)"
            )
    return ckpt
