"""Checkpoint container.

Layout: a magic line, one line of JSON header (format version, config echo,
buffer names and shapes), then the buffers as little-endian float64 in header
order.  Nothing time- or host-dependent is written, so identical parameters
give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .data import Normalizer
from .errors import CheckpointError
from .model import DetectorParams, EncoderConfig

MAGIC = b"DCONAD-CKPT\n"
FORMAT_VERSION = 1


def param_checksum(params: DetectorParams) -> str:
    h = hashlib.sha256()
    for name, t in params.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return h.hexdigest()


def checkpoint_bytes(params: DetectorParams, normalizer: Normalizer, run_config: dict) -> bytes:
    buffers = [(name, t.data) for name, t in params.named_parameters()]
    buffers += sorted(normalizer.arrays().items())
    header = {
        "format_version": FORMAT_VERSION,
        "encoder": params.config.to_dict(),
        "diff_order": normalizer.order,
        "run_config": run_config,
        "buffers": [{"name": n, "shape": list(np.shape(a))} for n, a in buffers],
    }
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in buffers)
    return MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + body


def save_checkpoint(path, params: DetectorParams, normalizer: Normalizer, run_config: dict):
    Path(path).write_bytes(checkpoint_bytes(params, normalizer, run_config))


def load_checkpoint(path) -> tuple[DetectorParams, Normalizer, dict]:
    """Return ``(params, normalizer, run_config echo)``; rejects version or shape mismatches."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"{path}: checkpoint not found")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    nl = raw.index(b"\n", len(MAGIC))
    try:
        header = json.loads(raw[len(MAGIC) : nl])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format_version {header.get('format_version')} != {FORMAT_VERSION}")
    body = raw[nl + 1 :]
    expected = sum(int(np.prod(b["shape"], dtype=np.int64)) for b in header["buffers"]) * 8
    if len(body) != expected:
        raise CheckpointError(f"{path}: body has {len(body)} bytes, header describes {expected}")
    arrays, offset = {}, 0
    for b in header["buffers"]:
        n = int(np.prod(b["shape"], dtype=np.int64))
        arrays[b["name"]] = np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(b["shape"]).astype(np.float64)
        offset += n * 8

    config = EncoderConfig(**header["encoder"])
    params = DetectorParams.init(config, seed=0)
    for name, t in params.named_parameters():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing buffer {name!r}")
        if arrays[name].shape != t.shape:
            raise CheckpointError(f"{path}: buffer {name!r} has shape {arrays[name].shape}, model expects {t.shape}")
    params.load_arrays(arrays)
    normalizer = Normalizer.from_arrays(arrays, header["diff_order"])
    return params, normalizer, header["run_config"]
