# -*- coding: utf-8 -*-
"""
Checkpoint persistence.

Binary layout:

    8 bytes   magic b"OSADCKPT"
    4 bytes   format version, uint32 little-endian
    8 bytes   header length in bytes, uint64 little-endian
    n bytes   JSON header (utf-8): step, config snapshot, parameter manifest, moment manifests
    rest      flat payload of little-endian float32 values

Manifest entries are {"name", "shape", "offset", "count"} with offsets counted in float32 elements. The parameters
come first, followed by the first and the second Adam moments; together the entries partition the payload exactly.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import pathlib
import struct
from typing import Any, Optional

import numpy as np

from OSADPython.config import (
    TrainerError,
)
from OSADPython.optimizer import (
    AdamMoments,
)

# define logger using the current module name as ID
logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC: bytes = b"OSADCKPT"
CHECKPOINT_VERSION: int = 1
PAYLOAD_DTYPE = np.dtype("<f4")


class CheckpointError(TrainerError):
    """
    Unreadable or inconsistent checkpoint file.
    """


@dataclasses.dataclass
class Checkpoint:
    """
    Parameters, optimizer state, step counter and configuration snapshot of a training run.
    """
    params: dict[str, np.ndarray]
    step: int = 0
    config: dict[str, Any] = dataclasses.field(default_factory=dict)
    moments: Optional[AdamMoments] = None
    adam_t: int = 0
    version: int = CHECKPOINT_VERSION


def _manifest(arrays: dict[str, np.ndarray], offset: int) -> tuple[list[dict[str, Any]], int]:
    entries = []
    for name, arr in arrays.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += int(arr.size)
    return entries, offset


def save_checkpoint(path: os.PathLike | str, checkpoint: Checkpoint) -> pathlib.Path:
    path = pathlib.Path(path)

    groups: list[dict[str, np.ndarray]] = [checkpoint.params]
    if checkpoint.moments is not None:
        groups += [checkpoint.moments.m, checkpoint.moments.v]

    manifests = []
    offset = 0
    for arrays in groups:
        entries, offset = _manifest(arrays, offset)
        manifests.append(entries)

    header = {
        "step": int(checkpoint.step),
        "adam_t": int(checkpoint.adam_t),
        "config": checkpoint.config,
        "manifest": manifests[0],
        "moments": None if checkpoint.moments is None else {"m": manifests[1], "v": manifests[2]},
        "payload_count": offset,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')

    payload = [np.asarray(arr, dtype=PAYLOAD_DTYPE).reshape(-1) for arrays in groups for arr in arrays.values()]
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", checkpoint.version))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for arr in payload:
            fh.write(arr.tobytes())

    logger.info("Saved checkpoint (step %d, %d values) to %s", checkpoint.step, offset, path.as_posix())
    return path


def _unpack(entries: list[dict[str, Any]], payload: np.ndarray, path: pathlib.Path) -> dict[str, np.ndarray]:
    arrays = {}
    for entry in entries:
        start = int(entry["offset"])
        count = int(entry["count"])
        shape = tuple(int(s) for s in entry["shape"])
        if int(np.prod(shape)) != count or start + count > payload.size:
            raise CheckpointError(f"{path.as_posix()}: inconsistent manifest entry {entry}")
        arrays[entry["name"]] = payload[start:start + count].reshape(shape).astype(np.float32)
    return arrays


def load_checkpoint(path: os.PathLike | str) -> Checkpoint:
    path = pathlib.Path(path)
    try:
        raw = path.read_bytes()
    except OSError as ex:
        raise CheckpointError(f"Cannot read checkpoint {path.as_posix()}: {ex}") from ex

    fixed = len(CHECKPOINT_MAGIC) + 4 + 8
    if len(raw) < fixed or raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path.as_posix()} is not a checkpoint file")
    (version,) = struct.unpack("<I", raw[8:12])
    (header_len,) = struct.unpack("<Q", raw[12:20])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path.as_posix()}: unsupported checkpoint version {version}")

    try:
        header = json.loads(raw[fixed:fixed + header_len].decode('utf-8'))
    except (UnicodeDecodeError, ValueError) as ex:
        raise CheckpointError(f"{path.as_posix()}: corrupt header ({ex})") from ex

    body = raw[fixed + header_len:]
    if len(body) % PAYLOAD_DTYPE.itemsize != 0:
        raise CheckpointError(f"{path.as_posix()}: truncated payload")
    payload = np.frombuffer(body, dtype=PAYLOAD_DTYPE)
    if payload.size != int(header["payload_count"]):
        raise CheckpointError(f"{path.as_posix()}: payload has {payload.size} values, header expects "
                              f"{header['payload_count']}")

    moments = None
    if header.get("moments") is not None:
        moments = AdamMoments(
            m=_unpack(header["moments"]["m"], payload, path),
            v=_unpack(header["moments"]["v"], payload, path),
        )

    checkpoint = Checkpoint(
        params=_unpack(header["manifest"], payload, path),
        step=int(header["step"]),
        config=header.get("config") or {},
        moments=moments,
        adam_t=int(header.get("adam_t", 0)),
        version=version,
    )
    logger.info("Loaded checkpoint (step %d) from %s", checkpoint.step, path.as_posix())
    return checkpoint
