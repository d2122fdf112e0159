"""Checkpoint container.

Layout (all integers little-endian)::

    b"VPCKPT\\0\\0"              8-byte magic
    u32 version                 currently 1
    u64 header length, header   UTF-8 JSON, sorted keys
    u32 block count
    per block: u32 name length, name, u64 payload length, ATNS payload
    32-byte SHA-256 of every preceding byte

Structure is parsed and the digest verified before any tensor is decoded,
so a flipped payload byte surfaces as a checksum error rather than a
decoding error.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..tensor import atns

MAGIC = b"VPCKPT\x00\x00"
VERSION = 1
_DIGEST = 32


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    unet_config: dict
    schedule: dict
    prior_lambda: float
    step: int
    rng_state: dict
    params: dict
    optimizer: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: int = VERSION


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.dtype.str, "values": [int(v) if obj.dtype.kind in "iu" else float(v)
                                                         for v in obj.reshape(-1)], "shape": list(obj.shape)}
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["values"], dtype=np.dtype(obj["__ndarray__"])).reshape(obj["shape"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_from_jsonable(v) for v in obj]
    return obj


def to_bytes(ckpt: Checkpoint) -> bytes:
    opt = dict(ckpt.optimizer)
    opt_arrays = opt.pop("arrays", {})
    header = {
        "unet_config": ckpt.unet_config,
        "schedule": ckpt.schedule,
        "prior_lambda": float(ckpt.prior_lambda),
        "step": int(ckpt.step),
        "rng_state": ckpt.rng_state,
        "optimizer": opt,
        "train_config": ckpt.train_config,
        "extra": ckpt.extra,
    }
    hbytes = json.dumps(_jsonable(header), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<Q", len(hbytes)), hbytes]
    blocks = [("param." + k, v) for k, v in ckpt.params.items()] + [("opt." + k, v) for k, v in opt_arrays.items()]
    parts.append(struct.pack("<I", len(blocks)))
    for name, arr in blocks:
        nb = name.encode("utf-8")
        payload = atns.to_bytes(np.asarray(arr))
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<Q", len(payload)), payload]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise CheckpointTruncatedError(f"file ends inside {what} (needs {end} bytes, has {len(self.data)})")
        out = self.data[self.pos:end]
        self.pos = end
        return out


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads version {VERSION}")
    (hlen,) = struct.unpack("<Q", r.take(8, "header length"))
    hbytes = r.take(hlen, "header")
    (nblocks,) = struct.unpack("<I", r.take(4, "block count"))
    raw = []
    for i in range(nblocks):
        (nlen,) = struct.unpack("<I", r.take(4, f"block {i} name length"))
        name = r.take(nlen, f"block {i} name")
        (plen,) = struct.unpack("<Q", r.take(8, f"block {i} length"))
        raw.append((name, r.take(plen, f"block {i} payload")))
    body_end = r.pos
    digest = r.take(_DIGEST, "checksum")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} unexpected trailing bytes")
    if hashlib.sha256(data[:body_end]).digest() != digest:
        raise CheckpointChecksumError("checksum mismatch: checkpoint is corrupted")
    try:
        header = _from_jsonable(json.loads(hbytes.decode("utf-8")))
        params, opt_arrays = {}, {}
        for name, payload in raw:
            key = name.decode("utf-8")
            arr = atns.from_bytes(payload)
            if key.startswith("param."):
                params[key[6:]] = arr
            elif key.startswith("opt."):
                opt_arrays[key[4:]] = arr
            else:
                raise CheckpointError(f"unknown block {key!r}")
    except (ValueError, atns.ATNSError) as exc:
        raise CheckpointError(f"malformed checkpoint contents: {exc}") from exc
    optimizer = dict(header.get("optimizer", {}))
    if opt_arrays:
        optimizer["arrays"] = opt_arrays
    return Checkpoint(
        unet_config=header["unet_config"],
        schedule=header["schedule"],
        prior_lambda=header["prior_lambda"],
        step=header["step"],
        rng_state=header["rng_state"],
        params=params,
        optimizer=optimizer,
        train_config=header.get("train_config", {}),
        extra=header.get("extra", {}),
        version=version,
    )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
