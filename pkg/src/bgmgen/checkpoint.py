"""Checkpoint container.

Layout (little-endian)::

    b"DBGK" | u32 version | u32 header length | UTF-8 JSON header | tensor file

The JSON header carries the schedule parameters and the architecture
descriptor; the trailing tensor file (see :mod:`bgmgen.conditioning`) holds
the flat parameter vector.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

from .conditioning import decode_tensor, encode_tensor
from .denoiser import Architecture, DenoiserNet
from .diffusion import NoiseSchedule, make_schedule

MAGIC = b"DBGK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(net: DenoiserNet, sched: NoiseSchedule, meta: dict | None = None) -> bytes:
    """Serialize ``net`` and ``sched``; ``meta`` is free-form JSON (e.g. run flags)."""
    header = {
        "version": VERSION,
        "schedule": {"kind": sched.kind, "n_steps": sched.n_steps,
                     "beta_start": sched.beta_start, "beta_end": sched.beta_end},
        "architecture": net.arch.to_dict(),
        "param_count": net.param_count,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(blob)) + blob + encode_tensor(net.params)


def read_header(data: bytes) -> dict:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, n = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if 12 + n > len(data):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[12:12 + n].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    header["_payload_offset"] = 12 + n
    return header


def decode_checkpoint(data: bytes) -> tuple[DenoiserNet, NoiseSchedule]:
    header = read_header(data)
    params = decode_tensor(data[header["_payload_offset"]:])
    s = header["schedule"]
    sched = make_schedule(s["kind"], int(s["n_steps"]), float(s["beta_start"]),
                          float(s["beta_end"]))
    net = DenoiserNet(Architecture.from_dict(header["architecture"]), params)
    return net, sched


def save_checkpoint(path, net: DenoiserNet, sched: NoiseSchedule, meta: dict | None = None) -> None:
    """Write atomically so a crash never leaves a half-written checkpoint."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(net, sched, meta))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[DenoiserNet, NoiseSchedule]:
    return decode_checkpoint(Path(path).read_bytes())


def load_meta(path) -> dict:
    return read_header(Path(path).read_bytes()).get("meta", {})
