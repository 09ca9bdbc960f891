"""Video/caption feature ingestion.

Features arrive precomputed as binary tensor files listed in a JSON-lines
manifest. Nothing here runs an encoder; ``synth_condition`` produces stand-in
features for tests and demos.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"DBGM"
VERSION = 1
DTYPE_F64_LE = 1
_HEADER = struct.Struct("<4sIII")


class TensorFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ConditionFeatures:
    fv: np.ndarray
    fl: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        fv, fl = np.asarray(self.fv, dtype=np.float64), np.asarray(self.fl, dtype=np.float64)
        if fv.ndim != 2 or fl.ndim != 2:
            raise ValueError("visual and language features must both be (T, d) matrices")
        if fv.shape[0] != fl.shape[0]:
            raise ValueError(f"frame count mismatch: visual T={fv.shape[0]}, "
                             f"language T={fl.shape[0]}")
        if not (np.isfinite(fv).all() and np.isfinite(fl).all()):
            raise ValueError("features must be finite")
        object.__setattr__(self, "fv", fv)
        object.__setattr__(self, "fl", fl)

    @property
    def frames(self) -> int:
        return self.fv.shape[0]


@dataclass(frozen=True)
class ManifestItem:
    id: str
    midi_path: Path
    fv_path: Path
    fl_path: Path
    bar_offset: int = 0


def encode_tensor(array) -> bytes:
    array = np.ascontiguousarray(array, dtype="<f8")
    if array.ndim not in (1, 2, 3):
        raise ValueError(f"tensor rank must be 1, 2 or 3, got {array.ndim}")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F64_LE, array.ndim)
    dims = struct.pack(f"<{array.ndim}I", *array.shape)
    return header + dims + array.tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise TensorFormatError(
            f"header needs {_HEADER.size} bytes, file has {len(data)}", len(data))
    magic, version, dtype, rank = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}", 4)
    if dtype != DTYPE_F64_LE:
        raise TensorFormatError(f"unsupported element type {dtype}", 8)
    if rank not in (1, 2, 3):
        raise TensorFormatError(f"rank {rank} not in 1..3", 12)
    off = _HEADER.size
    if len(data) < off + 4 * rank:
        raise TensorFormatError("truncated dimension list", len(data))
    dims = struct.unpack_from(f"<{rank}I", data, off)
    off += 4 * rank
    expected = 8 * math.prod(dims)
    actual = len(data) - off
    if actual != expected:
        raise TensorFormatError(
            f"payload of dims {dims} needs {expected} bytes, found {actual}", off)
    return np.frombuffer(data, dtype="<f8", offset=off).reshape(dims).astype(np.float64)


def write_tensor(array, path) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def read_manifest(path) -> list[ManifestItem]:
    """Parse a JSON-lines manifest; relative paths resolve against its folder."""
    path = Path(path)
    base = path.parent
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            missing = [k for k in ("id", "midi_path", "fv_path", "fl_path") if k not in rec]
            if missing:
                raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
            items.append(ManifestItem(
                id=str(rec["id"]),
                midi_path=base / rec["midi_path"],
                fv_path=base / rec["fv_path"],
                fl_path=base / rec["fl_path"],
                bar_offset=int(rec.get("bar_offset", 0)),
            ))
    return items


def write_manifest(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_condition(item: ManifestItem) -> ConditionFeatures:
    for p in (item.fv_path, item.fl_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"feature file not found: {p}")
    fv, fl = read_tensor(item.fv_path), read_tensor(item.fl_path)
    if fv.ndim != 2 or fl.ndim != 2:
        raise ValueError(f"{item.id}: feature tensors must be rank 2")
    if fv.shape[0] != fl.shape[0]:
        raise ValueError(f"{item.id}: T mismatch, {item.fv_path} has {fv.shape[0]} frames "
                         f"but {item.fl_path} has {fl.shape[0]}")
    return ConditionFeatures(fv, fl, item.id)


def resample_matrix(frames: int, length: int) -> np.ndarray:
    """``(length, frames)`` linear-interpolation weights; rows sum to 1."""
    if frames < 1 or length < 1:
        raise ValueError("frames and length must be >= 1")
    weights = np.zeros((length, frames))
    if frames == 1:
        weights[:, 0] = 1.0
        return weights
    if length == 1:
        weights[0, 0] = 1.0
        return weights
    pos = np.arange(length) * (frames - 1) / (length - 1)
    lo = np.minimum(np.floor(pos).astype(int), frames - 2)
    frac = pos - lo
    weights[np.arange(length), lo] = 1.0 - frac
    weights[np.arange(length), lo + 1] += frac
    return weights


def resample_sequence(features, length: int) -> np.ndarray:
    """Linearly interpolate ``(T, d)`` rows onto ``length`` evenly spaced positions."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == length:
        return features.copy()
    return resample_matrix(features.shape[0], length) @ features


def synth_condition(frames: int, d_fv: int, d_fl: int, seed: int,
                    profile: str = "random", k: int = 8) -> ConditionFeatures:
    """Synthetic features.

    ``random``: i.i.d. standard normal. ``blocky``: one Gaussian row per block
    of ``k`` frames, repeated across the block. ``planted``: every row is the
    same basis vector, picked by ``seed``, so distinct seeds give orthogonal,
    trivially separable conditions.
    """
    rng = np.random.default_rng(seed)
    if profile == "random":
        fv = rng.standard_normal((frames, d_fv))
        fl = rng.standard_normal((frames, d_fl))
    elif profile == "blocky":
        blocks = -(-frames // k)
        fv = np.repeat(rng.standard_normal((blocks, d_fv)), k, axis=0)[:frames]
        fl = np.repeat(rng.standard_normal((blocks, d_fl)), k, axis=0)[:frames]
    elif profile == "planted":
        fv = np.zeros((frames, d_fv))
        fl = np.zeros((frames, d_fl))
        fv[:, seed % d_fv] = 1.0
        fl[:, seed % d_fl] = 1.0
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return ConditionFeatures(fv, fl, f"synth-{profile}-{seed}")
