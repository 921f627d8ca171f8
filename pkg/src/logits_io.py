"""Binary logits exchange files.

One record is: magic b"DLPS", version u8 = 1, u32 T_steps, u32 L, u32 K, then
T_steps*L*K little-endian f32 values in (step, position, token) order. A file
holds one or more consecutive records; surrogate encoders use three (F, G and
a 1x1 temperature).
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, List

import numpy as np

from errors import LogitsFormatError

MAGIC = b"DLPS"
VERSION = 1
HEADER = np.dtype([("magic", "S4"), ("version", "u1"), ("steps", "<u4"), ("length", "<u4"), ("vocab", "<u4")])


def encode_record(table: np.ndarray) -> bytes:
    arr = np.asarray(table, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise LogitsFormatError(f"a record holds a (steps, L, K) table, got shape {arr.shape}")
    head = np.zeros((), dtype=HEADER)
    head["magic"], head["version"] = MAGIC, VERSION
    head["steps"], head["length"], head["vocab"] = arr.shape
    return head.tobytes() + arr.astype("<f4").tobytes(order="C")


def write_records(path: str | Path, tables: Iterable[np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(encode_record(t) for t in tables))
    return path


def read_records(path: str | Path) -> List[np.ndarray]:
    path = Path(path)
    buf = path.read_bytes()
    out: List[np.ndarray] = []
    pos = 0
    while pos < len(buf):
        if len(buf) - pos < HEADER.itemsize:
            raise LogitsFormatError(f"{path}: truncated header at byte {pos}")
        head = np.frombuffer(buf, dtype=HEADER, count=1, offset=pos)[0]
        if bytes(head["magic"]) != MAGIC:
            raise LogitsFormatError(f"{path}: bad magic at byte {pos}")
        if int(head["version"]) != VERSION:
            raise LogitsFormatError(f"{path}: unsupported version {int(head['version'])}")
        shape = (int(head["steps"]), int(head["length"]), int(head["vocab"]))
        pos += HEADER.itemsize
        count = shape[0] * shape[1] * shape[2]
        if len(buf) - pos < 4 * count:
            raise LogitsFormatError(f"{path}: expected {count} values after header, file is short")
        values = np.frombuffer(buf, dtype="<f4", count=count, offset=pos)
        out.append(values.astype(np.float64).reshape(shape))
        pos += 4 * count
    if not out:
        raise LogitsFormatError(f"{path}: no records")
    return out


def read_logits(path: str | Path) -> np.ndarray:
    records = read_records(path)
    if len(records) != 1:
        raise LogitsFormatError(f"{path}: expected a single logits record, found {len(records)}")
    return records[0]
