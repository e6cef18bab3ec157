"""Byte-stable artifact I/O: float formatting, atomic writes, checkpoints.

All text artifacts round floats to 9 significant digits so that reruns of
the same configuration produce byte-identical files across platforms.
Checkpoints are a one-line JSON header (tensor names and shapes, in
serialization order) followed by the raw little-endian float64 buffers.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Iterable, Sequence

import numpy as np

CHECKPOINT_MAGIC = "shrinklab-checkpoint"


def fmt(value) -> str:
    """Render one CSV cell: floats at 9 significant digits, ints verbatim."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def fmt_exact(value) -> str:
    """Lossless float rendering (shortest round-trip repr) for state dumps
    that feed further computation; deterministic across platforms."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return fmt(value)


def round9(value: float) -> float:
    """Round to 9 significant digits (the JSON emission precision)."""
    return float(f"{float(value):.9g}")


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via temp file + rename so interrupted runs never leave truncated files."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def csv_text(header: Sequence[str], rows: Iterable[Sequence], exact: bool = False) -> str:
    cell = fmt_exact if exact else fmt
    lines = [",".join(header)]
    lines.extend(",".join(cell(value) for value in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write_text(path, csv_text(header, rows))


def save_checkpoint(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Serialize named float tensors; insertion order is the on-disk order."""
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": 1,
        "tensors": [[name, list(arr.shape)] for name, arr in tensors.items()],
    }
    blobs = [np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in tensors.values()]
    payload = json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n" + b"".join(blobs)
    atomic_write_bytes(path, payload)


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        body = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"corrupt checkpoint header in {path}: {exc}") from exc
    if header.get("format") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(body):
            raise ValueError(f"truncated checkpoint {path}: tensor {name!r} incomplete")
        tensors[name] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise ValueError(f"trailing bytes in checkpoint {path}")
    return tensors
