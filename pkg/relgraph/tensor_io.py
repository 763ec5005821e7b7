"""
Bit-exact binary tensor files and JSON manifests.

TensorFile layout (all integers little-endian):

    offset 0   magic     b"RGT1"
    offset 4   dtype     u8, 1 = float64
    offset 5   rank      u8
    offset 6   reserved  u16, must be 0
    offset 8   dims      rank × u64
    then       payload   product(dims) × float64, row-major
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from .errors import FormatError
from .numeric_core import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"RGT1"
DTYPE_F64 = 1
HEADER = struct.Struct("<4sBBH")
DIM = struct.Struct("<Q")

PathLike = Union[str, Path]


def encode_tensor(t: Tensor) -> bytes:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim > 255:
        raise FormatError(f"rank {t.ndim} does not fit in a u8", offset=5)
    if not np.all(np.isfinite(t)):
        raise ValueError("refusing to write a tensor with NaN or Inf entries")
    header = HEADER.pack(MAGIC, DTYPE_F64, t.ndim, 0)
    dims = b"".join(DIM.pack(d) for d in t.shape)
    return header + dims + np.ascontiguousarray(t, dtype="<f8").tobytes()


def decode_tensor(blob: bytes, path: PathLike = None) -> Tensor:
    if len(blob) < HEADER.size:
        raise FormatError(f"truncated header: {len(blob)} of {HEADER.size} bytes", offset=len(blob), path=path)
    magic, dtype, rank, reserved = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0, path=path)
    if dtype != DTYPE_F64:
        raise FormatError(f"dtype code {dtype} is not float64 (1)", offset=4, path=path)
    if reserved != 0:
        raise FormatError(f"reserved field is {reserved}, expected 0", offset=6, path=path)

    dims_end = HEADER.size + rank * DIM.size
    if len(blob) < dims_end:
        raise FormatError(f"truncated dims: need {dims_end} bytes, have {len(blob)}", offset=len(blob), path=path)
    dims = tuple(DIM.unpack_from(blob, HEADER.size + i * DIM.size)[0] for i in range(rank))

    count = int(np.prod(dims, dtype=np.uint64)) if dims else 1
    expected = dims_end + 8 * count
    if len(blob) != expected:
        raise FormatError(
            f"payload holds {len(blob) - dims_end} bytes, dims {dims} need {8 * count}",
            offset=min(len(blob), expected), path=path,
        )

    data = np.frombuffer(blob, dtype="<f8", count=count, offset=dims_end).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise FormatError("non-finite value in payload", offset=dims_end + 8 * int(bad[0]), path=path)
    return data.reshape(dims)


def save_tensor(path: PathLike, t: Tensor) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(t))
    return path


def load_tensor(path: PathLike) -> Tensor:
    path = Path(path)
    return decode_tensor(path.read_bytes(), path=path)


# ── Manifests ───────────────────────────────────────────────────

def save_manifest(path: PathLike, manifest: Dict[str, Any]) -> Path:
    """Write a manifest as sorted, indented JSON (stable bytes for stable input)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise FormatError("manifest not found", offset=0, path=path)
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e.msg}", offset=e.pos, path=path)
    if not isinstance(manifest, dict):
        raise FormatError("manifest must be a JSON object", offset=0, path=path)
    return manifest
