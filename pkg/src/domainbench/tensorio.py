"""Binary tensor container format.

Single tensor layout (all integers little-endian):

    magic     8 bytes   b"TENSOR01"
    dtype     u32       1 = float32 (the only supported element type)
    rank      u32
    dims      rank * u64
    payload   prod(dims) * 4 bytes, float32, C order

Bundle layout (named tensors behind a manifest):

    magic     8 bytes   b"TENSPAK1"
    mlen      u32       manifest length in bytes
    manifest  mlen bytes of UTF-8 JSON: {"tensors": [name, ...], ...}
    records   one single-tensor container per manifest name, in order
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .errors import TensorFormatError

TENSOR_MAGIC = b"TENSOR01"
BUNDLE_MAGIC = b"TENSPAK1"
_DTYPE_F32 = 1


def _write_tensor_stream(fh, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype="<f4")  # rank 0 stays rank 0
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<II", _DTYPE_F32, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TensorFormatError(f"truncated container: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_tensor_stream(fh) -> np.ndarray:
    magic = _read_exact(fh, 8)
    if magic != TENSOR_MAGIC:
        raise TensorFormatError(f"bad tensor magic {magic!r}")
    dtype, rank = struct.unpack("<II", _read_exact(fh, 8))
    if dtype != _DTYPE_F32:
        raise TensorFormatError(f"unsupported element type code {dtype}")
    if rank > 8:
        raise TensorFormatError(f"implausible rank {rank}")
    dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = _read_exact(fh, 4 * count)
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def write_tensor(path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        _write_tensor_stream(fh, array)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return _read_tensor_stream(fh)


def write_bundle(path, tensors: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    """Write named tensors with a JSON manifest. Order follows the dict."""
    manifest = dict(metadata or {})
    manifest["tensors"] = list(tensors.keys())
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in manifest["tensors"]:
            _write_tensor_stream(fh, tensors[name])


def read_bundle(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a bundle back as (name -> array, manifest metadata)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8)
        if magic != BUNDLE_MAGIC:
            raise TensorFormatError(f"bad bundle magic {magic!r}")
        (mlen,) = struct.unpack("<I", _read_exact(fh, 4))
        try:
            manifest = json.loads(_read_exact(fh, mlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise TensorFormatError(f"unreadable bundle manifest: {exc}") from exc
        names = manifest.pop("tensors", None)
        if not isinstance(names, list):
            raise TensorFormatError("bundle manifest misses its tensor list")
        tensors = {name: _read_tensor_stream(fh) for name in names}
    return tensors, manifest


def tensor_bytes(array: np.ndarray) -> bytes:
    """Single-tensor container serialized to bytes (handy for tests)."""
    buf = io.BytesIO()
    _write_tensor_stream(buf, array)
    return buf.getvalue()
