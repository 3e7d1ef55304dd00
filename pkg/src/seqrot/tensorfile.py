"""Bit-exact tensor serialization and CSV report output.

File layout (all integers little-endian, independent of host byte order):

    magic   4 bytes  b"GSRT"
    version u32      currently 1
    dtype   u8       0 = float64, 1 = float32, 2 = int8
    mlen    u32      metadata byte length
    meta    mlen bytes of UTF-8 JSON (unknown keys preserved)
    ndim    u8
    dims    ndim * u64
    payload product(dims) * itemsize bytes, row-major

Writes go through a temp file and an atomic rename, so a reader never sees a
partially written file at the target path.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile

import numpy as np

from .errors import (
    BadMagicError,
    IoFailureError,
    NotOrthogonalError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    VersionUnsupportedError,
)
from .transforms import OrthoMatrix, orthogonality_residual

MAGIC = b"GSRT"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("i1")}
_CODE_FOR_KIND = {("f", 8): 0, ("f", 4): 1, ("i", 1): 2}


def _dtype_code(dtype: np.dtype) -> int:
    code = _CODE_FOR_KIND.get((dtype.kind, dtype.itemsize))
    if code is None:
        raise UnsupportedDtypeError(f"unsupported dtype {dtype} (use f64, f32 or i8)")
    return code


def write_tensor(path, tensor: np.ndarray, metadata: dict | None = None) -> None:
    """Serialize an array plus JSON metadata; read_tensor is the exact inverse."""
    arr = np.asarray(tensor)
    code = _dtype_code(arr.dtype)
    le = arr.astype(_DTYPE_CODES[code], copy=False)
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    path = os.fspath(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(MAGIC)
                f.write(struct.pack("<I", VERSION))
                f.write(struct.pack("<B", code))
                f.write(struct.pack("<I", len(meta)))
                f.write(meta)
                f.write(struct.pack("<B", arr.ndim))
                for d in arr.shape:
                    f.write(struct.pack("<Q", d))
                f.write(np.ascontiguousarray(le).tobytes())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailureError(f"failed to write {path}: {exc}") from exc


def _take(buf: bytes, offset: int, count: int, what: str) -> tuple[bytes, int]:
    if offset + count > len(buf):
        raise TruncatedPayloadError(f"file ends inside {what} "
                                    f"(need {count} bytes at offset {offset})")
    return buf[offset:offset + count], offset + count


def read_tensor(path) -> tuple[np.ndarray, dict]:
    """Read a tensor file; returns (array, metadata). Fails cleanly, never partial."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as exc:
        raise IoFailureError(f"failed to read {path}: {exc}") from exc

    magic, off = _take(buf, 0, 4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    raw, off = _take(buf, off, 4, "version")
    version = struct.unpack("<I", raw)[0]
    if version != VERSION:
        raise VersionUnsupportedError(f"version {version} unsupported (expected {VERSION})")
    raw, off = _take(buf, off, 1, "dtype code")
    code = raw[0]
    if code not in _DTYPE_CODES:
        raise UnsupportedDtypeError(f"unknown dtype code {code}")
    raw, off = _take(buf, off, 4, "metadata length")
    mlen = struct.unpack("<I", raw)[0]
    raw, off = _take(buf, off, mlen, "metadata")
    metadata = json.loads(raw.decode("utf-8"))
    raw, off = _take(buf, off, 1, "ndim")
    ndim = raw[0]
    dims = []
    for i in range(ndim):
        raw, off = _take(buf, off, 8, f"dim {i}")
        dims.append(struct.unpack("<Q", raw)[0])
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    raw, off = _take(buf, off, count * dtype.itemsize, "payload")
    arr = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    return arr, metadata


def save_rotation(path, m: OrthoMatrix) -> None:
    write_tensor(path, m.signs, metadata={
        "content": "rotation",
        "kind": m.kind,
        "scale": m.scale,
        "group_size": m.group_size,
        "block_kind": m.block_kind,
        "seed": m.seed,
    })


def load_rotation(path) -> OrthoMatrix:
    arr, meta = read_tensor(path)
    if meta.get("content") != "rotation" or arr.dtype != np.int8:
        raise NotOrthogonalError(f"{path} does not hold a sign-structured rotation")
    return OrthoMatrix(signs=arr, scale=float(meta["scale"]), kind=meta["kind"],
                       group_size=meta.get("group_size"),
                       block_kind=meta.get("block_kind"), seed=meta.get("seed"))


def load_rotation_dense(path, tolerance: float = 1e-8) -> np.ndarray:
    """Load any rotation file (sign-structured or dense float) as dense f64.

    Used for externally supplied matrices; rejects non-square or
    non-orthogonal content.
    """
    arr, meta = read_tensor(path)
    if meta.get("content") == "rotation" and arr.dtype == np.int8:
        dense = arr.astype(np.float64) * float(meta["scale"])
    else:
        dense = arr.astype(np.float64)
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise NotOrthogonalError(f"{path}: rotation must be square, got {dense.shape}")
    residual = orthogonality_residual(dense)
    if residual > tolerance:
        raise NotOrthogonalError(
            f"{path}: orthogonality residual {residual:.3e} exceeds {tolerance:.1e}")
    return dense


def save_quantized(path, qt) -> None:
    """Serialize a QuantizedTensor: int8 codes payload, parameters in metadata.

    Asymmetric codes are shifted by -2^(bits-1) so 8-bit codes fit int8; the
    shift is recorded and undone on load.
    """
    spec = qt.spec
    offset = 0 if spec.symmetric else 1 << (spec.bits - 1)
    codes = (qt.codes - offset).astype(np.int8)
    write_tensor(path, codes, metadata={
        "content": "quantized",
        "code_offset": offset,
        "bits": spec.bits,
        "group_size": spec.group_size,
        "symmetric": spec.symmetric,
        "clip": {"kind": spec.clip.kind, "ratio": spec.clip.ratio,
                 "grid": list(spec.clip.grid)},
        "scales": qt.scales.tolist(),
        "zero_points": None if qt.zero_points is None else qt.zero_points.tolist(),
        "shape": list(qt.shape),
    })


def load_quantized(path):
    from .quant import Clip, QuantizedTensor, QuantSpec

    arr, meta = read_tensor(path)
    if meta.get("content") != "quantized":
        raise UnsupportedDtypeError(f"{path} does not hold a quantized tensor")
    clip = Clip(kind=meta["clip"]["kind"], ratio=meta["clip"]["ratio"],
                grid=tuple(meta["clip"]["grid"]))
    spec = QuantSpec(bits=meta["bits"], group_size=meta["group_size"],
                     symmetric=meta["symmetric"], clip=clip)
    codes = arr.astype(np.int64) + meta["code_offset"]
    zeros = meta["zero_points"]
    return QuantizedTensor(
        codes=codes, scales=np.array(meta["scales"], dtype=np.float64),
        zero_points=None if zeros is None else np.array(zeros, dtype=np.int64),
        shape=tuple(meta["shape"]), spec=spec)


def write_report(path, report) -> None:
    """Write an experiment report as CSV: variant, tensor_id, metric, value.

    Rows are sorted by (tensor_id, variant, metric); float values use 17
    significant digits so they re-parse to the same double.
    """
    rows = []
    for variant in report.variants:
        for metric in report.metrics:
            values = report.per_tensor[variant][metric]
            for tensor_id, value in enumerate(values):
                rows.append((variant, tensor_id, metric, value))
    rows.sort(key=lambda r: (r[1], r[0], r[2]))
    path = os.fspath(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(["variant", "tensor_id", "metric", "value"])
                for variant, tensor_id, metric, value in rows:
                    writer.writerow([variant, tensor_id, metric, f"{value:.17g}"])
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailureError(f"failed to write {path}: {exc}") from exc


def read_report(path) -> list[dict]:
    """Parse a report CSV back into a list of row dicts (value as float)."""
    path = os.fspath(path)
    try:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            return [{"variant": r["variant"], "tensor_id": int(r["tensor_id"]),
                     "metric": r["metric"], "value": float(r["value"])}
                    for r in reader]
    except OSError as exc:
        raise IoFailureError(f"failed to read {path}: {exc}") from exc
