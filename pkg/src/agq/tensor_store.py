"""Dense 2-D float32 tensors and the binary named-tensor store format.

Tensors are plain ``numpy.ndarray`` objects: 2-D, row-major, float32 for
activations/weights and uint8 for integer code payloads. The store format is
a small self-describing binary container (magic ``AGQT``).
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"AGQT"
FORMAT_VERSION = 1
MAX_ELEMENTS = 2**31

_DTYPE_CODES = {0: np.float32, 1: np.uint8}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.uint8): 1}


class StoreError(Exception):
    """Base class for tensor-store failures."""


class BadMagicError(StoreError):
    """File does not start with the AGQT magic bytes."""


class TruncatedPayloadError(StoreError):
    """File ended before the declared payload was read."""


class DimensionOverflowError(StoreError):
    """Tensor would exceed the 2^31-element cap."""


def as_tensor2d(data, dtype=np.float32) -> np.ndarray:
    """Validate and return a 2-D contiguous array of the given dtype.

    Raises ValueError on non-2-D input, non-finite float values, or tensors
    larger than the element cap.
    """
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D tensor, got {arr.ndim}-D")
    if arr.size > MAX_ELEMENTS:
        raise DimensionOverflowError(
            f"tensor has {arr.size} elements, cap is {MAX_ELEMENTS}"
        )
    if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return arr


def slice_rows(t: np.ndarray, keep) -> np.ndarray:
    """Return the rows of ``t`` listed in ``keep`` (strictly increasing)."""
    keep = list(keep)
    prev = -1
    for i in keep:
        if i <= prev:
            raise ValueError("keep indices must be strictly increasing")
        if i >= t.shape[0]:
            raise ValueError(f"row index {i} out of range for {t.shape[0]} rows")
        prev = i
    if not keep:
        return np.empty((0, t.shape[1]), dtype=t.dtype)
    return t[np.asarray(keep, dtype=np.intp), :].copy()


def save_store(store: dict[str, np.ndarray], path) -> None:
    """Write a name -> tensor mapping to ``path``.

    Names are serialized in lexicographic order so output bytes are
    deterministic for a given store.
    """
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(store))]
    for name in sorted(store):
        raw = name.encode("utf-8")
        if not 1 <= len(raw) <= 256:
            raise StoreError(f"tensor name length {len(raw)} outside 1..256 bytes")
        t = store[name]
        t = as_tensor2d(t, dtype=t.dtype)
        dtype_code = _DTYPE_TO_CODE.get(t.dtype)
        if dtype_code is None:
            raise StoreError(f"unsupported dtype {t.dtype}")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BII", dtype_code, t.shape[0], t.shape[1]))
        chunks.append(t.astype(t.dtype, copy=False).tobytes(order="C"))
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_store(path) -> dict[str, np.ndarray]:
    """Read a store written by :func:`save_store`; bit-exact round trip."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}")
    off = 4
    try:
        version, count = struct.unpack_from("<II", blob, off)
    except struct.error as e:
        raise TruncatedPayloadError("header truncated") from e
    if version != FORMAT_VERSION:
        raise StoreError(f"unsupported format version {version}")
    off += 8
    store: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            if len(blob) < off + name_len:
                raise TruncatedPayloadError("name truncated")
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            dtype_code, rows, cols = struct.unpack_from("<BII", blob, off)
            off += 9
        except struct.error as e:
            raise TruncatedPayloadError("tensor header truncated") from e
        dtype = _DTYPE_CODES.get(dtype_code)
        if dtype is None:
            raise StoreError(f"unknown dtype code {dtype_code}")
        if rows * cols > MAX_ELEMENTS:
            raise DimensionOverflowError(f"{rows}x{cols} exceeds element cap")
        nbytes = rows * cols * np.dtype(dtype).itemsize
        payload = blob[off : off + nbytes]
        if len(payload) < nbytes:
            raise TruncatedPayloadError(f"payload for {name!r} truncated")
        off += nbytes
        if name in store:
            raise StoreError(f"duplicate tensor name {name!r}")
        store[name] = np.frombuffer(payload, dtype=dtype).reshape(rows, cols).copy()
    return store
