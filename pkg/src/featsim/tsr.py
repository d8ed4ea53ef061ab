"""TSR tensor container and P5 PGM previews.

TSR layout: magic "TSR1", u8 dtype tag (0 = float32, 1 = uint8), u8 ndim,
ndim little-endian u32 extents, then the row-major payload. Little-endian
on disk regardless of host, so files travel between machines.
"""

import struct

import numpy as np

from .errors import TsrBadMagic, TsrError, TsrExtentOverflow, TsrTruncated

MAGIC = b"TSR1"
_TAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_DTYPE_TO_TAG = {np.dtype(np.float32): 0, np.dtype(np.uint8): 1}
# Caps the element count so a hostile header cannot ask for a huge allocation.
MAX_ELEMENTS = 1 << 31


def write_tsr(arr, path):
    arr = np.ascontiguousarray(arr)
    tag = _DTYPE_TO_TAG.get(arr.dtype)
    if tag is None:
        raise TsrError(f"TSR stores float32 or uint8, not {arr.dtype}")
    if arr.ndim > 255:
        raise TsrError(f"TSR ndim limit is 255, got {arr.ndim}")
    if any(e <= 0 or e >= 1 << 32 for e in arr.shape):
        raise TsrExtentOverflow(f"extent out of u32 range in shape {arr.shape}")
    if arr.size > MAX_ELEMENTS:
        raise TsrExtentOverflow(f"{arr.size} elements exceed the container limit")
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BB", tag, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(payload)


def read_tsr(path):
    with open(path, "rb") as f:
        head = f.read(4)
        if len(head) < 4:
            raise TsrTruncated(f"{path}: file shorter than the magic")
        if head != MAGIC:
            raise TsrBadMagic(f"{path}: bad magic {head!r}")
        meta = f.read(2)
        if len(meta) < 2:
            raise TsrTruncated(f"{path}: header cut off before dtype/ndim")
        tag, ndim = struct.unpack("<BB", meta)
        dtype = _TAG_TO_DTYPE.get(tag)
        if dtype is None:
            raise TsrError(f"{path}: unknown dtype tag {tag}")
        raw = f.read(4 * ndim)
        if len(raw) < 4 * ndim:
            raise TsrTruncated(f"{path}: header cut off inside extents")
        shape = struct.unpack(f"<{ndim}I", raw) if ndim else ()
        if any(e == 0 for e in shape):
            raise TsrError(f"{path}: zero extent in shape {shape}")
        count = 1
        for e in shape:
            count *= e
            if count > MAX_ELEMENTS:
                raise TsrExtentOverflow(f"{path}: extents {shape} overflow the container limit")
        nbytes = count * dtype.itemsize
        payload = f.read(nbytes)
        if len(payload) < nbytes:
            raise TsrTruncated(f"{path}: payload has {len(payload)} of {nbytes} bytes")
        if f.read(1):
            raise TsrError(f"{path}: trailing bytes after payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    # native byte order, writable copy
    return np.ascontiguousarray(arr.astype(dtype.newbyteorder("="), copy=True))


def write_pgm(image, path):
    """8-bit binary PGM (P5). Floats are taken as [0,1] and scaled to 0..255."""
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise TsrError(f"PGM needs a 2D image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr).tobytes())
