"""Little-endian tensor container (``.dsvq``).

Layout::

    "DSVQ"            4 bytes magic
    version           u32 (= 1)
    count             u32
    per tensor:
        name_len      u32
        name          UTF-8 bytes
        dtype         u8   (0=f32, 1=f64, 2=i32, 3=u8)
        ndim          u8
        dims          u64 x ndim
        payload       element_count * itemsize bytes, little-endian
"""

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"DSVQ"
VERSION = 1

DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i4"),
    3: np.dtype("u1"),
}
_KINDS = {("f", 4): 0, ("f", 8): 1, ("i", 4): 2, ("u", 1): 3}


def _dtype_code(arr, name):
    code = _KINDS.get((arr.dtype.kind, arr.dtype.itemsize))
    if code is None:
        raise FormatError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
    return code


def encode(tensors):
    """Serialize an ordered mapping ``name -> ndarray`` to bytes."""
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr, name)
        if arr.ndim > 255:
            raise FormatError(f"tensor {name!r}: too many dimensions ({arr.ndim})")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    return b"".join(out)


def decode(buf):
    """Inverse of :func:`encode`; returns a dict in stored order."""
    buf = memoryview(bytes(buf))
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated container while reading {what}", offset=pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise FormatError("bad magic, not a DSVQ container", offset=0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", offset=4)
    tensors = {}
    for _ in range(count):
        start = pos
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = bytes(take(nlen, "name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not valid UTF-8", offset=start + 4) from exc
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}", offset=start)
        code_pos = pos
        code, ndim = struct.unpack("<BB", take(2, "dtype/ndim"))
        if code not in DTYPES:
            raise FormatError(f"tensor {name!r}: unknown dtype code {code}", offset=code_pos)
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim, "dims"))
        dt = DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.uint64)) * dt.itemsize
        payload = take(nbytes, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype=dt).reshape(dims).copy()
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last tensor", offset=pos)
    return tensors


def write_container(path, tensors):
    with open(path, "wb") as fh:
        fh.write(encode(tensors))


def read_container(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
