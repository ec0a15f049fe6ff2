"""Binary checkpoint container.

Layout (little-endian):
    magic   4 bytes  "DCSW"
    version u32      format version (currently 1)
    fprint  32 bytes architecture fingerprint (sha256 of the config)
    count   u32      number of entries
    entry:  name_len u16, name utf-8, rank u8, extents u32[rank], values f64[]

Round-trips are bit-exact; loads of truncated or mislabeled files fail
cleanly without partial state escaping.
"""

import struct
from collections import OrderedDict

import numpy as np

from .errors import DataError

MAGIC = b"DCSW"
VERSION = 1


def write_tensors(path, fingerprint: bytes, entries):
    """entries: iterable of (name, ndarray). Order is preserved."""
    if len(fingerprint) != 32:
        raise DataError(f"fingerprint must be 32 bytes, got {len(fingerprint)}")
    entries = list(entries)
    names = [n for n, _ in entries]
    if len(set(names)) != len(names):
        raise DataError("duplicate entry names in checkpoint")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(fingerprint)
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            arr = np.asarray(arr, dtype=np.float64)
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<I", extent))
            f.write(arr.astype("<f8").tobytes(order="C"))


def read_tensors(path):
    """Returns (fingerprint, OrderedDict name -> float64 array)."""
    with open(path, "rb") as f:
        blob = f.read()
    view = memoryview(blob)
    if len(view) < 44:
        raise DataError(f"checkpoint {path} is truncated")
    if bytes(view[:4]) != MAGIC:
        raise DataError(f"checkpoint {path} has bad magic bytes")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != VERSION:
        raise DataError(f"checkpoint {path} has unsupported version {version}")
    fingerprint = bytes(view[8:40])
    (count,) = struct.unpack_from("<I", view, 40)
    off = 44
    out = OrderedDict()
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", view, off)
            off += 2
            name = bytes(view[off : off + name_len]).decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", view, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", view, off) if rank else ()
            off += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            end = off + 8 * n
            if end > len(view):
                raise struct.error("values truncated")
            arr = np.frombuffer(view, dtype="<f8", count=n, offset=off).reshape(shape)
            off += 8 * n
        except (struct.error, UnicodeDecodeError) as exc:
            raise DataError(f"checkpoint {path} is truncated or corrupt: {exc}") from exc
        if name in out:
            raise DataError(f"checkpoint {path} has duplicate entry {name!r}")
        out[name] = arr.copy()
    if off != len(view):
        raise DataError(f"checkpoint {path} has {len(view) - off} trailing bytes")
    return fingerprint, out
