"""Bit-exact binary container for named tensors.

File layout (all integers little-endian, independent of platform):

    magic   4 bytes  b"ACSW"
    version u32      currently 1
    count   u64      number of entries
    entry headers, one per tensor, in store order:
        name_len u8, name bytes (UTF-8, 1..255 bytes)
        dtype    u8  (0 = float32, 1 = float64)
        rank     u8  (0..5)
        extents  u64 x rank
        offset   u64 absolute file offset of the raw data, 8-byte aligned
    data section: raw little-endian element bytes at the recorded offsets

save/load round trips are bitwise identities; loading validates magic,
version, offsets, and total length before touching any data.
"""

import struct

import numpy as np

from .errors import WeightFormatError

MAGIC = b"ACSW"
VERSION = 1
MAX_RANK = 5

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class WeightStore:
    """Ordered name -> tensor mapping; iteration follows insertion order."""

    def __init__(self, items=None):
        self._data = {}
        if items is not None:
            entries = items.items() if hasattr(items, "items") else items
            for name, tensor in entries:
                self[name] = tensor

    @staticmethod
    def _check_name(name):
        if not isinstance(name, str) or not name:
            raise WeightFormatError("bad_name", f"names must be non-empty strings, got {name!r}")
        if len(name.encode("utf-8")) > 255:
            raise WeightFormatError("bad_name", f"name longer than 255 encoded bytes: {name[:40]}...")

    def __setitem__(self, name, tensor):
        self._check_name(name)
        arr = np.asarray(tensor)
        if arr.ndim > 0 and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if arr.dtype not in (np.float32, np.float64):
            raise WeightFormatError("bad_dtype", f"{name}: dtype must be float32/float64, got {arr.dtype}")
        if arr.ndim > MAX_RANK:
            raise WeightFormatError("bad_rank", f"{name}: rank {arr.ndim} exceeds {MAX_RANK}")
        self._data[name] = arr

    def __getitem__(self, name):
        return self._data[name]

    def __contains__(self, name):
        return name in self._data

    def __len__(self):
        return len(self._data)

    def __iter__(self):
        return iter(self._data)

    def keys(self):
        return self._data.keys()

    def values(self):
        return self._data.values()

    def items(self):
        return self._data.items()

    def get(self, name, default=None):
        return self._data.get(name, default)

    def copy(self):
        return WeightStore(self._data.items())

    def __eq__(self, other):
        if not isinstance(other, WeightStore):
            return NotImplemented
        if list(self.keys()) != list(other.keys()):
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b, equal_nan=True)
            for a, b in zip(self.values(), other.values())
        )

    def __repr__(self):
        return f"WeightStore({len(self)} entries)"


def _align8(n):
    return (n + 7) & ~7


def save(store, path):
    """Write ``store`` to ``path`` in the container layout above."""
    names = list(store.keys())
    encoded = [n.encode("utf-8") for n in names]
    header_len = 16
    for enc, name in zip(encoded, names):
        arr = store[name]
        header_len += 1 + len(enc) + 1 + 1 + 8 * arr.ndim + 8

    offsets = []
    at = _align8(header_len)
    for name in names:
        arr = store[name]
        offsets.append(at)
        at = _align8(at + arr.nbytes)

    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<Q", len(names))
    for name, enc, off in zip(names, encoded, offsets):
        arr = store[name]
        out += struct.pack("<B", len(enc))
        out += enc
        out += struct.pack("<B", _CODE_OF[arr.dtype])
        out += struct.pack("<B", arr.ndim)
        for e in arr.shape:
            out += struct.pack("<Q", e)
        out += struct.pack("<Q", off)
    for name, off in zip(names, offsets):
        arr = store[name]
        out += b"\x00" * (off - len(out))
        out += arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.at = 0

    def take(self, n, what):
        if self.at + n > len(self.blob):
            raise WeightFormatError("truncated", f"file ends inside {what}")
        chunk = self.blob[self.at : self.at + n]
        self.at += n
        return chunk

    def u8(self, what):
        return self.take(1, what)[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]


def load(path):
    """Read a container written by :func:`save`, validating before use."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise WeightFormatError("bad_magic", f"expected {MAGIC!r}, got {magic!r}")
    version = r.u32("version")
    if version != VERSION:
        raise WeightFormatError("bad_version", f"unsupported version {version}")
    count = r.u64("entry count")

    entries = []
    seen = set()
    for i in range(count):
        nlen = r.u8(f"entry {i} name length")
        if nlen == 0:
            raise WeightFormatError("bad_name", f"entry {i}: empty name")
        raw = r.take(nlen, f"entry {i} name")
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError("bad_name", f"entry {i}: invalid UTF-8") from exc
        if name in seen:
            raise WeightFormatError("duplicate_name", f"duplicate entry name {name!r}")
        seen.add(name)
        code = r.u8(f"{name}: dtype")
        if code not in _DTYPE_CODES:
            raise WeightFormatError("bad_dtype", f"{name}: unknown dtype code {code}")
        rank = r.u8(f"{name}: rank")
        if rank > MAX_RANK:
            raise WeightFormatError("bad_rank", f"{name}: rank {rank} exceeds {MAX_RANK}")
        shape = tuple(r.u64(f"{name}: extent") for _ in range(rank))
        offset = r.u64(f"{name}: offset")
        entries.append((name, _DTYPE_CODES[code], shape, offset))

    header_end = r.at
    spans = []
    for name, dtype, shape, offset in entries:
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        if offset % 8 != 0 or offset < header_end:
            raise WeightFormatError("bad_offset", f"{name}: offset {offset} out of bounds")
        if offset + nbytes > len(blob):
            raise WeightFormatError("truncated", f"{name}: data extends past end of file")
        spans.append((offset, offset + nbytes, name))
    for (s0, e0, n0), (s1, e1, n1) in zip(sorted(spans), sorted(spans)[1:]):
        if e0 > s1:
            raise WeightFormatError("overlap", f"entries {n0!r} and {n1!r} overlap")

    store = WeightStore()
    for name, dtype, shape, offset in entries:
        nelem = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(blob, dtype=dtype, count=nelem, offset=offset).reshape(shape)
        store[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return store
