"""Binary feature storage and deterministic stand-in encoders.

Feature file layout (all integers little-endian):

    magic   4 bytes  b"FCF1"
    version u32      currently 1
    count   u32      number of vectors
    dim     u32      entries per vector
    index   count x (u16 key byte length, UTF-8 key bytes)
    payload count x dim float32, in index order

Vectors are stored as float32 and widened to float64 in memory, so a
write/read/write cycle is byte-identical.
"""

import hashlib
import os
import struct
import tempfile

import numpy as np

MAGIC = b"FCF1"
VERSION = 1


class FeatureFormatError(ValueError):
    """File does not follow the feature container layout."""


def write_features(pairs, dim, path):
    """Write (key, vector) pairs atomically (temp file + rename)."""
    keys = set()
    index = bytearray()
    payload = bytearray()
    count = 0
    for key, vec in pairs:
        if key in keys:
            raise ValueError(f"write_features: duplicate key {key!r}")
        keys.add(key)
        arr = np.asarray(vec, dtype=np.float32)
        if arr.shape != (dim,):
            raise ValueError(
                f"write_features: vector for key {key!r} has shape {tuple(arr.shape)}, "
                f"expected ({dim},)"
            )
        kb = key.encode("utf-8")
        if len(kb) > 0xFFFF:
            raise ValueError(f"write_features: key {key!r} longer than 65535 bytes")
        index += struct.pack("<H", len(kb)) + kb
        payload += arr.astype("<f4").tobytes()
        count += 1

    blob = MAGIC + struct.pack("<III", VERSION, count, dim) + bytes(index) + bytes(payload)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".",
                               prefix=".features-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_features(path):
    """Read a feature file back into an ordered {key: float64 vector} map."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 16:
        raise FeatureFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    version, count, dim = struct.unpack_from("<III", raw, 4)
    if version != VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    offset = 16
    keys = []
    for _ in range(count):
        if offset + 2 > len(raw):
            raise FeatureFormatError(f"{path}: truncated index at byte {offset}")
        (klen,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        if offset + klen > len(raw):
            raise FeatureFormatError(f"{path}: truncated key at byte {offset}")
        keys.append(raw[offset : offset + klen].decode("utf-8"))
        offset += klen
    expected = count * dim * 4
    actual = len(raw) - offset
    if actual != expected:
        raise FeatureFormatError(
            f"{path}: payload has {actual} bytes, expected {expected} "
            f"({count} x {dim} float32)"
        )
    flat = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=offset)
    mat = flat.reshape(count, dim).astype(np.float64)
    return {k: mat[i] for i, k in enumerate(keys)}


def toy_image_encoder(record_id, dim, seed=0):
    """Deterministic unit-norm vector derived from a hash of the record id.

    A stand-in for a pretrained image encoder: the same id always maps to
    the same vector, across runs and platforms.
    """
    if dim <= 0:
        raise ValueError(f"toy_image_encoder: dim must be positive, got {dim}")
    digest = hashlib.sha256(f"{seed}|{record_id}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class FeatureSource:
    """Uniform lookup over either a feature file or the toy encoder."""

    def __init__(self, mode, dim, path=None, seed=0):
        if mode not in ("file", "toy"):
            raise ValueError(f"feature mode must be 'file' or 'toy', got {mode!r}")
        self.mode = mode
        self.dim = dim
        self.seed = seed
        self._table = None
        if mode == "file":
            if path is None:
                raise ValueError("file feature mode needs a path")
            self._table = read_features(path)
            for key, vec in self._table.items():
                if vec.shape != (dim,):
                    raise ValueError(
                        f"feature file vector {key!r} has dim {vec.shape[0]}, "
                        f"model expects {dim}"
                    )
                break

    def __call__(self, key):
        if self.mode == "toy":
            return toy_image_encoder(key, self.dim, self.seed)
        try:
            return self._table[key]
        except KeyError:
            raise KeyError(f"feature_ref {key!r} not present in feature file") from None
