"""Named-tensor binary container used for models and classifiers.

Layout (all integers little-endian u32, floats little-endian f64):

    magic (5 bytes) | version | meta count | (key, value) string pairs |
    vocab count | vocab tokens | tag count | tag surfaces |
    tensor count | per tensor: name, rows, cols, row-major f64 data

Strings are u32 length + UTF-8 bytes.  Loading a saved file reproduces
every tensor bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

FORMAT_VERSION = 1
MODEL_MAGIC = b"DCNMT"
CLASSIFIER_MAGIC = b"DCCLS"


class ModelFileError(Exception):
    """Base class for serialization failures."""


class BadMagicError(ModelFileError):
    """Magic bytes or format version do not match."""


class TruncatedFileError(ModelFileError):
    """The file ended before a record was complete."""


class TensorShapeError(ModelFileError):
    """A stored tensor's shape is inconsistent with the model configuration."""


def _write_str(f, s):
    data = s.encode("utf-8")
    f.write(struct.pack("<I", len(data)))
    f.write(data)


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"unexpected end of file while reading {what}")
    return data


def _read_u32(f, what):
    return struct.unpack("<I", _read_exact(f, 4, what))[0]


def _read_str(f, what):
    n = _read_u32(f, f"{what} length")
    return _read_exact(f, n, what).decode("utf-8")


def write_container(path, magic, meta, vocab_tokens, tag_surfaces, tensors):
    """Write a container; ``tensors`` is an iterable of (name, 2-D float64 array)."""
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", FORMAT_VERSION))
        items = list(meta.items())
        f.write(struct.pack("<I", len(items)))
        for k, v in items:
            _write_str(f, str(k))
            _write_str(f, str(v))
        f.write(struct.pack("<I", len(vocab_tokens)))
        for tok in vocab_tokens:
            _write_str(f, tok)
        f.write(struct.pack("<I", len(tag_surfaces)))
        for s in tag_surfaces:
            _write_str(f, s)
        tensors = list(tensors)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            if arr.ndim != 2:
                raise ValueError(f"tensor '{name}' must be 2-D, got shape {arr.shape}")
            _write_str(f, name)
            f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            f.write(arr.astype("<f8", copy=False).tobytes())


def read_container(path, expected_magic):
    """Read back (meta, vocab_tokens, tag_surfaces, tensors-dict)."""
    with open(path, "rb") as f:
        magic = _read_exact(f, len(expected_magic), "magic bytes")
        if magic != expected_magic:
            raise BadMagicError(
                f"bad magic {magic!r}; expected {expected_magic!r}"
            )
        version = _read_u32(f, "format version")
        if version != FORMAT_VERSION:
            raise BadMagicError(f"unsupported format version {version}")
        meta = {}
        for _ in range(_read_u32(f, "meta count")):
            k = _read_str(f, "meta key")
            meta[k] = _read_str(f, f"meta value for '{k}'")
        vocab_tokens = [
            _read_str(f, "vocabulary token") for _ in range(_read_u32(f, "vocabulary size"))
        ]
        tag_surfaces = [
            _read_str(f, "domain tag") for _ in range(_read_u32(f, "domain tag count"))
        ]
        tensors = {}
        for _ in range(_read_u32(f, "tensor count")):
            name = _read_str(f, "tensor name")
            rows = _read_u32(f, f"tensor '{name}' rows")
            cols = _read_u32(f, f"tensor '{name}' cols")
            raw = _read_exact(f, rows * cols * 8, f"tensor '{name}' data")
            arr = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
            if name in tensors:
                raise ModelFileError(f"duplicate tensor '{name}'")
            tensors[name] = arr
        if f.read(1):
            raise ModelFileError("trailing data after the last tensor record")
    return meta, vocab_tokens, tag_surfaces, tensors
