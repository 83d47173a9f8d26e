"""Model serialization and embedding export.

Binary layout (all little-endian), realizing the storage claim that a
trained model is exactly ``K*d`` anchor floats plus ``nnz(T)`` transform
entries:

    offset  size        field
    0       4           magic "ANTB"
    4       2           version (u16)
    6       16          header: |V|, K, d, flags (4 x u32)
    22      4*K*d       anchors, float32 row-major
    ..      8           nnz (u64)
    ..      12*nnz      entries (row u32, col u32, value f32), sorted by (row, col)
    ..      4           CRC-32 of all preceding bytes

Flag bit 0 marks a non-negative transform.  Values are stored in
binary32; training precision is float64, so a double round-trip is
byte-identical while a single round-trip is exact only for values
representable in binary32.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .model import AntModel, Regularizer, count_params
from .sparse import SparseRowMatrix, spmm

__all__ = [
    "MAGIC",
    "VERSION",
    "ModelFileError",
    "BadMagicError",
    "BadVersionError",
    "ChecksumError",
    "TruncatedFileError",
    "save_model",
    "load_model",
    "file_size",
    "export_embeddings",
]

MAGIC = b"ANTB"
VERSION = 1
FLAG_NONNEG = 0x1

_HEADER = struct.Struct("<4sHIIII")
_NNZ = struct.Struct("<Q")
_ENTRY = struct.Struct("<IIf")
_CRC = struct.Struct("<I")


class ModelFileError(Exception):
    """Base class for model-file problems."""


class BadMagicError(ModelFileError):
    pass


class BadVersionError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


def file_size(k: int, d: int, nnz: int) -> int:
    """Exact on-disk size in bytes for the given shape."""
    return _HEADER.size + 4 * k * d + _NNZ.size + _ENTRY.size * nnz + _CRC.size


def save_model(model: AntModel, path) -> int:
    """Write the model; returns the number of bytes written.

    Entries whose value rounds to binary32 zero are dropped rather than
    stored as zeros (storing zeros would corrupt the format's nonzero
    invariant); training thresholds keep values far above that range.
    """
    anchors32 = model.anchors.astype("<f4")
    entries = []
    for r, c, v in model.transform.iter_entries():
        v32 = np.float32(v)
        if v32 != 0:
            entries.append((r, c, v32))
    flags = FLAG_NONNEG if model.transform.nonneg else 0
    parts = [
        _HEADER.pack(
            MAGIC,
            VERSION,
            model.n_objects,
            model.n_anchors,
            model.dim,
            flags,
        ),
        anchors32.tobytes(),
        _NNZ.pack(len(entries)),
    ]
    parts.extend(_ENTRY.pack(r, c, v) for r, c, v in entries)
    body = b"".join(parts)
    blob = body + _CRC.pack(zlib.crc32(body))
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_model(path) -> AntModel:
    """Read a model file back; the inverse of :func:`save_model`.

    Raises :class:`BadMagicError`, :class:`BadVersionError`,
    :class:`TruncatedFileError`, or :class:`ChecksumError` as
    appropriate; these are distinct so callers can tell corruption from
    format mismatch.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size + _NNZ.size + _CRC.size:
        if blob[:4] != MAGIC:
            raise BadMagicError(f"{path}: not a model file")
        raise TruncatedFileError(f"{path}: file shorter than a valid model")
    magic, version, n_objects, k, d, flags = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    a_bytes = 4 * k * d
    if len(blob) < offset + a_bytes + _NNZ.size:
        raise TruncatedFileError(f"{path}: anchor section truncated")
    anchors = np.frombuffer(blob, dtype="<f4", count=k * d, offset=offset)
    anchors = anchors.reshape(k, d).astype(np.float64)
    offset += a_bytes
    (n_entries,) = _NNZ.unpack_from(blob, offset)
    offset += _NNZ.size
    t_bytes = _ENTRY.size * n_entries
    if len(blob) != offset + t_bytes + _CRC.size:
        raise TruncatedFileError(
            f"{path}: expected {offset + t_bytes + _CRC.size} bytes, found {len(blob)}"
        )
    (stored_crc,) = _CRC.unpack_from(blob, len(blob) - _CRC.size)
    if zlib.crc32(blob[: -_CRC.size]) != stored_crc:
        raise ChecksumError(f"{path}: CRC mismatch")
    nonneg = bool(flags & FLAG_NONNEG)
    transform = SparseRowMatrix(n_objects, k, nonneg=nonneg)
    prev = (-1, -1)
    by_row: dict[int, list[tuple[int, float]]] = {}
    for idx in range(n_entries):
        r, c, v = _ENTRY.unpack_from(blob, offset + idx * _ENTRY.size)
        if (r, c) <= prev:
            raise ModelFileError(f"{path}: entries not sorted by (row, col)")
        if v == 0.0:
            raise ModelFileError(f"{path}: zero value stored at ({r}, {c})")
        prev = (r, c)
        by_row.setdefault(r, []).append((c, float(v)))
    for r, items in by_row.items():
        transform.set_row(
            r,
            np.array([c for c, _ in items], dtype=np.int64),
            np.array([v for _, v in items], dtype=np.float64),
        )
    return AntModel(
        anchors=anchors,
        transform=transform,
        reg=Regularizer(nonneg=nonneg),
    )


def _token_names(vocab, n: int) -> list[str]:
    if vocab is None:
        return [str(i) for i in range(n)]
    tokens = vocab.tokens if hasattr(vocab, "tokens") else list(vocab)
    if len(tokens) != n:
        raise ValueError(f"vocabulary size {len(tokens)} != model objects {n}")
    return [str(t) for t in tokens]


def export_embeddings(model: AntModel, vocab, path, format: str) -> dict:
    """Write embeddings or a sparsity report; returns a totals summary.

    ``text_vectors`` materializes the embedding rows, one
    ``<token> v1 ... vd`` line per object with 6 significant digits.
    ``sparse_report`` writes tab-separated per-object nonzero counts with
    a totals footer.
    """
    names = _token_names(vocab, model.n_objects)
    totals = count_params(model)
    summary = {
        "objects": model.n_objects,
        "k": model.n_anchors,
        "d": model.dim,
        "transform_nnz": totals["transform_nnz"],
        "total_params": totals["total"],
        "zero_rows": totals["zero_rows"],
    }
    if format == "text_vectors":
        emb = spmm(model.transform, model.anchors)
        with open(path, "w", encoding="utf-8") as fh:
            for name, row in zip(names, emb):
                fh.write(name + " " + " ".join("%.6g" % x for x in row) + "\n")
    elif format == "sparse_report":
        row_nnz = model.transform.row_nnz()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("object\tnnz\n")
            for name, c in zip(names, row_nnz):
                fh.write(f"{name}\t{int(c)}\n")
            fh.write(
                "#totals\tK=%d\td=%d\tnnz=%d\ttotal_params=%d\tzero_rows=%d\n"
                % (
                    summary["k"],
                    summary["d"],
                    summary["transform_nnz"],
                    summary["total_params"],
                    summary["zero_rows"],
                )
            )
    else:
        raise ValueError(f"unknown export format {format!r}")
    return summary
