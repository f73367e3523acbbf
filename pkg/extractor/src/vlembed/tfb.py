"""Writer (and verification reader) for the TFB embedding format and manifests.

TFB layout (little-endian): magic ``TFB1``, u32 rows, u32 dim, rows*dim
float32 row-major, then one UTF-8 sample id per row, each ``\\n``-terminated.
Manifests are tab-separated ``sample_id  split  class_index`` lines; lines
starting with ``#`` are comments.
"""

from __future__ import annotations

import struct

import numpy as np

_MAGIC = b"TFB1"
_HEADER = struct.Struct("<4sII")


def write_tfb(path, data: np.ndarray, ids: list[str]) -> None:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] != len(ids):
        raise ValueError(f"shape {data.shape} does not match {len(ids)} ids")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample ids")
    for sid in ids:
        if "\n" in sid:
            raise ValueError(f"sample id {sid!r} contains a newline")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, data.shape[0], data.shape[1]))
        fh.write(data.astype("<f4").tobytes(order="C"))
        fh.write("".join(sid + "\n" for sid in ids).encode("utf-8"))


def read_tfb(path) -> tuple[np.ndarray, list[str]]:
    """Strict reader used to verify written files round-trip."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, rows, dim = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    offset = _HEADER.size
    need = rows * dim * 4
    if len(blob) < offset + need:
        raise ValueError(f"{path}: truncated payload")
    data = np.frombuffer(blob, dtype="<f4", count=rows * dim, offset=offset)
    data = data.reshape(rows, dim).astype(np.float64)
    id_block = blob[offset + need :].decode("utf-8")
    ids = id_block[:-1].split("\n") if rows else []
    if rows and (not id_block.endswith("\n") or len(ids) != rows):
        raise ValueError(f"{path}: id block does not match {rows} rows")
    return data, ids


def write_manifest(path, entries: list[tuple[str, str, int | None]], comment: str | None = None) -> None:
    """Entries are (sample_id, split, class_index-or-None)."""
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        for sid, split, cls in entries:
            fh.write(f"{sid}\t{split}\t{'' if cls is None else cls}\n")


def write_class_names(path, names: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in names:
            fh.write(name + "\n")
