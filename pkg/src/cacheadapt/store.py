"""Embedding storage: the TFB binary format, dataset manifests, and L2 canonicalization.

TFB layout (all integers little-endian):

    bytes 0-3    magic ``TFB1``
    bytes 4-7    u32 row count
    bytes 8-11   u32 feature dimension d
    then         rows * d float32 values, row-major
    then         one UTF-8 sample id per row, each terminated by ``\\n``

Scalars are stored as 32-bit floats; in memory everything is promoted to
float64 so reductions (norms, dot products, softmax) are stable. Loaded
structures are immutable: arrays are marked read-only and any operation may
be called concurrently.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericalError

_MAGIC = b"TFB1"
_HEADER = struct.Struct("<4sII")

ZERO_NORM_EPS = 1e-12


@dataclass(frozen=True)
class EmbeddingMatrix:
    """A row-major matrix of d-dimensional feature vectors with sample ids."""

    data: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        if self.data.ndim != 2:
            raise FormatError(f"embedding data must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] != len(self.ids):
            raise FormatError(
                f"row count {self.data.shape[0]} does not match id count {len(self.ids)}"
            )
        if len(set(self.ids)) != len(self.ids):
            dupes = sorted({i for i in self.ids if self.ids.count(i) > 1})
            raise FormatError(f"duplicate sample ids: {dupes[:5]}")
        object.__setattr__(self, "ids", tuple(self.ids))
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row_index(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.ids)}

    def take(self, indices) -> "EmbeddingMatrix":
        """Sub-matrix of the given rows, ids preserved."""
        idx = np.asarray(indices, dtype=np.intp)
        return EmbeddingMatrix(self.data[idx], tuple(self.ids[i] for i in idx))


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    split: str  # "train" | "test"
    class_index: int | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """Sample-to-split/class assignments plus the ordered class-name list."""

    entries: tuple[ManifestEntry, ...]
    class_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def for_split(self, split: str) -> tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if e.split == split)

    def truth_by_id(self) -> dict[str, int | None]:
        return {e.sample_id: e.class_index for e in self.entries}


@dataclass
class ValidationReport:
    """Outcome of manifest/matrix cross-checks; empty issue list means consistent."""

    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues


def save_embeddings(m: EmbeddingMatrix, path) -> None:
    """Write a TFB file; float64 payload is rounded to float32."""
    for sid in m.ids:
        if "\n" in sid:
            raise FormatError(f"sample id {sid!r} contains a newline")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, m.rows, m.dim))
        fh.write(m.data.astype("<f4").tobytes(order="C"))
        fh.write("".join(sid + "\n" for sid in m.ids).encode("utf-8"))


def load_embeddings(path) -> EmbeddingMatrix:
    """Read a TFB file, decoding scalars bit-exactly as 32-bit floats."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header, {len(blob)} bytes at byte offset 0")
    magic, rows, dim = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    payload_len = rows * dim * 4
    offset = _HEADER.size
    if len(blob) < offset + payload_len:
        raise FormatError(
            f"{path}: truncated payload, expected {payload_len} bytes "
            f"at byte offset {offset}, file holds {len(blob) - offset}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=rows * dim, offset=offset)
    data = data.reshape(rows, dim).astype(np.float64)
    id_offset = offset + payload_len
    try:
        id_block = blob[id_offset:].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: id block is not UTF-8 at byte offset {id_offset}") from exc
    if rows == 0:
        if id_block:
            raise FormatError(f"{path}: unexpected trailing bytes at byte offset {id_offset}")
        ids: tuple[str, ...] = ()
    else:
        if not id_block.endswith("\n"):
            raise FormatError(f"{path}: id block missing final newline at byte offset {id_offset}")
        ids = tuple(id_block[:-1].split("\n"))
        if len(ids) != rows:
            raise FormatError(
                f"{path}: id block at byte offset {id_offset} holds {len(ids)} ids, "
                f"header declares {rows} rows"
            )
    return EmbeddingMatrix(data, ids)


def l2_normalize(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every row to unit Euclidean norm; zero rows are a hard error."""
    norms = np.linalg.norm(m.data, axis=1)
    bad = np.flatnonzero(norms <= ZERO_NORM_EPS)
    if bad.size:
        raise NumericalError(f"zero-norm embedding row for sample id {m.ids[bad[0]]!r}")
    return EmbeddingMatrix(m.data / norms[:, None], m.ids)


def save_manifest(man: DatasetManifest, manifest_path, classes_path, header_comment: str | None = None) -> None:
    """Write the line-delimited manifest plus the ordered class-names file."""
    with open(manifest_path, "w", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        for e in man.entries:
            cls = "" if e.class_index is None else str(e.class_index)
            fh.write(f"{e.sample_id}\t{e.split}\t{cls}\n")
    with open(classes_path, "w", encoding="utf-8") as fh:
        for name in man.class_names:
            fh.write(name + "\n")


def load_class_names(classes_path) -> tuple[str, ...]:
    with open(classes_path, "r", encoding="utf-8") as fh:
        names = tuple(line.rstrip("\n") for line in fh if line.strip())
    if not names:
        raise FormatError(f"{classes_path}: class-names file is empty")
    return names


def load_manifest(manifest_path, classes_path) -> DatasetManifest:
    """Parse the tab-separated manifest; lines starting with ``#`` are comments."""
    class_names = load_class_names(classes_path)
    entries = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise FormatError(
                    f"{manifest_path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            sid, split, cls = fields
            if split not in ("train", "test"):
                raise FormatError(f"{manifest_path}:{lineno}: unknown split {split!r}")
            if cls == "":
                class_index = None
            else:
                try:
                    class_index = int(cls)
                except ValueError as exc:
                    raise FormatError(
                        f"{manifest_path}:{lineno}: class index {cls!r} is not an integer"
                    ) from exc
            entries.append(ManifestEntry(sid, split, class_index))
    return DatasetManifest(tuple(entries), class_names)


def validate_manifest(man: DatasetManifest, m: EmbeddingMatrix) -> ValidationReport:
    """Cross-check manifest entries against an embedding matrix.

    Reports unresolved ids, duplicate manifest ids, and out-of-range class
    indices. Never raises; an empty report means consistent.
    """
    report = ValidationReport()
    known = set(m.ids)
    seen: set[str] = set()
    for e in man.entries:
        if e.sample_id in seen:
            report.issues.append(f"duplicate manifest id {e.sample_id!r}")
        seen.add(e.sample_id)
        if e.sample_id not in known:
            report.issues.append(f"unresolved id {e.sample_id!r}: no embedding row")
        if e.class_index is not None and not (0 <= e.class_index < man.num_classes):
            report.issues.append(
                f"class index out of range for {e.sample_id!r}: "
                f"{e.class_index} not in [0, {man.num_classes})"
            )
    return report
