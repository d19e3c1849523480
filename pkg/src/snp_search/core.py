"""Domain types and the on-disk embedding formats.

Pools are stored column-wise (one float32 matrix plus parallel id/key
arrays) so that a 100k-image pool costs one contiguous block of memory;
``EmbeddingRecord`` objects are materialised on demand.

Identity ids are namespaced by dataset: ``(dataset_index << 40) | local_id``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataFormatError

MAGIC = b"SNPE"
FORMAT_VERSION = 1
LOCAL_ID_BITS = 40
LOCAL_ID_MASK = (1 << LOCAL_ID_BITS) - 1
MAX_DATASETS = 1 << (64 - LOCAL_ID_BITS)
MISSING_IDENTITY = (1 << 64) - 1

FORMATS = ("binary", "csv")


def namespace_identity(dataset_index: int, local_id: int) -> int:
    return (int(dataset_index) << LOCAL_ID_BITS) | (int(local_id) & LOCAL_ID_MASK)


def local_identity(identity_id: int) -> int:
    return int(identity_id) & LOCAL_ID_MASK


def identity_dataset(identity_id: int) -> int:
    return int(identity_id) >> LOCAL_ID_BITS


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    dataset_id: int
    identity_id: int
    image_key: str
    descriptor: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        a = np.asarray(self.descriptor, dtype="<f4")
        b = np.asarray(other.descriptor, dtype="<f4")
        return (
            self.dataset_id == other.dataset_id
            and self.identity_id == other.identity_id
            and self.image_key == other.image_key
            and a.shape == b.shape
            and a.tobytes() == b.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Budget:
    n: int
    m: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"budget needs n >= 1, got n={self.n}")
        if self.m < self.n:
            raise ValueError(
                f"budget needs m >= n (one seed image per identity), got n={self.n}, m={self.m}"
            )


class SourcePool:
    """Immutable labelled embedding pool drawn from one or more datasets."""

    def __init__(
        self,
        datasets: Sequence[str],
        dataset_ids: np.ndarray,
        identity_ids: np.ndarray,
        image_keys: Sequence[str],
        descriptors: np.ndarray,
    ) -> None:
        descriptors = np.ascontiguousarray(descriptors, dtype=np.float32)
        if descriptors.ndim != 2 or descriptors.shape[1] < 1:
            raise DataFormatError("descriptors must be an (N, d) array with d >= 1")
        n = descriptors.shape[0]
        self.datasets = list(datasets)
        self.dataset_ids = np.ascontiguousarray(dataset_ids, dtype=np.uint32)
        self.identity_ids = np.ascontiguousarray(identity_ids, dtype=np.uint64)
        self.image_keys = list(image_keys)
        self.descriptors = descriptors
        if not (len(self.dataset_ids) == len(self.identity_ids) == len(self.image_keys) == n):
            raise DataFormatError("pool columns have different lengths")
        if n and int(self.dataset_ids.max()) >= len(self.datasets):
            raise DataFormatError("record dataset_id outside the dataset-name table")
        if n and np.any((self.identity_ids >> np.uint64(LOCAL_ID_BITS)) != self.dataset_ids):
            raise DataFormatError("identity ids are not namespaced by their dataset")
        for arr in (self.dataset_ids, self.identity_ids, self.descriptors):
            arr.setflags(write=False)

    @property
    def dimension(self) -> int:
        return int(self.descriptors.shape[1])

    def __len__(self) -> int:
        return int(self.descriptors.shape[0])

    def __getitem__(self, i: int) -> EmbeddingRecord:
        return EmbeddingRecord(
            int(self.dataset_ids[i]),
            int(self.identity_ids[i]),
            self.image_keys[i],
            self.descriptors[i],
        )

    def __iter__(self) -> Iterator[EmbeddingRecord]:
        return (self[i] for i in range(len(self)))

    @property
    def records(self) -> list[EmbeddingRecord]:
        return list(self)

    @cached_property
    def _grouping(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ids, inverse = np.unique(self.identity_ids, return_inverse=True)
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(len(ids) + 1))
        return ids, order, bounds

    @cached_property
    def id_index(self) -> dict[int, np.ndarray]:
        """identity_id -> ascending record indices of that identity."""
        ids, order, bounds = self._grouping
        return {int(ids[k]): order[bounds[k] : bounds[k + 1]] for k in range(len(ids))}

    @property
    def identities(self) -> np.ndarray:
        """Sorted distinct identity ids."""
        return self._grouping[0]

    @property
    def num_identities(self) -> int:
        return len(self.identities)

    def images_of(self, identity_ids: Iterable[int]) -> np.ndarray:
        """Ascending record indices of all images of the given identities."""
        index = self.id_index
        parts = [index[int(i)] for i in identity_ids]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(parts))

    @classmethod
    def from_records(cls, datasets: Sequence[str], records: Iterable[EmbeddingRecord]) -> "SourcePool":
        records = list(records)
        if not records:
            raise DataFormatError("no records")
        dims = {np.asarray(r.descriptor).shape for r in records}
        if len(dims) != 1:
            raise DataFormatError(f"descriptor dimension mismatch: {sorted(dims)}")
        pool = cls(
            datasets,
            np.array([r.dataset_id for r in records], dtype=np.uint32),
            np.array([r.identity_id for r in records], dtype=np.uint64),
            [r.image_key for r in records],
            np.stack([np.asarray(r.descriptor, dtype=np.float32) for r in records]),
        )
        _validate(pool.descriptors, pool.dataset_ids, pool.image_keys, "<records>")
        return pool


@dataclass(frozen=True, eq=False)
class TargetSet:
    """Unlabelled target embeddings; only the distribution is used."""

    descriptors: np.ndarray
    image_keys: list[str]

    def __post_init__(self) -> None:
        if self.descriptors.ndim != 2 or len(self.descriptors) < 2:
            raise DataFormatError("target set needs at least 2 records")

    @property
    def dimension(self) -> int:
        return int(self.descriptors.shape[1])

    def __len__(self) -> int:
        return int(self.descriptors.shape[0])


# -- validation ---------------------------------------------------------------


def _validate(descriptors: np.ndarray, dataset_ids: np.ndarray, keys: Sequence[str], where: str,
              rows: Sequence[int] | None = None) -> None:
    """Finite descriptors, non-empty keys unique per dataset. ``rows`` maps record -> file row."""

    def row_of(i: int) -> str:
        return f"row {rows[i]}" if rows is not None else f"record {i}"

    finite = np.isfinite(descriptors)
    if not finite.all():
        i, j = map(int, np.argwhere(~finite)[0])
        raise DataFormatError(f"{where}: {row_of(i)}: non-finite value in descriptor column f{j}")
    seen: set[tuple[int, str]] = set()
    for i, (ds, key) in enumerate(zip(dataset_ids.tolist(), keys)):
        if not key:
            raise DataFormatError(f"{where}: {row_of(i)}: empty image_key")
        if (ds, key) in seen:
            raise DataFormatError(f"{where}: {row_of(i)}: duplicate image_key {key!r}")
        seen.add((ds, key))


# -- binary format ------------------------------------------------------------

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_HEADER = struct.Struct("<4sIIQ")
_REC = struct.Struct("<IQI")


def _read_binary_raw(path: Path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, d, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported format version {version}")
    if d < 1:
        raise DataFormatError(f"{path}: descriptor dimension must be >= 1")
    off = _HEADER.size
    try:
        (n_names,) = _U32.unpack_from(data, off)
        off += 4
        names = []
        for _ in range(n_names):
            (ln,) = _U32.unpack_from(data, off)
            off += 4
            if len(data) < off + ln:
                raise struct.error("name")
            names.append(data[off : off + ln].decode("utf-8"))
            off += ln
        if count == 0:
            raise DataFormatError(f"{path}: no records")
        dataset_ids = np.empty(count, dtype=np.uint32)
        identity_ids = np.empty(count, dtype=np.uint64)
        keys: list[str] = []
        desc = np.empty((count, d), dtype=np.float32)
        vec_bytes = 4 * d
        for i in range(count):
            ds, ident, ln = _REC.unpack_from(data, off)
            off += _REC.size
            keys.append(data[off : off + ln].decode("utf-8"))
            off += ln
            if len(data) < off + vec_bytes:
                raise struct.error("descriptor")
            desc[i] = np.frombuffer(data, dtype="<f4", count=d, offset=off)
            off += vec_bytes
            dataset_ids[i] = ds
            identity_ids[i] = ident
    except (struct.error, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"{path}: truncated or corrupt record data ({exc})") from None
    if off != len(data):
        raise DataFormatError(f"{path}: {len(data) - off} trailing bytes after {count} records")
    if len(names) and int(dataset_ids.max()) >= len(names):
        raise DataFormatError(f"{path}: record dataset_id outside the dataset-name table")
    if not names:
        raise DataFormatError(f"{path}: empty dataset-name table")
    return names, dataset_ids, identity_ids, keys, desc


def write_binary(pool: SourcePool, path: str | Path) -> None:
    """Serialise ``pool`` in the SNPE little-endian format."""
    out = [_HEADER.pack(MAGIC, FORMAT_VERSION, pool.dimension, len(pool))]
    out.append(_U32.pack(len(pool.datasets)))
    for name in pool.datasets:
        b = name.encode("utf-8")
        out.append(_U32.pack(len(b)) + b)
    desc = pool.descriptors.astype("<f4", copy=False)
    for i, (ds, ident, key) in enumerate(
        zip(pool.dataset_ids.tolist(), pool.identity_ids.tolist(), pool.image_keys)
    ):
        kb = key.encode("utf-8")
        out.append(_REC.pack(ds, ident, len(kb)) + kb + desc[i].tobytes())
    Path(path).write_bytes(b"".join(out))


# -- csv format ---------------------------------------------------------------


def _read_csv_raw(path: Path, require_identity: bool = True):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: no records")
        if header[:3] != ["dataset", "identity", "image_key"] or len(header) < 4:
            raise DataFormatError(f"{path}: header must be dataset,identity,image_key,f0,...")
        d = len(header) - 3
        if header[3:] != [f"f{j}" for j in range(d)]:
            raise DataFormatError(f"{path}: descriptor columns must be named f0..f{d - 1}")
        names: list[str] = []
        name_idx: dict[str, int] = {}
        ds_col: list[int] = []
        id_col: list[int] = []
        keys: list[str] = []
        values: list[list[str]] = []
        rows: list[int] = []
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != d + 3:
                raise DataFormatError(
                    f"{path}: row {lineno}: dimension mismatch, expected {d} descriptor values, got {len(row) - 3}"
                )
            ds, ident, key = row[0], row[1].strip(), row[2]
            if ds not in name_idx:
                name_idx[ds] = len(names)
                names.append(ds)
            if ident == "":
                if require_identity:
                    raise DataFormatError(f"{path}: row {lineno}: missing identity")
                local = MISSING_IDENTITY
            else:
                try:
                    local = int(ident)
                except ValueError:
                    raise DataFormatError(f"{path}: row {lineno}: identity {ident!r} is not an integer") from None
                if not 0 <= local <= LOCAL_ID_MASK:
                    raise DataFormatError(f"{path}: row {lineno}: identity {local} outside [0, 2**40)")
            ds_col.append(name_idx[ds])
            id_col.append(local)
            keys.append(key)
            values.append(row[3:])
            rows.append(lineno)
    if not values:
        raise DataFormatError(f"{path}: no records")
    desc = np.empty((len(values), d), dtype=np.float32)
    for i, vals in enumerate(values):
        try:
            with np.errstate(over="ignore"):
                desc[i] = [float(v) for v in vals]
        except ValueError as exc:
            raise DataFormatError(f"{path}: row {rows[i]}: {exc}") from None
        if not np.isfinite(desc[i]).all():
            j = int(np.argmin(np.isfinite(desc[i])))
            raise DataFormatError(f"{path}: row {rows[i]}: non-finite value {vals[j]!r} in column f{j}")
    dataset_ids = np.array(ds_col, dtype=np.uint32)
    identity_ids = np.array(
        [loc if loc == MISSING_IDENTITY else namespace_identity(ds, loc) for ds, loc in zip(ds_col, id_col)],
        dtype=np.uint64,
    )
    return names, dataset_ids, identity_ids, keys, desc, rows


def write_csv(pool: SourcePool, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "identity", "image_key"] + [f"f{j}" for j in range(pool.dimension)])
        for i in range(len(pool)):
            w.writerow(
                [pool.datasets[int(pool.dataset_ids[i])], local_identity(int(pool.identity_ids[i])),
                 pool.image_keys[i]]
                + [repr(float(v)) for v in pool.descriptors[i]]
            )


# -- ingestion ----------------------------------------------------------------


def infer_format(path: str | Path, fmt: str | None = None) -> str:
    if fmt is not None:
        if fmt not in FORMATS:
            raise DataFormatError(f"unknown format {fmt!r}, expected one of {FORMATS}")
        return fmt
    return "csv" if str(path).lower().endswith(".csv") else "binary"


def _read_raw(path: Path, fmt: str, require_identity: bool):
    if not path.is_file():
        raise FileNotFoundError(str(path))
    if fmt == "csv":
        return _read_csv_raw(path, require_identity)
    names, ds, ids, keys, desc = _read_binary_raw(path)
    return names, ds, ids, keys, desc, None


def ingest_dataset(path: str | Path, name: str | None = None, format: str | None = None) -> SourcePool:
    """Read one embedding file into a partial pool.

    When ``name`` is given it labels the file: a file holding a single
    dataset is renamed to ``name``; a file holding several becomes
    ``name/<original>`` per dataset.
    """
    path = Path(path)
    names, ds, ids, keys, desc, rows = _read_raw(path, infer_format(path, format), True)
    if np.any(ids == np.uint64(MISSING_IDENTITY)):
        raise DataFormatError(f"{path}: pool records must carry identity labels")
    # the file's own dataset_id field is authoritative; re-namespace so ids are consistent
    ids = (ds.astype(np.uint64) << np.uint64(LOCAL_ID_BITS)) | (ids & np.uint64(LOCAL_ID_MASK))
    _validate(desc, ds, keys, str(path), rows)
    if name is not None:
        names = [name] if len(names) == 1 else [f"{name}/{n}" for n in names]
    return SourcePool(names, ds, ids, keys, desc)


def load_target(path: str | Path, format: str | None = None) -> TargetSet:
    """Read an embedding file as an unlabelled target set (identities ignored)."""
    path = Path(path)
    names, ds, ids, keys, desc, rows = _read_raw(path, infer_format(path, format), False)
    finite = np.isfinite(desc)
    if not finite.all():
        i = int(np.argwhere(~finite)[0][0])
        where = f"row {rows[i]}" if rows else f"record {i}"
        raise DataFormatError(f"{path}: {where}: non-finite descriptor value")
    if len(desc) < 2:
        raise DataFormatError(f"{path}: target set needs at least 2 records")
    return TargetSet(desc, keys)


def merge_pools(parts: Sequence[SourcePool]) -> SourcePool:
    """Concatenate partial pools; dataset tables concatenate in input order."""
    if not parts:
        raise DataFormatError("no pools to merge")
    d = parts[0].dimension
    for p in parts[1:]:
        if p.dimension != d:
            raise DataFormatError(f"dimension mismatch between pools: {d} vs {p.dimension}")
    if len(parts) == 1:
        return parts[0]
    names: list[str] = []
    ds_cols, id_cols, keys, descs = [], [], [], []
    for p in parts:
        offset = len(names)
        names.extend(p.datasets)
        new_ds = p.dataset_ids.astype(np.uint32) + np.uint32(offset)
        ds_cols.append(new_ds)
        id_cols.append((new_ds.astype(np.uint64) << np.uint64(LOCAL_ID_BITS))
                       | (p.identity_ids & np.uint64(LOCAL_ID_MASK)))
        keys.extend(p.image_keys)
        descs.append(p.descriptors)
    if len(names) > MAX_DATASETS:
        raise DataFormatError("too many datasets to namespace identities")
    return SourcePool(names, np.concatenate(ds_cols), np.concatenate(id_cols), keys, np.concatenate(descs))


def read_pool(path: str | Path, format: str | None = None) -> SourcePool:
    """Read a pool file keeping its own dataset-name table."""
    return ingest_dataset(path, None, format)


def write_pool(pool: SourcePool, path: str | Path, format: str | None = None) -> None:
    if infer_format(path, format) == "csv":
        write_csv(pool, path)
    else:
        write_binary(pool, path)


def pool_from_arrays(
    descriptors: np.ndarray,
    local_ids: Sequence[int],
    dataset: str = "synthetic",
    keys: Sequence[str] | None = None,
) -> SourcePool:
    """Single-dataset pool from a descriptor matrix; keys default to ``img{i}``."""
    descriptors = np.asarray(descriptors, dtype=np.float32)
    if descriptors.ndim == 1:
        descriptors = descriptors[:, None]
    n = len(descriptors)
    if n == 0:
        raise DataFormatError("no records")
    keys = list(keys) if keys is not None else [f"img{i}" for i in range(n)]
    ids = np.asarray(local_ids, dtype=np.uint64) & np.uint64(LOCAL_ID_MASK)
    _validate(descriptors, np.zeros(n, dtype=np.uint32), keys, "<arrays>")
    return SourcePool([dataset], np.zeros(n, dtype=np.uint32), ids, keys, descriptors)
