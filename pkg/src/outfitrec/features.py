"""Binary feature-vector store.

Layout (all little-endian)::

    4s   magic  b"OFVS"
    u32  version (1)
    u32  dimension d
    u64  count n
    n rows of:  64-byte NUL-padded UTF-8 id | i32 category code (-1 = none) | d x f32

Category codes index ``taxonomy.CATEGORIES``.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import (
    DimensionMismatchError,
    DuplicateIdError,
    FeatureFileError,
    MagicMismatchError,
    TruncatedFileError,
    ValidationError,
    ZeroNormVectorError,
)
from .taxonomy import CATEGORIES, GarmentCategory

MAGIC = b"OFVS"
VERSION = 1
ID_BYTES = 64
_HEADER = struct.Struct("<4sIIQ")


def _row_dtype(dim):
    return np.dtype([("id", f"S{ID_BYTES}"), ("category", "<i4"), ("vec", "<f4", (dim,))])


class FeatureStore:
    """Immutable id -> vector map with a per-category index.

    ``raw`` keeps the stored float32 values; ``unit`` holds float64 copies
    scaled to unit norm, which is what similarity search uses.
    """

    def __init__(self, ids, vectors, categories=None, dim=None):
        ids = [str(i) for i in ids]
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.size == 0:
            if dim is None:
                raise ValidationError("an empty store needs an explicit dimension")
            vectors = vectors.reshape(0, dim)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise DimensionMismatchError("vectors must be an (n, d) array with one row per id")
        if dim is not None and vectors.shape[1] != dim:
            raise DimensionMismatchError(f"vectors have dimension {vectors.shape[1]}, expected {dim}")
        for i in ids:
            if not i or len(i.encode("utf-8")) > ID_BYTES:
                raise ValidationError(f"feature id {i!r} must be 1..{ID_BYTES} UTF-8 bytes")
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DuplicateIdError(dup)
        if categories is None:
            categories = [None] * len(ids)
        categories = [None if c is None else GarmentCategory.parse(c) for c in categories]
        if len(categories) != len(ids):
            raise DimensionMismatchError("one category (or None) per vector is required")

        vectors = vectors.copy()
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        bad = ~np.isfinite(norms) | (norms == 0)
        if np.any(bad):
            raise ZeroNormVectorError(f"vector {ids[int(np.argmax(bad))]!r} has zero or non-finite norm")
        unit = vectors.astype(np.float64) / norms[:, None]
        vectors.setflags(write=False)
        unit.setflags(write=False)

        self.dim = int(vectors.shape[1])
        self.ids = tuple(ids)
        self.categories = tuple(categories)
        self.raw = vectors
        self.unit = unit
        self._row = {i: r for r, i in enumerate(ids)}
        by_cat = {}
        for r in sorted(range(len(ids)), key=lambda r: ids[r]):
            if categories[r] is not None:
                by_cat.setdefault(categories[r], []).append(r)
        self._by_category = {c: np.array(rows, dtype=np.intp) for c, rows in by_cat.items()}

    def __len__(self):
        return len(self.ids)

    def __contains__(self, feature_id):
        return feature_id in self._row

    def vector(self, feature_id, unit=True):
        row = self._row[feature_id]
        return (self.unit if unit else self.raw)[row]

    def rows_for(self, category):
        """Row indices of one category, ordered by ascending id."""
        return self._by_category.get(GarmentCategory.parse(category), np.empty(0, dtype=np.intp))

    def ids_for(self, category):
        return [self.ids[r] for r in self.rows_for(category)]


def save_features(store: FeatureStore, path):
    rows = np.zeros(len(store), dtype=_row_dtype(store.dim))
    rows["id"] = [i.encode("utf-8") for i in store.ids]
    rows["category"] = [-1 if c is None else CATEGORIES.index(c) for c in store.categories]
    rows["vec"] = store.raw
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, store.dim, len(store)))
        fh.write(rows.tobytes())


def load_features(path) -> FeatureStore:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < 4 or head[:4] != MAGIC:
            raise MagicMismatchError(f"{path}: not a feature store (bad magic)")
        if len(head) < _HEADER.size:
            raise TruncatedFileError(f"{path}: truncated header")
        _, version, dim, count = _HEADER.unpack(head)
        if version != VERSION:
            raise FeatureFileError(f"{path}: unsupported version {version}")
        if dim == 0:
            raise FeatureFileError(f"{path}: dimension must be positive")
        dtype = _row_dtype(dim)
        expected = _HEADER.size + count * dtype.itemsize
        if size < expected:
            raise TruncatedFileError(f"{path}: expected {expected} bytes for {count} rows, found {size}")
        if size > expected:
            raise FeatureFileError(f"{path}: {size - expected} trailing bytes after {count} rows")
        rows = np.frombuffer(fh.read(), dtype=dtype, count=count)
    codes = rows["category"]
    if np.any((codes < -1) | (codes >= len(CATEGORIES))):
        raise FeatureFileError(f"{path}: category code out of range")
    categories = [None if c < 0 else CATEGORIES[c] for c in codes]
    try:
        ids = [raw.decode("utf-8") for raw in rows["id"]]
    except UnicodeDecodeError:
        raise FeatureFileError(f"{path}: feature id is not valid UTF-8") from None
    return FeatureStore(ids, rows["vec"], categories, dim=dim)
