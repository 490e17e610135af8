"""Count matrices over pairs of discrete attributes, with Laplace smoothing.

Rows index the top (query-side) garment, columns the bottom garment. Counts
stay integers; probabilities are derived on demand.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_index, check_positive_int
from .colorlab import Palette, dominant_color
from .errors import DimensionMismatchError, DomainMismatchError, FormatVersionError, ValidationError
from .taxonomy import PATTERNS, GarmentCategory, PairKind

MATRIX_FORMAT = "outfitrec/cooccurrence"
MATRIX_VERSION = 1


@dataclass(frozen=True)
class Domain:
    """Index domain of one matrix axis.

    ``kind`` is ``"palette"`` (colour bins of a category palette),
    ``"pattern"`` (the ten texture classes) or ``"items"`` (inventory ids).
    """

    kind: str
    size: int
    category: GarmentCategory | None = None
    labels: tuple | None = field(default=None)

    def __post_init__(self):
        if self.kind not in ("palette", "pattern", "items"):
            raise ValidationError(f"unknown domain kind {self.kind!r}", field="kind")
        check_positive_int(self.size, "size")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.size:
                raise DimensionMismatchError("domain labels do not match its size", field="labels")
        if self.category is not None:
            object.__setattr__(self, "category", GarmentCategory.parse(self.category))

    @classmethod
    def palette(cls, palette: Palette):
        return cls("palette", palette.k, palette.category)

    @classmethod
    def patterns(cls, category=None):
        return cls("pattern", len(PATTERNS), category, tuple(p.value for p in PATTERNS))

    def to_dict(self):
        out = {"kind": self.kind, "size": self.size}
        if self.category is not None:
            out["category"] = self.category.value
        if self.labels is not None:
            out["labels"] = list(self.labels)
        return out

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["kind"], data["size"], data.get("category"), data.get("labels"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad domain descriptor: {exc}") from None


class CooccurrenceMatrix(BaseEstimator):
    """Co-occurrence counts over ``row_domain x col_domain``.

    ``fit`` takes an ``(n, 2)`` array of ``(row, col)`` observations.
    ``predict`` returns the best-matching column per row and
    ``predict_proba`` the smoothed row distributions

        p[j] = (counts[row, j] + alpha) / (sum_j counts[row, j] + alpha * ncols)
    """

    def __init__(self, row_domain=None, col_domain=None, alpha=1.0, kind=None):
        self.row_domain = row_domain
        self.col_domain = col_domain
        self.alpha = alpha
        self.kind = kind

    @property
    def shape(self):
        return (self.row_domain.size, self.col_domain.size)

    def _check_params(self):
        if not isinstance(self.row_domain, Domain) or not isinstance(self.col_domain, Domain):
            raise ValidationError("row_domain and col_domain must be Domain instances")
        if not float(self.alpha) >= 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}", field="alpha")

    def _check_obs(self, X):
        X = np.asarray(X, dtype=np.int64).reshape(-1, 2) if np.size(X) else np.empty((0, 2), dtype=np.int64)
        nr, nc = self.shape
        if np.any((X[:, 0] < 0) | (X[:, 0] >= nr) | (X[:, 1] < 0) | (X[:, 1] >= nc)):
            raise ValidationError(f"observation index outside a {nr}x{nc} matrix")
        return X

    def fit(self, X, y=None):
        self._check_params()
        self.counts_ = np.zeros(self.shape, dtype=np.int64)
        self.n_skipped_ = 0
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        if not hasattr(self, "counts_"):
            return self.fit(X)
        X = self._check_obs(X)
        np.add.at(self.counts_, (X[:, 0], X[:, 1]), 1)
        return self

    @classmethod
    def from_counts(cls, counts, row_domain, col_domain, alpha=1.0, kind=None, n_skipped=0):
        m = cls(row_domain, col_domain, alpha, kind)
        m._check_params()
        counts = np.asarray(counts)
        if counts.shape != m.shape:
            raise DimensionMismatchError(f"counts shape {counts.shape} != domains {m.shape}")
        if counts.size and (counts.min() < 0 or not np.all(counts == np.floor(counts))):
            raise ValidationError("counts must be non-negative integers")
        m.counts_ = counts.astype(np.int64)
        m.n_skipped_ = int(n_skipped)
        return m

    @property
    def total(self) -> int:
        check_is_fitted(self, "counts_")
        return int(self.counts_.sum())

    def predict_proba(self, rows):
        check_is_fitted(self, "counts_")
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        c = self.counts_[rows].astype(np.float64)
        ncols = c.shape[1]
        denom = c.sum(axis=1, keepdims=True) + self.alpha * ncols
        with np.errstate(invalid="ignore", divide="ignore"):
            p = (c + self.alpha) / denom
        # alpha = 0 with an empty row has no data at all; fall back to uniform
        empty = denom[:, 0] == 0
        p[empty] = 1.0 / ncols
        return p

    def row_distribution(self, row):
        check_index(row, self.shape[0], "row")
        return self.predict_proba([row])[0]

    def predict(self, rows):
        return np.argmax(self.predict_proba(rows), axis=1)

    def best_match(self, row) -> int:
        return int(np.argmax(self.row_distribution(row)))

    def top_k_match(self, row, k):
        k = check_positive_int(k, "k")
        p = self.row_distribution(row)
        order = np.argsort(-p, kind="stable")
        return [int(j) for j in order[:k]]

    def transpose(self) -> "CooccurrenceMatrix":
        check_is_fitted(self, "counts_")
        kind = None if self.kind is None else PairKind(self.kind.bottom, self.kind.top)
        t = CooccurrenceMatrix(self.col_domain, self.row_domain, self.alpha, kind)
        # transposed kinds are off-schema on purpose, so bypass PairKind.parse
        t.counts_ = self.counts_.T.copy()
        t.n_skipped_ = self.n_skipped_
        t.transposed_ = True
        return t

    def compatible_with(self, other) -> bool:
        return (
            self.kind == other.kind
            and self.row_domain == other.row_domain
            and self.col_domain == other.col_domain
            and float(self.alpha) == float(other.alpha)
        )

    def __eq__(self, other):
        if not isinstance(other, CooccurrenceMatrix):
            return NotImplemented
        return (
            self.compatible_with(other)
            and np.array_equal(self.counts_, other.counts_)
            and self.n_skipped_ == other.n_skipped_
        )

    __hash__ = None


def merge(a: CooccurrenceMatrix, b: CooccurrenceMatrix) -> CooccurrenceMatrix:
    """Element-wise sum of two compatible matrices."""
    if not a.compatible_with(b):
        raise DomainMismatchError("cannot merge matrices with different kinds, domains or alpha")
    return CooccurrenceMatrix.from_counts(
        a.counts_ + b.counts_, a.row_domain, a.col_domain, a.alpha, a.kind, a.n_skipped_ + b.n_skipped_
    )


def sharded_build(build, pairs, n_shards=4, max_workers=None):
    """Run ``build`` on contiguous shards of ``pairs`` in parallel and merge."""
    pairs = list(pairs)
    n_shards = check_positive_int(n_shards, "n_shards")
    bounds = np.linspace(0, len(pairs), n_shards + 1).astype(int)
    # empty shards add nothing and could not infer a pair kind
    shards = [pairs[bounds[i] : bounds[i + 1]] for i in range(n_shards) if bounds[i + 1] > bounds[i]] or [[]]
    with ThreadPoolExecutor(max_workers=max_workers or n_shards) as pool:
        parts = list(pool.map(build, shards))
    return reduce(merge, parts)


# -- builders ----------------------------------------------------------------


def _check_kind(pairs, kind):
    for p in pairs:
        if p.kind != kind:
            raise DomainMismatchError(f"pair of kind {p.kind.name} fed to a {kind.name} matrix")


def build_color_matrix(pairs, pixels, top_palette: Palette, bottom_palette: Palette, alpha=1.0):
    """Dominant-colour co-occurrence for one pair kind.

    ``pixels`` maps ``(image_id, detection_id)`` to Lab pixel arrays through
    ``.get``. Pairs whose detections lack a mask or pixels are skipped and
    counted in ``n_skipped_``.
    """
    if top_palette.category is None or bottom_palette.category is None:
        raise DomainMismatchError("colour matrices need category-tagged palettes")
    kind = PairKind.parse((top_palette.category, bottom_palette.category))
    pairs = list(pairs)
    _check_kind(pairs, kind)
    obs, skipped = [], 0
    for p in pairs:
        bins = []
        for det, pal in ((p.top, top_palette), (p.bottom, bottom_palette)):
            lab = None if det.mask is None else pixels.get((p.image_id, det.detection_id))
            if lab is None or len(lab) == 0:
                break
            bins.append(dominant_color(lab, pal)[0])
        if len(bins) == 2:
            obs.append(bins)
        else:
            skipped += 1
    m = CooccurrenceMatrix(Domain.palette(top_palette), Domain.palette(bottom_palette), alpha, kind).fit(obs)
    m.n_skipped_ = skipped
    return m


def build_pattern_matrix(pairs, kind=None, alpha=1.0):
    """10 x 10 texture co-occurrence; pairs without both labels are skipped."""
    pairs = list(pairs)
    if kind is None and pairs:
        kind = pairs[0].kind
    if kind is not None:
        kind = PairKind.parse(kind)
        _check_kind(pairs, kind)
    obs, skipped = [], 0
    for p in pairs:
        if p.top.pattern is None or p.bottom.pattern is None:
            skipped += 1
        else:
            obs.append((PATTERNS.index(p.top.pattern), PATTERNS.index(p.bottom.pattern)))
    top_cat = None if kind is None else kind.top
    bottom_cat = None if kind is None else kind.bottom
    m = CooccurrenceMatrix(Domain.patterns(top_cat), Domain.patterns(bottom_cat), alpha, kind).fit(obs)
    m.n_skipped_ = skipped
    return m


# -- persistence -------------------------------------------------------------


def save_matrix(m: CooccurrenceMatrix, path, encoding=None):
    """Write a matrix; ``encoding`` is ``"dense"``, ``"sparse"`` or chosen by fill."""
    check_is_fitted(m, "counts_")
    nnz = int(np.count_nonzero(m.counts_))
    if encoding is None:
        encoding = "sparse" if nnz * 4 < m.counts_.size else "dense"
    if encoding not in ("dense", "sparse"):
        raise ValidationError(f"unknown encoding {encoding!r}", field="encoding")
    header = {
        "format": MATRIX_FORMAT,
        "version": MATRIX_VERSION,
        "kind": None if m.kind is None else m.kind.name,
        "row_domain": m.row_domain.to_dict(),
        "col_domain": m.col_domain.to_dict(),
        "alpha": m.alpha,
        "n_skipped": m.n_skipped_,
        "encoding": encoding,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        if encoding == "dense":
            for row in m.counts_:
                fh.write(json.dumps([int(v) for v in row]) + "\n")
        else:
            for i, j in zip(*np.nonzero(m.counts_)):
                fh.write(json.dumps([int(i), int(j), int(m.counts_[i, j])]) + "\n")


def load_matrix(path) -> CooccurrenceMatrix:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValidationError("empty matrix file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed header: {exc.msg}", line=1) from None
    if not isinstance(header, dict) or header.get("format") != MATRIX_FORMAT:
        raise FormatVersionError("not a co-occurrence matrix file", line=1, field="format")
    if header.get("version") != MATRIX_VERSION:
        raise FormatVersionError(f"unsupported version {header.get('version')!r}", line=1, field="version")
    rows = Domain.from_dict(header["row_domain"])
    cols = Domain.from_dict(header["col_domain"])
    counts = np.zeros((rows.size, cols.size), dtype=np.int64)
    body = [(n, json.loads(line)) for n, line in enumerate(lines[1:], start=2) if line.strip()]
    if header.get("encoding") == "dense":
        if len(body) != rows.size:
            raise DimensionMismatchError(f"expected {rows.size} rows, found {len(body)}")
        for r, (lineno, values) in enumerate(body):
            if not isinstance(values, list) or len(values) != cols.size:
                raise DimensionMismatchError(f"expected {cols.size} columns", line=lineno)
            counts[r] = values
    elif header.get("encoding") == "sparse":
        for lineno, entry in body:
            if not isinstance(entry, list) or len(entry) != 3:
                raise ValidationError("sparse entry must be [row, col, count]", line=lineno)
            i, j, c = entry
            if not (0 <= i < rows.size and 0 <= j < cols.size):
                raise DimensionMismatchError(f"entry ({i}, {j}) outside {rows.size}x{cols.size}", line=lineno)
            counts[i, j] = c
    else:
        raise ValidationError(f"unknown encoding {header.get('encoding')!r}", line=1, field="encoding")
    kind = header.get("kind")
    return CooccurrenceMatrix.from_counts(
        counts,
        rows,
        cols,
        header.get("alpha", 1.0),
        None if kind is None else PairKind.parse(kind),
        header.get("n_skipped", 0),
    )
