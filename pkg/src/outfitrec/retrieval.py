"""Exact cosine retrieval and the inventory joint table built from it."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int
from .errors import DimensionMismatchError, DomainMismatchError, FormatVersionError, ValidationError
from .features import FeatureStore
from .taxonomy import PairKind

TABLE_FORMAT = "outfitrec/joint-table"
TABLE_VERSION = 1
SCORE_RULES = ("product", "count")


@dataclass(frozen=True)
class RankedResult:
    item_id: str
    similarity: float


def knn(store: FeatureStore, query, category, k):
    """Top-``k`` items of ``category`` by cosine similarity.

    Exact scan; ties rank by ascending item id.
    """
    k = check_positive_int(k, "k")
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != store.dim:
        raise DimensionMismatchError(f"query has dimension {q.shape[0]}, store has {store.dim}")
    norm = np.linalg.norm(q)
    if not np.isfinite(norm) or norm == 0:
        raise ValidationError("query vector has zero or non-finite norm", field="feature")
    rows = store.rows_for(category)
    if rows.size == 0:
        return []
    sims = np.clip(store.unit[rows] @ (q / norm), -1.0, 1.0)
    # rows are id-sorted, so a stable sort on -sim breaks ties by id
    order = np.argsort(-sims, kind="stable")[:k]
    return [RankedResult(store.ids[rows[i]], float(sims[i])) for i in order]


class JointTable:
    """Sparse (top item, bottom item) -> accumulated score."""

    def __init__(self, kind=None, k_retrieve=5, score_rule="product", entries=None, n_pairs=0, n_skipped=0):
        if score_rule not in SCORE_RULES:
            raise ValidationError(f"score_rule must be one of {SCORE_RULES}", field="score_rule")
        self.kind = None if kind is None else PairKind.parse(kind)
        self.k_retrieve = check_positive_int(k_retrieve, "k_retrieve")
        self.score_rule = score_rule
        self.entries = dict(entries or {})
        self.n_pairs = n_pairs
        self.n_skipped = n_skipped
        self._by_top = defaultdict(dict)
        self._by_bottom = defaultdict(dict)
        for (t, b), s in self.entries.items():
            if s < 0:
                raise ValidationError(f"negative score for ({t}, {b})")
            self._by_top[t][b] = s
            self._by_bottom[b][t] = s

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        if not isinstance(other, JointTable):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.k_retrieve == other.k_retrieve
            and self.score_rule == other.score_rule
            and self.entries == other.entries
        )

    __hash__ = None

    def row(self, item_id, side="top"):
        """Opposite-side scores for one item."""
        table = self._by_top if side == "top" else self._by_bottom
        return dict(table.get(item_id, {}))

    def merge(self, other: "JointTable") -> "JointTable":
        if (self.kind, self.k_retrieve, self.score_rule) != (other.kind, other.k_retrieve, other.score_rule):
            raise DomainMismatchError("joint tables differ in kind, k or score rule")
        entries = dict(self.entries)
        for key, s in other.entries.items():
            entries[key] = entries.get(key, 0.0) + s
        return JointTable(
            self.kind, self.k_retrieve, self.score_rule, entries,
            self.n_pairs + other.n_pairs, self.n_skipped + other.n_skipped,
        )


def build_joint_table(pairs, street_features: FeatureStore, inventory: FeatureStore, kind=None,
                      k_retrieve=5, score_rule="product"):
    """Accumulate scores over every top-k x top-k retrieval combination.

    For each street-style pair, the top garment retrieves ``k_retrieve``
    inventory items of its category and the bottom garment likewise. Each of
    the combinations adds ``max(sim_top, 0) * max(sim_bottom, 0)`` under the
    ``"product"`` rule, or 1 under ``"count"``. Pairs lacking a feature on
    either side are skipped.
    """
    pairs = list(pairs)
    if kind is None and pairs:
        kind = pairs[0].kind
    table = JointTable(kind, k_retrieve, score_rule)
    entries = defaultdict(float)
    skipped = 0
    for p in pairs:
        if p.kind != table.kind:
            raise DomainMismatchError(f"pair of kind {p.kind.name} fed to a {table.kind.name} table")
        refs = (p.top.feature_ref, p.bottom.feature_ref)
        if any(r is None or r not in street_features for r in refs):
            skipped += 1
            continue
        tops = knn(inventory, street_features.vector(refs[0]), p.kind.top, table.k_retrieve)
        bottoms = knn(inventory, street_features.vector(refs[1]), p.kind.bottom, table.k_retrieve)
        for t in tops:
            for b in bottoms:
                if score_rule == "count":
                    entries[(t.item_id, b.item_id)] += 1.0
                else:
                    entries[(t.item_id, b.item_id)] += max(t.similarity, 0.0) * max(b.similarity, 0.0)
    return JointTable(kind, k_retrieve, score_rule, entries, len(pairs) - skipped, skipped)


def recommend_from_table(table: JointTable, store: FeatureStore, query, side="top", m=5, n=10):
    """Opposite-side items ranked by summed table score.

    The query retrieves its ``m`` nearest inventory items on its own side;
    their table rows are summed and the best ``n`` opposite-side items are
    returned as ``(item_id, score)``, score descending then id ascending.
    """
    if side not in ("top", "bottom"):
        raise ValidationError("side must be 'top' or 'bottom'", field="side")
    m = check_positive_int(m, "m")
    n = check_positive_int(n, "n")
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != store.dim:
        raise DimensionMismatchError(f"query has dimension {q.shape[0]}, store has {store.dim}")
    if table.kind is None or len(table) == 0:
        return []
    category = table.kind.top if side == "top" else table.kind.bottom
    totals = defaultdict(float)
    for hit in knn(store, q, category, m):
        for other, score in table.row(hit.item_id, side).items():
            totals[other] += score
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:n]


class RetrievalRecommender(BaseEstimator):
    """Joint-table recommender for one pair kind.

    ``fit(pairs, street_features=..., inventory=...)`` builds ``table_``;
    ``predict(query)`` returns ``(item_id, score)`` lists for the opposite
    side of ``side``.
    """

    def __init__(self, kind=None, k_retrieve=5, score_rule="product", m=5, n=10, side="top"):
        self.kind = kind
        self.k_retrieve = k_retrieve
        self.score_rule = score_rule
        self.m = m
        self.n = n
        self.side = side

    def fit(self, pairs, y=None, *, street_features, inventory):
        self.table_ = build_joint_table(pairs, street_features, inventory, self.kind, self.k_retrieve, self.score_rule)
        self.inventory_ = inventory
        return self

    def predict(self, queries):
        check_is_fitted(self, "table_")
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        return [recommend_from_table(self.table_, self.inventory_, q, self.side, self.m, self.n) for q in queries]


def save_joint_table(table: JointTable, path):
    header = {
        "format": TABLE_FORMAT,
        "version": TABLE_VERSION,
        "kind": None if table.kind is None else table.kind.name,
        "top_category": None if table.kind is None else table.kind.top.value,
        "bottom_category": None if table.kind is None else table.kind.bottom.value,
        "k_retrieve": table.k_retrieve,
        "score_rule": table.score_rule,
        "n_pairs": table.n_pairs,
        "n_skipped": table.n_skipped,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        for (t, b) in sorted(table.entries):
            fh.write(json.dumps([t, b, table.entries[(t, b)]]) + "\n")


def load_joint_table(path) -> JointTable:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError:
            raise ValidationError("malformed header", line=1) from None
        if not isinstance(header, dict) or header.get("format") != TABLE_FORMAT:
            raise FormatVersionError("not a joint table file", line=1, field="format")
        if header.get("version") != TABLE_VERSION:
            raise FormatVersionError(f"unsupported version {header.get('version')!r}", line=1, field="version")
        entries = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                t, b, s = json.loads(line)
            except (json.JSONDecodeError, ValueError, TypeError):
                raise ValidationError("entry must be [top_id, bottom_id, score]", line=lineno) from None
            if (t, b) in entries:
                raise ValidationError(f"duplicate entry ({t}, {b})", line=lineno)
            entries[(t, b)] = float(s)
    return JointTable(
        header.get("kind"), header.get("k_retrieve", 5), header.get("score_rule", "product"),
        entries, header.get("n_pairs", 0), header.get("n_skipped", 0),
    )
