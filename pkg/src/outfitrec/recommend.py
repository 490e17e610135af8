"""Answer a query garment with ranked inventory items.

Four strategies are available: colour co-occurrence, colour-wheel rules,
pattern co-occurrence and the retrieval joint table. Every strategy runs
over immutable, prebuilt :class:`Artifacts`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import numpy as np

from .colorlab import (
    DEFAULT_HUE_TOL,
    DEFAULT_MIN_CHROMA,
    Palette,
    bins_near_hue,
    complementary_hue,
    delta_e,
    dominant_color,
    hue_distance,
    srgb_to_lab,
    triadic_hues,
)
from .cooccur import CooccurrenceMatrix
from .errors import DomainMismatchError, MissingArtifactError, QueryError, UndefinedHueError, ValidationError
from .features import FeatureStore
from .ingest import Catalog
from .retrieval import JointTable, recommend_from_table
from .taxonomy import PATTERNS, GarmentCategory, PairKind, PatternClass, orient

DEFAULT_TOP_K = 3
DEFAULT_LIMIT = 10
DEFAULT_RETRIEVE_M = 5


class Strategy(str, Enum):
    COLOR_COOCCUR = "color_cooccur"
    COLOR_WHEEL = "color_wheel"
    PATTERN_COOCCUR = "pattern_cooccur"
    RETRIEVAL_TABLE = "retrieval_table"


WHEEL_MODES = ("complementary", "triadic")

_QUERY_FIELDS = {
    "category", "target_category", "strategy", "mode", "pixels_lab", "pixels_rgb",
    "pattern", "feature", "limit", "top_k", "retrieve_m", "hue_tol", "min_chroma",
}


@dataclass
class Query:
    category: GarmentCategory
    target_category: GarmentCategory
    strategy: Strategy
    pixels_lab: np.ndarray | None = None
    pattern: PatternClass | None = None
    feature: np.ndarray | None = None
    mode: str | None = None
    limit: int = DEFAULT_LIMIT
    top_k: int = DEFAULT_TOP_K
    retrieve_m: int = DEFAULT_RETRIEVE_M
    hue_tol: float = DEFAULT_HUE_TOL
    min_chroma: float = DEFAULT_MIN_CHROMA

    def __post_init__(self):
        self.validate()

    def validate(self):
        s = self.strategy
        if s in (Strategy.COLOR_COOCCUR, Strategy.COLOR_WHEEL) and self.pixels_lab is None:
            raise QueryError("colour strategies need segmented pixels", field="pixels_lab")
        if s is Strategy.COLOR_WHEEL and self.mode not in WHEEL_MODES:
            raise QueryError(f"mode must be one of {WHEEL_MODES}", field="mode")
        if s is Strategy.PATTERN_COOCCUR and self.pattern is None and self.pixels_lab is None:
            raise QueryError("pattern strategy needs a pattern label or pixels", field="pattern")
        if s is Strategy.RETRIEVAL_TABLE and self.feature is None:
            raise QueryError("retrieval strategy needs a feature vector", field="feature")
        try:
            orient(self.category, self.target_category)
        except ValidationError as exc:
            raise QueryError(exc.message, field="target_category") from None

    @classmethod
    def from_dict(cls, data) -> "Query":
        if not isinstance(data, dict):
            raise QueryError("query must be a JSON object")
        unknown = sorted(set(data) - _QUERY_FIELDS)
        if unknown:
            raise QueryError("unknown field", field=unknown[0])
        for key in ("category", "target_category", "strategy"):
            if key not in data:
                raise QueryError("required", field=key)

        def parse(key, fn):
            try:
                return fn(data[key])
            except (ValidationError, ValueError, TypeError) as exc:
                raise QueryError(getattr(exc, "message", str(exc)), field=key) from None

        def positive_int(v):
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ValueError(f"must be a positive integer, got {v!r}")
            return v

        def number(v):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValueError(f"must be a finite number, got {v!r}")
            return float(v)

        def colors(v, converter):
            arr = np.asarray(v, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] == 0:
                raise ValueError("must be a non-empty list of 3-component colours")
            return converter(arr)

        def lab(arr):
            if not np.all(np.isfinite(arr)) or np.any((arr[:, 0] < 0) | (arr[:, 0] > 100)):
                raise ValueError("L must lie in [0, 100]")
            if np.any(np.abs(arr[:, 1:]) > 128):
                raise ValueError("a and b must lie in [-128, 128]")
            return arr

        def wheel_mode(v):
            if v not in WHEEL_MODES:
                raise ValueError(f"must be one of {WHEEL_MODES}")
            return v

        def feature(v):
            arr = np.asarray(v, dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
                raise ValueError("must be a non-empty list of finite numbers")
            return arr

        kw = {
            "category": parse("category", GarmentCategory.parse),
            "target_category": parse("target_category", GarmentCategory.parse),
            "strategy": parse("strategy", Strategy),
        }
        if "pixels_lab" in data and "pixels_rgb" in data:
            raise QueryError("give pixels_lab or pixels_rgb, not both", field="pixels_rgb")
        if "pixels_lab" in data:
            kw["pixels_lab"] = parse("pixels_lab", lambda v: colors(v, lab))
        if "pixels_rgb" in data:
            kw["pixels_lab"] = parse("pixels_rgb", lambda v: colors(v, srgb_to_lab))
        if data.get("pattern") is not None:
            kw["pattern"] = parse("pattern", PatternClass.parse)
        if "feature" in data:
            kw["feature"] = parse("feature", feature)
        if data.get("mode") is not None:
            kw["mode"] = parse("mode", wheel_mode)
        for key in ("limit", "top_k", "retrieve_m"):
            if key in data:
                kw[key] = parse(key, positive_int)
        if "hue_tol" in data:
            kw["hue_tol"] = parse("hue_tol", number)
            if not 0 < kw["hue_tol"] <= 180:
                raise QueryError("must lie in (0, 180]", field="hue_tol")
        if "min_chroma" in data:
            kw["min_chroma"] = parse("min_chroma", number)
            if kw["min_chroma"] < 0:
                raise QueryError("must be non-negative", field="min_chroma")
        return cls(**kw)

    def to_dict(self):
        out = {
            "category": self.category.value,
            "target_category": self.target_category.value,
            "strategy": self.strategy.value,
            "limit": self.limit,
            "top_k": self.top_k,
            "retrieve_m": self.retrieve_m,
            "hue_tol": self.hue_tol,
            "min_chroma": self.min_chroma,
        }
        if self.mode is not None:
            out["mode"] = self.mode
        if self.pixels_lab is not None:
            out["pixels_lab"] = self.pixels_lab.tolist()
        if self.pattern is not None:
            out["pattern"] = self.pattern.value
        if self.feature is not None:
            out["feature"] = self.feature.tolist()
        return out


@dataclass
class RecommendedItem:
    item_id: str
    score: float
    explanation: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {"item_id": self.item_id, "score": self.score, "explanation": self.explanation,
                "metadata": self.metadata}


@dataclass
class Recommendation:
    strategy: Strategy
    category: GarmentCategory
    target_category: GarmentCategory
    items: list = field(default_factory=list)
    explanation: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.items)

    @property
    def item_ids(self):
        return [it.item_id for it in self.items]

    def to_dict(self):
        return {
            "strategy": self.strategy.value,
            "category": self.category.value,
            "target_category": self.target_category.value,
            "explanation": self.explanation,
            "items": [it.to_dict() for it in self.items],
        }


def dumps_recommendation(rec: Recommendation) -> str:
    """Canonical JSON text shared by the CLI and the HTTP service."""
    return json.dumps(rec.to_dict(), sort_keys=True, allow_nan=False)


class PatternClassifierPlugin(Protocol):
    def classify(self, pixels_lab) -> tuple[PatternClass, float]: ...


class AnnotationPassthrough:
    """Default classifier seam: only the label supplied with the query is used."""

    def classify(self, pixels_lab):
        raise QueryError("no pattern label given and no pattern classifier is installed", field="pattern")


@dataclass
class Artifacts:
    """Prebuilt state a recommender reads from. Treated as read-only."""

    catalog: Catalog | None = None
    palettes: dict = field(default_factory=dict)
    color_matrices: dict = field(default_factory=dict)
    pattern_matrices: dict = field(default_factory=dict)
    joint_tables: dict = field(default_factory=dict)
    inventory_features: FeatureStore | None = None
    metadata: dict = field(default_factory=dict)


def _need(mapping, key, what, hint):
    value = mapping.get(key) if mapping is not None else None
    if value is None:
        raise MissingArtifactError(what, hint)
    return value


def _catalog(art: Artifacts) -> Catalog:
    if art.catalog is None:
        raise MissingArtifactError("inventory catalog", "run generate-synthetic or pass --inventory")
    return art.catalog


def _palette(art: Artifacts, category) -> Palette:
    return _need(art.palettes, category, f"palette {category.value}", "run build-palettes")


def _oriented(matrix: CooccurrenceMatrix, transposed):
    return matrix.transpose() if transposed else matrix


def recommend_color(q: Query, art: Artifacts) -> Recommendation:
    kind, transposed = orient(q.category, q.target_category)
    matrix = _oriented(
        _need(art.color_matrices, kind, f"colour matrix {kind.name}", "run build-cooccur --kind color"),
        transposed,
    )
    qpal, tpal = _palette(art, q.category), _palette(art, q.target_category)
    if matrix.shape != (qpal.k, tpal.k):
        raise DomainMismatchError(f"matrix {kind.name} has shape {matrix.shape}, palettes give {(qpal.k, tpal.k)}")
    qbin, _ = dominant_color(q.pixels_lab, qpal)
    qcentroid = qpal.centroids[qbin]
    bins = matrix.top_k_match(qbin, q.top_k)
    probs = matrix.row_distribution(qbin)
    rank = {b: r for r, b in enumerate(bins)}

    candidates, unbinned = [], 0
    for item in _catalog(art).by_category(q.target_category):
        if item.dominant_bin is None:
            unbinned += 1
            continue
        if item.dominant_bin in rank:
            colour = item.metadata.get("dominant_lab", tpal.centroids[item.dominant_bin])
            de = float(delta_e(colour, qcentroid))
            candidates.append((rank[item.dominant_bin], de, item.item_id, item))
    candidates.sort(key=lambda c: c[:3])
    items = [
        RecommendedItem(
            item.item_id,
            float(probs[item.dominant_bin]),
            {"matched_bin": item.dominant_bin, "bin_rank": r, "delta_e": de},
            item.metadata,
        )
        for r, de, _, item in candidates[: q.limit]
    ]
    explanation = {
        "pair_kind": kind.name,
        "transposed": transposed,
        "query_bin": qbin,
        "matched_bins": bins,
        "bin_probabilities": [float(probs[b]) for b in bins],
        "unbinned_items": unbinned,
    }
    if not items:
        explanation["note"] = "no inventory items in the matched bins"
    return Recommendation(q.strategy, q.category, q.target_category, items, explanation)


def recommend_color_wheel(q: Query, art: Artifacts) -> Recommendation:
    kind, transposed = orient(q.category, q.target_category)
    qpal, tpal = _palette(art, q.category), _palette(art, q.target_category)
    qbin, _ = dominant_color(q.pixels_lab, qpal)
    _, chroma, hue = qpal.lch[qbin]
    if chroma < q.min_chroma:
        raise UndefinedHueError(
            f"query colour is achromatic (chroma {chroma:.2f} < {q.min_chroma}); colour-wheel hue is undefined"
        )
    targets = [complementary_hue(hue)] if q.mode == "complementary" else list(triadic_hues(hue))
    bin_target = {}
    for t in targets:
        for b in bins_near_hue(tpal, t, q.hue_tol, q.min_chroma):
            d = float(hue_distance(tpal.lch[b, 2], t))
            if b not in bin_target or d < bin_target[b][1]:
                bin_target[b] = (t, d)
    candidates = []
    for item in _catalog(art).by_category(q.target_category):
        if item.dominant_bin in bin_target:
            t, d = bin_target[item.dominant_bin]
            candidates.append((d, item.item_id, t, item))
    candidates.sort(key=lambda c: c[:2])
    items = [
        RecommendedItem(
            item.item_id,
            1.0 - d / 180.0,
            {"matched_bin": item.dominant_bin, "target_hue": t, "hue_distance": d},
            item.metadata,
        )
        for d, _, t, item in candidates[: q.limit]
    ]
    explanation = {
        "pair_kind": kind.name,
        "transposed": transposed,
        "mode": q.mode,
        "query_bin": qbin,
        "query_hue": float(hue),
        "query_chroma": float(chroma),
        "target_hues": [float(t) for t in targets],
        "matched_bins": sorted(bin_target),
    }
    if not items:
        explanation["note"] = "no inventory items near the target hues"
    return Recommendation(q.strategy, q.category, q.target_category, items, explanation)


def recommend_pattern(q: Query, art: Artifacts, classifier: PatternClassifierPlugin | None = None) -> Recommendation:
    kind, transposed = orient(q.category, q.target_category)
    matrix = _oriented(
        _need(art.pattern_matrices, kind, f"pattern matrix {kind.name}", "run build-cooccur --kind pattern"),
        transposed,
    )
    if q.pattern is not None:
        pattern, confidence = q.pattern, 1.0
    else:
        pattern, confidence = (classifier or AnnotationPassthrough()).classify(q.pixels_lab)
        pattern = PatternClass.parse(pattern)
    row = PATTERNS.index(pattern)
    cols = matrix.top_k_match(row, q.top_k)
    probs = matrix.row_distribution(row)
    matched = [PATTERNS[c] for c in cols]
    rank = {p: r for r, p in enumerate(matched)}

    candidates, unlabeled = [], 0
    for item in _catalog(art).by_category(q.target_category):
        if item.pattern is None:
            unlabeled += 1
        elif item.pattern in rank:
            candidates.append((rank[item.pattern], item.item_id, item))
    candidates.sort(key=lambda c: c[:2])
    items = [
        RecommendedItem(
            item.item_id,
            float(probs[PATTERNS.index(item.pattern)]),
            {"matched_pattern": item.pattern.value, "pattern_rank": r},
            item.metadata,
        )
        for r, _, item in candidates[: q.limit]
    ]
    explanation = {
        "pair_kind": kind.name,
        "transposed": transposed,
        "query_pattern": pattern.value,
        "query_pattern_confidence": confidence,
        "matched_patterns": [p.value for p in matched],
        "pattern_probabilities": [float(probs[c]) for c in cols],
        "unlabeled_items": unlabeled,
    }
    if not items:
        explanation["note"] = "no inventory items carry the matched patterns"
    return Recommendation(q.strategy, q.category, q.target_category, items, explanation)


def recommend_retrieval(q: Query, art: Artifacts) -> Recommendation:
    kind, transposed = orient(q.category, q.target_category)
    table: JointTable = _need(art.joint_tables, kind, f"joint table {kind.name}", "run build-joint-table")
    if art.inventory_features is None:
        raise MissingArtifactError("inventory feature store", "pass --inventory-features")
    side = "bottom" if transposed else "top"
    ranked = recommend_from_table(table, art.inventory_features, q.feature, side, q.retrieve_m, q.limit)
    catalog = art.catalog
    items = []
    for item_id, score in ranked:
        item = catalog.get(item_id) if catalog is not None else None
        items.append(RecommendedItem(item_id, float(score), {"table": kind.name, "side": side},
                                     {} if item is None else item.metadata))
    explanation = {"pair_kind": kind.name, "transposed": transposed, "query_side": side,
                   "retrieve_m": q.retrieve_m, "score_rule": table.score_rule}
    if not items:
        explanation["note"] = "joint table has no entries for the retrieved items"
    return Recommendation(q.strategy, q.category, q.target_category, items, explanation)


def recommend(q: Query, art: Artifacts, classifier: PatternClassifierPlugin | None = None) -> Recommendation:
    if q.strategy is Strategy.COLOR_COOCCUR:
        return recommend_color(q, art)
    if q.strategy is Strategy.COLOR_WHEEL:
        return recommend_color_wheel(q, art)
    if q.strategy is Strategy.PATTERN_COOCCUR:
        return recommend_pattern(q, art, classifier)
    return recommend_retrieval(q, art)
