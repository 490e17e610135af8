"""Pair top and bottom garments worn by the same detected person."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_unit_interval
from .errors import FormatVersionError, ValidationError
from .ingest import BoundingBox, GarmentDetection, StreetStyleAnnotation
from .taxonomy import SCHEMA_PAIRS, PairKind

PAIRS_FORMAT = "outfitrec/pairs"
PAIRS_VERSION = 1

DEFAULT_TAU = 0.9


def containment_ratio(garment: BoundingBox, person: BoundingBox) -> float:
    """Fraction of the garment box covered by the person box."""
    return garment.intersection_area(person) / garment.area


@dataclass(frozen=True)
class AssociationPair:
    image_id: str
    person_index: int
    kind: PairKind
    top: GarmentDetection
    bottom: GarmentDetection

    def to_dict(self):
        return {
            "image_id": self.image_id,
            "person": self.person_index,
            "kind": self.kind.name,
            "top_id": self.top.detection_id,
            "bottom_id": self.bottom.detection_id,
        }


def assign_to_persons(annotation: StreetStyleAnnotation, tau=DEFAULT_TAU):
    """Map each person index to the garments it wears.

    A garment goes to the person box covering the largest fraction of it,
    provided that fraction reaches ``tau``; ties prefer the smaller person box,
    then the lower index. Garments below ``tau`` for everyone are left out.
    Lists are ordered by detection id.
    """
    tau = check_unit_interval(tau, "tau", open_left=True)
    persons = annotation.person_boxes
    worn = {i: [] for i in range(len(persons))}
    for g in sorted(annotation.garments, key=lambda d: d.detection_id):
        best, best_key = None, None
        for i, p in enumerate(persons):
            r = containment_ratio(g.box, p)
            if r < tau:
                continue
            key = (-r, p.area, i)
            if best_key is None or key < best_key:
                best, best_key = i, key
        if best is not None:
            worn[best].append(g)
    return worn


def _preferred(detections):
    return min(detections, key=lambda d: (-d.confidence, -d.box.area, d.detection_id))


def associate(annotation: StreetStyleAnnotation, tau=DEFAULT_TAU):
    """All schema pairs per person, ordered by person then schema order.

    Each (person, pair kind) yields at most one pair. When a person wears
    several garments of one category the most confident is used, then the
    largest box, then the lowest detection id.
    """
    pairs = []
    for person, garments in assign_to_persons(annotation, tau).items():
        by_cat = {}
        for g in garments:
            by_cat.setdefault(g.category, []).append(g)
        chosen = {c: _preferred(ds) for c, ds in by_cat.items()}
        for kind in SCHEMA_PAIRS:
            if kind.top in chosen and kind.bottom in chosen:
                pairs.append(AssociationPair(annotation.image_id, person, kind, chosen[kind.top], chosen[kind.bottom]))
    return pairs


def count_pairs(pairs):
    """Counts per schema kind, all six kinds present."""
    counts = Counter(p.kind for p in pairs)
    return {kind: counts.get(kind, 0) for kind in SCHEMA_PAIRS}


class GarmentAssociator(TransformerMixin, BaseEstimator):
    """Transformer from annotations to association pairs.

    Stateless: ``fit`` only validates parameters. ``transform`` concatenates
    per-image pairs in input order.
    """

    def __init__(self, tau=DEFAULT_TAU):
        self.tau = tau

    def fit(self, X=None, y=None):
        check_unit_interval(self.tau, "tau", open_left=True)
        return self

    def transform(self, X):
        out = []
        for annotation in X:
            out.extend(associate(annotation, self.tau))
        return out


def save_pairs(pairs, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"format": PAIRS_FORMAT, "version": PAIRS_VERSION}) + "\n")
        for p in pairs:
            fh.write(json.dumps(p.to_dict()) + "\n")


def load_pairs(path, annotations):
    """Re-link saved pairs to the detections in ``annotations``."""
    index = {a.image_id: a for a in annotations}
    pairs = []
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline() or "null")
        if not isinstance(header, dict) or header.get("format") != PAIRS_FORMAT:
            raise FormatVersionError("not a pairs file", line=1, field="format")
        if header.get("version") != PAIRS_VERSION:
            raise FormatVersionError(f"unsupported version {header.get('version')!r}", line=1, field="version")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ann = index[rec["image_id"]]
                pairs.append(
                    AssociationPair(
                        rec["image_id"],
                        int(rec["person"]),
                        PairKind.parse(rec["kind"]),
                        ann.garment(rec["top_id"]),
                        ann.garment(rec["bottom_id"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"bad pair record: {exc}", line=lineno) from None
    return pairs
