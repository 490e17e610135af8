"""Closed label sets: garment categories, texture patterns and the pairing schema."""

from __future__ import annotations

from enum import Enum
from typing import NamedTuple

from .errors import ValidationError


class _Label(str, Enum):
    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls(value)
            except ValueError:
                folded = value.replace("_", "").replace("/", "").replace(" ", "").lower()
                for member in cls:
                    if member.value.lower() == folded:
                        return member
        raise ValidationError(f"unknown {cls.__name__} {value!r}")

    @property
    def ordinal(self) -> int:
        return list(type(self)).index(self)

    def __str__(self):
        return self.value


class GarmentCategory(_Label):
    COATS_JACKETS = "CoatsJackets"
    DRESSES = "Dresses"
    SKIRTS = "Skirts"
    TOPS_BLOUSES = "TopsBlouses"
    TROUSERS = "Trousers"


class PatternClass(_Label):
    ANIMAL_PRINT = "AnimalPrint"
    CHECKS = "Checks"
    STRIPES = "Stripes"
    DOTS = "Dots"
    FLORAL = "Floral"
    PAISLEY = "Paisley"
    CROCHET = "Crochet"
    LOGO = "Logo"
    COSMIC = "Cosmic"
    PLAIN = "Plain"


CATEGORIES = tuple(GarmentCategory)
PATTERNS = tuple(PatternClass)


class PairKind(NamedTuple):
    top: GarmentCategory
    bottom: GarmentCategory

    @property
    def name(self) -> str:
        return f"{self.top.value}-{self.bottom.value}"

    @classmethod
    def parse(cls, value) -> "PairKind":
        if isinstance(value, PairKind):
            kind = value
        elif isinstance(value, str) and value.count("-") == 1:
            top, bottom = value.split("-")
            kind = cls(GarmentCategory.parse(top), GarmentCategory.parse(bottom))
        elif isinstance(value, (tuple, list)) and len(value) == 2:
            kind = cls(GarmentCategory.parse(value[0]), GarmentCategory.parse(value[1]))
        else:
            raise ValidationError(f"cannot parse pair kind {value!r}")
        if kind not in SCHEMA_PAIRS:
            raise ValidationError(f"pair kind {kind.name} is not in the association schema")
        return kind

    def __str__(self):
        return self.name


_C = GarmentCategory
# Row-major over the observed pairing table; TopsBlouses pairs with neither
# Dresses nor TopsBlouses.
SCHEMA_PAIRS = (
    PairKind(_C.COATS_JACKETS, _C.DRESSES),
    PairKind(_C.COATS_JACKETS, _C.SKIRTS),
    PairKind(_C.COATS_JACKETS, _C.TROUSERS),
    PairKind(_C.COATS_JACKETS, _C.TOPS_BLOUSES),
    PairKind(_C.TOPS_BLOUSES, _C.SKIRTS),
    PairKind(_C.TOPS_BLOUSES, _C.TROUSERS),
)


def orient(query: GarmentCategory, target: GarmentCategory):
    """Find the schema pair joining two categories.

    Returns ``(kind, transposed)`` where ``transposed`` is True when the query
    category sits on the bottom side of ``kind``.
    """
    if (query, target) in SCHEMA_PAIRS:
        return PairKind(query, target), False
    if (target, query) in SCHEMA_PAIRS:
        return PairKind(target, query), True
    raise ValidationError(
        f"{query.value} and {target.value} do not form a pair in the association schema"
    )
