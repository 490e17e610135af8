"""Street-style annotations, inventory catalogs, RLE masks and segmented pixels.

Every text format is line-delimited JSON: a header object on the first line
(``format`` and ``version``), then one record per line. Unknown record fields
survive a load/save cycle untouched, after the known ones.
"""

from __future__ import annotations

import base64
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .colorlab import srgb_to_lab
from .errors import DuplicateIdError, FormatVersionError, ValidationError
from .taxonomy import GarmentCategory, PatternClass

ANNOTATIONS_FORMAT = "outfitrec/annotations"
INVENTORY_FORMAT = "outfitrec/inventory"
PIXELS_FORMAT = "outfitrec/pixels"
FORMAT_VERSION = 1

DEFAULT_MASK_MARGIN = 2.0


# -- geometry ----------------------------------------------------------------


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(isinstance(c, (int, float)) and not isinstance(c, bool) and math.isfinite(c) for c in coords):
            raise ValidationError(f"box coordinates must be finite numbers, got {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"degenerate box {coords}: need x_min < x_max and y_min < y_max")

    @classmethod
    def from_list(cls, values):
        if not isinstance(values, (list, tuple)) or len(values) != 4:
            raise ValidationError(f"box must be [x_min, y_min, x_max, y_max], got {values!r}")
        return cls(*values)

    def to_list(self):
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def intersection_area(self, other: "BoundingBox") -> float:
        w = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        h = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        return w * h if w > 0 and h > 0 else 0.0

    def within(self, width, height) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height


@dataclass(frozen=True)
class PixelMask:
    """Foreground pixels of a ``width x height`` canvas as row-major runs.

    ``counts`` is the flat list ``[start0, length0, start1, length1, ...]``
    with strictly increasing, non-touching runs, so every mask has exactly
    one encoding.
    """

    width: int
    height: int
    counts: tuple

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height or self.width <= 0 or self.height <= 0:
            raise ValidationError(f"mask size must be positive integers, got {self.width}x{self.height}")
        counts = tuple(int(c) for c in self.counts)
        if len(counts) % 2:
            raise ValidationError("mask counts must hold (start, length) pairs")
        end_prev = -1
        total = self.width * self.height
        for start, length in zip(counts[::2], counts[1::2]):
            if length <= 0:
                raise ValidationError("mask run lengths must be positive")
            if start <= end_prev:
                raise ValidationError("mask runs must be sorted and separated")
            if start + length > total:
                raise ValidationError("mask run extends past the canvas")
            end_prev = start + length
        object.__setattr__(self, "counts", counts)

    @classmethod
    def encode(cls, mask) -> "PixelMask":
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValidationError("mask must be a 2-D array")
        flat = np.concatenate([[False], mask.ravel(), [False]]).astype(np.int8)
        edges = np.diff(flat)
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1)
        counts = np.stack([starts, ends - starts], axis=1).ravel()
        return cls(mask.shape[1], mask.shape[0], tuple(int(c) for c in counts))

    def decode(self) -> np.ndarray:
        flat = np.zeros(self.width * self.height, dtype=bool)
        for start, length in zip(self.counts[::2], self.counts[1::2]):
            flat[start : start + length] = True
        return flat.reshape(self.height, self.width)

    @property
    def area(self) -> int:
        return sum(self.counts[1::2])

    def bounds(self):
        """Pixel-edge extent ``(x0, y0, x1, y1)`` of the foreground, or None."""
        if not self.counts:
            return None
        x0, y0, x1, y1 = self.width, self.height, 0, 0
        for start, length in zip(self.counts[::2], self.counts[1::2]):
            last = start + length - 1
            ys, ye = start // self.width, last // self.width
            y0, y1 = min(y0, ys), max(y1, ye + 1)
            if ys == ye:
                x0 = min(x0, start % self.width)
                x1 = max(x1, last % self.width + 1)
            else:
                x0, x1 = 0, self.width
        return x0, y0, x1, y1

    def to_dict(self):
        return {"width": self.width, "height": self.height, "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ValidationError("mask must be an object with width, height, counts")
        try:
            return cls(data["width"], data["height"], tuple(data["counts"]))
        except KeyError as exc:
            raise ValidationError(f"mask missing {exc.args[0]!r}") from None
        except TypeError:
            raise ValidationError("mask fields have the wrong type") from None


# -- records -----------------------------------------------------------------


@dataclass
class GarmentDetection:
    detection_id: str
    category: GarmentCategory
    box: BoundingBox
    mask: PixelMask | None = None
    pattern: PatternClass | None = None
    feature_ref: str | None = None
    confidence: float = 1.0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = self.confidence
        if isinstance(c, bool) or not isinstance(c, (int, float)) or not 0 <= c <= 1:
            raise ValidationError(f"confidence must lie in [0, 1], got {c!r}", field="confidence")

    def check_mask(self, margin=DEFAULT_MASK_MARGIN):
        if self.mask is None:
            return
        ext = self.mask.bounds()
        if ext is None:
            return
        b = self.box
        x0, y0, x1, y1 = ext
        if x0 < b.x_min - margin or y0 < b.y_min - margin or x1 > b.x_max + margin or y1 > b.y_max + margin:
            raise ValidationError(
                f"mask extent {ext} lies outside box {b.to_list()} dilated by {margin}", field="mask"
            )

    def to_dict(self):
        out = {"id": self.detection_id, "category": self.category.value, "box": self.box.to_list(),
               "confidence": self.confidence}
        if self.pattern is not None:
            out["pattern"] = self.pattern.value
        if self.feature_ref is not None:
            out["feature_ref"] = self.feature_ref
        if self.mask is not None:
            out["mask"] = self.mask.to_dict()
        out.update(self.extra)
        return out


_GARMENT_KEYS = {"id", "category", "box", "confidence", "pattern", "feature_ref", "mask"}
_IMAGE_KEYS = {"image_id", "width", "height", "persons", "garments"}
_ITEM_KEYS = {"item_id", "category", "pattern", "dominant_bin", "feature_ref", "metadata"}


@dataclass
class StreetStyleAnnotation:
    image_id: str
    width: int
    height: int
    person_boxes: list = field(default_factory=list)
    garments: list = field(default_factory=list)
    extra: dict = field(default_factory=dict, compare=False)

    def validate(self, mask_margin=DEFAULT_MASK_MARGIN):
        if not isinstance(self.image_id, str) or not self.image_id:
            raise ValidationError("image_id must be a non-empty string", field="image_id")
        for name in ("width", "height"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                raise ValidationError(f"must be a positive integer, got {v!r}", field=name)
        for i, box in enumerate(self.person_boxes):
            if not box.within(self.width, self.height):
                raise ValidationError(f"person box {box.to_list()} outside image", field=f"persons[{i}]")
        seen = set()
        for i, g in enumerate(self.garments):
            fname = f"garments[{i}]"
            if g.detection_id in seen:
                raise ValidationError(f"duplicate detection id {g.detection_id!r}", field=f"{fname}.id")
            seen.add(g.detection_id)
            if not g.box.within(self.width, self.height):
                raise ValidationError(f"garment box {g.box.to_list()} outside image", field=f"{fname}.box")
            if g.mask is not None:
                if (g.mask.width, g.mask.height) != (self.width, self.height):
                    raise ValidationError("mask size differs from image size", field=f"{fname}.mask")
                try:
                    g.check_mask(mask_margin)
                except ValidationError as exc:
                    raise ValidationError(exc.message, field=f"{fname}.mask") from None
        return self

    def garment(self, detection_id):
        for g in self.garments:
            if g.detection_id == detection_id:
                return g
        raise KeyError(detection_id)

    def to_dict(self):
        out = {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "persons": [b.to_list() for b in self.person_boxes],
            "garments": [g.to_dict() for g in self.garments],
        }
        out.update(self.extra)
        return out


def _require(data, key, where):
    if key not in data:
        raise ValidationError("missing required field", field=f"{where}{key}")
    return data[key]


def _wrap(fn, fname):
    try:
        return fn()
    except ValidationError as exc:
        raise ValidationError(exc.message, field=fname) from None


def parse_garment(data, where=""):
    if not isinstance(data, dict):
        raise ValidationError("garment must be an object", field=where.rstrip("."))
    det_id = _require(data, "id", where)
    if not isinstance(det_id, str) or not det_id:
        raise ValidationError("must be a non-empty string", field=f"{where}id")
    category = _wrap(lambda: GarmentCategory.parse(_require(data, "category", where)), f"{where}category")
    box = _wrap(lambda: BoundingBox.from_list(_require(data, "box", where)), f"{where}box")
    pattern = data.get("pattern")
    if pattern is not None:
        pattern = _wrap(lambda: PatternClass.parse(data["pattern"]), f"{where}pattern")
    mask = data.get("mask")
    if mask is not None:
        mask = _wrap(lambda: PixelMask.from_dict(data["mask"]), f"{where}mask")
    feature_ref = data.get("feature_ref")
    if feature_ref is not None and not isinstance(feature_ref, str):
        raise ValidationError("must be a string", field=f"{where}feature_ref")
    return _wrap(
        lambda: GarmentDetection(
            detection_id=det_id,
            category=category,
            box=box,
            mask=mask,
            pattern=pattern,
            feature_ref=feature_ref,
            confidence=data.get("confidence", 1.0),
            extra={k: v for k, v in data.items() if k not in _GARMENT_KEYS},
        ),
        f"{where}confidence",
    )


def parse_annotation(data, mask_margin=DEFAULT_MASK_MARGIN) -> StreetStyleAnnotation:
    if not isinstance(data, dict):
        raise ValidationError("record must be a JSON object")
    persons = _require(data, "persons", "")
    garments = _require(data, "garments", "")
    if not isinstance(persons, list):
        raise ValidationError("must be a list", field="persons")
    if not isinstance(garments, list):
        raise ValidationError("must be a list", field="garments")
    ann = StreetStyleAnnotation(
        image_id=_require(data, "image_id", ""),
        width=_require(data, "width", ""),
        height=_require(data, "height", ""),
        person_boxes=[_wrap(lambda p=p: BoundingBox.from_list(p), f"persons[{i}]") for i, p in enumerate(persons)],
        garments=[parse_garment(g, f"garments[{i}].") for i, g in enumerate(garments)],
        extra={k: v for k, v in data.items() if k not in _IMAGE_KEYS},
    )
    return ann.validate(mask_margin)


# -- line-delimited files ----------------------------------------------------


def _read_records(path, fmt):
    """Yield ``(line_number, record)`` after checking the header line."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise ValidationError("empty file, expected a header line", line=1)
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed header: {exc.msg}", line=1) from None
        if not isinstance(header, dict) or header.get("format") != fmt:
            raise FormatVersionError(f"expected a {fmt} header", line=1, field="format")
        if header.get("version") != FORMAT_VERSION:
            raise FormatVersionError(f"unsupported version {header.get('version')!r}", line=1, field="version")
        yield 1, header
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"malformed JSON: {exc.msg}", line=lineno) from None


def _write_records(path, header, records: Iterable[dict]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def load_street_annotations(path, mask_margin=DEFAULT_MASK_MARGIN):
    """Load and validate every image record, in file order."""
    out = []
    records = _read_records(path, ANNOTATIONS_FORMAT)
    next(records)
    for lineno, data in records:
        try:
            out.append(parse_annotation(data, mask_margin))
        except ValidationError as exc:
            raise ValidationError(exc.message, line=lineno, field=exc.field) from None
    return out


def save_street_annotations(annotations, path):
    header = {"format": ANNOTATIONS_FORMAT, "version": FORMAT_VERSION}
    _write_records(path, header, (a.to_dict() for a in annotations))


# -- inventory ---------------------------------------------------------------


@dataclass
class InventoryItem:
    item_id: str
    category: GarmentCategory
    pattern: PatternClass | None = None
    dominant_bin: int | None = None
    feature_ref: str | None = None
    metadata: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self):
        out = {"item_id": self.item_id, "category": self.category.value}
        if self.pattern is not None:
            out["pattern"] = self.pattern.value
        if self.dominant_bin is not None:
            out["dominant_bin"] = self.dominant_bin
        if self.feature_ref is not None:
            out["feature_ref"] = self.feature_ref
        out["metadata"] = self.metadata
        out.update(self.extra)
        return out


def parse_item(data, palette_size=None) -> InventoryItem:
    if not isinstance(data, dict):
        raise ValidationError("record must be a JSON object")
    item_id = _require(data, "item_id", "")
    if not isinstance(item_id, str) or not item_id:
        raise ValidationError("must be a non-empty string", field="item_id")
    category = _wrap(lambda: GarmentCategory.parse(_require(data, "category", "")), "category")
    pattern = data.get("pattern")
    if pattern is not None:
        pattern = _wrap(lambda: PatternClass.parse(data["pattern"]), "pattern")
    dom = data.get("dominant_bin")
    if dom is not None:
        if isinstance(dom, bool) or not isinstance(dom, int) or dom < 0:
            raise ValidationError(f"must be a non-negative integer, got {dom!r}", field="dominant_bin")
        if palette_size is not None and dom >= palette_size:
            raise ValidationError(f"{dom} >= palette size {palette_size}", field="dominant_bin")
    metadata = data.get("metadata", {})
    if not isinstance(metadata, dict):
        raise ValidationError("must be an object", field="metadata")
    return InventoryItem(
        item_id=item_id,
        category=category,
        pattern=pattern,
        dominant_bin=dom,
        feature_ref=data.get("feature_ref"),
        metadata=metadata,
        extra={k: v for k, v in data.items() if k not in _ITEM_KEYS},
    )


class Catalog:
    """Id-unique inventory. Equality ignores item order."""

    def __init__(self, items: Iterable[InventoryItem] = ()):
        self._items = {}
        for item in items:
            if item.item_id in self._items:
                raise DuplicateIdError(item.item_id)
            self._items[item.item_id] = item
        self._by_category = {}
        for item in sorted(self._items.values(), key=lambda it: it.item_id):
            self._by_category.setdefault(item.category, []).append(item)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items.values())

    def __contains__(self, item_id):
        return item_id in self._items

    def __getitem__(self, item_id) -> InventoryItem:
        return self._items[item_id]

    def __eq__(self, other):
        if not isinstance(other, Catalog):
            return NotImplemented
        return self._items == other._items

    def get(self, item_id, default=None):
        return self._items.get(item_id, default)

    def by_category(self, category) -> list:
        """Items of one category sorted by id."""
        return list(self._by_category.get(GarmentCategory.parse(category), []))

    def category_counts(self) -> Counter:
        return Counter(item.category for item in self)


def load_inventory(path, palette_size=None) -> Catalog:
    records = _read_records(path, INVENTORY_FORMAT)
    _, header = next(records)
    if palette_size is None:
        palette_size = header.get("palette_size")
    items, seen = [], set()
    for lineno, data in records:
        try:
            item = parse_item(data, palette_size)
        except ValidationError as exc:
            raise ValidationError(exc.message, line=lineno, field=exc.field) from None
        if item.item_id in seen:
            raise DuplicateIdError(item.item_id, line=lineno)
        seen.add(item.item_id)
        items.append(item)
    return Catalog(items)


def save_inventory(catalog: Iterable[InventoryItem], path, palette_size=None):
    header = {"format": INVENTORY_FORMAT, "version": FORMAT_VERSION}
    if palette_size is not None:
        header["palette_size"] = palette_size
    _write_records(path, header, (item.to_dict() for item in catalog))


# -- segmented pixels --------------------------------------------------------


class PixelStore:
    """sRGB pixels of segmented garments, keyed by detection or inventory item.

    Street-style entries key on ``(image_id, detection_id)``; inventory
    entries on ``item_id``. ``get`` returns Lab arrays.
    """

    def __init__(self, detections=None, items=None):
        self._detections = dict(detections or {})
        self._items = dict(items or {})

    def __len__(self):
        return len(self._detections) + len(self._items)

    def rgb(self, key):
        table = self._detections if isinstance(key, tuple) else self._items
        return table.get(key)

    def get(self, key, default=None):
        rgb = self.rgb(key)
        if rgb is None or len(rgb) == 0:
            return default
        return srgb_to_lab(rgb)

    def items(self):
        return self._items.keys()

    def detections(self):
        return self._detections.keys()


def _encode_rgb(rgb):
    return base64.b64encode(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()).decode("ascii")


def _decode_rgb(text, lineno):
    try:
        raw = base64.b64decode(text, validate=True)
    except (ValueError, TypeError):
        raise ValidationError("rgb is not valid base64", line=lineno, field="rgb") from None
    if len(raw) % 3:
        raise ValidationError("rgb byte count is not a multiple of 3", line=lineno, field="rgb")
    out = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
    out.setflags(write=False)
    return out


def load_pixels(path) -> PixelStore:
    detections, items = {}, {}
    records = _read_records(path, PIXELS_FORMAT)
    next(records)
    for lineno, data in records:
        if not isinstance(data, dict) or "rgb" not in data:
            raise ValidationError("record needs an rgb field", line=lineno, field="rgb")
        rgb = _decode_rgb(data["rgb"], lineno)
        if "item_id" in data:
            key, table = data["item_id"], items
        elif "image_id" in data and "detection_id" in data:
            key, table = (data["image_id"], data["detection_id"]), detections
        else:
            raise ValidationError("record needs item_id or image_id + detection_id", line=lineno)
        if key in table:
            raise DuplicateIdError(str(key), line=lineno)
        table[key] = rgb
    return PixelStore(detections, items)


def save_pixels(store: PixelStore, path):
    def records():
        for (image_id, det_id) in store.detections():
            yield {"image_id": image_id, "detection_id": det_id, "rgb": _encode_rgb(store.rgb((image_id, det_id)))}
        for item_id in store.items():
            yield {"item_id": item_id, "rgb": _encode_rgb(store.rgb(item_id))}

    _write_records(path, {"format": PIXELS_FORMAT, "version": FORMAT_VERSION}, records())
