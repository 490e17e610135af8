"""Synthetic street-style corpus with planted structure and recorded ground truth.

Each person wears an outfit drawn from a fixed set of templates. A latent
style index ``z`` fixes the colour of every garment: a garment of category
``c`` gets planted colour ``(z + offset[c]) % n_colors`` (or a random one with
probability ``color_noise``). The best-matching bottom colour for top colour
``i`` of pair kind ``(T, B)`` is therefore ``(i - offset[T] + offset[B]) %
n_colors`` for every kind at once. Patterns follow the same scheme over the
ten texture classes.

The generator also simulates the association rules (person containment,
highest-confidence duplicate) so it can record exact expected pair counts
and joint histograms for the pipeline to reproduce.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .colorlab import delta_e, srgb_to_lab
from .features import FeatureStore, save_features
from .ingest import (
    BoundingBox,
    Catalog,
    GarmentDetection,
    InventoryItem,
    PixelMask,
    PixelStore,
    StreetStyleAnnotation,
    save_inventory,
    save_pixels,
    save_street_annotations,
)
from .taxonomy import CATEGORIES, PATTERNS, SCHEMA_PAIRS, GarmentCategory

C = GarmentCategory

OUTFITS = (
    (C.TOPS_BLOUSES, C.TROUSERS),
    (C.TOPS_BLOUSES, C.SKIRTS),
    (C.COATS_JACKETS, C.TROUSERS),
    (C.COATS_JACKETS, C.DRESSES),
    (C.COATS_JACKETS, C.SKIRTS),
    (C.COATS_JACKETS, C.TOPS_BLOUSES, C.TROUSERS),
    (C.COATS_JACKETS, C.TOPS_BLOUSES, C.SKIRTS),
    (C.TOPS_BLOUSES, C.DRESSES),
    (C.DRESSES,),
)

IMAGE_WIDTH = 400
IMAGE_HEIGHT = 300
_PERSON_SLOTS = (10.0, 150.0)
_DISTRACTOR_X = (300.0, 390.0)

# vertical bands inside a person box, as fractions of its height
_BANDS = {
    C.COATS_JACKETS: (0.08, 0.48),
    C.TOPS_BLOUSES: (0.12, 0.44),
    C.DRESSES: (0.12, 0.80),
    C.SKIRTS: (0.45, 0.75),
    C.TROUSERS: (0.45, 0.95),
}

FILES = {
    "annotations": "annotations.jsonl",
    "inventory": "inventory.jsonl",
    "pixels": "pixels.jsonl",
    "street_features": "street_features.fvec",
    "inventory_features": "inventory_features.fvec",
    "ground_truth": "ground_truth.json",
    "queries": "queries.jsonl",
}


@dataclass
class SyntheticConfig:
    n_images: int = 1000
    n_colors: int = 16
    items_per_color: int = 3
    feature_dim: int = 32
    n_queries: int = 200
    seed: int = 0
    min_color_separation: float = 20.0
    color_noise: float = 0.15
    pattern_noise: float = 0.3
    pixel_jitter: int = 3
    outlier_fraction: float = 0.1
    p_two_persons: float = 0.3
    p_no_person: float = 0.03
    p_duplicate: float = 0.08
    p_distractor: float = 0.1
    p_no_mask: float = 0.05
    p_no_pattern: float = 0.08
    p_no_feature: float = 0.05
    p_reverse_query: float = 0.2
    feature_noise: float = 0.3


@dataclass
class SyntheticCorpus:
    config: SyntheticConfig
    annotations: list
    catalog: Catalog
    pixels: PixelStore
    street_features: FeatureStore
    inventory_features: FeatureStore
    ground_truth: dict
    queries: list = field(default_factory=list)


def planted_palette(rng, n_colors, min_sep, lo=30, hi=225):
    """sRGB colours whose Lab values are pairwise at least ``min_sep`` apart."""
    rgb, lab = [], []
    attempts = 0
    while len(rgb) < n_colors:
        attempts += 1
        if attempts > 200_000:
            raise RuntimeError(f"cannot place {n_colors} colours {min_sep} apart")
        cand = rng.integers(lo, hi + 1, size=3)
        cl = srgb_to_lab(cand)
        if all(delta_e(cl, other) >= min_sep for other in lab):
            rgb.append(cand)
            lab.append(cl)
    return np.array(rgb, dtype=np.int64), np.array(lab)


def _jittered(rng, base_rgb, n, jitter):
    noise = rng.integers(-jitter, jitter + 1, size=(n, 3))
    return np.clip(base_rgb[None, :] + noise, 0, 255).astype(np.uint8)


class _Builder:
    def __init__(self, cfg: SyntheticConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        n = cfg.n_colors
        self.palettes_rgb, self.palettes_lab = {}, {}
        for cat in CATEGORIES:
            self.palettes_rgb[cat], self.palettes_lab[cat] = planted_palette(self.rng, n, cfg.min_color_separation)
        self.color_offset = {c: int(o) for c, o in zip(CATEGORIES, self.rng.permutation(n)[: len(CATEGORIES)])}
        self.pattern_offset = {c: int(o) for c, o in zip(CATEGORIES, self.rng.permutation(len(PATTERNS))[: len(CATEGORIES)])}
        self.inventory_vecs = {}
        self.items = []
        self.item_pixels = {}
        self.detection_pixels = {}
        self.street_ids, self.street_vecs, self.street_cats = [], [], []

    # -- inventory ----------------------------------------------------------

    def build_inventory(self):
        cfg = self.cfg
        for cat in CATEGORIES:
            for color in range(cfg.n_colors):
                for j in range(cfg.items_per_color):
                    item_id = f"{cat.value}-{color:03d}-{j}"
                    pattern = None
                    if self.rng.random() >= cfg.p_no_pattern:
                        pattern = PATTERNS[int(self.rng.integers(len(PATTERNS)))]
                    vec = self.rng.normal(size=cfg.feature_dim)
                    self.inventory_vecs[item_id] = vec / np.linalg.norm(vec)
                    self.items.append(
                        InventoryItem(
                            item_id=item_id,
                            category=cat,
                            pattern=pattern,
                            feature_ref=item_id,
                            metadata={"planted_color": color},
                        )
                    )
                    self.item_pixels[item_id] = _jittered(self.rng, self.palettes_rgb[cat][color], 40, cfg.pixel_jitter)

    # -- street-style -------------------------------------------------------

    def _garment_color(self, cat, z):
        if self.rng.random() < self.cfg.color_noise:
            return int(self.rng.integers(self.cfg.n_colors))
        return (z + self.color_offset[cat]) % self.cfg.n_colors

    def _garment_pattern(self, cat, zp):
        if self.rng.random() < self.cfg.p_no_pattern:
            return None
        if self.rng.random() < self.cfg.pattern_noise:
            return int(self.rng.integers(len(PATTERNS)))
        return (zp + self.pattern_offset[cat]) % len(PATTERNS)

    def _box_in(self, person: BoundingBox, cat):
        lo, hi = _BANDS[cat]
        h = person.height
        inset = 10.0 if cat is C.COATS_JACKETS else 22.0
        y0 = round(person.y_min + h * lo + float(self.rng.uniform(0, 4)), 1)
        y1 = round(person.y_min + h * hi - float(self.rng.uniform(0, 4)), 1)
        x0 = round(person.x_min + inset + float(self.rng.uniform(0, 4)), 1)
        x1 = round(person.x_max - inset - float(self.rng.uniform(0, 4)), 1)
        return BoundingBox(x0, y0, x1, y1)

    def _mask_in(self, box: BoundingBox):
        mw, mh = (int(v) for v in self.rng.integers(6, 11, size=2))
        x_lo, x_hi = int(np.ceil(box.x_min)), int(np.floor(box.x_max)) - mw
        y_lo, y_hi = int(np.ceil(box.y_min)), int(np.floor(box.y_max)) - mh
        x0 = int(self.rng.integers(x_lo, x_hi + 1))
        y0 = int(self.rng.integers(y_lo, y_hi + 1))
        canvas = np.zeros((IMAGE_HEIGHT, IMAGE_WIDTH), dtype=bool)
        canvas[y0 : y0 + mh, x0 : x0 + mw] = True
        return PixelMask.encode(canvas)

    def _garment_pixels(self, cat, color, n):
        cfg = self.cfg
        px = _jittered(self.rng, self.palettes_rgb[cat][color], n, cfg.pixel_jitter)
        n_out = int(round(cfg.outlier_fraction * n))
        if n_out:
            other = int(self.rng.integers(cfg.n_colors))
            idx = self.rng.choice(n, size=n_out, replace=False)
            px[idx] = _jittered(self.rng, self.palettes_rgb[cat][other], n_out, cfg.pixel_jitter)
        return px

    def _make_garment(self, image_id, det_id, cat, box, color, pattern, confidence):
        cfg = self.cfg
        mask = None
        if self.rng.random() >= cfg.p_no_mask:
            mask = self._mask_in(box)
            self.detection_pixels[(image_id, det_id)] = self._garment_pixels(cat, color, mask.area)
        feature_ref = None
        if self.rng.random() >= cfg.p_no_feature:
            feature_ref = f"{image_id}/{det_id}"
            j = int(self.rng.integers(cfg.items_per_color))
            base = self.inventory_vecs[f"{cat.value}-{color:03d}-{j}"]
            vec = base + self.rng.normal(scale=cfg.feature_noise / np.sqrt(cfg.feature_dim), size=cfg.feature_dim)
            self.street_ids.append(feature_ref)
            self.street_vecs.append(vec)
            self.street_cats.append(cat)
        return GarmentDetection(
            detection_id=det_id,
            category=cat,
            box=box,
            mask=mask,
            pattern=None if pattern is None else PATTERNS[pattern],
            feature_ref=feature_ref,
            confidence=confidence,
        )

    def build_images(self, gt):
        cfg = self.cfg
        annotations = []
        for n in range(cfg.n_images):
            image_id = f"img-{n:06d}"
            n_people = 2 if self.rng.random() < cfg.p_two_persons else 1
            has_persons = self.rng.random() >= cfg.p_no_person
            persons, garments = [], []
            for slot in range(n_people):
                x0 = round(_PERSON_SLOTS[slot] + float(self.rng.uniform(0, 10)), 1)
                y0 = round(float(self.rng.uniform(5, 20)), 1)
                person = BoundingBox(x0, y0, round(x0 + float(self.rng.uniform(110, 125)), 1),
                                     round(y0 + float(self.rng.uniform(250, 270)), 1))
                outfit = OUTFITS[int(self.rng.integers(len(OUTFITS)))]
                z = int(self.rng.integers(cfg.n_colors))
                zp = int(self.rng.integers(len(PATTERNS)))
                worn = {}
                for cat in outfit:
                    det_id = f"g{len(garments)}"
                    color = self._garment_color(cat, z)
                    pattern = self._garment_pattern(cat, zp)
                    conf = round(float(self.rng.uniform(0.8, 1.0)), 4)
                    g = self._make_garment(image_id, det_id, cat, self._box_in(person, cat), color, pattern, conf)
                    garments.append(g)
                    worn[cat] = (g, color, pattern)
                if self.rng.random() < cfg.p_duplicate:
                    cat = outfit[int(self.rng.integers(len(outfit)))]
                    det_id = f"g{len(garments)}"
                    conf = round(float(self.rng.uniform(0.3, 0.7)), 4)
                    garments.append(self._make_garment(
                        image_id, det_id, cat, self._box_in(person, cat),
                        int(self.rng.integers(cfg.n_colors)), self._garment_pattern(cat, zp), conf,
                    ))
                if has_persons:
                    persons.append(person)
                    self._record_pairs(gt, worn)
            if self.rng.random() < cfg.p_distractor:
                cat = CATEGORIES[int(self.rng.integers(len(CATEGORIES)))]
                y0 = round(float(self.rng.uniform(20, 150)), 1)
                box = BoundingBox(_DISTRACTOR_X[0], y0, _DISTRACTOR_X[1], round(y0 + 60.0, 1))
                garments.append(self._make_garment(
                    image_id, f"g{len(garments)}", cat, box, int(self.rng.integers(cfg.n_colors)),
                    self._garment_pattern(cat, 0), round(float(self.rng.uniform(0.5, 1.0)), 4),
                ))
            annotations.append(StreetStyleAnnotation(image_id, IMAGE_WIDTH, IMAGE_HEIGHT, persons, garments))
        return annotations

    def _record_pairs(self, gt, worn):
        for kind in SCHEMA_PAIRS:
            if kind.top not in worn or kind.bottom not in worn:
                continue
            name = kind.name
            gt["pair_counts"][name] += 1
            (gt_top, c_top, p_top), (gt_bot, c_bot, p_bot) = worn[kind.top], worn[kind.bottom]
            if gt_top.mask is not None and gt_bot.mask is not None:
                gt["color_joint"][name][c_top][c_bot] += 1
            else:
                gt["color_skipped"][name] += 1
            if p_top is not None and p_bot is not None:
                gt["pattern_joint"][name][p_top][p_bot] += 1
            else:
                gt["pattern_skipped"][name] += 1
            if gt_top.feature_ref is not None and gt_bot.feature_ref is not None:
                gt["feature_pairs"][name] += 1
            else:
                gt["feature_skipped"][name] += 1

    # -- queries ------------------------------------------------------------

    def build_queries(self):
        cfg = self.cfg
        queries = []
        for _ in range(cfg.n_queries):
            kind = SCHEMA_PAIRS[int(self.rng.integers(len(SCHEMA_PAIRS)))]
            query_cat, target_cat = kind.top, kind.bottom
            if self.rng.random() < cfg.p_reverse_query:
                query_cat, target_cat = target_cat, query_cat
            color = int(self.rng.integers(cfg.n_colors))
            px = _jittered(self.rng, self.palettes_rgb[query_cat][color], 60, cfg.pixel_jitter)
            expected = (color - self.color_offset[query_cat] + self.color_offset[target_cat]) % cfg.n_colors
            queries.append({
                "query": {
                    "category": query_cat.value,
                    "target_category": target_cat.value,
                    "strategy": "color_cooccur",
                    "pixels_rgb": px.tolist(),
                    "top_k": 1,
                },
                "expected": {"query_color": color, "planted_color": expected},
            })
        return queries


def _empty_ground_truth(cfg):
    n, p = cfg.n_colors, len(PATTERNS)
    names = [k.name for k in SCHEMA_PAIRS]
    return {
        "pair_counts": {k: 0 for k in names},
        "color_joint": {k: [[0] * n for _ in range(n)] for k in names},
        "color_skipped": {k: 0 for k in names},
        "pattern_joint": {k: [[0] * p for _ in range(p)] for k in names},
        "pattern_skipped": {k: 0 for k in names},
        "feature_pairs": {k: 0 for k in names},
        "feature_skipped": {k: 0 for k in names},
    }


def planted_best_match(offsets, kind, n):
    """Planted partner index on the bottom side for each top index."""
    return [(i - offsets[kind.top.value] + offsets[kind.bottom.value]) % n for i in range(n)]


def generate(config: SyntheticConfig | None = None, **overrides) -> SyntheticCorpus:
    cfg = config or SyntheticConfig()
    if overrides:
        cfg = SyntheticConfig(**{**asdict(cfg), **overrides})
    b = _Builder(cfg)
    b.build_inventory()
    gt = _empty_ground_truth(cfg)
    annotations = b.build_images(gt)
    queries = b.build_queries()

    catalog = Catalog(b.items)
    gt.update({
        "config": asdict(cfg),
        "palettes_rgb": {c.value: b.palettes_rgb[c].tolist() for c in CATEGORIES},
        "palettes_lab": {c.value: b.palettes_lab[c].tolist() for c in CATEGORIES},
        "color_offsets": {c.value: b.color_offset[c] for c in CATEGORIES},
        "pattern_offsets": {c.value: b.pattern_offset[c] for c in CATEGORIES},
        "inventory_counts": {c.value: n for c, n in sorted(catalog.category_counts().items())},
        "n_images": cfg.n_images,
    })
    gt["color_best_match"] = {k.name: planted_best_match(gt["color_offsets"], k, cfg.n_colors) for k in SCHEMA_PAIRS}
    gt["pattern_best_match"] = {
        k.name: planted_best_match(gt["pattern_offsets"], k, len(PATTERNS)) for k in SCHEMA_PAIRS
    }
    street = FeatureStore(b.street_ids, np.array(b.street_vecs).reshape(-1, cfg.feature_dim), b.street_cats,
                          dim=cfg.feature_dim)
    inv_ids = [it.item_id for it in b.items]
    inventory = FeatureStore(inv_ids, np.array([b.inventory_vecs[i] for i in inv_ids]),
                             [it.category for it in b.items], dim=cfg.feature_dim)
    return SyntheticCorpus(
        config=cfg,
        annotations=annotations,
        catalog=catalog,
        pixels=PixelStore(b.detection_pixels, b.item_pixels),
        street_features=street,
        inventory_features=inventory,
        ground_truth=gt,
        queries=queries,
    )


def write_corpus(corpus: SyntheticCorpus, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_street_annotations(corpus.annotations, out / FILES["annotations"])
    save_inventory(corpus.catalog, out / FILES["inventory"])
    save_pixels(corpus.pixels, out / FILES["pixels"])
    save_features(corpus.street_features, out / FILES["street_features"])
    save_features(corpus.inventory_features, out / FILES["inventory_features"])
    (out / FILES["ground_truth"]).write_text(json.dumps(corpus.ground_truth, indent=1) + "\n", encoding="utf-8")
    with open(out / FILES["queries"], "w", encoding="utf-8", newline="\n") as fh:
        for q in corpus.queries:
            fh.write(json.dumps(q) + "\n")
    return {k: out / v for k, v in FILES.items()}
