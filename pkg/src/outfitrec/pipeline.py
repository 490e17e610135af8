"""Offline build steps shared by the command line and the service.

Every step reads its inputs from :class:`PipelineConfig` paths and writes
into the output directory under a fixed layout::

    palettes/<Category>.palette.jsonl
    catalog.binned.jsonl
    pairs.jsonl
    color/<Top>-<Bottom>.cooccur.jsonl
    pattern/<Top>-<Bottom>.cooccur.jsonl
    tables/<Top>-<Bottom>.table.jsonl
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import asdict, dataclass, fields, replace
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .association import associate, save_pairs
from .colorlab import DEFAULT_HUE_TOL, DEFAULT_MIN_CHROMA, build_palette, load_palette, save_palette
from .cooccur import build_color_matrix, build_pattern_matrix, load_matrix, save_matrix, sharded_build
from .errors import MissingArtifactError, ValidationError
from .features import load_features
from .ingest import (
    DEFAULT_MASK_MARGIN,
    Catalog,
    load_inventory,
    load_pixels,
    load_street_annotations,
    save_inventory,
)
from .metrics import (
    DetectionPrediction,
    GroundTruthBox,
    average_precision,
    classification_report,
    mask_metrics,
    mean_average_precision,
)
from .recommend import Artifacts
from .retrieval import SCORE_RULES, build_joint_table, load_joint_table, save_joint_table
from .synthetic import FILES
from .taxonomy import CATEGORIES, PATTERNS, SCHEMA_PAIRS

log = logging.getLogger(__name__)

CONFIG_FORMAT = "outfitrec/config"
_PATH_FIELDS = ("annotations", "inventory", "pixels", "street_features", "inventory_features")


@dataclass(frozen=True)
class PipelineConfig:
    output_dir: str = "."
    annotations: str | None = None
    inventory: str | None = None
    pixels: str | None = None
    street_features: str | None = None
    inventory_features: str | None = None
    palette_k: int = 130
    alpha: float = 1.0
    tau: float = 0.9
    retrieval_k: int = 5
    score_rule: str = "product"
    seed: int = 0
    max_palette_pixels: int | None = None
    mask_margin: float = DEFAULT_MASK_MARGIN
    n_shards: int = 4
    hue_tol: float = DEFAULT_HUE_TOL
    min_chroma: float = DEFAULT_MIN_CHROMA
    host: str = "127.0.0.1"
    port: int = 8080

    def __post_init__(self):
        def positive_int(name):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ValidationError(f"must be a positive integer, got {v!r}", field=name)

        for name in ("palette_k", "retrieval_k", "n_shards"):
            positive_int(name)
        if self.max_palette_pixels is not None:
            positive_int("max_palette_pixels")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError(f"must be a non-negative integer, got {self.seed!r}", field="seed")
        if not (isinstance(self.alpha, (int, float)) and 0 <= self.alpha < float("inf")):
            raise ValidationError(f"must be a finite non-negative number, got {self.alpha!r}", field="alpha")
        if not (isinstance(self.tau, (int, float)) and 0 < self.tau <= 1):
            raise ValidationError(f"must lie in (0, 1], got {self.tau!r}", field="tau")
        if self.score_rule not in SCORE_RULES:
            raise ValidationError(f"must be one of {SCORE_RULES}", field="score_rule")
        if not (isinstance(self.mask_margin, (int, float)) and self.mask_margin >= 0):
            raise ValidationError(f"must be non-negative, got {self.mask_margin!r}", field="mask_margin")
        if not (isinstance(self.hue_tol, (int, float)) and 0 < self.hue_tol <= 180):
            raise ValidationError(f"must lie in (0, 180], got {self.hue_tol!r}", field="hue_tol")
        if not (isinstance(self.min_chroma, (int, float)) and self.min_chroma >= 0):
            raise ValidationError(f"must be non-negative, got {self.min_chroma!r}", field="min_chroma")
        if isinstance(self.port, bool) or not isinstance(self.port, int) or not 0 <= self.port <= 65535:
            raise ValidationError(f"must be a TCP port, got {self.port!r}", field="port")

    # -- file form ----------------------------------------------------------

    def to_dict(self):
        return {"format": CONFIG_FORMAT, "version": 1, **asdict(self)}

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        data = dict(data)
        if data.pop("format", CONFIG_FORMAT) != CONFIG_FORMAT:
            raise ValidationError("not a pipeline config", field="format")
        data.pop("version", None)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError("unknown config key", field=unknown[0])
        return cls(**data)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc.msg}", line=exc.lineno) from None
        return cls.from_dict(data)

    def override(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # -- paths --------------------------------------------------------------

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def input_path(self, name) -> Path:
        """Configured input path, defaulting to the generator's file name."""
        value = getattr(self, name)
        return Path(value) if value is not None else self.out / FILES[name]

    def palette_path(self, category):
        return self.out / "palettes" / f"{category.value}.palette.jsonl"

    def matrix_path(self, kind, feature):
        return self.out / feature / f"{kind.name}.cooccur.jsonl"

    def table_path(self, kind):
        return self.out / "tables" / f"{kind.name}.table.jsonl"

    @property
    def binned_catalog_path(self):
        return self.out / "catalog.binned.jsonl"

    @property
    def pairs_path(self):
        return self.out / "pairs.jsonl"


def _require_file(path: Path, what, hint):
    if not path.is_file():
        raise MissingArtifactError(f"{what} ({path})", hint)
    return path


def _annotations(cfg):
    path = _require_file(cfg.input_path("annotations"), "annotations", "run generate-synthetic or pass --annotations")
    return load_street_annotations(path, cfg.mask_margin)


def _pixels(cfg):
    path = _require_file(cfg.input_path("pixels"), "pixel file", "run generate-synthetic or pass --pixels")
    return load_pixels(path)


def _pairs(cfg, annotations):
    return [p for a in annotations for p in associate(a, cfg.tau)]


# -- palettes ----------------------------------------------------------------


def build_palettes(cfg: PipelineConfig):
    """Fit one palette per category and bin the inventory with it.

    Returns a report dict. Categories with no masked pixels get a warning
    and no palette file.
    """
    annotations = _annotations(cfg)
    pixels = _pixels(cfg)
    per_cat = {c: [] for c in CATEGORIES}
    for a in annotations:
        for g in a.garments:
            if g.mask is None:
                continue
            lab = pixels.get((a.image_id, g.detection_id))
            if lab is not None:
                per_cat[g.category].append(lab)

    (cfg.out / "palettes").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    palettes, report = {}, {}
    for cat in CATEGORIES:
        if not per_cat[cat]:
            warnings.warn(f"no masked pixels for {cat.value}; palette not built", UserWarning, stacklevel=2)
            report[cat.value] = {"pixels": 0, "built": False}
            continue
        X = np.concatenate(per_cat[cat])
        if cfg.max_palette_pixels is not None and len(X) > cfg.max_palette_pixels:
            X = X[np.sort(rng.choice(len(X), size=cfg.max_palette_pixels, replace=False))]
        pal = build_palette(X, k=cfg.palette_k, seed=cfg.seed, category=cat)
        save_palette(pal, cfg.palette_path(cat))
        palettes[cat] = pal
        report[cat.value] = {"pixels": int(len(X)), "built": True, "k": pal.k, "n_iter": pal.n_iter,
                             "inertia": pal.inertia}

    inventory_path = cfg.input_path("inventory")
    if inventory_path.is_file():
        catalog = load_inventory(inventory_path)
        binned, n_binned = [], 0
        for item in catalog:
            lab = pixels.get(item.item_id)
            pal = palettes.get(item.category)
            if lab is None or pal is None:
                binned.append(item)
                continue
            labels = pal.assign(lab)
            b = int(np.bincount(labels, minlength=pal.k).argmax())
            dominant_lab = [round(float(v), 6) for v in lab[labels == b].mean(axis=0)]
            binned.append(replace(item, dominant_bin=b, metadata={**item.metadata, "dominant_lab": dominant_lab}))
            n_binned += 1
        sizes = {p.k for p in palettes.values()}
        save_inventory(Catalog(binned), cfg.binned_catalog_path, sizes.pop() if len(sizes) == 1 else None)
        report["inventory"] = {"items": len(binned), "binned": n_binned}
    return report


def load_palettes(cfg: PipelineConfig, required=False):
    palettes = {}
    for cat in CATEGORIES:
        path = cfg.palette_path(cat)
        if path.is_file():
            palettes[cat] = load_palette(path)
    if required and not palettes:
        raise MissingArtifactError(f"palettes in {cfg.out / 'palettes'}", "run build-palettes first")
    return palettes


# -- co-occurrence -----------------------------------------------------------


def build_cooccur(cfg: PipelineConfig, kind="color"):
    """Build the six matrices of one feature kind; returns the skip report."""
    if kind not in ("color", "pattern"):
        raise ValidationError("kind must be 'color' or 'pattern'", field="kind")
    palettes = load_palettes(cfg, required=True) if kind == "color" else {}
    annotations = _annotations(cfg)
    pixels = _pixels(cfg) if kind == "color" else None
    pairs = _pairs(cfg, annotations)
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_pairs(pairs, cfg.pairs_path)
    (cfg.out / kind).mkdir(parents=True, exist_ok=True)

    report = {}
    for pk in SCHEMA_PAIRS:
        subset = [p for p in pairs if p.kind == pk]
        if kind == "color":
            if pk.top not in palettes or pk.bottom not in palettes:
                warnings.warn(f"palettes missing for {pk.name}; matrix not built", UserWarning, stacklevel=2)
                report[pk.name] = {"pairs": len(subset), "built": False}
                continue
            build = partial(build_color_matrix, pixels=pixels, top_palette=palettes[pk.top],
                            bottom_palette=palettes[pk.bottom], alpha=cfg.alpha)
        else:
            build = partial(build_pattern_matrix, kind=pk, alpha=cfg.alpha)
        m = sharded_build(build, subset, n_shards=cfg.n_shards)
        save_matrix(m, cfg.matrix_path(pk, kind))
        report[pk.name] = {"pairs": len(subset), "counted": m.total, "skipped": m.n_skipped_, "built": True}
    return report


# -- joint tables ------------------------------------------------------------


def build_joint_tables(cfg: PipelineConfig):
    street_path = _require_file(cfg.input_path("street_features"), "street-style feature store",
                                "pass --street-features")
    inv_path = _require_file(cfg.input_path("inventory_features"), "inventory feature store",
                             "pass --inventory-features")
    street, inventory = load_features(street_path), load_features(inv_path)
    pairs = _pairs(cfg, _annotations(cfg))
    (cfg.out / "tables").mkdir(parents=True, exist_ok=True)
    report = {}
    for pk in SCHEMA_PAIRS:
        subset = [p for p in pairs if p.kind == pk]
        table = build_joint_table(subset, street, inventory, pk, cfg.retrieval_k, cfg.score_rule)
        save_joint_table(table, cfg.table_path(pk))
        report[pk.name] = {"pairs": table.n_pairs, "skipped": table.n_skipped, "entries": len(table)}
    return report


# -- loading -----------------------------------------------------------------


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def load_artifacts(cfg: PipelineConfig) -> Artifacts:
    """Load whatever has been built; ``metadata["missing"]`` lists the rest."""
    files, missing = {}, []
    art = Artifacts()

    def take(name, path, loader):
        if Path(path).is_file():
            files[name] = _sha256(path)
            return loader(path)
        missing.append(name)
        return None

    catalog_path = cfg.binned_catalog_path
    if not catalog_path.is_file():
        catalog_path = cfg.input_path("inventory")
    art.catalog = take("catalog", catalog_path, load_inventory)
    for cat in CATEGORIES:
        pal = take(f"palette/{cat.value}", cfg.palette_path(cat), load_palette)
        if pal is not None:
            art.palettes[cat] = pal
    for pk in SCHEMA_PAIRS:
        for feature, target in (("color", art.color_matrices), ("pattern", art.pattern_matrices)):
            m = take(f"{feature}/{pk.name}", cfg.matrix_path(pk, feature), load_matrix)
            if m is not None:
                target[pk] = m
        t = take(f"table/{pk.name}", cfg.table_path(pk), load_joint_table)
        if t is not None:
            art.joint_tables[pk] = t
    art.inventory_features = take("inventory_features", cfg.input_path("inventory_features"), load_features)
    seeds = sorted({p.seed for p in art.palettes.values()})
    art.metadata = {
        "version": __version__,
        "output_dir": str(cfg.out),
        "palette_seeds": seeds,
        "files": files,
        "missing": missing,
    }
    return art


# -- evaluation --------------------------------------------------------------


def _label_map(annotation):
    """Category label map (0 = background) painted from garment masks."""
    out = np.zeros((annotation.height, annotation.width), dtype=np.int64)
    for g in sorted(annotation.garments, key=lambda g: (g.confidence, g.detection_id)):
        if g.mask is not None:
            out[g.mask.decode()] = CATEGORIES.index(g.category) + 1
    return out


def _index(annotations):
    out = {}
    for a in annotations:
        if a.image_id in out:
            raise ValidationError(f"duplicate image id {a.image_id!r}", field="image_id")
        out[a.image_id] = a
    return out


def _f(v):
    return None if v is None or v != v else float(v)


def run_eval(task, predictions, ground_truth, iou_threshold=0.5, mask_margin=DEFAULT_MASK_MARGIN):
    """Evaluate prediction annotations against ground-truth annotations.

    Both inputs are annotation files. Images are matched by id; images
    missing from the predictions count as empty predictions.
    """
    preds = _index(load_street_annotations(predictions, mask_margin))
    truth = _index(load_street_annotations(ground_truth, mask_margin))
    image_ids = sorted(truth)

    if task == "segmentation":
        classes = ("background",) + tuple(c.value for c in CATEGORIES)
        pm, tm = [], []
        for i in image_ids:
            t = truth[i]
            p = preds.get(i)
            tm.append(_label_map(t))
            pm.append(np.zeros_like(tm[-1]) if p is None else _label_map(p))
            if p is not None and (p.width, p.height) != (t.width, t.height):
                raise ValidationError(f"image {i!r} has different sizes in predictions and ground truth")
        rep = mask_metrics(pm, tm, classes)
        rows = [{"class": c, "iou": _f(rep.iou[c]), "pixel_accuracy": _f(rep.pixel_accuracy[c])}
                for c in classes[1:]]
        return {"task": task, "rows": rows,
                "mean": {"iou": _f(_mean(r["iou"] for r in rows)),
                         "pixel_accuracy": _f(_mean(r["pixel_accuracy"] for r in rows))}}

    if task == "detection":
        dets = [DetectionPrediction(a.image_id, g.category, g.box, g.confidence)
                for i in sorted(preds) for a in [preds[i]] for g in sorted(a.garments, key=lambda g: g.detection_id)]
        gts = [GroundTruthBox(i, g.category, g.box) for i in image_ids for g in truth[i].garments]
        aps = {c: average_precision(dets, gts, c, iou_threshold) for c in CATEGORIES}
        rows = [{"class": c.value, "ap": aps[c]} for c in CATEGORIES]
        return {"task": task, "iou_threshold": iou_threshold, "rows": rows,
                "mean": {"map": mean_average_precision(aps)}}

    if task == "classification":
        predicted, true = [], []
        for i in image_ids:
            p = preds.get(i)
            by_id = {} if p is None else {g.detection_id: g for g in p.garments}
            for g in truth[i].garments:
                if g.pattern is None:
                    continue
                pg = by_id.get(g.detection_id)
                if pg is None or pg.pattern is None:
                    raise ValidationError(f"no predicted pattern for {i}/{g.detection_id}", field="pattern")
                predicted.append(pg.pattern)
                true.append(g.pattern)
        rep = classification_report(predicted, true, PATTERNS)
        rows = [{"class": c.value, "accuracy": _f(rep.per_class_accuracy[c]),
                 "support": int(rep.confusion[k].sum())} for k, c in enumerate(PATTERNS)]
        return {"task": task, "rows": rows, "confusion": rep.confusion.tolist(),
                "mean": {"accuracy": _f(rep.mean_accuracy), "overall_accuracy": _f(rep.overall_accuracy)}}

    raise ValidationError("task must be segmentation, detection or classification", field="task")


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None
