"""Colour, pattern and retrieval-based outfit recommendation."""

from .colorlab import Palette, PaletteKMeans, build_palette, delta_e, lab_to_lch, srgb_to_lab
from .cooccur import CooccurrenceMatrix, Domain, build_color_matrix, build_pattern_matrix
from .association import AssociationPair, GarmentAssociator, associate
from .ingest import BoundingBox, Catalog, GarmentDetection, InventoryItem, PixelMask, StreetStyleAnnotation
from .features import FeatureStore
from .retrieval import JointTable, RetrievalRecommender, build_joint_table, knn
from .recommend import Artifacts, Query, Recommendation, Strategy, recommend
from .taxonomy import GarmentCategory, PairKind, PatternClass

__version__ = "0.1.0"

__all__ = [
    "Artifacts", "AssociationPair", "BoundingBox", "Catalog", "CooccurrenceMatrix", "Domain",
    "FeatureStore", "GarmentAssociator", "GarmentCategory", "GarmentDetection", "InventoryItem",
    "JointTable", "PairKind", "Palette", "PaletteKMeans", "PatternClass", "PixelMask", "Query",
    "Recommendation", "RetrievalRecommender", "StreetStyleAnnotation", "Strategy", "associate",
    "build_color_matrix", "build_joint_table", "build_palette", "build_pattern_matrix", "delta_e",
    "knn", "lab_to_lch", "recommend", "srgb_to_lab",
]
