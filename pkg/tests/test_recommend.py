import json

import numpy as np
import pytest

from outfitrec.colorlab import Palette, lch_to_lab
from outfitrec.cooccur import CooccurrenceMatrix, Domain
from outfitrec.errors import DomainMismatchError, MissingArtifactError, QueryError, UndefinedHueError
from outfitrec.features import FeatureStore
from outfitrec.ingest import Catalog, InventoryItem
from outfitrec.recommend import Artifacts, Query, Strategy, dumps_recommendation, recommend
from outfitrec.retrieval import JointTable
from outfitrec.taxonomy import PATTERNS, GarmentCategory, PairKind, PatternClass

C = GarmentCategory
KIND = PairKind(C.TOPS_BLOUSES, C.SKIRTS)

TOP_LCH = np.array([[60.0, 50, 30], [60, 50, 150], [60, 2, 0]])
SKIRT_LCH = np.array([[50.0, 40, 210], [50, 40, 150], [50, 40, 270], [50, 40, 215]])


def artifacts():
    tops = Palette(lch_to_lab(TOP_LCH), category=C.TOPS_BLOUSES)
    skirts = Palette(lch_to_lab(SKIRT_LCH), category=C.SKIRTS)
    color = np.zeros((3, 4), int)
    color[0] = [0, 5, 1, 0]
    color[1] = [2, 0, 0, 0]
    pattern = np.zeros((10, 10), int)
    dots, plain, stripes = (PATTERNS.index(p) for p in (PatternClass.DOTS, PatternClass.PLAIN, PatternClass.STRIPES))
    pattern[dots, plain] = 4
    pattern[dots, stripes] = 2
    sk = skirts.centroids
    items = [
        InventoryItem("S-b", C.SKIRTS, PatternClass.PLAIN, 1, metadata={"dominant_lab": (sk[1] - [5, 0, 0]).tolist()}),
        InventoryItem("S-a", C.SKIRTS, PatternClass.STRIPES, 1, metadata={"dominant_lab": sk[1].tolist()}),
        InventoryItem("S-c", C.SKIRTS, PatternClass.PLAIN, 2),
        InventoryItem("S-d", C.SKIRTS, PatternClass.FLORAL, 0),
        InventoryItem("S-e", C.SKIRTS, None, None),
        InventoryItem("S-f", C.SKIRTS, PatternClass.DOTS, 3),
        InventoryItem("T-a", C.TOPS_BLOUSES, PatternClass.DOTS, 0),
        InventoryItem("T-b", C.TOPS_BLOUSES, PatternClass.PLAIN, 1),
    ]
    feats = FeatureStore(["T-a", "T-b", "S-a", "S-b"], np.array([[1.0, 0], [0, 1], [1, 0], [0, 1]]),
                         [C.TOPS_BLOUSES, C.TOPS_BLOUSES, C.SKIRTS, C.SKIRTS])
    table = JointTable(KIND, 5, "product", {("T-a", "S-b"): 2.0, ("T-a", "S-a"): 1.0, ("T-b", "S-a"): 4.0})
    return Artifacts(
        catalog=Catalog(items),
        palettes={C.TOPS_BLOUSES: tops, C.SKIRTS: skirts},
        color_matrices={KIND: CooccurrenceMatrix.from_counts(
            color, Domain("palette", 3, C.TOPS_BLOUSES), Domain("palette", 4, C.SKIRTS), 1.0, KIND)},
        pattern_matrices={KIND: CooccurrenceMatrix.from_counts(
            pattern, Domain.patterns(C.TOPS_BLOUSES), Domain.patterns(C.SKIRTS), 1.0, KIND)},
        joint_tables={KIND: table},
        inventory_features=feats,
    )


def px(lch):
    return lch_to_lab(np.tile(lch, (4, 1))).tolist()


def q(**kw):
    base = {"category": "TopsBlouses", "target_category": "Skirts"}
    return Query.from_dict({**base, **kw})


# -- colour co-occurrence ----------------------------------------------------


def test_color_cooccur_ranking():
    rec = recommend(q(strategy="color_cooccur", pixels_lab=px(TOP_LCH[0]), top_k=2), artifacts())
    # bin 1 first (count 5) with S-a closer than S-b, then S-c in bin 2
    assert rec.item_ids == ["S-a", "S-b", "S-c"]
    assert rec.explanation["query_bin"] == 0 and rec.explanation["matched_bins"] == [1, 2]
    assert rec.explanation["unbinned_items"] == 1
    assert rec.items[0].score == pytest.approx(6 / 10)
    assert rec.items[0].explanation["bin_rank"] == 0


def test_color_cooccur_limit_and_top1():
    rec = recommend(q(strategy="color_cooccur", pixels_lab=px(TOP_LCH[0]), top_k=1, limit=1), artifacts())
    assert rec.item_ids == ["S-a"]


def test_color_cooccur_transposed():
    base = {"category": "Skirts", "target_category": "TopsBlouses", "strategy": "color_cooccur"}
    rec = recommend(Query.from_dict({**base, "pixels_lab": px(SKIRT_LCH[0]), "top_k": 1}), artifacts())
    # skirt bin 0 co-occurs only with top bin 1
    assert rec.explanation["transposed"] and rec.explanation["matched_bins"] == [1]
    assert rec.item_ids == ["T-b"]


def test_color_cooccur_empty_result_has_note():
    art = artifacts()
    art.catalog = Catalog([])
    rec = recommend(q(strategy="color_cooccur", pixels_lab=px(TOP_LCH[0])), art)
    assert rec.items == [] and "note" in rec.explanation


def test_palette_shape_mismatch():
    art = artifacts()
    art.palettes[C.SKIRTS] = Palette(lch_to_lab(SKIRT_LCH[:3]), category=C.SKIRTS)
    with pytest.raises(DomainMismatchError):
        recommend(q(strategy="color_cooccur", pixels_lab=px(TOP_LCH[0])), art)


def test_missing_artifacts():
    for attr in ("color_matrices", "palettes"):
        art = artifacts()
        setattr(art, attr, {})
        with pytest.raises(MissingArtifactError):
            recommend(q(strategy="color_cooccur", pixels_lab=px(TOP_LCH[0])), art)
    art = artifacts()
    art.inventory_features = None
    with pytest.raises(MissingArtifactError):
        recommend(q(strategy="retrieval_table", feature=[1, 0]), art)


# -- colour wheel ------------------------------------------------------------


def test_complementary():
    rec = recommend(q(strategy="color_wheel", mode="complementary", pixels_lab=px(TOP_LCH[0])), artifacts())
    assert rec.explanation["target_hues"] == [pytest.approx(210)]
    assert rec.explanation["matched_bins"] == [0, 3]
    assert rec.item_ids == ["S-d", "S-f"]
    assert rec.items[1].explanation["hue_distance"] == pytest.approx(5, abs=1e-6)


def test_triadic():
    rec = recommend(q(strategy="color_wheel", mode="triadic", pixels_lab=px(TOP_LCH[0])), artifacts())
    assert rec.explanation["target_hues"] == [pytest.approx(150), pytest.approx(270)]
    assert rec.item_ids == ["S-a", "S-b", "S-c"]


def test_gray_query_has_no_hue():
    with pytest.raises(UndefinedHueError):
        recommend(q(strategy="color_wheel", mode="complementary", pixels_lab=px(TOP_LCH[2])), artifacts())


# -- pattern -----------------------------------------------------------------


def test_dots_to_plain():
    rec = recommend(q(strategy="pattern_cooccur", pattern="Dots", top_k=1), artifacts())
    assert rec.explanation["matched_patterns"] == ["Plain"]
    assert rec.item_ids == ["S-b", "S-c"]
    rec = recommend(q(strategy="pattern_cooccur", pattern="Dots", top_k=2), artifacts())
    assert rec.item_ids == ["S-b", "S-c", "S-a"]
    assert rec.explanation["unlabeled_items"] == 1


def test_pattern_needs_label_without_classifier():
    with pytest.raises(QueryError):
        recommend(q(strategy="pattern_cooccur", pixels_lab=px(TOP_LCH[0])), artifacts())

    class Fixed:
        def classify(self, pixels_lab):
            return "Dots", 0.7

    rec = recommend(q(strategy="pattern_cooccur", pixels_lab=px(TOP_LCH[0]), top_k=1), artifacts(), Fixed())
    assert rec.explanation["query_pattern_confidence"] == 0.7 and rec.item_ids == ["S-b", "S-c"]


# -- retrieval ---------------------------------------------------------------


def test_retrieval_table():
    rec = recommend(q(strategy="retrieval_table", feature=[1, 0], retrieve_m=1), artifacts())
    assert [(i.item_id, i.score) for i in rec.items] == [("S-b", 2.0), ("S-a", 1.0)]
    rec = recommend(q(strategy="retrieval_table", feature=[1, 1], retrieve_m=2), artifacts())
    assert [(i.item_id, i.score) for i in rec.items] == [("S-a", 5.0), ("S-b", 2.0)]


def test_retrieval_transposed():
    base = {"category": "Skirts", "target_category": "TopsBlouses", "strategy": "retrieval_table"}
    rec = recommend(Query.from_dict({**base, "feature": [1, 0], "retrieve_m": 1}), artifacts())
    assert rec.explanation["query_side"] == "bottom"
    assert [(i.item_id, i.score) for i in rec.items] == [("T-b", 4.0), ("T-a", 1.0)]


# -- query parsing -----------------------------------------------------------


@pytest.mark.parametrize(
    "extra,field",
    [
        ({"strategy": "nope"}, "strategy"),
        ({"strategy": "color_cooccur"}, "pixels_lab"),
        ({"strategy": "color_wheel", "pixels_lab": [[50, 0, 0]]}, "mode"),
        ({"strategy": "retrieval_table"}, "feature"),
        ({"strategy": "color_cooccur", "pixels_lab": [[150, 0, 0]]}, "pixels_lab"),
        ({"strategy": "color_cooccur", "pixels_rgb": [[300, 0, 0]]}, "pixels_rgb"),
        ({"strategy": "color_cooccur", "pixels_lab": [[50, 0, 0]], "limit": 0}, "limit"),
        ({"strategy": "color_cooccur", "pixels_lab": [[50, 0, 0]], "top_k": True}, "top_k"),
        ({"strategy": "color_cooccur", "pixels_lab": [[50, 0, 0]], "hue_tol": 200}, "hue_tol"),
        ({"strategy": "pattern_cooccur", "pattern": "Tartan"}, "pattern"),
        ({"strategy": "retrieval_table", "feature": []}, "feature"),
        ({"strategy": "retrieval_table", "feature": [1], "colour": 1}, "colour"),
        ({"strategy": "retrieval_table", "feature": [1], "target_category": "Dresses"}, "target_category"),
        ({"strategy": "retrieval_table", "feature": [1], "category": "Hats"}, "category"),
    ],
)
def test_query_errors_name_the_field(extra, field):
    with pytest.raises(QueryError) as info:
        q(**extra)
    assert info.value.field == field


def test_query_requires_keys_and_round_trips():
    with pytest.raises(QueryError) as info:
        Query.from_dict({"category": "Skirts", "strategy": "color_cooccur"})
    assert info.value.field == "target_category"
    with pytest.raises(QueryError):
        Query.from_dict([1, 2])
    query = q(strategy="color_wheel", mode="triadic", pixels_rgb=[[200, 10, 10]], limit=3)
    assert Query.from_dict(query.to_dict()).to_dict() == query.to_dict()
    assert query.strategy is Strategy.COLOR_WHEEL


def test_dumps_is_canonical_json():
    rec = recommend(q(strategy="pattern_cooccur", pattern="Dots"), artifacts())
    text = dumps_recommendation(rec)
    assert json.loads(text)["items"][0]["item_id"] == "S-b"
    assert dumps_recommendation(recommend(q(strategy="pattern_cooccur", pattern="Dots"), artifacts())) == text
