"""Exit criteria for the build. Each test prints one PASS/FAIL line."""

import io
import json
import threading
import time
from http.client import HTTPConnection

import numpy as np
import pytest

from outfitrec import synthetic
from outfitrec.association import AssociationPair, count_pairs, associate
from outfitrec.cli import main
from outfitrec.colorlab import PaletteKMeans, build_palette, delta_e, lab_to_lch, lch_to_lab, save_palette, srgb_to_lab
from outfitrec.cooccur import CooccurrenceMatrix, Domain, build_pattern_matrix, sharded_build
from outfitrec.features import FeatureStore
from outfitrec.ingest import BoundingBox, GarmentDetection
from outfitrec.metrics import (
    DetectionPrediction,
    GroundTruthBox,
    average_precision,
    box_iou,
    mask_metrics,
    nms,
    segmentation_counts,
)
from outfitrec.pipeline import PipelineConfig, load_artifacts
from outfitrec.retrieval import build_joint_table, knn
from outfitrec.service import make_server
from outfitrec.taxonomy import PATTERNS, SCHEMA_PAIRS, GarmentCategory, PairKind

pytestmark = pytest.mark.acceptance

C = GarmentCategory

# skimage.color.rgb2lab (D65, 2 degree observer), computed outside the package
SKIMAGE_LAB = {
    (255, 0, 0): (53.240587944, 80.092308226, 67.202751044),
    (0, 255, 0): (87.735099488, -86.183029744, 83.179703175),
    (0, 0, 255): (32.295672565, 79.185590912, -107.85730021),
}


def _gray_lightness(v):
    """CIE lightness of an sRGB gray, straight from the textbook formulas."""
    c = v / 255
    y = c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4
    return 116 * y ** (1 / 3) - 16 if y > (6 / 29) ** 3 else y * (29 / 3) ** 3


def _cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], out=out, err=err)
    return code, out.getvalue(), err.getvalue()


# -- colour science ----------------------------------------------------------


def test_color_science(report):
    t0 = time.perf_counter()
    white = np.max(np.abs(srgb_to_lab((255, 255, 255)) - (100, 0, 0)))
    black = np.max(np.abs(srgb_to_lab((0, 0, 0))))
    grays = np.arange(256)
    lab = srgb_to_lab(np.repeat(grays[:, None], 3, axis=1))
    gray = max(np.max(np.abs(lab[:, 0] - [_gray_lightness(v) for v in grays])), np.max(np.abs(lab[:, 1:])))
    primaries = max(np.max(np.abs(srgb_to_lab(rgb) - ref)) for rgb, ref in SKIMAGE_LAB.items())
    rng = np.random.default_rng(0)
    samples = np.column_stack([rng.uniform(0, 100, 10_000), rng.uniform(-128, 128, (10_000, 2))])
    round_trip = np.max(np.abs(lch_to_lab(lab_to_lch(samples)) - samples))
    elapsed = time.perf_counter() - t0
    ok = white < 1e-3 and black < 1e-3 and gray < 1e-3 and primaries < 1e-2 and round_trip < 1e-6 and elapsed < 1
    report("color science", ok, f"white {white:.1e}, black {black:.1e}, gray {gray:.1e}, primaries {primaries:.1e}, "
                                f"LCh round trip {round_trip:.1e}, {elapsed:.2f}s")
    assert ok


# -- k-means -----------------------------------------------------------------


def test_kmeans(report, tmp_path):
    t0 = time.perf_counter()
    monotone = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        X = rng.uniform([0, -80, -80], [100, 80, 80], (int(rng.integers(50, 400)), 3))
        km = PaletteKMeans(int(rng.integers(2, 20)), random_state=seed).fit(X)
        monotone += bool(np.all(np.diff(km.inertia_history_) <= 0))

    rng = np.random.default_rng(130)
    _, planted = synthetic.planted_palette(rng, 130, 8)
    planted = np.asarray(planted)
    X = planted[np.arange(10_000) % 130] + rng.normal(0, 0.5, (10_000, 3))
    pal = build_palette(X, k=130, seed=0)
    worst = float(np.max(delta_e(planted[:, None, :], pal.centroids[None, :, :]).min(axis=1)))

    paths = []
    for run in range(2):
        p = tmp_path / f"run{run}.jsonl"
        save_palette(build_palette(X, k=130, seed=7), p)
        paths.append(p.read_bytes())
    identical = paths[0] == paths[1]
    elapsed = time.perf_counter() - t0
    ok = monotone == 100 and worst <= 2.0 and identical and elapsed < 30
    report("k-means", ok, f"monotone {monotone}/100, 130-cluster worst dE {worst:.3f}, "
                          f"byte-identical {identical}, {elapsed:.1f}s")
    assert ok


# -- association -------------------------------------------------------------


def test_association_schema(report):
    t0 = time.perf_counter()
    forbidden = (C.TOPS_BLOUSES, C.DRESSES)
    in_schema, no_tb_dress = True, True
    for seed in range(20):
        corpus = synthetic.generate(n_images=50, n_queries=0, seed=100 + seed)
        for a in corpus.annotations:
            for p in associate(a):
                in_schema &= p.kind in SCHEMA_PAIRS
                no_tb_dress &= (p.top.category, p.bottom.category) != forbidden
    corpus = synthetic.generate(n_images=1000, n_queries=0, seed=0)
    counts = count_pairs([p for a in corpus.annotations for p in associate(a)])
    exact = {k.name: n for k, n in counts.items()} == corpus.ground_truth["pair_counts"]
    no_tb_dress &= PairKind(*forbidden) not in counts
    elapsed = time.perf_counter() - t0
    ok = in_schema and no_tb_dress and exact and elapsed < 10
    report("association schema", ok, f"kinds in schema {in_schema}, TopsBlouses x Dresses absent {no_tb_dress}, "
                                     f"1K planted counts exact {exact}, {elapsed:.1f}s")
    assert ok


# -- co-occurrence -----------------------------------------------------------


def _random_pairs(rng, n):
    box = BoundingBox(0, 0, 1, 1)
    kind = PairKind(C.TOPS_BLOUSES, C.SKIRTS)
    out = []
    for i in range(n):
        pt = PATTERNS[rng.integers(10)] if rng.random() > 0.1 else None
        pb = PATTERNS[rng.integers(10)] if rng.random() > 0.1 else None
        out.append(AssociationPair(f"im{i}", 0, kind, GarmentDetection("t", C.TOPS_BLOUSES, box, pattern=pt),
                                   GarmentDetection("b", C.SKIRTS, box, pattern=pb)))
    return out


def test_cooccurrence(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    conserved, shards_equal, shape_ok = 0, True, True
    for _ in range(100):
        pairs = _random_pairs(rng, int(rng.integers(0, 300)))
        m = build_pattern_matrix(pairs)
        conserved += m.total + m.n_skipped_ == len(pairs)
        shape_ok &= m.shape == (10, 10)
        shards_equal &= sharded_build(build_pattern_matrix, pairs, n_shards=4) == m

    counts = rng.integers(0, 5, (1000, 40)) * (rng.random((1000, 40)) < 0.3)
    big = CooccurrenceMatrix.from_counts(counts, Domain("palette", 1000), Domain("palette", 40), 1.0)
    agree = 0
    for r in range(1000):
        row = big.row_distribution(r)
        best = 0
        for j in range(1, len(row)):
            if row[j] > row[best]:
                best = j
        agree += big.best_match(r) == best
    elapsed = time.perf_counter() - t0
    ok = conserved == 100 and shards_equal and shape_ok and agree == 1000 and elapsed < 10
    report("co-occurrence", ok, f"conserved {conserved}/100, 4-shard equal {shards_equal}, 10x10 {shape_ok}, "
                                f"best_match vs scan {agree}/1000, {elapsed:.1f}s")
    assert ok


# -- retrieval ---------------------------------------------------------------


def test_retrieval(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    vecs = rng.normal(size=(1000, 128))
    ids = [f"v{i:04d}" for i in range(1000)]
    store = FeatureStore(ids, vecs, [C.SKIRTS] * 1000)
    norms = np.linalg.norm(vecs, axis=1)
    mismatches = 0
    for q in rng.normal(size=(200, 128)):
        sims = (vecs @ q) / (norms * np.linalg.norm(q))
        oracle = [ids[i] for i in sorted(range(1000), key=lambda i: (-sims[i], ids[i]))][:10]
        mismatches += [h.item_id for h in knn(store, q, C.SKIRTS, 10)] != oracle

    from test_retrieval import HAND_TABLE, inventory, pair, three_pairs

    pairs, street = three_pairs()
    table = build_joint_table(pairs, street, inventory(), k_retrieve=2)
    hand_err = max(abs(table.entries.get(k, 0.0) - v) for k, v in HAND_TABLE.items())
    hand_ok = set(table.entries) == set(HAND_TABLE) and hand_err <= 1e-9

    inv = FeatureStore([f"i{j:02d}" for j in range(40)], rng.normal(size=(40, 16)),
                       [C.TOPS_BLOUSES] * 20 + [C.SKIRTS] * 20)
    rows, many = {}, []
    for i in range(60):
        many.append(pair(i, rng.normal(size=16), rng.normal(size=16), rows))
    street2 = FeatureStore(list(rows), np.array(list(rows.values())))
    whole = build_joint_table(many, street2, inv, k_retrieve=4)
    merged = build_joint_table(many[:25], street2, inv, k_retrieve=4).merge(
        build_joint_table(many[25:], street2, inv, k_retrieve=4))
    additive = set(whole.entries) == set(merged.entries) and all(
        abs(whole.entries[k] - merged.entries[k]) <= 1e-9 for k in whole.entries)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and hand_ok and additive and elapsed < 20
    report("retrieval", ok, f"kNN mismatches {mismatches}/200, hand table err {hand_err:.1e}, "
                            f"additive {additive}, {elapsed:.1f}s")
    assert ok


# -- metrics -----------------------------------------------------------------


def _exhaustive_ap(is_tp, n_gt):
    """Enumerate every PR point; integrate the max precision at recall >= r."""
    pts = [(sum(is_tp[: i + 1]) / n_gt, sum(is_tp[: i + 1]) / (i + 1)) for i in range(len(is_tp))]
    levels = sorted({r for r, _ in pts})
    return sum((r - prev) * max(p for rr, p in pts if rr >= r) for prev, r in zip([0.0] + levels, levels))


def test_metrics(report):
    t0 = time.perf_counter()
    iou_ok = box_iou(BoundingBox(0, 0, 2, 1), BoundingBox(1, 0, 3, 1)) == 1 / 3

    truth = np.zeros((4, 4), int)
    pred = np.zeros((4, 4), int)
    truth[0, :3] = 1
    pred[0, 1:4] = 1
    rep = mask_metrics([pred], [truth], ["bg", "fg"])
    mask_ok = rep.iou["fg"] == 0.5 and rep.pixel_accuracy["fg"] == 2 / 3

    a = DetectionPrediction("i", "x", BoundingBox(0, 0, 10, 10), 0.9)
    b = DetectionPrediction("i", "x", BoundingBox(5, 0, 15, 10), 0.8)
    c = DetectionPrediction("i", "x", BoundingBox(10, 0, 20, 10), 0.7)
    nms_ok = nms([b, c, a], 0.3) == [a, c]

    gts = [GroundTruthBox("i", "x", BoundingBox(0, 0, 10, 10)), GroundTruthBox("i", "x", BoundingBox(20, 0, 30, 10))]
    preds = [DetectionPrediction("i", "x", BoundingBox(0, 0, 10, 10), 0.9),
             DetectionPrediction("i", "x", BoundingBox(1, 0, 10, 10), 0.8),
             DetectionPrediction("i", "x", BoundingBox(20, 0, 30, 10), 0.7)]
    ap = average_precision(preds, gts, "x")
    ap_ok = abs(ap - _exhaustive_ap([True, False, True], 2)) <= 1e-9

    rng = np.random.default_rng(0)
    bounded = 0
    for _ in range(100):
        n = int(rng.integers(2, 7))
        shape = tuple(rng.integers(1, 30, 2))
        counts = segmentation_counts(rng.integers(0, n, shape), rng.integers(0, n, shape), n)
        bounded += all(c.iou <= c.pixel_accuracy for c in counts if c.true_positive + c.false_negative)
    elapsed = time.perf_counter() - t0
    ok = iou_ok and mask_ok and nms_ok and ap_ok and bounded == 100 and elapsed < 10
    report("metrics", ok, f"IoU 1/3 {iou_ok}, mask 0.5/0.667 {mask_ok}, NMS {nms_ok}, AP {ap:.6f}, "
                          f"IoU<=PA {bounded}/100, {elapsed:.2f}s")
    assert ok


# -- end to end --------------------------------------------------------------


def _planted_hits(out_dir, queries):
    hits = 0
    for i, record in enumerate(queries):
        path = out_dir / f"q{i}.json"
        path.write_text(json.dumps(record))
        code, out, err = _cli("--output-dir", out_dir, "recommend", "--query", path)
        assert code == 0, err
        items = json.loads(out)["items"]
        hits += bool(items) and items[0]["metadata"]["planted_color"] == record["expected"]["planted_color"]
    return hits


def test_end_to_end(report, tmp_path):
    # Accuracy: one palette bin per planted colour.
    t0 = time.perf_counter()
    out = tmp_path / "e2e"
    assert _cli("--output-dir", out, "generate-synthetic")[0] == 0
    n_colors = synthetic.SyntheticConfig().n_colors
    assert _cli("--output-dir", out, "build-palettes", "--palette-k", n_colors)[0] == 0
    assert _cli("--output-dir", out, "build-cooccur")[0] == 0
    queries = [json.loads(line) for line in (out / "queries.jsonl").read_text().splitlines()]
    hits = _planted_hits(out, queries)
    elapsed = time.perf_counter() - t0

    # Runtime at the default palette size, on the full build including joint tables.
    t1 = time.perf_counter()
    full = tmp_path / "full"
    assert _cli("--output-dir", full, "generate-synthetic")[0] == 0
    for step in ("build-palettes", "build-cooccur", "build-joint-table"):
        assert _cli("--output-dir", full, step)[0] == 0
    default_hits = _planted_hits(full, queries)
    full_elapsed = time.perf_counter() - t1

    ok = hits >= 0.95 * len(queries) and len(queries) == 200 and elapsed < 120 and full_elapsed < 120
    report("end to end", ok, f"planted pairing {hits}/{len(queries)} at palette k={n_colors} in {elapsed:.1f}s; "
                             f"default k=130 full pipeline {full_elapsed:.1f}s ({default_hits}/{len(queries)})")
    assert ok


# -- CLI / service parity ----------------------------------------------------


def test_cli_service_parity(report, tmp_path):
    out = tmp_path / "parity"
    assert _cli("--output-dir", out, "generate-synthetic", "--images", 300, "--colors", 8, "--queries", 50)[0] == 0
    assert _cli("--output-dir", out, "build-palettes", "--palette-k", 8)[0] == 0
    assert _cli("--output-dir", out, "build-cooccur")[0] == 0
    assert _cli("--output-dir", out, "build-joint-table")[0] == 0
    records = [json.loads(line)["query"] for line in (out / "queries.jsonl").read_text().splitlines()]
    strategies = ["color_cooccur", "color_wheel", "pattern_cooccur", "retrieval_table"]
    feature_rng = np.random.default_rng(0)
    fixtures = []
    for i, q in enumerate(records):
        q = dict(q, top_k=3)
        s = strategies[i % 4]
        if s == "color_wheel":
            q.update(strategy=s, mode=("complementary", "triadic")[i % 2], min_chroma=0, hue_tol=40)
        elif s == "pattern_cooccur":
            q.update(strategy=s, pattern=PATTERNS[i % 10].value)
        elif s == "retrieval_table":
            q.update(strategy=s, feature=feature_rng.normal(size=32).round(6).tolist())
            q.pop("pixels_rgb")
        fixtures.append(q)

    cfg = PipelineConfig(output_dir=str(out), port=0)
    server = make_server(cfg, load_artifacts(cfg))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    identical = 0
    try:
        for i, q in enumerate(fixtures):
            path = out / f"p{i}.json"
            path.write_text(json.dumps(q))
            code, cli_body, err = _cli("--output-dir", out, "recommend", "--query", path)
            conn = HTTPConnection("127.0.0.1", server.server_address[1], timeout=10)
            conn.request("POST", "/v1/recommend", body=json.dumps(q), headers={"Content-Type": "application/json"})
            resp = conn.getresponse()
            body = resp.read().decode()
            conn.close()
            identical += code == 0 and resp.status == 200 and cli_body.rstrip("\n") == body
    finally:
        server.shutdown()
        server.server_close()
    ok = identical == len(fixtures) == 50
    report("CLI/service parity", ok, f"{identical}/{len(fixtures)} bit-identical across 4 strategies")
    assert ok
