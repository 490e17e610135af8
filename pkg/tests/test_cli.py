import io
import json

import pytest

from outfitrec.cli import main

N_COLORS = 8


def run(*argv, stdin=None, monkeypatch=None):
    out, err = io.StringIO(), io.StringIO()
    if stdin is not None:
        monkeypatch.setattr("sys.stdin", io.StringIO(stdin))
    code = main([str(a) for a in argv], out=out, err=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    steps = [
        ("generate-synthetic", "--images", 200, "--colors", N_COLORS, "--items-per-color", 2, "--queries", 20),
        ("build-palettes", "--palette-k", N_COLORS),
        ("build-cooccur",),
        ("build-joint-table", "--retrieval-k", 3),
    ]
    for step in steps:
        code, _, err = run("--output-dir", d, "--seed", 1, *step)
        assert code == 0, err
    return d


def query_file(tmp_path, data, name="q.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def first_query(workdir):
    return json.loads((workdir / "queries.jsonl").read_text().splitlines()[0])


def test_generate_reports_paths(tmp_path):
    code, out, _ = run("--output-dir", tmp_path, "generate-synthetic", "--images", 10, "--queries", 2)
    assert code == 0
    paths = json.loads(out)
    assert set(paths) >= {"annotations", "inventory", "pixels", "queries"}
    assert (tmp_path / "annotations.jsonl").is_file()


def test_recommend_with_limit(workdir, tmp_path):
    q = query_file(tmp_path, first_query(workdir))  # {"query": ..., "expected": ...} wrapper
    code, out, err = run("--output-dir", workdir, "recommend", "--query", q, "--limit", 1)
    assert code == 0, err
    rec = json.loads(out)
    assert len(rec["items"]) == 1
    assert rec["strategy"] == "color_cooccur"


def test_recommend_from_stdin(workdir, monkeypatch):
    data = first_query(workdir)["query"]
    code, out, _ = run("--output-dir", workdir, "recommend", "--query", "-", stdin=json.dumps(data),
                       monkeypatch=monkeypatch)
    assert code == 0 and json.loads(out)["items"]


def test_recommend_flag_overrides_strategy(workdir, tmp_path):
    data = dict(first_query(workdir)["query"], pattern="Dots")
    q = query_file(tmp_path, data)
    code, out, _ = run("--output-dir", workdir, "recommend", "--query", q, "--strategy", "pattern_cooccur")
    assert code == 0 and json.loads(out)["strategy"] == "pattern_cooccur"


def test_retrieval_from_cli(workdir, tmp_path):
    q = query_file(tmp_path, {"category": "TopsBlouses", "target_category": "Skirts",
                              "strategy": "retrieval_table", "feature": [1.0] * 32})
    code, out, err = run("--output-dir", workdir, "recommend", "--query", q)
    assert code == 0, err
    assert json.loads(out)["explanation"]["query_side"] == "top"


def test_exit_codes(workdir, tmp_path):
    assert run("no-such-command")[0] == 2
    assert run("recommend")[0] == 2  # --query is required
    bad = query_file(tmp_path, {"category": "TopsBlouses", "target_category": "Skirts", "strategy": "x"})
    code, _, err = run("--output-dir", workdir, "recommend", "--query", bad)
    assert code == 2 and "strategy" in err
    (tmp_path / "broken.json").write_text("{not json")
    assert run("--output-dir", workdir, "recommend", "--query", tmp_path / "broken.json")[0] == 2
    # nothing built in an empty directory
    q = query_file(tmp_path, first_query(workdir))
    code, _, err = run("--output-dir", tmp_path / "empty", "recommend", "--query", q)
    assert code == 4 and "build" in err
    assert run("--output-dir", tmp_path / "empty", "build-palettes")[0] == 4
    # achromatic query: no palette bin clears the chroma floor
    strict = query_file(tmp_path, {"category": "TopsBlouses", "target_category": "Skirts",
                                   "strategy": "color_wheel", "mode": "complementary",
                                   "pixels_lab": [[50, 0, 0]], "min_chroma": 1000}, "strict.json")
    assert run("--output-dir", workdir, "recommend", "--query", strict)[0] == 5
    (tmp_path / "cfg.json").write_text('{"palette_k": 0}')
    assert run("--config", tmp_path / "cfg.json", "build-palettes")[0] == 3


def test_bad_feature_file_is_exit_3(workdir, tmp_path):
    (tmp_path / "bad.fvec").write_bytes(b"nope")
    code, _, _ = run("--output-dir", workdir, "--street-features", tmp_path / "bad.fvec",
                     "--inventory-features", tmp_path / "bad.fvec", "build-joint-table")
    assert code == 3


def test_config_file_and_flag_precedence(workdir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"output_dir": str(tmp_path / "nowhere")}))
    q = query_file(tmp_path, first_query(workdir))
    # flag beats the config file
    assert run("--config", cfg, "--output-dir", workdir, "recommend", "--query", q)[0] == 0
    assert run("--config", cfg, "recommend", "--query", q)[0] == 4


@pytest.mark.parametrize("task,key", [("segmentation", "iou"), ("detection", "map"),
                                      ("classification", "accuracy")])
def test_eval_perfect(workdir, task, key):
    ann = workdir / "annotations.jsonl"
    code, out, err = run("eval", task, "--predictions", ann, "--ground-truth", ann)
    assert code == 0, err
    assert json.loads(out)["mean"][key] == pytest.approx(1.0)


def test_eval_missing_file(tmp_path):
    code, _, _ = run("eval", "detection", "--predictions", tmp_path / "x", "--ground-truth", tmp_path / "y")
    assert code == 3
