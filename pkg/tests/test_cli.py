import json

import numpy as np
import pytest

from l2m import formats
from l2m.cli import main
from l2m.gaussians import FeatureMap
from l2m.synthetic import write_smoke_corpus


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_smoke_corpus(root / "corpus", count=3, width=64, height=64)
    (root / "cfg.toml").write_text("resolution = [64, 64]\nviews_per_image = 3\n")
    assert main(["scan", str(root / "corpus"), "--out", str(root / "m.tsv")]) == 0
    return root


def test_scan_empty(tmp_path, capsys):
    assert main(["scan", str(tmp_path), "--out", str(tmp_path / "m.tsv")]) == 0
    assert "warning" in capsys.readouterr().err


def test_scan_missing_root(tmp_path):
    assert main(["scan", str(tmp_path / "missing")]) == 1


def test_generate_and_eval(workspace, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("resolution = [64, 64]\n")
    out = tmp_path / "pairs"
    assert main(["generate", str(workspace / "m.tsv"), "--config", str(cfg), "--seed", "2", "--out", str(out)]) == 0
    summary = formats.load_json(out / "summary.json")
    assert summary["accepted"] >= 2 and summary["config"]["seed"] == 2

    results = tmp_path / "r.json"
    assert main(["eval", str(out), "--gt-matches", "400", "--out", str(results)]) == 0
    data = json.loads(results.read_text())
    assert data["count"] == summary["accepted"]
    assert data["auc"]["auc@5"] > 90.0


def test_eval_missing_matches(workspace, tmp_path):
    out = tmp_path / "pairs"
    main(["generate", str(workspace / "m.tsv"), "--config", str(workspace / "cfg.toml"), "--out", str(out)])
    assert main(["eval", str(out), "--matches", str(tmp_path / "none"), "--out", str(tmp_path / "r.json")]) == 1


def test_bad_config(workspace, tmp_path):
    (tmp_path / "bad.toml").write_text("no_such_key = 1\n")
    assert main(["generate", str(workspace / "m.tsv"), "--config", str(tmp_path / "bad.toml"),
                 "--out", str(tmp_path / "o")]) == 1


def test_multiview_fit_render(workspace, tmp_path):
    out = tmp_path / "mv"
    assert main(["multiview", str(workspace / "m.tsv"), "--config", str(workspace / "cfg.toml"),
                 "--out", str(out)]) == 0
    set_dir = out / "000000"
    meta = formats.load_json(set_dir / "meta.json")
    rng = np.random.default_rng(0)
    for view in meta["views"]:
        formats.write_feature_map(set_dir / view["features"], FeatureMap(rng.uniform(size=(16, 16, 4))))
    gpath = tmp_path / "g.l2mg"
    assert main(["fit-gaussians", str(set_dir), "--stride", "4", "--max-iters", "20", "--out", str(gpath)]) == 0
    report = formats.load_json(gpath.with_suffix(".json"))
    assert report["views"] == 3 and report["dim"] == 4
    hist = report["residual_history"]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:]))

    cam = tmp_path / "cam.json"
    cam.write_text(json.dumps({"intrinsics": meta["intrinsics"], "pose": meta["views"][1]["pose"]}))
    assert main(["render", str(gpath), "--camera", str(cam), "--out", str(tmp_path / "r")]) == 0
    fmap = formats.read_feature_map(tmp_path / "r" / "features.l2mf")
    assert fmap.values.shape == (64, 64, 4)
    assert (tmp_path / "r" / "color.png").is_file() and (tmp_path / "r" / "alpha.png").is_file()


def test_fit_without_features(workspace, tmp_path):
    out = tmp_path / "mv"
    main(["multiview", str(workspace / "m.tsv"), "--config", str(workspace / "cfg.toml"), "--out", str(out)])
    assert main(["fit-gaussians", str(out / "000000"), "--out", str(tmp_path / "g.l2mg")]) == 1
