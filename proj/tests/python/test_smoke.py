import math

import numpy as np
import pytest

import vislex


def test_metrics_match_fixtures():
    assert vislex.rouge_l("the cat", "the cat sat") == pytest.approx(0.8, abs=1e-9)
    assert vislex.meteor_lite("the cat sat", "the cat") == pytest.approx(0.892857142857, abs=1e-9)
    assert vislex.bow_cosine("bird water", "bird sky") == pytest.approx(0.5, abs=1e-12)
    assert vislex.jensen_shannon([1, 0], [0, 1]) == 1.0
    assert vislex.rouge_l("red circle", "blue square") == 0.0
    with pytest.raises(vislex.ArgumentError):
        vislex.rouge_l("", "x")


def test_nucleus_filter():
    f = vislex.nucleus_filter([0.5, 0.3, 0.15, 0.05], 0.95)
    assert f[3] == 0.0
    assert sum(f) == pytest.approx(1.0)
    assert f[0] == pytest.approx(0.5 / 0.95)


def test_profiles_and_selection():
    p = vislex.word_profile(["a red circle on the water", "a circle on grass"], 1)
    assert p["ranked"][0] == "circle"
    assert p["counts"]["water"] == 1
    assert "the" in vislex.default_stopwords()
    r = vislex.detect_spurious({"water": 5, "circle": 3}, ["circle"])
    assert r["flagged"]
    ids = vislex.select_problematic(
        [("a", 0, {"water": 5, "circle": 3}), ("b", 0, {"circle": 4, "water": 1})], {0: ["circle"]}
    )
    assert ids == ["a"]
    assert vislex.default_min_count(1000) == 5


def test_synthetic_images():
    spec = {"splits": [{"name": "train", "count": 8, "correlation": 1.0, "empty_fraction": 0.0}], "seed": 3}
    recs = vislex.generate_synthetic(spec)
    assert len(recs) == 8
    for r in recs:
        assert r["image"].shape == (32, 32, 3)
        assert np.all((r["image"] >= 0) & (r["image"] <= 1))
        assert r["background"] == r["label"]
    with pytest.raises(vislex.ArgumentError):
        vislex.generate_synthetic({"splits": [{"name": "x", "count": 1, "correlation": 2.0}]})


def test_config_digest_ignores_seed_and_output(tmp_path):
    cfg = vislex.default_config()
    other = dict(cfg, seed=99, output_dir=str(tmp_path))
    assert vislex.config_digest(cfg) == vislex.config_digest(other)
    assert len(vislex.config_digest(cfg)) == 64


def test_pipeline_reports_missing_artifact(tmp_path):
    cfg = dict(vislex.default_config(), output_dir=str(tmp_path))
    assert vislex.pipeline_commands()[0] == "gen-data"
    with pytest.raises(vislex.ArtifactError, match="gen-data"):
        vislex.run_command("pretrain", cfg)
    out = vislex.run_command("gen-data", cfg)
    assert out["records"] > 0
    assert math.isfinite(out["records"])
