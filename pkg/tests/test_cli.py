import json
import shutil

import pytest

from helpers import run_cli, run_pipeline, tree_digest, write_config
from sdbdetect.corpus import read_track


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """A complete fast pipeline (rm bottleneck features, tandem system)."""
    root = tmp_path_factory.mktemp("cli_run")
    cfg = write_config(root)
    results = run_pipeline(cfg)
    return root, cfg, results


def _tsvs(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.tsv"))}


# --------------------------------------------------------------------------
# usage errors


def test_missing_config_is_usage_error(tmp_path):
    r = run_cli("synth", "--config", tmp_path / "nope.toml")
    assert r.exit_code == 2
    assert "Usage" in r.output


def test_bad_flag_and_bad_config(tmp_path):
    cfg = write_config(tmp_path)
    assert run_cli("synth", "--config", cfg, "--features", "lpc").exit_code == 2
    bad = tmp_path / "bad.toml"
    bad.write_text(cfg.read_text() + "\n[tandem2]\nn_mix = 3\n")
    r = run_cli("synth", "--config", bad)
    assert r.exit_code == 2 and "tandem2" in r.output
    bad.write_text(cfg.read_text().replace("n_mix = 2", "n_mix = 0"))
    assert run_cli("synth", "--config", bad).exit_code == 2
    bad.write_text("seed = [")
    assert run_cli("synth", "--config", bad).exit_code == 2


def test_log_level_env(tmp_path):
    cfg = write_config(tmp_path)
    assert run_cli("synth", "--config", cfg, env={"SDB_LOG_LEVEL": "LOUD"}).exit_code == 2
    assert run_cli("synth", "--config", cfg, env={"SDB_LOG_LEVEL": "debug"}).exit_code == 0


# --------------------------------------------------------------------------
# synth


def test_synth_writes_manifest_and_is_deterministic(tmp_path):
    a = write_config(tmp_path / "a")
    b = write_config(tmp_path / "b")
    ra = run_cli("synth", "--config", a, "--seed", "7")
    rb = run_cli("synth", "--config", b, "--seed", "7")
    assert ra.exit_code == rb.exit_code == 0
    manifest = tmp_path / "a" / "corpus" / "manifest.tsv"
    assert ra.output.strip() == str(manifest.resolve())
    assert tree_digest(tmp_path / "a" / "corpus") == tree_digest(tmp_path / "b" / "corpus")
    run_cli("synth", "--config", b, "--seed", "8")
    assert tree_digest(tmp_path / "a" / "corpus") != tree_digest(tmp_path / "b" / "corpus")


# --------------------------------------------------------------------------
# prerequisites


def test_train_tandem_without_features(tmp_path):
    cfg = write_config(tmp_path, features="mfcc")
    assert run_cli("synth", "--config", cfg).exit_code == 0
    assert run_cli("train", "lm", "--config", cfg).exit_code == 0
    r = run_cli("train", "tandem", "--config", cfg)
    assert r.exit_code == 1
    assert "mfcc features" in r.output and "sdb extract" in r.output


def test_train_before_synth(tmp_path):
    cfg = write_config(tmp_path)
    r = run_cli("train", "lm", "--config", cfg)
    assert r.exit_code == 1 and "manifest" in r.output


def test_decode_without_bundle(tiny_run):
    _, cfg, _ = tiny_run
    r = run_cli("decode", "--config", cfg, "--system", "hybrid", "--features", "rm")
    assert r.exit_code == 1 and "hybrid model bundle" in r.output


def test_bundle_feature_mismatch(tiny_run, tmp_path):
    root, cfg, _ = tiny_run
    models = root / "work" / "models"
    shutil.copy(models / "tandem_rm.bundle", models / "tandem_mfcc.bundle")
    try:
        assert run_cli("extract", "--config", cfg, "--features", "mfcc").exit_code == 0
        r = run_cli("decode", "--config", cfg, "--features", "mfcc", "--out", tmp_path / "x")
        assert r.exit_code == 2 and "tandem/rm" in r.output
    finally:
        (models / "tandem_mfcc.bundle").unlink()


# --------------------------------------------------------------------------
# full pipeline outputs


def test_pipeline_artifacts(tiny_run):
    root, _, results = tiny_run
    work = root / "work"
    for rel in ("models/ae_rm.sdbm", "models/norm_rm.json", "models/lm.json", "models/tandem_rm.bundle",
                "models/tandem_rm.tuning.json", "logs/ae_rm.jsonl", "logs/tandem_rm.jsonl",
                "logs/tune_tandem_rm.jsonl", "reports/tandem_rm_test.txt", "reports/tandem_rm_test.json"):
        assert (work / rel).is_file(), rel
    ae_log = [json.loads(l) for l in (work / "logs/ae_rm.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in ae_log] == [1, 2, 3]
    decodes = sorted((work / "decode/tandem_rm/test").glob("*.tsv"))
    assert len(decodes) == 2
    for p in decodes:
        assert len(read_track(p).segments) >= 1


def test_evaluate_report_schema(tiny_run):
    root, cfg, results = tiny_run
    out = results[-1].output
    for key in ("N", "S", "D", "I", "eer", "precision", "recall", "f_measure"):
        assert f"\n{key} = " in "\n" + out
    rep = json.loads(out.strip().splitlines()[-1])
    assert rep == json.loads((root / "work/reports/tandem_rm_test.json").read_text())
    assert 0 <= rep["f_measure"] <= 1 and rep["N"] > 0


def test_neutral_lm_matches_no_lm(tiny_run, tmp_path):
    _, cfg, _ = tiny_run
    a, b = tmp_path / "neutral", tmp_path / "nolm"
    assert run_cli("decode", "--config", cfg, "--lm-scale", 0, "--insertion-penalty", 0, "--out", a).exit_code == 0
    assert run_cli("decode", "--config", cfg, "--no-lm", "--out", b).exit_code == 0
    assert _tsvs(a) == _tsvs(b) and len(_tsvs(a)) == 2
    assert json.loads((b / "decode.json").read_text())["use_lm"] is False


def test_flags_override_tuned_values(tiny_run, tmp_path):
    _, cfg, _ = tiny_run
    out = tmp_path / "d"
    run_cli("decode", "--config", cfg, "--lm-scale", 3.5, "--out", out)
    meta = json.loads((out / "decode.json").read_text())
    assert meta["lm_scale"] == 3.5
    tuned = json.loads((cfg.parent / "work/models/tandem_rm.tuning.json").read_text())
    assert meta["insertion_penalty"] == tuned["insertion_penalty"]


def test_overfit_on_training_data(tmp_path):
    cfg = write_config(tmp_path, features="mfcc")
    cfg.write_text(cfg.read_text().replace("n_mix = 2\nmax_iter = 4", "n_mix = 4\nmax_iter = 10"))
    c = ["--config", cfg]
    for step in (["synth"], ["extract"], ["train", "lm"], ["train", "tandem"]):
        assert run_cli(*step, *c).exit_code == 0
    assert run_cli("decode", *c, "--split", "train").exit_code == 0
    r = run_cli("evaluate", *c, "--split", "train")
    rep = json.loads(r.output.strip().splitlines()[-1])
    assert rep["eer"] <= 0.1 and rep["f_measure"] >= 0.95


def test_hybrid_logs_sixty_epochs_by_default(tiny_run):
    root, cfg, _ = tiny_run
    r = run_cli("train", "hybrid", "--config", cfg)
    assert r.exit_code == 0, r.output
    log = [json.loads(l) for l in (root / "work/logs/hybrid_rm.jsonl").read_text().splitlines()]
    assert len(log) == 60
    assert [e["epoch"] for e in log] == list(range(1, 61))
    assert all({"loss", "accuracy"} <= set(e) for e in log)
    r = run_cli("decode", "--config", cfg, "--system", "hybrid", "--split", "test")
    assert r.exit_code == 0, r.output
    assert run_cli("evaluate", "--config", cfg, "--system", "hybrid").exit_code == 0


def test_screen_command(tiny_run):
    root, cfg, _ = tiny_run
    # tiny recordings are shorter than the default 120 s screening segment
    short = root / "screen.toml"
    short.write_text(cfg.read_text() + "\n[screen]\nsegment_len = 10.0\n")
    c = ["--config", short]
    assert run_cli("extract", *c, "--all").exit_code == 0
    assert run_cli("train", "screener", *c).exit_code == 0
    r = run_cli("screen", *c, "--split", "test", "--threshold", 0.0)
    assert r.exit_code == 0
    lines = r.output.strip().splitlines()
    assert lines and all(len(l.split("\t")) == 3 for l in lines)
    assert run_cli("screen", *c, "--threshold", 1.5).exit_code == 2


def test_gradcheck_command():
    r = run_cli("gradcheck", "--seed", 1)
    assert r.exit_code == 0, r.output
    assert r.output.count("max relative error") == 3


@pytest.mark.parametrize("name", ["benchmark.toml", "tiny.toml"])
def test_shipped_configs_load(name):
    from pathlib import Path

    from sdbdetect.pipeline import load_config

    cfg = load_config(Path(__file__).parent.parent / "configs" / name)
    assert cfg.work_dir.name == "work"
