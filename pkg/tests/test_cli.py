import json

import numpy as np
import pytest

from nfmbench import cli, synthetic, tensor_io
from nfmbench.manifest import write_manifest
from nfmbench.tensor_io import ScoreTable
from oracles import make_manifest


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    paths = synthetic.write_synthetic(synthetic.make_synthetic(seed=4), out)
    (out / "config.json").write_text(json.dumps({"b": 3, "seed": 4}))
    return out, paths


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_partition_nine_train_samples(tmp_path):
    m = make_manifest([("normal", "normal", "na", "train", 6),
                       ("abnormal", "E1", "seen", "train", 3),
                       ("normal", "normal", "na", "test", 2)])
    write_manifest(m, tmp_path / "m.json")
    assert run("partition", "--manifest", tmp_path / "m.json", "--seed", 1, "--out", tmp_path / "a.json") == 0
    assert run("partition", "--manifest", tmp_path / "m.json", "--seed", 1, "--out", tmp_path / "b.json") == 0
    raw = (tmp_path / "a.json").read_bytes()
    assert raw == (tmp_path / "b.json").read_bytes()
    doc = json.loads(raw)
    assert len(doc["labeled_normal"]) == 2 and len(doc["labeled_abnormal"]) == 1
    assert len(doc["unlabeled"]) == 6


def test_seed_is_required(tmp_path, synth, capsys):
    _, paths = synth
    assert run("partition", "--manifest", paths["manifest"], "--out", tmp_path / "p.json") == 1
    assert "seed" in capsys.readouterr().err


def test_missing_manifest_exit_2(tmp_path, capsys):
    code = run("partition", "--manifest", tmp_path / "nope.json", "--seed", 0, "--out", tmp_path / "p.json")
    assert code == 2
    assert "nope.json" in capsys.readouterr().err


def test_fuse_id_mismatch_exit_1(tmp_path, capsys):
    a = ScoreTable({f"s{i:02d}": 1.0 for i in range(30)}, "nfm")
    b = ScoreTable({f"t{i:02d}": 1.0 for i in range(30)}, "ext")
    tensor_io.write_scores(a, tmp_path / "a.csv")
    tensor_io.write_scores(b, tmp_path / "b.csv")
    code = run("fuse", "--scores", tmp_path / "a.csv", "--external-scores", tmp_path / "b.csv",
               "--out", tmp_path / "f.csv")
    assert code == 1
    err = capsys.readouterr().err
    assert "s09" in err and "s10" not in err
    assert not (tmp_path / "f.csv").exists()


def test_unknown_config_key(tmp_path, synth, capsys):
    _, paths = synth
    (tmp_path / "c.json").write_text(json.dumps({"b": 3, "bee": 2}))
    code = run("build-memory", "--manifest", paths["manifest"], "--config", tmp_path / "c.json",
               "--seed", 0, "--out", tmp_path / "bank")
    assert code == 1
    assert "bee" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline(synth, tmp_path_factory):
    out, paths = synth
    work = tmp_path_factory.mktemp("pipe")
    cfg = out / "config.json"
    assert run("build-memory", "--manifest", paths["manifest"], "--config", cfg, "--out", work / "bank") == 0
    for split in ("validation", "test"):
        assert run("score", "--manifest", paths["manifest"], "--bank", work / "bank", "--config", cfg,
                   "--split", split, "--out", work / f"nfm_{split}.csv") == 0
    return work, paths, cfg


def test_score_jobs_identical(pipeline):
    work, paths, cfg = pipeline
    assert run("score", "--manifest", paths["manifest"], "--bank", work / "bank", "--config", cfg,
               "--jobs", 3, "--out", work / "nfm_par.csv") == 0
    assert (work / "nfm_par.csv").read_bytes() == (work / "nfm_test.csv").read_bytes()


def test_corrupted_bank_exit_2(pipeline, tmp_path, capsys):
    work, paths, cfg = pipeline
    bad = tmp_path / "bank"
    bad.mkdir()
    (bad / "memory.json").write_bytes((work / "bank" / "memory.json").read_bytes())
    (bad / "memory.nfmb").write_bytes((work / "bank" / "memory.nfmb").read_bytes()[:-5])
    code = run("score", "--manifest", paths["manifest"], "--bank", bad, "--config", cfg,
               "--out", tmp_path / "s.csv")
    assert code == 2
    assert "truncated" in capsys.readouterr().err


def test_corrupted_features_exit_2(synth, tmp_path, capsys):
    _, paths = synth
    doc = json.loads(paths["manifest"].read_text())
    feat_dir = paths["manifest"].parent
    for key, name in doc["feature_files"].items():
        raw = bytearray((feat_dir / name).read_bytes())
        raw[:4] = b"JUNK"
        (tmp_path / name).parent.mkdir(parents=True, exist_ok=True)
        (tmp_path / name).write_bytes(bytes(raw))
    code = run("build-memory", "--manifest", paths["manifest"], "--features-dir", tmp_path,
               "--seed", 0, "--out", tmp_path / "bank")
    assert code == 2
    assert "magic" in capsys.readouterr().err


def test_eval_outputs(pipeline, tmp_path):
    work, paths, cfg = pipeline
    code = run("eval", "--manifest", paths["manifest"],
               "--scores", f"nfm={work / 'nfm_test.csv'}", f"ext={paths['external_test']}",
               "--val-scores", f"nfm={work / 'nfm_validation.csv'}", f"ext={paths['external_validation']}",
               "--n-resamples", 200, "--config", cfg, "--out", tmp_path / "ev")
    assert code == 0
    ev = tmp_path / "ev"
    assert {p.name for p in ev.iterdir()} == {"report.json", "tables.md", "tables.csv",
                                              "roc_nfm.csv", "roc_ext.csv"}
    md = (ev / "tables.md").read_text()
    for col in ("nfm F1", "nfm SPC", "nfm SEN", "ext F1"):
        assert col in md
    rep = json.loads((ev / "report.json").read_text())
    assert [s["stream"] for s in rep["streams"]] == ["nfm", "ext"]
    roc = (ev / "roc_nfm.csv").read_text().splitlines()
    assert roc[0] == "fpr,tpr,threshold"
    assert roc[1].startswith("0.0,0.0,")


def test_eval_fixed_threshold_single_stream(pipeline, tmp_path):
    work, paths, cfg = pipeline
    code = run("eval", "--manifest", paths["manifest"], "--scores", work / "nfm_test.csv",
               "--threshold", 1.5, "--n-resamples", 100, "--seed", 2, "--out", tmp_path / "ev")
    assert code == 0
    assert (tmp_path / "ev" / "roc.csv").exists()
    rep = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert rep["streams"][0]["threshold"] == 1.5


def test_eval_needs_threshold_source(pipeline, tmp_path, capsys):
    work, paths, cfg = pipeline
    code = run("eval", "--manifest", paths["manifest"], "--scores", work / "nfm_test.csv",
               "--seed", 2, "--out", tmp_path / "ev")
    assert code == 1
    assert "--threshold" in capsys.readouterr().err


def test_fuse_minmax_uses_validation(pipeline, tmp_path):
    work, paths, _ = pipeline
    (tmp_path / "c.json").write_text(json.dumps({"calibration": "minmax_validation", "seed": 0}))
    code = run("fuse", "--scores", work / "nfm_test.csv", "--external-scores", paths["external_test"],
               "--scores-val", work / "nfm_validation.csv",
               "--external-scores-val", paths["external_validation"],
               "--config", tmp_path / "c.json", "--out", tmp_path / "f.csv")
    assert code == 0
    f = tensor_io.read_scores(tmp_path / "f.csv")
    assert np.isfinite(f.values(f.ids())).all()


def test_demo_quick(tmp_path, capsys):
    code = run("demo", "--out", tmp_path, "--seed", 3, "--n-resamples", 100)
    text = capsys.readouterr().out
    assert text.count("PASS") + text.count("FAIL") == len(cli.DEMO_CHECKS)
    assert (tmp_path / "run1" / "eval" / "report.json").read_bytes() == \
        (tmp_path / "run2" / "eval" / "report.json").read_bytes()
    # exit status mirrors the self-checks
    rep = json.loads((tmp_path / "run1" / "eval" / "report.json").read_text())
    checks = cli.demo_checks(rep)
    assert code == (0 if all(ok for ok, _ in checks.values()) else 1)
    assert checks["fusion_keeps_unseen"][0]
