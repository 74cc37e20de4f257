import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from wordimportance import annotations as ann
from wordimportance import cli, testbed
from wordimportance.data import Vocab, write_lines
from wordimportance.pipeline import ConfigError, ExperimentConfig, load_config, run_pipeline, validate
from wordimportance.seqmodel import LinearTestModel, save_checkpoint

FAST = {"model": {"steps": 40, "embed_dim": 8, "hidden_dim": 8}, "attribution_steps": 8,
        "evaluation": {"repeats": 2, "k_max": 2}}


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert cli.main(["testbed", "--out", str(d), "--train", "120", "--test", "12", "--seed", "1"]) == 0
    return d


def _config(corpus_dir, tmp_path, annotations=True, **extra):
    raw = yaml.safe_load((corpus_dir / "config.yaml").read_text())
    if not annotations:
        raw.pop("annotations")
    raw.update(FAST)
    raw.update(extra)
    path = tmp_path / "config.yaml"
    for name in ("train.src", "train.tgt", "test.src", "test.ref", "test.pos", "test.align", "test.depth",
                 "train.pos"):
        (tmp_path / name).write_bytes((corpus_dir / name).read_bytes())
    path.write_text(yaml.safe_dump(raw))
    return path


def test_no_annotations_skips_analysis(corpus_dir, tmp_path):
    cfg = load_config(_config(corpus_dir, tmp_path, annotations=False))
    cfg.out_dir = str(tmp_path / "out")
    result = run_pipeline(cfg)
    out = Path(result.out_dir)
    skipped = result.manifest["skipped"]
    for section in ("analysis:pos_distribution", "analysis:fertility_distribution", "analysis:undertranslation_f1",
                    "analysis:tree_correlation", "estimator:Content"):
        assert section in skipped
    assert (out / "curves.csv").exists() and (out / "importance.json").exists()
    assert len(list((out / "contributions").glob("*.csv"))) == 12
    assert not (out / "pos_distribution.csv").exists()


def test_full_bundle_and_worker_independence(corpus_dir, tmp_path):
    path = _config(corpus_dir, tmp_path)
    outs = []
    for jobs in (1, 3):
        cfg = load_config(path)
        cfg.out_dir, cfg.jobs = str(tmp_path / f"out{jobs}"), jobs
        outs.append(run_pipeline(cfg))
    a, b = outs
    assert a.manifest == b.manifest
    for rel in a.manifest["outputs"]:
        assert (a.out_dir / rel).read_bytes() == (b.out_dir / rel).read_bytes()
    names = set(a.manifest["outputs"])
    for expected in ("model.npz", "importance.json", "curves.csv", "pos_distribution.csv",
                     "fertility_distribution.csv", "report.json"):
        assert expected in names
    assert "timestamp" not in json.dumps(a.manifest)
    assert len(a.manifest["config_hash"]) == 64


def test_validation_lists_every_problem(tmp_path):
    cfg = ExperimentConfig()
    cfg.data.train_src = str(tmp_path / "missing")
    cfg.evaluation.estimators = ["Saliency"]
    cfg.evaluation.perturbations = ["shuffle"]
    problems = validate(cfg)
    assert len(problems) >= 5
    with pytest.raises(ConfigError) as exc:
        run_pipeline(cfg)
    assert "Saliency" in str(exc.value) and "shuffle" in str(exc.value)


def test_malformed_alignment_exit_code(corpus_dir, tmp_path, capsys):
    path = _config(corpus_dir, tmp_path)
    lines = (tmp_path / "test.align").read_text().splitlines()
    lines[1] = "0-0 3-x"
    (tmp_path / "test.align").write_text("\n".join(lines) + "\n")
    assert cli.main(["pipeline", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "test.align:2" in err and "3-x" in err


def test_unknown_config_key(tmp_path):
    (tmp_path / "c.yaml").write_text("modle: {steps: 3}\nmodel: {stepz: 2}\n")
    with pytest.raises(ConfigError) as exc:
        load_config(tmp_path / "c.yaml")
    assert len(exc.value.problems) == 2


def test_flags_override_config(corpus_dir, tmp_path, monkeypatch):
    path = _config(corpus_dir, tmp_path, seed=5)
    seen = {}
    monkeypatch.setattr(cli, "run_pipeline", lambda cfg: seen.setdefault("cfg", cfg) and None or
                        type("R", (), {"manifest": {"outputs": {}, "skipped": {}}, "out_dir": cfg.out_dir,
                                       "status": 0})())
    monkeypatch.setenv("WORDIMP_OUT", str(tmp_path / "envout"))
    assert cli.main(["pipeline", "--config", str(path), "--seed", "9", "--set", "model.steps=7",
                     "--set", "evaluation.estimators=[Random]"]) == 0
    cfg = seen["cfg"]
    assert cfg.seed == 9 and cfg.model.steps == 7 and cfg.evaluation.estimators == ["Random"]
    assert cfg.out_dir == str(tmp_path / "envout")


def test_runtime_error_exit_code(tmp_path, capsys):
    (tmp_path / "bad.npz").write_bytes(b"not a zip")
    assert cli.main(["attribute", "--model", str(tmp_path / "bad.npz"), "--sentence", "a"]) == 2


@pytest.fixture
def linear_ckpt(tmp_path):
    vocab = Vocab([f"w{i}" for i in range(10)])
    path = tmp_path / "linear.npz"
    save_checkpoint(LinearTestModel(len(vocab), 4, seed=0, vocab=vocab), path)
    return path


def test_attribute_single_token(linear_ckpt, capsys):
    assert cli.main(["attribute", "--model", str(linear_ckpt), "--sentence", "w3", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["importance"] == [1.0]


def test_attribute_json_schema_round_trip(linear_ckpt, capsys):
    assert cli.main(["attribute", "--model", str(linear_ckpt), "--sentence", "w1 w2 zz", "--json", "--steps", "5"]) == 0
    captured = capsys.readouterr()
    rec = json.loads(captured.out)
    assert set(rec) == {"source", "source_tokens", "target_tokens", "importance", "matrix", "steps", "oov"}
    assert rec["oov"] == ["zz"] and "zz" in captured.err
    assert rec["source_tokens"][2] == "<unk>"
    assert np.array(rec["matrix"]).shape == (3, len(rec["target_tokens"]))
    assert sum(rec["importance"]) == pytest.approx(1.0)
    assert json.loads(json.dumps(rec)) == rec


def test_attribute_linear_step_invariance(linear_ckpt, capsys):
    outs = []
    for steps in ("1", "300"):
        cli.main(["attribute", "--model", str(linear_ckpt), "--sentence", "w1", "w4", "w7", "--json", "--steps", steps])
        rec = json.loads(capsys.readouterr().out)
        outs.append((rec["importance"], rec["matrix"]))
    assert np.allclose(outs[0][0], outs[1][0], atol=1e-12) and np.allclose(outs[0][1], outs[1][1], atol=1e-12)


def test_attribute_pretty(linear_ckpt, capsys):
    assert cli.main(["attribute", "--model", str(linear_ckpt), "--sentence", "w1 w2", "--steps", "2"]) == 0
    out = capsys.readouterr().out
    assert "word importance" in out and "contribution matrix" in out


def test_train_evaluate_analyze(corpus_dir, tmp_path, capsys):
    model = tmp_path / "m.npz"
    assert cli.main(["train", "--src", str(corpus_dir / "train.src"), "--tgt", str(corpus_dir / "train.tgt"),
                     "--out", str(model), "--steps", "20", "--embed-dim", "6", "--hidden-dim", "6"]) == 0
    assert cli.main(["evaluate", "--model", str(model), "--test", str(corpus_dir / "test.src"),
                     "--refs", str(corpus_dir / "test.ref"), "--perturbation", "deletion",
                     "--estimators", "Random,Frequency", "--k-max", "2", "--repeats", "2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "curves_deletion.csv").read_text().count("\n") == 7
    assert cli.main(["evaluate", "--model", str(model), "--test", str(corpus_dir / "test.src"),
                     "--refs", str(corpus_dir / "test.ref"), "--perturbation", "replace", "--out", str(tmp_path)]) == 1

    words = [l.split() for l in (corpus_dir / "test.src").read_text().splitlines()]
    records = [{"id": i, "source": w, "estimates": {"Attribution": {"scores": list(np.full(len(w), 1 / len(w)))}}}
               for i, w in enumerate(words)]
    (tmp_path / "imp.json").write_text(json.dumps(records))
    gold = tmp_path / "gold"
    ann.write_undertranslation(gold, {0: {0}})
    assert cli.main(["analyze", "--importance", str(tmp_path / "imp.json"), "--pos", str(corpus_dir / "test.pos"),
                     "--undertranslation", str(gold), "--out", str(tmp_path / "an")]) == 0
    report = json.loads((tmp_path / "an" / "analysis.json").read_text())
    assert "pos_distribution" in report and "undertranslation_f1" in report
    assert "analysis:fertility_distribution" in report["skipped"]
    assert "analysis:undertranslation_f1:Erasure" in report["skipped"]
