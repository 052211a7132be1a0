import json

import pytest
import yaml

from cft2nn.cache import VERSION
from cft2nn.cli import main
from cft2nn.config import ExperimentConfig, load_config
from cft2nn.errors import ConfigError

SMALL = {
    "dataset": {"name": "synthetic", "synthetic_graphs": 80, "seed": 0},
    "topology": {"resolution": 12},
    "model": {"ttl_widths": [8], "epochs": 40, "batch_size": 16},
}


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({**SMALL, "output_dir": str(tmp_path / "run")}))
    return path


def run(*argv, cache):
    return main([*argv, "--cache-dir", str(cache)])


def cache_files(cache):
    return sorted(cache.glob("*.cache"))


def test_featurize_idempotent_and_keyed(tmp_path, cfg_file, capsys):
    cache = tmp_path / "cache"
    assert run("featurize", "-c", str(cfg_file), cache=cache) == 0
    (f,) = cache_files(cache)
    before = f.read_bytes()
    assert run("featurize", "-c", str(cfg_file), cache=cache) == 0
    assert "up to date" in capsys.readouterr().out
    assert f.read_bytes() == before
    assert run("featurize", "-c", str(cfg_file), "--force", cache=cache) == 0
    assert f.read_bytes() == before
    assert run("featurize", "-c", str(cfg_file), "--resolution", "10", cache=cache) == 0
    assert len(cache_files(cache)) == 2


def test_cache_dir_env(tmp_path, cfg_file, monkeypatch):
    monkeypatch.setenv("CFT2NN_CACHE_DIR", str(tmp_path / "envcache"))
    assert main(["featurize", "-c", str(cfg_file)]) == 0
    assert len(list((tmp_path / "envcache").glob("*.cache"))) == 1


def test_train_without_cache_exit_5(tmp_path, cfg_file, capsys):
    assert run("train", "-c", str(cfg_file), cache=tmp_path / "empty") == 5
    assert "cft2nn featurize" in capsys.readouterr().err


def test_predict_without_checkpoint_exit_5(tmp_path, cfg_file):
    cache = tmp_path / "cache"
    run("featurize", "-c", str(cfg_file), cache=cache)
    assert run("predict", "-c", str(cfg_file), cache=cache) == 5


def test_cache_version_mismatch_exit_3(tmp_path, cfg_file):
    cache = tmp_path / "cache"
    run("featurize", "-c", str(cfg_file), cache=cache)
    (f,) = cache_files(cache)
    data = bytearray(f.read_bytes())
    data[8] = VERSION + 1
    f.write_bytes(bytes(data))
    assert run("featurize", "-c", str(cfg_file), cache=cache) == 3
    assert run("train", "-c", str(cfg_file), cache=cache) == 3
    f.write_bytes(b"garbage" * 4)
    assert run("train", "-c", str(cfg_file), cache=cache) == 2


def test_format_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"conformal": {"alpah": 0.1}}))
    assert run("info", "-c", str(bad), cache=tmp_path) == 2
    assert run("featurize", "--dataset", "NOPE", "--data-root", str(tmp_path), cache=tmp_path) == 2
    assert "missing required file" in capsys.readouterr().err
    assert run("info", "--set", "model.epochs", cache=tmp_path) == 2
    assert run("info", "--set", "model.nope=3", cache=tmp_path) == 2


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("e2e")
    cache = tmp / "cache"
    outs = []
    for name in ("a", "b"):
        argv = ["-c", "/dev/null", "--output-dir", str(tmp / name)]
        sets = [f"--set={k}.{kk}={json.dumps(v)}" for k, sec in SMALL.items() for kk, v in sec.items()]
        assert run("featurize", *argv, *sets, cache=cache) == 0
        assert run("train", *argv, *sets, cache=cache) == 0
        assert run("predict", *argv, *sets, cache=cache) == 0
        outs.append(tmp / name)
    return tmp, cache, outs, sets


def test_train_reaches_high_accuracy(trained):
    _, _, (a, _), _ = trained
    epochs = [json.loads(l) for l in (a / "train_log.jsonl").read_text().splitlines()]
    assert epochs[0]["type"] == "header"
    assert epochs[-1]["train_acc"] >= 0.95


def test_same_seed_identical_outputs(trained):
    _, _, (a, b), _ = trained
    for name in ("model.ckpt", "train_log.jsonl", "metrics_T.txt", "metrics_E.txt", "results_T.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_metrics_schema(trained):
    _, _, (a, _), _ = trained
    for sfx in "TE":
        kv = dict(l.split("=", 1) for l in (a / f"metrics_{sfx}.txt").read_text().splitlines())
        assert kv["alpha"] == "0.1" and kv["mode"] == "marginal"
        assert {"coverage", "avg_size", "size_sd", "config_hash", "version"} <= set(kv)
        assert 0.0 <= float(kv["coverage"]) <= 1.0


def test_results_records(trained):
    _, _, (a, _), sets = trained
    cfg = ExperimentConfig()
    for s in sets:
        k, v = s[len("--set="):].split("=", 1)
        cfg = cfg.override(k, json.loads(v))
    rows = [json.loads(l) for l in (a / "results_T.jsonl").read_text().splitlines()]
    assert rows[0]["config_hash"] == cfg.hash() and rows[0]["measure"] == "topological"
    for r in rows[1:]:
        assert r["size"] == len(r["set"])
        assert set(r["set"]) == {y for y, p in enumerate(r["p_values"]) if p >= 0.1}
        assert all(0 < p <= 1 for p in r["p_values"])
    ckpt_header = (a / "model.ckpt").read_bytes()
    assert cfg.hash().encode() in ckpt_header


def test_conditional_mode_and_measures(trained, capsys):
    tmp, cache, (a, _), sets = trained
    argv = ["-c", "/dev/null", "--output-dir", str(a), *sets, "--k-nn", "5"]
    assert run("predict", *argv, "--measure", "topological", cache=cache) == 0
    kv = dict(l.split("=", 1) for l in (a / "metrics_T.txt").read_text().splitlines())
    assert kv["mode"] == "conditional" and kv["k_nn_effective"] == "5"
    rows = [json.loads(l) for l in (a / "results_T.jsonl").read_text().splitlines()[1:]]
    assert all(len(r["neighbors"]) == 5 for r in rows)
    assert "topological: alpha=0.1 mode=conditional" in capsys.readouterr().out


def test_info(trained, capsys):
    tmp, cache, (a, _), sets = trained
    assert run("info", "-c", "/dev/null", "--output-dir", str(a), *sets, cache=cache) == 0
    out = capsys.readouterr().out
    assert "backend=" in out and "graphs=80" in out and "checkpoint=" in out


def test_overrides_logged(tmp_path, caplog):
    with caplog.at_level("INFO", logger="cft2nn.config"):
        main(["info", "--alpha", "0.2", "--cache-dir", str(tmp_path)])
    assert "override conformal.alpha=0.2 (was 0.1)" in caplog.text


@pytest.mark.parametrize("argv,note", [
    (["--alpha", "0.1", "--m", "19"], None),
    (["--alpha", "0.1", "--m", "9"], "no exclusion possible"),
    (["--alpha", "0.9", "--m", "99"], None),
])
def test_verify_coverage_pass(capsys, argv, note):
    assert main(["verify-coverage", *argv]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    if note:
        assert note in out


def test_verify_coverage_fail_exit_6(capsys):
    # true coverage 0.55 sits on the upper bound; this seed lands 2 sd above it
    assert main(["verify-coverage", "--alpha", "0.5", "--m", "19", "--seed", "0"]) == 6
    assert "FAIL" in capsys.readouterr().out


def test_config_defaults_and_roundtrip(tmp_path):
    cfg = ExperimentConfig()
    assert cfg.conformal.alpha == 0.1 and cfg.topology.resolution == 50
    assert cfg.dataset.ratios == (0.5, 0.09, 0.21, 0.2) and cfg.model.lr == 1e-3
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert load_config(p) == cfg and load_config(p).hash() == cfg.hash()
    assert cfg.override("output_dir", "elsewhere").hash() == cfg.hash()
    assert cfg.override("conformal.alpha", 0.05).hash() != cfg.hash()
    with pytest.raises(ConfigError):
        cfg.override("conformal.alpha", 1.5)
