import json

import pytest

from rsalab.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from rsalab.config import ConfigError, ExperimentConfig
from rsalab.runner import run, verify_manifest
from rsalab.schemas import validate_outputs

RESULT_FILES = ("summary.json", "replicates.csv", "curves.csv")


def test_yaml_round_trip(tmp_path):
    cfg = ExperimentConfig("clt", dimension=2, lambdas=[8.0, 16.0], replicates=120, seed=7,
                           options={"c_estimate": 0.1})
    path = tmp_path / "c.yaml"
    cfg.save(path)
    assert ExperimentConfig.load(path) == cfg


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "pack", "lambda": 3})


@pytest.mark.parametrize("cfg", [
    dict(kind="pack", replicates=0),
    dict(kind="boundary", lambdas=[8.0, 16.0]),
    dict(kind="nn", tau=2.0),
    dict(kind="clt", substrate="lattice"),
])
def test_invalid_configs(cfg):
    with pytest.raises(ConfigError):
        ExperimentConfig(**cfg).validate()


def test_zero_replicates_exit_code(tmp_path):
    assert main(["pack", "--replicates", "0", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_bad_yaml_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("kind: [unterminated\n")
    assert main(["pack", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_kind_mismatch_exit_code(tmp_path):
    p = tmp_path / "c.yaml"
    ExperimentConfig("clt").save(p)
    assert main(["pack", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_foreign_directory_not_overwritten(tmp_path):
    out = tmp_path / "o"
    out.mkdir()
    (out / "precious.txt").write_text("keep")
    assert main(["pack", "--replicates", "2", "--lambda", "16", "--out", str(out)]) == EXIT_IO
    assert (out / "precious.txt").read_text() == "keep"


def test_missing_config_file_exit_code(tmp_path):
    assert main(["pack", "--config", str(tmp_path / "nope.yaml")]) == EXIT_IO


def test_clt_run_validates(tmp_path):
    out = tmp_path / "clt"
    code = main(["clt", "--dim", "1", "--lambda", "64", "--replicates", "1000", "--seed",
                 "12345", "--out", str(out), "--workers", "1"])
    assert code == EXIT_OK
    validate_outputs(out)
    assert verify_manifest(out)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["master_seed"] == 12345
    assert all(len(v) == 1000 for v in manifest["replicate_seeds"].values())


def _small(kind, **kw):
    base = dict(kind=kind, dimension=1, lambdas=[16.0], replicates=120, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


SMALL = [
    _small("pack", replicates=6),
    _small("correlate", replicates=6),
    _small("clt"),
    _small("boundary", lambdas=[8.0, 16.0, 32.0], replicates=6),
    _small("cones", replicates=200),
    _small("nn", dimension=2, lambdas=[4.0], options={"c_estimate": 0.1,
                                                      "stabilization_probes": 20}),
    _small("oracle", replicates=20),
]


@pytest.mark.parametrize("cfg", SMALL, ids=lambda c: c.kind)
def test_every_experiment_writes_valid_outputs(cfg, tmp_path):
    run(cfg, workers=1, out=str(tmp_path / cfg.kind))
    validate_outputs(tmp_path / cfg.kind)
    assert verify_manifest(tmp_path / cfg.kind)


def test_rerun_reproduces_digests(tmp_path):
    cfg = _small("clt")
    a = run(cfg, workers=1, out=str(tmp_path / "a"))
    b = run(cfg, workers=1, out=str(tmp_path / "a"))
    assert a["files"] == b["files"]


@pytest.mark.parametrize("cfg", [_small("clt"), _small("pack", replicates=6)],
                         ids=lambda c: c.kind)
def test_worker_count_does_not_change_results(cfg, tmp_path):
    run(cfg, workers=1, out=str(tmp_path / "w1"))
    run(cfg, workers=2, out=str(tmp_path / "w2"))
    for name in RESULT_FILES:
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()


def test_workers_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("RSALAB_WORKERS", "2")
    manifest = run(_small("pack", replicates=4), out=str(tmp_path / "env"))
    assert manifest["workers"] == 2


def test_lattice_config_round_trips_through_outputs(tmp_path):
    cfg = ExperimentConfig("pack", dimension=2, substrate="lattice", tau=float("inf"),
                           lambdas=[8.0], replicates=2)
    path = tmp_path / "lat.yaml"
    cfg.save(path)
    assert main(["pack", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
    validate_outputs(tmp_path / "o")
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert ExperimentConfig.from_dict(summary["config"] | {"out": "x"}).tau == float("inf")
