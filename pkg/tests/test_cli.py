import json

import pytest

from diffe import cli, training
from diffe.checkpoint import load_checkpoint
from diffe.config import build_config, load_config
from diffe.dataset import load
from diffe.errors import ConfigError, NumericError
from diffe.evaluation import RunReport

SMALL = {
    "data": {"n_classes": 3, "trials_per_class": 10, "channels": 2},
    "model": {"latent_dim": 16, "groups": 2, "time_dim": 8, "denoiser_widths": [4, 4, 4],
              "encoder_widths": [4, 4, 4, 4], "classifier_hidden": [8]},
    "train": {"epochs": 2, "T": 20, "batch_size": 8},
    "eval": {"seeds": [0, 1]},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL))
    assert cli.main(["generate", "--config", str(cfg), "--out", str(root / "raw.bin")]) == 0
    assert cli.main(["preprocess", "--config", str(cfg), "--in", str(root / "raw.bin"),
                     "--out", str(root / "pre.bin")]) == 0
    return root


def only_run(path):
    runs = [p for p in path.iterdir() if p.is_dir()]
    assert len(runs) == 1
    return runs[0]


def train(workspace, out, *extra):
    rc = cli.main(["train", "--config", str(workspace / "small.json"), "--data",
                   str(workspace / "pre.bin"), "--out-dir", str(out), *extra])
    return rc, (only_run(out) if out.exists() else None)


def test_generate_default_size(tmp_path, capsys):
    assert cli.main(["generate", "--out", str(tmp_path / "d.bin")]) == 0
    assert len(load(tmp_path / "d.bin")) == 1300
    assert "n=1300" in capsys.readouterr().out


def test_generate_seed_is_reproducible(workspace, tmp_path):
    cfg = str(workspace / "small.json")
    for name in ("a.bin", "b.bin"):
        assert cli.main(["generate", "--config", cfg, "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.bin").read_bytes() != (workspace / "raw.bin").read_bytes()


def test_invalid_carrier_exit_code(tmp_path, capsys):
    rc = cli.main(["generate", "--set", "data.carriers=[80, 300, 90]", "--set", "data.n_classes=3",
                   "--out", str(tmp_path / "x.bin")])
    assert rc == 2
    assert "data.carriers" in capsys.readouterr().err


def test_train_run_directory(workspace, tmp_path):
    rc, run = train(workspace, tmp_path / "runs", "--epochs", "1", "--ablation", "no_ddpm")
    assert rc == 0
    assert sorted(p.name for p in run.iterdir()) == ["config.json", "history.csv", "model.ckpt",
                                                     "report.json"]
    assert len((run / "history.csv").read_text().splitlines()) == 2
    echoed = json.loads((run / "config.json").read_text())
    assert echoed["train"]["ablation"] == "no_ddpm" and echoed["train"]["epochs"] == 1
    assert echoed["data"]["noise_level"] == 6.0       # defaults are echoed too
    model, _ = load_checkpoint(run / "model.ckpt")
    assert model.ablation == "no_ddpm" and model.decoder is not None and model.denoiser is None


def test_train_is_reproducible_from_echoed_config(workspace, tmp_path):
    _, first = train(workspace, tmp_path / "a", "--seed", "5")
    _, second = train(workspace, tmp_path / "b", "--seed", "5")
    report = (first / "report.json").read_text()
    assert report == (second / "report.json").read_text()
    assert (first / "history.csv").read_text() == (second / "history.csv").read_text()
    rc = cli.main(["train", "--config", str(first / "config.json"), "--data",
                   str(workspace / "pre.bin"), "--out-dir", str(tmp_path / "c")])
    assert rc == 0
    assert (only_run(tmp_path / "c") / "report.json").read_text() == report


def test_eval_matches_train_report(workspace, tmp_path):
    _, run = train(workspace, tmp_path / "runs")
    out = tmp_path / "eval.json"
    assert cli.main(["eval", "--checkpoint", str(run / "model.ckpt"), "--data",
                     str(workspace / "pre.bin"), "--out", str(out)]) == 0
    assert RunReport.from_json(out.read_text()) == RunReport.from_json((run / "report.json").read_text())


def test_train_rejects_raw_data(workspace, tmp_path):
    rc = cli.main(["train", "--data", str(workspace / "raw.bin"), "--out-dir", str(tmp_path)])
    assert rc == 2


def test_corrupt_data_is_io_error(workspace, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes((workspace / "pre.bin").read_bytes()[:-10])
    assert cli.main(["train", "--data", str(bad), "--out-dir", str(tmp_path / "r")]) == 4
    assert cli.main(["train", "--data", str(tmp_path / "missing.bin")]) == 4


def test_numeric_failure_keeps_checkpoint(workspace, tmp_path, monkeypatch):
    real = training.diffe_step
    calls = {"n": 0}

    def flaky(*a):
        calls["n"] += 1
        if calls["n"] > 3:  # 3 steps per epoch on 24 training trials
            raise NumericError("non-finite loss")
        return real(*a)

    monkeypatch.setattr(training, "diffe_step", flaky)
    rc, run = train(workspace, tmp_path / "runs", "--epochs", "4")
    assert rc == 3
    _, extra = load_checkpoint(run / "model.ckpt")
    assert extra["epoch"] == 1
    assert len((run / "history.csv").read_text().splitlines()) == 2


def test_ablate_counts(workspace, tmp_path):
    rc = cli.main(["ablate", "--config", str(workspace / "small.json"), "--data",
                   str(workspace / "pre.bin"), "--out-dir", str(tmp_path), "--epochs", "1"])
    assert rc == 0
    run = only_run(tmp_path)
    assert len(list(run.glob("*/model.ckpt"))) == 6
    rows = (run / "ablation.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["full", "no_ddpm", "no_ddpm_no_decoder"]
    assert (run / "ablation.txt").exists()


def test_ablate_single_seed_has_zero_std(workspace, tmp_path):
    rc = cli.main(["ablate", "--config", str(workspace / "small.json"), "--data",
                   str(workspace / "pre.bin"), "--out-dir", str(tmp_path), "--epochs", "1",
                   "--seeds", "3"])
    assert rc == 0
    rows = [r.split(",") for r in (only_run(tmp_path) / "ablation.csv").read_text().splitlines()[1:]]
    assert all(float(r[3]) == 0.0 and float(r[5]) == 0.0 for r in rows)


def test_config_schema():
    cfg = build_config({"train": {"alpha": 0}}, ["train.epochs=3", "pipeline.band_select=false"])
    assert cfg.train.alpha == 0.0 and isinstance(cfg.train.alpha, float)
    assert cfg.train.epochs == 3 and cfg.pipeline.band_select is False
    for doc, sets in (({"nope": {}}, []), ({"train": {"epochs": "ten"}}, []),
                      ({}, ["train.unknown=1"]), ({}, ["eval.seeds=[]"]), ({}, ["trainepochs=1"])):
        with pytest.raises(ConfigError):
            build_config(doc, sets)


def test_config_file_round_trip(tmp_path):
    cfg = build_config({}, ["data.seed=4"])
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg
    path.write_text("{broken")
    with pytest.raises(ConfigError):
        load_config(path)
