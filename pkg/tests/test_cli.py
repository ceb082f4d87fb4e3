import json
import subprocess
import sys

import pytest

from admpo.cli import main

TINY = """
[online]
warmup_steps = 200
epochs = 1
steps_per_epoch = 20
retrain_interval = 10
rollouts_per_step = 4
utd_ratio = 1
eval_interval = 10
eval_episodes = 1
m = 2

[offline]
iterations = 2
rollouts = 5
horizon = 2
m = 2
utd_ratio = 2
eval_interval = 1
eval_episodes = 1

[model]
hidden_size = 8
head_hidden = 8
max_epochs = 1
max_batches_per_epoch = 2
min_batches_per_epoch = none

[sac]
hidden = 8, 8
batch_size = 16

[dataset]
episodes = 3

[eval]
horizon = 5
starts = 5
points = 20
m_values = 2, 3
seeds = 0, 1
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    conf = root / "tiny.ini"
    conf.write_text(TINY)
    assert main(["gen-dataset", "--config", str(conf), "--out", str(root / "data")]) == 0
    assert main(["train-online", "--config", str(conf), "--out", str(root / "online")]) == 0
    return root, conf


def run_twice(root, name, argv):
    outs = []
    for i in range(2):
        out = root / f"{name}{i}"
        assert main([*argv, "--out", str(out)]) == 0
        outs.append(out)
    return outs


def assert_identical(a, b, skip=()):
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        if name == "manifest.json":
            ma, mb = (json.loads((d / name).read_text()) for d in (a, b))
            for m in (ma, mb):
                m.pop("started"), m.pop("finished")
            assert ma == mb
        elif name not in skip:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_gen_dataset_outputs(work):
    root, _ = work
    manifest = json.loads((root / "data" / "dataset_manifest.json").read_text())
    assert manifest["transitions"] == 600 and manifest["env"] == "pendulum"
    run = json.loads((root / "data" / "manifest.json").read_text())
    assert run["command"] == "gen-dataset" and run["format_version"] == 1
    assert run["config"]["dataset"]["episodes"] == 3
    assert set(run["artifacts"]) == {"dataset", "dataset_manifest"}


def test_train_online_artifacts(work):
    root, _ = work
    lines = (root / "online" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2 and "mean_return" in json.loads(lines[0])
    assert (root / "online" / "agent.admp").exists() and (root / "online" / "model.admp").exists()


def test_train_offline_deterministic(work):
    root, conf = work
    a, b = run_twice(root, "off", ["train-offline", "--config", str(conf), "--seed", "7",
                                   "--dataset", str(root / "data" / "dataset.admd")])
    assert_identical(a, b)
    assert len((a / "metrics.jsonl").read_text().splitlines()) == 2


def test_eval_model_deterministic(work):
    root, conf = work
    a, b = run_twice(root, "em", ["eval-model", "--config", str(conf), "--dataset", str(root / "data" / "dataset.admd")])
    assert_identical(a, b)
    rows = (a / "curve_adm.csv").read_text().splitlines()
    assert rows[0].startswith("#") and rows[1] == "length,mean_error,std_error"
    assert len(rows) == 2 + 5


def test_eval_uncertainty_deterministic(work):
    root, conf = work
    a, b = run_twice(root, "eu", ["eval-uncertainty", "--config", str(conf),
                                  "--dataset", str(root / "data" / "dataset.admd"),
                                  "--checkpoint", str(root / "online" / "agent.admp")])
    assert_identical(a, b)
    rows = (a / "scatter.csv").read_text().splitlines()
    assert rows[0] == "u,err,policy_tag" and len(rows) > 1
    summary = json.loads((a / "scatter_summary.json").read_text())
    assert set(summary["mean_u"]) == {"behavior", "learned", "random"}


def test_m_sweep_deterministic(work):
    root, conf = work
    a, b = run_twice(root, "ms", ["m-sweep", "--config", str(conf), "--dataset", str(root / "data" / "dataset.admd")])
    assert_identical(a, b)
    rows = (a / "sweep.csv").read_text().splitlines()
    assert rows[0] == "m,mean_return,std_return" and len(rows) == 3


def test_gen_dataset_deterministic(work):
    root, conf = work
    a, b = run_twice(root, "gd", ["gen-dataset", "--config", str(conf), "--seed", "3"])
    assert_identical(a, b)


def test_flag_overrides_reach_manifest(work):
    root, conf = work
    out = root / "flags"
    assert main(["train-offline", "--config", str(conf), "--dataset", str(root / "data" / "dataset.admd"),
                 "--beta", "0", "--horizon", "1", "--m", "3", "--out", str(out)]) == 0
    off = json.loads((out / "manifest.json").read_text())["config"]["offline"]
    assert (off["beta"], off["horizon"], off["m"]) == (0.0, 1, 3)


def test_missing_dataset_exit_2(tmp_path, capsys):
    assert main(["train-offline", "--out", str(tmp_path / "x")]) == 2
    assert "dataset" in capsys.readouterr().err


def test_unknown_flag_exit_2(tmp_path, capsys):
    assert main(["train-offline", "--bogus", "--out", str(tmp_path)]) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_config_value_names_key(tmp_path, capsys):
    conf = tmp_path / "c.ini"
    conf.write_text("[offline]\nhorizon = 0\n")
    assert main(["train-offline", "--config", str(conf), "--out", str(tmp_path / "o")]) == 2
    assert "horizon" in capsys.readouterr().err


def test_bad_log_level_exit_2(tmp_path, monkeypatch):
    monkeypatch.setenv("ADMPO_LOG_LEVEL", "loud")
    assert main(["gen-dataset", "--out", str(tmp_path)]) == 2


def test_missing_checkpoint_exit_2(work, capsys):
    root, conf = work
    assert main(["eval-uncertainty", "--config", str(conf), "--dataset", str(root / "data" / "dataset.admd"),
                 "--checkpoint", str(root / "nope.admp"), "--out", str(root / "eu_bad")]) == 2
    assert "checkpoint" in capsys.readouterr().err


def test_entry_point_unknown_command():
    proc = subprocess.run([sys.executable, "-m", "admpo.cli", "fly"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr
