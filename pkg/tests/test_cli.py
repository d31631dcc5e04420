import csv
import json

import pytest

from remtkd import cli, config
from remtkd.config import ConfigError, RunConfig, resolve

TINY_CFG = """
n_train: 2
n_test: 2
size: 32
teacher_epochs: 1
epochs: 1
batch_size: 4
update_interval: 1
warmup_windows: 1
stage_channels: [4, 8, 16, 32]
d: 16
eam_channels: 4
"""


def test_resolution_order(tmp_path, monkeypatch):
    monkeypatch.setenv(config.OUT_ENV, str(tmp_path / "env"))
    assert RunConfig().out == str(tmp_path / "env")
    f = tmp_path / "c.yaml"
    f.write_text("lr: 0.001\nepochs: 3\n")
    c = resolve(f, {"epochs": "5"})
    assert c.lr == 0.001 and c.epochs == 5 and c.batch_size == 8
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"reward": "1", "soft": 2}))
    c = resolve(j)
    assert c.reward == "reward1" and c.soft == "soft2"


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        resolve(overrides={"nope": 1})
    f = tmp_path / "bad.yaml"
    f.write_text("learning_rate: 1\n")
    with pytest.raises(ConfigError):
        resolve(f)
    with pytest.raises(ConfigError):
        resolve(overrides={"strategy": "magic"})
    with pytest.raises(ConfigError):
        resolve(overrides={"policy_baseline": "maybe"})
    with pytest.raises(FileNotFoundError):
        resolve(tmp_path / "missing.yaml")


def test_defaults_match_trainer():
    t = RunConfig().trainer()
    assert (t.lr, t.batch_size, t.epochs, t.update_interval) == (1e-3, 8, 8, 80)
    assert (t.weights.alpha, t.weights.beta, t.weights.lambda0_s, t.weights.omega) == (1.0, 0.2, 0.1, 0.05)
    assert t.reward.variant == "reward3" and t.reward.gamma == 0.2 and t.soft_variant == "soft3"
    assert t.policy_lr == 3e-4


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    (root / "c.yaml").write_text(TINY_CFG)
    args = ["--config", str(root / "c.yaml"), "--out", str(root / "out"), "--seed", "1"]
    assert cli.main(["gen-data", *args]) == 0
    assert cli.main(["train-teacher", *args]) == 0
    return root, args


def test_pipeline_commands(workspace, capsys):
    root, args = workspace
    out = root / "out"
    assert cli.main(["distill", *args, "--strategy", "baseline"]) == 0
    assert cli.main(["pretrain-policy", *args]) == 0
    assert cli.main(["distill", *args, "--strategy", "redts", "--reward", "3", "--soft", "soft3"]) == 0
    assert (out / "students" / "redts-reward3-soft3.rmtk").exists()
    assert (out / "students" / "redts-reward3-soft3.policy.rmtk").exists()
    first = json.loads((out / "logs" / "distill-redts-reward3-soft3.jsonl").read_text().splitlines()[0])
    assert first["config"]["strategy"] == "redts" and first["config"]["seed"] == 1
    assert first["config"]["stage_channels"] == [4, 8, 16, 32]

    ck = str(out / "students" / "baseline.rmtk")
    assert cli.main(["evaluate", *args, ck]) == 0
    assert cli.main(["evaluate", *args, ck, "--perturb", "jpeg:75"]) == 0
    assert (out / "reports" / "baseline.csv").exists()
    assert (out / "reports" / "baseline-jpeg75.jsonl").exists()
    assert cli.main(["plot", *args, ck, "--output", str(root / "r.png")]) == 0
    assert (root / "r.png").read_bytes()[:4] == b"\x89PNG"


def test_ablate_grid(workspace):
    root, args = workspace
    table = root / "ablate.csv"
    assert cli.main(["ablate", *args, "--strategies", "baseline,u_ensemble,redts", "--rewards", "3",
                     "--table", str(table)]) == 0
    rows = list(csv.DictReader(table.open()))
    assert [r["run"] for r in rows] == ["baseline", "u_ensemble-soft3", "redts-reward3-soft3"]


def test_deterministic_under_seed(workspace, tmp_path):
    root, args = workspace
    out = root / "out"
    assert cli.main(["distill", *args, "--strategy", "u_ensemble"]) == 0
    a = (out / "students" / "u_ensemble-soft3.rmtk").read_bytes()
    assert cli.main(["distill", *args, "--strategy", "u_ensemble"]) == 0
    assert (out / "students" / "u_ensemble-soft3.rmtk").read_bytes() == a


def test_distinct_diagnostics(workspace, tmp_path, capsys):
    root, args = workspace
    assert cli.main(["distill", *args, "--set", "bogus=1"]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert cli.main(["evaluate", *args, str(tmp_path / "none.rmtk")]) == cli.EXIT_MISSING
    assert "missing file" in capsys.readouterr().err
    bad = tmp_path / "bad.rmtk"
    raw = bytearray((root / "out" / "teachers" / "splicing.rmtk").read_bytes())
    raw[100] ^= 1
    bad.write_bytes(bytes(raw))
    assert cli.main(["evaluate", *args, str(bad)]) == cli.EXIT_CHECKSUM
    assert "corrupt checkpoint" in capsys.readouterr().err
    empty = ["--out", str(tmp_path / "empty")]
    assert cli.main(["distill", *empty, "--strategy", "u_ensemble"]) == cli.EXIT_MISSING
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1 and "gen-data" in err
