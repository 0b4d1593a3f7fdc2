import csv
from pathlib import Path

import numpy as np
import pytest

from fairpbrl import config as cfgmod
from fairpbrl import seeding
from fairpbrl._validation import ContractError, DivergenceError
from fairpbrl.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FAST = ["--set", "agent.total_steps=400", "--set", "agent.buffer_size=200", "--set", "pref.segment_length=5",
        "--set", "agent.hidden=8"]


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.delenv("FPRL_OUT", raising=False)
    monkeypatch.chdir(tmp_path)
    return tmp_path / "runs"


def train(out, *extra):
    return main(["train", "--env", "bandit", "--out", str(out), *FAST, *extra])


# -- config ----------------------------------------------------------------------

def test_every_key_has_default():
    assert cfgmod.DEFAULTS["agent.gamma"] == 0.99
    assert cfgmod.DEFAULTS["pref.budget"] == 700
    assert cfgmod.DEFAULTS["eval.trajectories"] == 100
    assert cfgmod.DEFAULTS["env.resources.stone_value"] == 0.4
    assert cfgmod.DEFAULTS["env.traffic.arrival_p0"] == 0.5


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "x.cfg"
    path.write_text("# comment\nenv = species\nagent.hidden = 32, 16\npref.discounted = false\n\n"
                    "env.species.oil_spill_prob = 0.0  # no spills\n")
    cfg = cfgmod.load(path, ["agent.gamma=0.9"])
    assert cfg["env"] == "species" and cfg["agent.hidden"] == (32, 16)
    assert cfg["pref.discounted"] is False and cfg["agent.gamma"] == 0.9
    assert cfgmod.env_params(cfg)["oil_spill_prob"] == 0.0
    params = cfgmod.agent_params(cfg)
    assert params["hidden"] == (32, 16) and params["weights"] is None


def test_config_unknown_key_named(tmp_path):
    path = tmp_path / "x.cfg"
    path.write_text("foo = 1\n")
    with pytest.raises(ContractError, match="foo"):
        cfgmod.load(path)
    with pytest.raises(ContractError, match="bar"):
        cfgmod.load(None, ["bar=2"])


def test_config_bad_value():
    with pytest.raises(ContractError, match="agent.gamma"):
        cfgmod.load(None, ["agent.gamma=fast"])


def test_config_dump_round_trip(tmp_path):
    cfg = cfgmod.load(None, ["welfare.weights=1,0.25", "env=traffic"])
    cfgmod.dump(cfg, tmp_path / "c.cfg")
    assert cfgmod.load(tmp_path / "c.cfg") == cfg


@pytest.mark.parametrize("name", ["resources", "species", "traffic", "bandit"])
def test_shipped_configs_parse(name):
    cfg = cfgmod.load(CONFIGS / f"{name}.cfg")
    assert cfg["env"] == name


# -- seeding -----------------------------------------------------------------------

def test_streams_independent():
    a = seeding.stream(7, "env").random(5)
    seeding.stream(7, "oracle").random(1000)
    b = seeding.stream(7, "env").random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, seeding.stream(7, "oracle").random(5))
    assert not np.array_equal(a, seeding.stream(8, "env").random(5))


# -- commands ----------------------------------------------------------------------

def test_train_layout(out):
    assert train(out, "--variant", "fpbrl", "--seed", "0") == 0
    run = out / "bandit" / "fpbrl" / "seed0"
    assert {p.name for p in run.iterdir()} == {"config.cfg", "trace.csv", "model.ckpt"}
    with open(run / "trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["iteration", "env_steps", "welfare_score"] and len(rows) == 3


def test_fprl_out_env_var(out, monkeypatch, tmp_path):
    monkeypatch.setenv("FPRL_OUT", str(tmp_path / "elsewhere"))
    assert main(["train", "--env", "bandit", *FAST, "--variant", "pbrl_scalar"]) == 0
    assert (tmp_path / "elsewhere" / "bandit" / "pbrl_scalar" / "seed0" / "model.ckpt").is_file()


def test_train_with_config_file(out, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("env = bandit\nvariant = ppo_ground_truth\nseed = 3\n")
    assert main(["train", "--config", str(cfg), "--out", str(out), *FAST]) == 0
    assert (out / "bandit" / "ppo_ground_truth" / "seed3" / "model.ckpt").is_file()


def test_train_unknown_key_exit_2(out, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("foo = 1\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "foo" in capsys.readouterr().err


def test_train_bogus_variant_exit_2(out):
    assert train(out, "--variant", "bogus") == 2


def test_train_unknown_env_exit_2(out):
    assert main(["train", "--env", "nowhere"]) == 2


def test_train_inconsistent_config_exit_2(out):
    # segments longer than the episode
    assert train(out, "--set", "pref.segment_length=50") == 2


def test_train_runtime_failure_exit_1(out, monkeypatch):
    from fairpbrl import agent

    def diverge(*args, **kwargs):
        raise DivergenceError("non-finite PPO loss", {})

    monkeypatch.setattr(agent, "ppo_update", diverge)
    assert train(out, "--variant", "fpbrl") == 1
    trace = out / "bandit" / "fpbrl" / "seed0" / "trace.csv"
    # the header was written before the failure
    assert trace.read_text().startswith("iteration,")


def test_bad_subcommand_exit_2():
    assert main(["dance"]) == 2


def test_eval_and_compare(out, tmp_path):
    assert train(out, "--variant", "pbrl_scalar,fpbrl", "--seed", "0-1") == 0
    runs = sorted(out.glob("bandit/*/seed*"))
    assert len(runs) == 4
    for run in runs:
        assert main(["eval", str(run), "--trajectories", "10"]) == 0
    with open(runs[0] / "eval_report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 11 and rows[-1]["row"] == "mean"
    dest = tmp_path / "cmp"
    assert main(["compare", str(out), "--out", str(dest), "--plot-data"]) == 0
    with open(dest / "comparison.csv") as fh:
        table = list(csv.DictReader(fh))
    assert [r["variant"] for r in table] == ["pbrl_scalar", "fpbrl"]
    assert all(r["n_seeds"] == "2" for r in table)
    assert (dest / "plot_data.csv").is_file()


def test_eval_default_trajectories(out):
    assert train(out, "--variant", "fpbrl", "--set", "env.bandit.episode_length=5") == 0
    run = out / "bandit" / "fpbrl" / "seed0"
    assert main(["eval", str(run / "model.ckpt")]) == 0
    with open(run / "eval_report.csv") as fh:
        assert sum(1 for r in csv.DictReader(fh) if r["row"] != "mean") == 100


def test_eval_missing_checkpoint_exit_2(out, capsys):
    assert main(["eval", "missing/model.ckpt"]) == 2
    assert "missing/model.ckpt" in capsys.readouterr().err


def test_eval_wrong_role_exit_2(out, tmp_path):
    from fairpbrl import approximator as nn

    path = tmp_path / "reward_only.ckpt"
    nn.save_checkpoint(path, {"reward": nn.init_mlp([3, 2], 0)})
    assert main(["eval", str(path), "--env", "bandit"]) == 2


def test_compare_single_dir(out, tmp_path):
    assert train(out, "--variant", "fpbrl") == 0
    run = out / "bandit" / "fpbrl" / "seed0"
    assert main(["eval", str(run), "--trajectories", "3"]) == 0
    assert main(["compare", str(run), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "comparison.csv") as fh:
        (row,) = list(csv.DictReader(fh))
    assert float(row["welfare_std"]) == 0.0


def test_compare_mixed_envs_exit_2(out, tmp_path):
    assert train(out, "--variant", "fpbrl") == 0
    assert main(["train", "--env", "species", "--out", str(out), "--variant", "fpbrl",
                 "--set", "agent.total_steps=200", "--set", "agent.buffer_size=100",
                 "--set", "pref.segment_length=5", "--set", "agent.hidden=8"]) == 0
    for run in out.glob("*/fpbrl/seed0"):
        assert main(["eval", str(run), "--trajectories", "2"]) == 0
    assert main(["compare", str(out / "bandit"), str(out / "species"), "--out", str(tmp_path)]) == 2


def test_compare_missing_exit_2(tmp_path):
    assert main(["compare", str(tmp_path / "none")]) == 2


def test_cli_byte_identical(out, tmp_path):
    for root in ("a", "b"):
        assert main(["train", "--env", "bandit", "--out", str(tmp_path / root), *FAST, "--variant", "fpbrl"]) == 0
        run = tmp_path / root / "bandit" / "fpbrl" / "seed0"
        assert main(["eval", str(run), "--trajectories", "5"]) == 0
    for name in ("trace.csv", "eval_report.csv", "model.ckpt"):
        a = (tmp_path / "a" / "bandit" / "fpbrl" / "seed0" / name).read_bytes()
        b = (tmp_path / "b" / "bandit" / "fpbrl" / "seed0" / name).read_bytes()
        assert a == b


def test_parallel_jobs_match_serial(tmp_path):
    for root, jobs in (("serial", "1"), ("parallel", "2")):
        assert main(["train", "--env", "bandit", "--out", str(tmp_path / root), *FAST,
                     "--variant", "fpbrl", "--seed", "0,1", "--jobs", jobs]) == 0
    for seed in (0, 1):
        rel = Path("bandit") / "fpbrl" / f"seed{seed}" / "trace.csv"
        assert (tmp_path / "serial" / rel).read_bytes() == (tmp_path / "parallel" / rel).read_bytes()
