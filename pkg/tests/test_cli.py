import csv
import json
import os

import numpy as np
import pytest

from posthoc_bandit import cli
from posthoc_bandit.core import Interaction
from posthoc_bandit.dataio import write_interaction_log
from posthoc_bandit.environments import replay_env
from posthoc_bandit.experiments import RunConfig, run_exp2_regret

DATA = os.environ.get("POSTHOC_BANDIT_DATA")
needs_mnist = pytest.mark.skipif(not DATA, reason="POSTHOC_BANDIT_DATA not set")


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_exp1_smoke_one_row_per_learner(tmp_path, capsys):
    assert cli.main(["exp1", "--trials", "1", "--steps", "1", "--out-dir", str(tmp_path)]) == 0
    for dc in (10, 100):
        for mode in ("context-only", "posthoc"):
            rows = _rows(tmp_path / f"exp1_dc{dc}_{mode}.csv")
            assert rows[0][:3] == ["step", "cumulative_regret_mean", "cumulative_regret_stderr"]
            assert len(rows) == 2
    echo = json.loads(capsys.readouterr().err.splitlines()[0])
    assert echo["config"]["alpha"] == 0.1 and echo["config"]["trials"] == 1
    assert echo["config"]["num_actions"] == 10 and echo["config"]["posthoc_dim"] == 3


def test_exp1_deterministic(tmp_path):
    args = ["exp1", "--trials", "3", "--steps", "40", "--d-c", "10", "--n-boot", "200"]
    out = tmp_path / "a"
    assert cli.main(args + ["--out-dir", str(out)]) == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert "exp1_dc10_difference.csv" in first
    assert cli.main(args + ["--out-dir", str(out)]) == 0
    assert first == {p.name: p.read_bytes() for p in out.iterdir()}
    # parallel trials change only the echoed config, never the curves
    assert cli.main(args + ["--out-dir", str(tmp_path / "b"), "--jobs", "2"]) == 0
    for name in first:
        if name.endswith(".csv"):
            assert first[name] == (tmp_path / "b" / name).read_bytes(), name


def test_single_learner(tmp_path):
    assert cli.main(["exp1", "--trials", "1", "--steps", "5", "--d-c", "10", "--learner", "posthoc",
                     "--out-dir", str(tmp_path)]) == 0
    assert not (tmp_path / "exp1_dc10_context-only.csv").exists()
    assert not (tmp_path / "exp1_dc10_difference.csv").exists()


def test_invalid_dims_fail_before_running(tmp_path, capsys):
    code = cli.main(["exp1", "--d-c", "2", "--d-p", "3", "--out-dir", str(tmp_path / "o")])
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["type"] == "ValueError" and "posthoc_dim" in err["error"]
    assert not (tmp_path / "o").exists()


def test_missing_data_dir_error(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("POSTHOC_BANDIT_DATA", raising=False)
    assert cli.main(["exp2-mse", "--out-dir", str(tmp_path)]) == 2
    assert "POSTHOC_BANDIT_DATA" in json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"]


def test_exp2_defaults():
    args = cli.build_parser().parse_args(["exp2-regret"])
    cfg = cli.config_from_args(args)
    assert (cfg.num_actions, cfg.posthoc_dim, cfg.pca_components, cfg.steps) == (10, 10, 200, 10000)
    cfg = cli.config_from_args(cli.build_parser().parse_args(["exp1"]))
    assert (cfg.trials, cfg.steps, tuple(cfg.context_dims)) == (40, 1000, (10, 100))
    cfg = cli.config_from_args(cli.build_parser().parse_args(["offline-eval", "x.jsonl"]))
    assert cfg.alpha == 0.01


def test_proptest_oracles_exit_zero(capsys):
    assert cli.main(["proptest-oracles"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 6 and all(line.startswith("PASS") for line in lines)


# --- offline evaluation -----------------------------------------------------

def _synthetic_log(rng, n=300, K=3, groups=3, dp=2, dc=4):
    truth = rng.uniform(0.1, 0.9, size=(groups, K))
    proto_c = rng.standard_normal((groups, dc))
    proto_p = rng.standard_normal((groups, dp))
    log = []
    for i in range(n):
        g = int(rng.integers(groups))
        a = int(rng.integers(K))
        loss = float(rng.random() < truth[g, a])
        log.append(Interaction(proto_c[g] + 0.1 * rng.standard_normal(dc), a, loss,
                               proto_p[g] + 0.1 * rng.standard_normal(dp), propensity=1 / K,
                               group_key=f"g{g}", step=i))
    return log, truth


def test_dr_replay_recovers_true_group_losses():
    rng = np.random.default_rng(0)
    log, truth = _synthetic_log(rng, n=20000)
    full = replay_env(log, "dr", 3)
    groups = np.array([int(x.group_key[1:]) for x in log])
    for g in range(truth.shape[0]):
        rows = full[groups == g]
        se = rows.std(axis=0, ddof=1) / np.sqrt(len(rows))
        assert np.all(np.abs(rows.mean(axis=0) - truth[g]) < 4 * se)


def test_offline_eval_smoke(tmp_path, capsys):
    log, _ = _synthetic_log(np.random.default_rng(1))
    path = tmp_path / "log.jsonl"
    write_interaction_log(path, log)
    out = tmp_path / "out"
    assert cli.main(["offline-eval", str(path), "--trials", "2", "--alpha-grid", "0.05",
                     "--out-dir", str(out)]) == 0
    sweep = _rows(out / "offline_alpha_sweep.csv")
    assert len(sweep) == 2 and sweep[0][0] == "alpha"
    summary = json.loads((out / "offline_summary.json").read_text())
    assert summary["imputation"] == "dr" and summary["records"] == 300
    mse_rows = _rows(out / "offline_mse_difference.csv")
    assert len(mse_rows) == summary["train"] + 2
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert cli.main(["offline-eval", str(path), "--trials", "2", "--alpha-grid", "0.05",
                     "--out-dir", str(out)]) == 0
    assert first == {p.name: p.read_bytes() for p in out.iterdir()}


def test_offline_eval_herded_single_group(tmp_path):
    from posthoc_bandit.experiments import run_offline_eval

    one_action = [Interaction([1.0], 0, float(i % 2), [1.0], group_key="g") for i in range(10)]
    np.testing.assert_allclose(replay_env(one_action, "herded"), 0.5)
    log = [Interaction([1.0, float(i)], i % 2, float(i % 3 == 0), [1.0], group_key="g", step=i)
           for i in range(12)]
    path = tmp_path / "log.jsonl"
    write_interaction_log(path, log)
    cfg = RunConfig(trials=1, imputation="herded", alpha_grid=(0.0, 0.1), num_actions=0)
    rep = run_offline_eval(cfg, str(path))
    assert len(rep["sweep"]) == 2 and rep["imputation"] == "herded"
    full = replay_env(log, "herded")
    np.testing.assert_allclose(full, np.tile(full[0], (12, 1)))


@pytest.mark.parametrize("drop,field", [("propensity", "propensity"), ("posthoc", "posthoc"),
                                        ("group_key", "group_key")])
def test_offline_eval_names_missing_field(tmp_path, capsys, drop, field):
    log, _ = _synthetic_log(np.random.default_rng(2), n=20)
    for x in log:
        setattr(x, drop, None)
    path = tmp_path / "log.jsonl"
    write_interaction_log(path, log)
    assert cli.main(["offline-eval", str(path), "--out-dir", str(tmp_path / "o")]) == 2
    assert f"'{field}'" in json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"]


# --- MNIST runners ------------------------------------------------------------

@pytest.mark.mnist
@needs_mnist
def test_exp2_mse_smoke(tmp_path):
    assert cli.main(["exp2-mse", "--trials", "1", "--steps", "20", "--test-subset", "200",
                     "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "exp2_mse.csv")
    assert rows[0][0] == "step" and [r[0] for r in rows[1:]] == ["0", "10", "20"]
    header = rows[0]
    first = dict(zip(header, rows[1]))
    # zero model at step 0: nine unit entries per loss vector
    assert float(first["context-only_mse_mean"]) == pytest.approx(9.0, abs=1e-12)
    assert float(first["posthoc_phi_mse_mean"]) == pytest.approx(9.0, abs=1e-12)


@pytest.mark.mnist
@needs_mnist
def test_exp2_regret_cap_and_determinism(tmp_path):
    cfg = RunConfig(trials=1, steps=10**6, data_dir=DATA, num_actions=10, posthoc_dim=10)
    run_exp2_regret_small = RunConfig(trials=1, steps=30, data_dir=DATA, num_actions=10, posthoc_dim=10,
                                      out_dir=str(tmp_path / "a"))
    res = run_exp2_regret(run_exp2_regret_small)
    assert res["regret"]["posthoc"].shape == (1, 30)
    run_exp2_regret_small.out_dir = str(tmp_path / "b")
    run_exp2_regret(run_exp2_regret_small)
    for name in ("exp2_regret_posthoc.csv", "exp2_regret_context-only.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # the cap is applied before any trial runs
    cfg.trials = 0
    with pytest.raises(IndexError):
        run_exp2_regret(cfg)
    assert cfg.steps == 10000
