import json

import pytest

from cenra.cli import main

SMALL = """
[run]
total_steps = 150
log_interval = 50
eval_episodes = 2
[cra]
hidden = 8, 8
batch_size = 16
burn_in = 30
[dqn]
hidden = 8, 8
batch_size = 16
burn_in = 40
[sync]
K = 10
"""


@pytest.fixture(scope="module")
def run0(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.cfg"
    cfg.write_text(SMALL)
    out = root / "run0"
    assert main(["train", "--config", str(cfg), "--seed", "0", "--out", str(out)]) == 0
    return root, cfg, out


def test_train_artifacts(run0):
    _, _, out = run0
    names = {p.name for p in out.iterdir()}
    assert {"metrics.csv", "cra.ckpt", "resolved-config", "eval.json"} <= names
    assert {f"dqn_{i}.ckpt" for i in range(4)} <= names
    assert "seed = 0" in (out / "resolved-config").read_text()


def test_rerun_from_resolved_config_is_identical(run0):
    root, _, out = run0
    again = root / "again"
    assert main(["train", "--config", str(out / "resolved-config"), "--seed", "0", "--out", str(again)]) == 0
    assert (again / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()
    assert (again / "cra.ckpt").read_bytes() == (out / "cra.ckpt").read_bytes()


def test_frozen_transfer_leaves_input(run0):
    root, cfg, out = run0
    before = (out / "cra.ckpt").read_bytes()
    dest = root / "xfer"
    code = main(["transfer", "--config", str(cfg), "--cra", str(out / "cra.ckpt"), "--task", "maze5",
                 "--freeze", "--out", str(dest)])
    assert code == 0
    assert (out / "cra.ckpt").read_bytes() == before
    assert (dest / "dqn_0.ckpt").exists() and not (dest / "cra.ckpt").exists()


def test_learning_transfer_writes_new_cra(run0):
    root, cfg, out = run0
    dest = root / "xfer_learn"
    assert main(["transfer", "--config", str(cfg), "--cra", str(out / "cra.ckpt"), "--task", "maze5",
                 "--out", str(dest)]) == 0
    assert (dest / "cra.ckpt").read_bytes() != (out / "cra.ckpt").read_bytes()


def test_reward_map(run0, capsys):
    root, _, out = run0
    assert main(["reward-map", "--cra", str(out / "cra.ckpt"), "--task", "maze1", "--has-key", "false",
                 "--out", str(root / "maps")]) == 0
    assert "oracle agreement" in capsys.readouterr().out
    doc = json.loads((root / "maps" / "reward-map_maze1_nokey.json").read_text())
    assert 0 <= doc["summary"]["oracle_agreement"] <= 1


def test_eval(run0, capsys):
    _, _, out = run0
    assert main(["eval", str(out), "--episodes", "2"]) == 0
    assert "suite:" in capsys.readouterr().out


def test_baselines(run0):
    root, cfg, _ = run0
    assert main(["baseline", "--baseline", "plain", "--config", str(cfg), "--out", str(root / "plain")]) == 0
    assert not (root / "plain" / "cra.ckpt").exists()
    assert main(["baseline", "--baseline", "relara", "--config", str(cfg), "--out", str(root / "relara")]) == 0
    assert (root / "relara" / "cra_3.ckpt").exists()


def test_exit_codes(run0, tmp_path):
    _, cfg, out = run0
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nnope = 1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["train", "--bogus-flag", "--out", str(tmp_path / "o")]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == 4
    assert main(["transfer", "--cra", str(tmp_path / "none.ckpt"), "--task", "maze5", "--out", str(tmp_path / "o")]) == 4
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"hello\n")
    assert main(["reward-map", "--cra", str(junk), "--task", "maze1"]) == 2
    assert main(["reward-map", "--cra", str(out / "cra.ckpt"), "--task", "no_such_maze"]) in (2, 4)


def test_numeric_error_exit_code(run0, tmp_path, monkeypatch):
    from cenra import harness
    from cenra.errors import NumericError

    def boom(cfg):
        raise NumericError("non-finite gradient entry", 3)

    monkeypatch.setattr(harness, "train_multitask", boom)
    _, cfg, _ = run0
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "n")]) == 3
