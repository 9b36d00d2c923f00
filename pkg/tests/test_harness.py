import json
import math

import numpy as np
import pytest

from cenra import harness
from cenra.config import TrainConfig
from cenra.cra import CentralRewardAgent
from cenra.envsuite import bfs_policy_action, reachable_states
from cenra.errors import ConfigurationError
from cenra.policy_agent import DqnAgent


def small(steps=300, **run):
    return TrainConfig().replace(
        run={"total_steps": steps, "log_interval": 100, "eval_episodes": 5, **run},
        cra={"hidden": (8, 8), "batch_size": 16, "burn_in": 40},
        dqn={"hidden": (8, 8), "batch_size": 16, "burn_in": 50},
        sync={"K": 10},
    )


@pytest.fixture(scope="module")
def cenra_run():
    return harness.train_multitask(small())


def test_same_seed_gives_identical_metrics(cenra_run):
    again = harness.train_multitask(small())
    assert again.metrics.to_csv() == cenra_run.metrics.to_csv()
    assert again.cra.checksum() == cenra_run.cra.checksum()


def test_different_seed_differs(cenra_run):
    other = harness.train_multitask(small(seed=1))
    assert other.cra.checksum() != cenra_run.cra.checksum()


def test_metrics_layout(cenra_run):
    text = cenra_run.metrics.to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == ",".join(harness.METRIC_COLUMNS)
    assert len(lines) == 1 + 3 * 4
    steps = cenra_run.metrics.column("step")
    assert steps == sorted(steps)
    for row in cenra_run.metrics.rows:
        assert 0.0 <= row["epsilon"] <= 1.0
    with pytest.raises(ValueError):
        cenra_run.metrics.add({"step": 1})


def test_weights_uniform_during_warmup():
    res = harness.train_multitask(small(steps=30, log_interval=10))
    for row in res.metrics.rows:
        assert row["w"] == row["w_sim"] == row["w_per"] == 0.25


def test_weights_are_simplex_after_warmup(cenra_run):
    last = [r for r in cenra_run.metrics.rows if r["step"] == 300]
    assert sum(r["w"] for r in last) == pytest.approx(1.0, abs=1e-9)


def test_single_task_relara_equals_cenra():
    cfg = small(steps=200)
    tasks = harness.load_tasks(cfg, ["maze2"])
    a = harness.train_multitask(cfg, tasks)
    b = harness.train_baseline(cfg, "relara", tasks)
    strip = lambda rows: [{k: v for k, v in r.items() if not k.startswith("w")} for r in rows]
    assert strip(a.metrics.rows) == strip(b.metrics.rows)
    assert a.cra.checksum() == b.reward_agents[0].checksum()
    assert np.array_equal(a.agents[0].state.q, b.agents[0].state.q)
    assert a.metrics.column("td_loss") == b.metrics.column("td_loss")


def test_plain_stores_zero_knowledge_reward(monkeypatch):
    stored = []
    orig = harness.ReplayBuffer.push

    def spy(self, t):
        stored.append(t.r_knw_stored)
        orig(self, t)

    monkeypatch.setattr(harness.ReplayBuffer, "push", spy)
    res = harness.train_baseline(small(steps=100), "plain")
    assert len(stored) == 400 and set(stored) == {0.0}
    assert res.cra is None and all(r["mean_r_knw"] is None for r in res.metrics.rows)


def test_relara_agents_diverge():
    res = harness.train_baseline(small(), "relara")
    sums = {ra.checksum() for ra in res.reward_agents}
    assert len(sums) == 4


def test_policy_updates_read_own_task_only(monkeypatch):
    seen = []
    orig = DqnAgent.update

    def spy(self, batch, cra=None):
        seen.append((id(self), set(batch.task_id.tolist())))
        return orig(self, batch, cra)

    monkeypatch.setattr(DqnAgent, "update", spy)
    res = harness.train_multitask(small(steps=80))
    owner = {id(a): i for i, a in enumerate(res.agents)}
    assert seen and all(ids == {owner[a]} for a, ids in seen)


def test_frozen_transfer_leaves_checkpoint_untouched(cenra_run, tmp_path):
    path = tmp_path / "cra.ckpt"
    cenra_run.cra.save(path)
    before = path.read_bytes()
    cra = CentralRewardAgent.load(path, small().cra)
    digest = cra.checksum()
    res = harness.transfer(cra, "maze5", "frozen", small(steps=120))
    assert cra.checksum() == digest and path.read_bytes() == before
    assert len(res.agents) == 1 and res.tasks[0].name == "maze5"


def test_learning_transfer_updates_agent(cenra_run, tmp_path):
    path = tmp_path / "cra.ckpt"
    cenra_run.cra.save(path)
    cra = CentralRewardAgent.load(path, small().cra)
    digest = cra.checksum()
    harness.transfer(cra, "maze5", "learning", small(steps=120))
    assert cra.checksum() != digest


def test_transfer_rejects_bad_mode_and_shape(cenra_run):
    with pytest.raises(ConfigurationError):
        harness.transfer(cenra_run.cra, "maze5", "thawed", small())
    wrong = CentralRewardAgent(5, 4)
    with pytest.raises(ConfigurationError):
        harness.transfer(wrong, "maze5", "frozen", small())


def test_bfs_agent_scores_one(suite):
    ev = harness.evaluate_policies([lambda env, obs: bfs_policy_action(env)] * len(suite), suite, 10)
    assert ev.per_task_mean == [1.0] * len(suite) and ev.suite_mean == 1.0 and ev.suite_sem == 0.0


def test_random_agent_scores_near_zero(suite):
    rng = np.random.default_rng(0)
    ev = harness.evaluate_policies([lambda env, obs: int(rng.integers(4))] * len(suite), suite, 100)
    # measured: a uniform random walk almost never finishes key, door and goal in 200 steps
    assert ev.suite_mean < 0.05


def test_standard_error_definition():
    v = [0.0, 1.0, 1.0, 0.0, 1.0]
    assert harness.standard_error(v) == pytest.approx(np.std(v, ddof=1) / math.sqrt(5))
    assert harness.standard_error([1.0]) == 0.0


def test_evaluate_is_deterministic(cenra_run):
    a = harness.evaluate(cenra_run.agents, cenra_run.tasks, 3)
    b = harness.evaluate(cenra_run.agents, cenra_run.tasks, 3)
    assert a.returns == b.returns


def test_reward_map_contract(cenra_run):
    task = cenra_run.tasks[0]
    m = harness.reward_map(cenra_run.cra, task, False)
    assert set(m.rewards) == set(task.layout.free_cells())
    for cell, vals in m.rewards.items():
        assert len(vals) == 4 and all(-1.0 <= v <= 1.0 for v in vals)
        assert m.argmax[cell] == int(np.argmax(vals))
    assert set(m.oracle) <= reachable_states(task.layout, False)
    doc = json.loads(m.to_json())
    assert len(doc["cells"]) == len(m.rewards) and 0.0 <= doc["summary"]["oracle_agreement"] <= 1.0
    assert 0.0 <= harness.map_fidelity(cenra_run.cra, cenra_run.tasks) <= 1.0


def test_parallel_rollouts_run():
    res = harness.train_multitask(small(steps=120, parallel_rollouts=True))
    assert len(res.metrics.rows) == 8
