"""Training loops (CenRA, plain DQN, decentralised reward agents), transfer to
a held-out maze, greedy evaluation and knowledge-reward maps."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .cra import CentralRewardAgent
from .envsuite import (ACTION_NAMES, N_ACTIONS, OBS_DIM, MazeEnv, TaskSpec, encode, format_layout,
                       make_suite, reachable_states, resolve_task, shortest_path_action, subgoal_distances)
from .errors import ConfigurationError
from .policy_agent import DqnAgent
from .replay import ReplayBuffer, Transition
from .sync import Synchronizer, WeightSnapshot, uniform

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "task_id", "episodic_return", "td_loss", "cra_critic_loss", "cra_actor_loss",
                  "mean_r_knw", "w_sim", "w_per", "w", "epsilon")
KINDS = ("cenra", "plain", "relara")


@dataclass
class RunMetrics:
    rows: list[dict] = field(default_factory=list)

    def add(self, row: dict) -> None:
        if self.rows and row["step"] < self.rows[-1]["step"]:
            raise ValueError("metrics rows must be appended in step order")
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(row.get(c)) for c in METRIC_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    def column(self, name: str, task_id: int | None = None) -> list:
        return [r.get(name) for r in self.rows if task_id is None or r["task_id"] == task_id]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


class _Acc:
    """Per-task accumulators between two metric rows."""

    def __init__(self):
        self.returns: list[float] = []
        self.td: list[float] = []
        self.r_knw: list[float] = []
        self.episode_return = 0.0

    def flush(self) -> tuple[float | None, float | None, float | None]:
        out = (float(np.mean(self.returns)) if self.returns else None,
               float(np.mean(self.td)) if self.td else None,
               float(np.mean(self.r_knw)) if self.r_knw else None)
        self.returns, self.td, self.r_knw = [], [], []
        return out


@dataclass
class TrainResult:
    cra: CentralRewardAgent | None
    agents: list[DqnAgent]
    metrics: RunMetrics
    tasks: list[TaskSpec]
    reward_agents: list[CentralRewardAgent] = field(default_factory=list)  # relara only


def load_tasks(config: TrainConfig, names: Sequence[str] | None = None) -> list[TaskSpec]:
    return make_suite(names or config.env.train_tasks, config.env.suite, config.env.max_steps)


def _train(config: TrainConfig, tasks: list[TaskSpec], kind: str, cra: CentralRewardAgent | None = None,
           frozen: bool = False) -> TrainResult:
    """Shared loop for every training variant.

    Each outer iteration steps every task once (act, reward proposal, store,
    policy update), then recomputes the sampling weight and updates the
    shared reward agent on a cross-task batch.
    """
    if kind not in KINDS:
        raise ConfigurationError(f"unknown run kind {kind!r}")
    config.validate()
    run, dcfg, ccfg = config.run, config.dqn, config.cra
    n = len(tasks)
    ss = np.random.SeedSequence(run.seed)
    init_seq, act_seq, sample_seq, cra_seq = ss.spawn(4)
    init_rng = np.random.default_rng(init_seq)
    act_rngs = [np.random.default_rng(s) for s in act_seq.spawn(n)]
    sample_rngs = [np.random.default_rng(s) for s in sample_seq.spawn(n)]
    cra_rng = np.random.default_rng(cra_seq)

    if kind == "cenra" and cra is None:
        cra = CentralRewardAgent(OBS_DIM, N_ACTIONS, config.cra, init_rng)
    if cra is not None and (cra.obs_dim != OBS_DIM or cra.n_actions != N_ACTIONS):
        raise ConfigurationError("reward agent does not match the maze observation/action shapes")
    private: list[CentralRewardAgent] = []
    if kind == "relara":
        private = [CentralRewardAgent(OBS_DIM, N_ACTIONS, config.cra, init_rng) for _ in range(n)]
    agents = [DqnAgent(OBS_DIM, N_ACTIONS, dcfg, init_rng, total_steps=run.total_steps) for _ in range(n)]
    reward_src = [private[i] if private else cra for i in range(n)]

    buffer = ReplayBuffer(n, OBS_DIM, dcfg.buffer_size, ccfg.reward_space)
    sync = Synchronizer(n, config.sync, run.weight_mode)
    envs = [MazeEnv(t) for t in tasks]
    obs = [env.reset(run.seed) for env in envs]
    accs = [_Acc() for _ in range(n)]
    cra_c, cra_a = [], []
    metrics = RunMetrics()
    snap: WeightSnapshot | None = None

    def task_step(i: int, step: int) -> None:
        agent, env, acc = agents[i], envs[i], accs[i]
        src = reward_src[i]
        action, feature = agent.act(obs[i], act_rngs[i])
        r_knw = 0.0 if src is None else src.knowledge_reward(obs[i], action, "sample", act_rngs[i])
        res = env.step(action)
        next_action, _ = agent.greedy(res.next_obs)
        buffer.push(Transition(i, obs[i], action, res.next_obs, next_action, res.reward, r_knw, res.done))
        sync.record(i, feature, res.reward)
        agent.tick()
        acc.r_knw.append(r_knw)
        acc.episode_return += res.reward
        if res.done or res.truncated:
            acc.returns.append(acc.episode_return)
            acc.episode_return = 0.0
            obs[i] = env.reset(run.seed)
        else:
            obs[i] = res.next_obs
        if step + 1 >= dcfg.burn_in:
            batch = buffer.sample_task_batch(i, dcfg.batch_size, sample_rngs[i])
            acc.td.append(agent.update(batch, src)["td_loss"])

    pool = ThreadPoolExecutor(max_workers=n) if run.parallel_rollouts and n > 1 else None
    try:
        for step in range(run.total_steps):
            if pool is not None:
                # the reward agent is not written until every task has finished this iteration
                list(pool.map(lambda i: task_step(i, step), range(n)))
            else:
                for i in range(n):
                    task_step(i, step)

            cra_ready = step + 1 >= ccfg.burn_in
            if kind == "cenra":
                snap = sync.weights(allow=cra_ready)
                if cra_ready and not frozen and step % run.cra_update_period == 0:
                    batch = buffer.sample_cra_batch(snap.w, ccfg.batch_size, cra_rng)
                    d = cra.update(batch, cra_rng)
                    cra_c.append(d["critic_loss"])
                    if not math.isnan(d["actor_loss"]):
                        cra_a.append(d["actor_loss"])
            elif kind == "relara" and cra_ready and step % run.cra_update_period == 0:
                for i, agent_i in enumerate(private):
                    d = agent_i.update(buffer.sample_task_batch(i, ccfg.batch_size, cra_rng), cra_rng)
                    cra_c.append(d["critic_loss"])
                    if not math.isnan(d["actor_loss"]):
                        cra_a.append(d["actor_loss"])

            if (step + 1) % run.log_interval == 0 or step + 1 == run.total_steps:
                c_mean = float(np.mean(cra_c)) if cra_c else None
                a_mean = float(np.mean(cra_a)) if cra_a else None
                cra_c, cra_a = [], []
                log.info("%s step %d/%d", kind, step + 1, run.total_steps)
                for i in range(n):
                    ret, td, rk = accs[i].flush()
                    row = {"step": step + 1, "task_id": i, "episodic_return": ret, "td_loss": td,
                           "cra_critic_loss": c_mean, "cra_actor_loss": a_mean,
                           "mean_r_knw": rk if kind != "plain" else None, "epsilon": agents[i].epsilon}
                    if snap is not None:
                        row.update(w_sim=float(snap.w_sim[i]), w_per=float(snap.w_per[i]), w=float(snap.w[i]))
                    metrics.add(row)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(cra, agents, metrics, tasks, private)


def train_multitask(config: TrainConfig, tasks: list[TaskSpec] | None = None) -> TrainResult:
    return _train(config, tasks or load_tasks(config), "cenra")


def train_baseline(config: TrainConfig, kind: str, tasks: list[TaskSpec] | None = None) -> TrainResult:
    """``plain``: DQN on the sparse reward only. ``relara``: one private
    reward agent per task, each fed only its own task's transitions."""
    if kind not in ("plain", "relara"):
        raise ConfigurationError(f"baseline must be 'plain' or 'relara', got {kind!r}")
    return _train(config, tasks or load_tasks(config), kind)


def transfer(cra: CentralRewardAgent | str | Path, new_task: TaskSpec | str, mode: str,
             config: TrainConfig) -> TrainResult:
    """Train a fresh policy agent on ``new_task`` guided by a trained reward
    agent. ``frozen`` never updates the reward agent; ``learning`` keeps
    training it on the new task's transitions."""
    if mode not in ("frozen", "learning"):
        raise ConfigurationError(f"transfer mode must be 'frozen' or 'learning', got {mode!r}")
    if not isinstance(cra, CentralRewardAgent):
        cra = CentralRewardAgent.load(cra, config.cra)
    if not isinstance(new_task, TaskSpec):
        new_task = resolve_task(new_task, config.env.suite, config.env.max_steps)
    return _train(config, [new_task], "cenra", cra=cra, frozen=(mode == "frozen"))


# -- evaluation ----------------------------------------------------------------

@dataclass
class EvalResult:
    per_task_mean: list[float]
    per_task_sem: list[float]
    suite_mean: float
    suite_sem: float
    returns: list[list[float]]

    def as_dict(self) -> dict:
        return {"per_task_mean": self.per_task_mean, "per_task_sem": self.per_task_sem,
                "suite_mean": self.suite_mean, "suite_sem": self.suite_sem}


def standard_error(values: Sequence[float]) -> float:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return 0.0
    return float(np.std(v, ddof=1) / math.sqrt(len(v)))


def run_episode(task: TaskSpec, policy, seed: int = 0) -> float:
    """``policy(env, obs) -> action``; returns the undiscounted return."""
    env = MazeEnv(task)
    obs = env.reset(seed)
    total = 0.0
    while True:
        res = env.step(policy(env, obs))
        total += res.reward
        if res.done or res.truncated:
            return total
        obs = res.next_obs


def evaluate_policies(policies: Sequence, tasks: Sequence[TaskSpec], episodes: int, seed: int = 0) -> EvalResult:
    returns = [[run_episode(t, p, seed + k) for k in range(episodes)] for p, t in zip(policies, tasks)]
    means = [float(np.mean(r)) for r in returns]
    sems = [standard_error(r) for r in returns]
    flat = [x for r in returns for x in r]
    return EvalResult(means, sems, float(np.mean(means)), standard_error(flat), returns)


def greedy_policy(agent: DqnAgent):
    return lambda env, obs: agent.greedy(obs)[0]


def evaluate(agents: Sequence[DqnAgent], tasks: Sequence[TaskSpec], episodes: int = 100, seed: int = 0) -> EvalResult:
    return evaluate_policies([greedy_policy(a) for a in agents], tasks, episodes, seed)


# -- reward maps -----------------------------------------------------------------

@dataclass
class RewardMap:
    task: TaskSpec
    has_key: bool
    rewards: dict[tuple[int, int], list[float]]
    argmax: dict[tuple[int, int], int]
    oracle: dict[tuple[int, int], list[int]]
    agreement: float
    evaluated: int

    def to_json(self) -> str:
        cells = []
        for cell in sorted(self.rewards, key=lambda c: (c[1], c[0])):
            entry = {"x": cell[0], "y": cell[1], "rewards": self.rewards[cell], "argmax": self.argmax[cell],
                     "argmax_name": ACTION_NAMES[self.argmax[cell]]}
            if cell in self.oracle:
                entry["oracle"] = self.oracle[cell]
                entry["agrees"] = self.argmax[cell] in self.oracle[cell]
            cells.append(entry)
        return json.dumps({
            "layout": format_layout(self.task.layout).splitlines(),
            "task": self.task.name, "has_key": self.has_key, "actions": list(ACTION_NAMES),
            "cells": cells,
            "summary": {"oracle_agreement": self.agreement, "evaluated_states": self.evaluated},
        }, indent=1)


def reward_map(cra: CentralRewardAgent, task: TaskSpec, has_key: bool) -> RewardMap:
    layout = task.layout
    cells = layout.free_cells()
    obs = np.stack([encode(layout, c, has_key) for c in cells for _ in range(N_ACTIONS)])
    acts = np.tile(np.arange(N_ACTIONS), len(cells))
    values = cra.knowledge_rewards(obs, acts, "mean").reshape(len(cells), N_ACTIONS)
    rewards = {c: [float(v) for v in values[k]] for k, c in enumerate(cells)}
    argmax = {c: int(np.argmax(values[k])) for k, c in enumerate(cells)}
    dist = subgoal_distances(layout, has_key)
    oracle = {}
    for c in sorted(reachable_states(layout, has_key)):
        best = shortest_path_action(layout, c, has_key, dist)
        if best:
            oracle[c] = sorted(best)
    hits = sum(argmax[c] in oracle[c] for c in oracle)
    return RewardMap(task, has_key, rewards, argmax, oracle, hits / len(oracle) if oracle else float("nan"), len(oracle))


def map_fidelity(cra: CentralRewardAgent, tasks: Sequence[TaskSpec]) -> float:
    """Oracle agreement over all reachable (cell, has_key) states, averaged over tasks."""
    per_task = []
    for t in tasks:
        maps = [reward_map(cra, t, k) for k in (False, True)]
        hits = sum(m.agreement * m.evaluated for m in maps)
        per_task.append(hits / sum(m.evaluated for m in maps))
    return float(np.mean(per_task))
