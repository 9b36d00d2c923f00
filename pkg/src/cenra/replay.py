"""Concatenated replay buffer: one FIFO sub-buffer per task.

Sub-buffers are column stores (one numpy array per field) so that batches
come out as arrays without per-item Python work.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .approximator import RewardSpace
from .errors import ConfigurationError, NotReady, UsageError

DEFAULT_CAPACITY = 1_000_000


@dataclass
class Transition:
    task_id: int
    obs: np.ndarray
    action: int
    next_obs: np.ndarray
    next_action: int
    r_env: float
    r_knw_stored: float
    done: bool


@dataclass
class Batch:
    task_id: np.ndarray
    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    next_action: np.ndarray
    r_env: np.ndarray
    r_knw_stored: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.action)

    @classmethod
    def from_transitions(cls, items: Sequence[Transition]) -> "Batch":
        if not items:
            raise UsageError("empty batch")
        return cls(
            np.array([t.task_id for t in items], dtype=np.int64),
            np.stack([np.asarray(t.obs, dtype=np.float64) for t in items]),
            np.array([t.action for t in items], dtype=np.int64),
            np.stack([np.asarray(t.next_obs, dtype=np.float64) for t in items]),
            np.array([t.next_action for t in items], dtype=np.int64),
            np.array([t.r_env for t in items], dtype=np.float64),
            np.array([t.r_knw_stored for t in items], dtype=np.float64),
            np.array([t.done for t in items], dtype=np.float64),
        )

    def transitions(self) -> list[Transition]:
        return [
            Transition(int(self.task_id[i]), self.obs[i], int(self.action[i]), self.next_obs[i],
                       int(self.next_action[i]), float(self.r_env[i]), float(self.r_knw_stored[i]),
                       bool(self.done[i]))
            for i in range(len(self))
        ]

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(*(getattr(self, f)[idx] for f in _FIELDS))

    @staticmethod
    def concat(parts: Sequence["Batch"]) -> "Batch":
        return Batch(*(np.concatenate([getattr(p, f) for p in parts]) for f in _FIELDS))


_FIELDS = ("task_id", "obs", "action", "next_obs", "next_action", "r_env", "r_knw_stored", "done")


def as_batch(batch) -> Batch:
    if isinstance(batch, Batch):
        return batch
    return Batch.from_transitions(list(batch))


class _SubBuffer:
    def __init__(self, task_id: int, obs_dim: int, capacity: int):
        self.task_id = task_id
        self.obs_dim = obs_dim
        self.capacity = capacity
        self.size = 0
        self.head = 0  # next write slot once the ring is full
        self._alloc(min(capacity, 4096))

    def _alloc(self, n: int) -> None:
        old = getattr(self, "obs", None)
        obs = np.zeros((n, self.obs_dim))
        next_obs = np.zeros((n, self.obs_dim))
        action = np.zeros(n, dtype=np.int64)
        next_action = np.zeros(n, dtype=np.int64)
        r_env = np.zeros(n)
        r_knw = np.zeros(n)
        done = np.zeros(n)
        if old is not None:
            k = self.size
            obs[:k], next_obs[:k] = self.obs[:k], self.next_obs[:k]
            action[:k], next_action[:k] = self.action[:k], self.next_action[:k]
            r_env[:k], r_knw[:k], done[:k] = self.r_env[:k], self.r_knw[:k], self.done[:k]
        self.obs, self.next_obs, self.action, self.next_action = obs, next_obs, action, next_action
        self.r_env, self.r_knw, self.done = r_env, r_knw, done

    def push(self, t: Transition) -> None:
        if self.size < self.capacity:
            if self.size == len(self.action):
                self._alloc(min(self.capacity, 2 * len(self.action)))
            i = self.size
            self.size += 1
        else:
            i = self.head
            self.head = (self.head + 1) % self.capacity
        self.obs[i] = t.obs
        self.next_obs[i] = t.next_obs
        self.action[i] = t.action
        self.next_action[i] = t.next_action
        self.r_env[i] = t.r_env
        self.r_knw[i] = t.r_knw_stored
        self.done[i] = float(t.done)

    def gather(self, idx: np.ndarray) -> Batch:
        return Batch(np.full(len(idx), self.task_id, dtype=np.int64), self.obs[idx], self.action[idx],
                     self.next_obs[idx], self.next_action[idx], self.r_env[idx], self.r_knw[idx],
                     self.done[idx])

    def ordered(self) -> Batch:
        """Contents oldest-first."""
        if self.size < self.capacity:
            idx = np.arange(self.size)
        else:
            idx = (np.arange(self.size) + self.head) % self.capacity
        return self.gather(idx)


class ReplayBuffer:
    def __init__(self, n_tasks: int, obs_dim: int, capacity: int = DEFAULT_CAPACITY,
                 reward_space: RewardSpace = RewardSpace()):
        if n_tasks < 1 or capacity < 1:
            raise ConfigurationError("replay buffer needs n_tasks >= 1 and capacity >= 1")
        self.n_tasks = n_tasks
        self.obs_dim = obs_dim
        self.capacity = capacity
        self.reward_space = reward_space
        self._subs = [_SubBuffer(i, obs_dim, capacity) for i in range(n_tasks)]

    def __len__(self) -> int:
        return sum(s.size for s in self._subs)

    def size(self, task_id: int) -> int:
        return self._sub(task_id).size

    def sizes(self) -> list[int]:
        return [s.size for s in self._subs]

    def _sub(self, task_id: int) -> _SubBuffer:
        if not 0 <= task_id < self.n_tasks:
            raise UsageError(f"unknown task_id {task_id} (have {self.n_tasks} tasks)")
        return self._subs[task_id]

    def push(self, t: Transition) -> None:
        sub = self._sub(int(t.task_id))
        if t.r_env not in (0.0, 1.0):
            raise ConfigurationError(f"r_env must be 0 or 1, got {t.r_env}")
        rs = self.reward_space
        if not rs.r_min <= t.r_knw_stored <= rs.r_max:
            raise ConfigurationError(f"r_knw_stored {t.r_knw_stored} outside [{rs.r_min}, {rs.r_max}]")
        if np.shape(t.obs) != (self.obs_dim,) or np.shape(t.next_obs) != (self.obs_dim,):
            raise UsageError("observation shape does not match buffer")
        sub.push(t)

    def contents(self, task_id: int) -> list[Transition]:
        sub = self._sub(task_id)
        return sub.ordered().transitions() if sub.size else []

    def sample_task_batch(self, task_id: int, batch: int, rng: np.random.Generator) -> Batch:
        sub = self._sub(task_id)
        if sub.size == 0:
            raise NotReady(f"task {task_id} has no transitions yet")
        return sub.gather(rng.integers(0, sub.size, batch))

    def sample_task(self, task_id: int, batch: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform draw with replacement from one task's sub-buffer."""
        return self.sample_task_batch(task_id, batch, rng).transitions()

    def sample_cra_batch(self, weights, batch: int, rng: np.random.Generator) -> Batch:
        w = check_weights(weights, self.n_tasks)
        sizes = np.array(self.sizes())
        live = sizes > 0
        if not live.any():
            raise NotReady("replay buffer is empty")
        if (w[~live] > 0).any():
            w = np.where(live, w, 0.0)
            total = w.sum()
            w = w / total if total > 0 else live / live.sum()
        counts = allocate(w, batch)
        parts = [self._subs[i].gather(rng.integers(0, sizes[i], n)) for i, n in enumerate(counts) if n > 0]
        if len(parts) == 1:
            # iid draws from a single task are already in random order
            return parts[0]
        out = Batch.concat(parts)
        return out.take(rng.permutation(len(out)))

    def sample_cra(self, weights, batch: int, rng: np.random.Generator) -> list[Transition]:
        return self.sample_cra_batch(weights, batch, rng).transitions()


def check_weights(weights, n: int | None = None) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or (n is not None and len(w) != n):
        raise UsageError(f"expected {n} sampling weights, got shape {w.shape}")
    if (w < 0).any() or not np.isfinite(w).all() or abs(w.sum() - 1.0) > 1e-9:
        raise UsageError(f"sampling weights must be a probability vector, got {w}")
    return w


def allocate(weights, batch: int) -> np.ndarray:
    """Largest-remainder apportionment of ``batch`` items over ``weights``.

    Leftover items go to the largest fractional parts, lowest index first on
    ties.
    """
    w = check_weights(weights)
    if batch < 0:
        raise UsageError("batch must be non-negative")
    quota = batch * w
    base = np.floor(quota + 1e-9).astype(np.int64)
    base = np.minimum(base, batch)
    short = batch - int(base.sum())
    if short > 0:
        remainder = quota - base
        order = np.argsort(-np.round(remainder, 12), kind="stable")
        base[order[:short]] += 1
    elif short < 0:
        # only reachable through the 1e-9 rounding guard
        order = np.argsort(quota - base, kind="stable")
        for i in order[: -short]:
            base[i] -= 1
    return base
