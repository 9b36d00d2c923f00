"""Per-task DQN agents trained on ``r_env + lambda * r_knw``."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from . import approximator as ax
from .approximator import AdamState, NetSpec
from .errors import ConfigurationError, UsageError
from .replay import Batch, as_batch


class RewardSource(Protocol):
    def knowledge_rewards(self, obs, actions, mode: str = "mean", rng=None) -> np.ndarray: ...


@dataclass
class DqnConfig:
    gamma: float = 0.99
    batch_size: int = 128
    lr: float = 1e-3
    tau: float = 5e-3
    burn_in: int = 10000
    buffer_size: int = 1_000_000
    hidden: tuple[int, ...] = (64, 64)
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.5
    knowledge_weight: float = 0.5

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"dqn.gamma must be in [0, 1], got {self.gamma}")
        if self.batch_size < 1 or self.buffer_size < 1 or self.burn_in < 0:
            raise ConfigurationError("dqn.batch_size/buffer_size must be >= 1 and burn_in >= 0")
        if not 0.0 < self.tau <= 1.0 or self.lr <= 0:
            raise ConfigurationError("dqn.tau must be in (0, 1] and dqn.lr positive")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0 or not 0.0 < self.eps_fraction <= 1.0:
            raise ConfigurationError("need 0 <= eps_end <= eps_start <= 1 and 0 < eps_fraction <= 1")
        check_lambda(self.knowledge_weight)


def check_lambda(lam: float) -> None:
    if not 0.0 < lam <= 1.0:
        raise ConfigurationError(f"knowledge reward weight must be in (0, 1], got {lam}")


def augmented_reward(r_env, r_knw, lam: float = 0.5):
    check_lambda(lam)
    return r_env + lam * r_knw


def epsilon_at(step: int, total_steps: int, cfg: DqnConfig) -> float:
    """Linear decay from eps_start to eps_end over eps_fraction of training."""
    horizon = max(1.0, cfg.eps_fraction * total_steps)
    frac = min(1.0, step / horizon)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def td_loss_and_grad(spec: NetSpec, params: np.ndarray, target_params: np.ndarray, batch: Batch,
                     r_pol: np.ndarray, gamma: float) -> tuple[float, np.ndarray]:
    q, trace = ax.forward_trace(spec, params, batch.obs)
    q_next = ax.forward(spec, target_params, batch.next_obs)
    target = r_pol + gamma * (1.0 - batch.done) * q_next.max(axis=1)
    rows = np.arange(len(batch))
    err = q[rows, batch.action] - target
    loss = float(np.mean(err * err))
    upstream = np.zeros_like(q)
    upstream[rows, batch.action] = 2.0 / len(batch) * err
    grad, _ = ax.backward_trace(spec, params, trace, upstream, input_grad=False)
    return loss, grad


@dataclass
class DqnState:
    spec: NetSpec
    q: np.ndarray
    target_q: np.ndarray
    opt: AdamState
    steps: int = 0
    updates: int = 0


class DqnAgent:
    def __init__(self, obs_dim: int, n_actions: int, config: DqnConfig | None = None,
                 rng: np.random.Generator | None = None, total_steps: int = 1, state: DqnState | None = None):
        self.config = config or DqnConfig()
        self.config.validate()
        self.n_actions = n_actions
        self.total_steps = total_steps
        if state is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            spec = NetSpec(obs_dim, self.config.hidden, n_actions)
            q = ax.init_params(spec, rng)
            state = DqnState(spec, q, q.copy(), AdamState.zeros(spec.n_params))
        self.state = state
        self._fixed_eps: float | None = None

    @property
    def feature_dim(self) -> int:
        return self.state.spec.hidden[-1] if self.state.spec.hidden else self.state.spec.input_dim

    @property
    def epsilon(self) -> float:
        if self._fixed_eps is not None:
            return self._fixed_eps
        return epsilon_at(self.state.steps, self.total_steps, self.config)

    def set_epsilon(self, eps: float | None) -> None:
        """Pin epsilon (``None`` goes back to the schedule)."""
        self._fixed_eps = eps

    def q_values(self, obs) -> np.ndarray:
        return ax.forward(self.state.spec, self.state.q, obs)

    def _check(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.state.spec.input_dim,):
            raise UsageError(f"observation shape {obs.shape} does not match ({self.state.spec.input_dim},)")
        return obs

    def greedy(self, obs) -> tuple[int, np.ndarray]:
        q, trace = ax.forward_trace(self.state.spec, self.state.q, self._check(obs))
        # argmax returns the first maximum, which is the lowest-index tie-break
        return int(np.argmax(q[0])), trace[-1][0]

    def act(self, obs, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        """Epsilon-greedy action plus the penultimate-layer feature of obs."""
        greedy, feature = self.greedy(obs)
        if rng.random() < self.epsilon:
            return int(rng.integers(self.n_actions)), feature
        return greedy, feature

    def tick(self) -> None:
        self.state.steps += 1

    def update(self, batch, cra: RewardSource | None = None) -> dict[str, float]:
        """One TD step on ``batch``; ``cra=None`` trains on r_env alone."""
        batch = as_batch(batch)
        cfg, s = self.config, self.state
        if cra is None:
            r_pol = batch.r_env
        else:
            r_knw = cra.knowledge_rewards(batch.obs, batch.action, "mean")
            r_pol = augmented_reward(batch.r_env, r_knw, cfg.knowledge_weight)
        loss, grad = td_loss_and_grad(s.spec, s.q, s.target_q, batch, r_pol, cfg.gamma)
        s.q, s.opt = ax.adam_step(s.opt, s.q, grad, cfg.lr)
        s.target_q = ax.soft_update(s.target_q, s.q, cfg.tau)
        s.updates += 1
        return {"td_loss": loss, "mean_r_pol": float(np.mean(r_pol))}

    def save(self, path: str | Path) -> None:
        s = self.state
        ax.write_checkpoint(path, [("q", s.spec, s.q), ("target_q", s.spec, s.target_q)],
                            meta={"kind": "dqn", "steps": str(s.steps)})

    @classmethod
    def load(cls, path: str | Path, config: DqnConfig | None = None) -> "DqnAgent":
        nets, meta = ax.read_checkpoint(path)
        if meta.get("kind") != "dqn":
            raise ConfigurationError(f"{path} is not a policy-agent checkpoint")
        spec, q = nets["q"]
        _, target = nets["target_q"]
        config = config or DqnConfig()
        config.hidden = spec.hidden
        state = DqnState(spec, q, target, AdamState.zeros(spec.n_params), int(meta.get("steps", 0)))
        return cls(spec.input_dim, spec.output_dim, config, state=state)
