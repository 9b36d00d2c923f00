"""Centralized reward agent: a squashed-Gaussian actor that proposes
knowledge rewards for (state, action) pairs, and a value critic trained on
environmental rewards only.

The agent never sees a task identifier, so a trained agent can be dropped
into an unseen maze unchanged.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import approximator as ax
from .approximator import AdamState, GaussianHeadOutput, NetSpec, RewardSpace
from .errors import ConfigurationError, NumericError, UsageError
from .replay import Batch, as_batch


@dataclass
class CraConfig:
    gamma: float = 0.99
    batch_size: int = 256
    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    actor_every: int = 2
    tau: float = 5e-3
    burn_in: int = 5000
    hidden: tuple[int, ...] = (64, 64)
    r_min: float = -1.0
    r_max: float = 1.0

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"cra.gamma must be in [0, 1], got {self.gamma}")
        if self.batch_size < 1 or self.actor_every < 1 or self.burn_in < 0:
            raise ConfigurationError("cra.batch_size/actor_every must be >= 1 and burn_in >= 0")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigurationError(f"cra.tau must be in (0, 1], got {self.tau}")
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ConfigurationError("cra learning rates must be positive")
        RewardSpace(self.r_min, self.r_max)

    @property
    def reward_space(self) -> RewardSpace:
        return RewardSpace(self.r_min, self.r_max)


def reward_obs(obs: np.ndarray, action, n_actions: int) -> np.ndarray:
    """Build s_rwd = (s, one_hot(a)) for one item or a batch."""
    obs = np.asarray(obs, dtype=np.float64)
    action = np.asarray(action, dtype=np.int64)
    if obs.ndim == 1:
        onehot = np.zeros(n_actions)
        onehot[int(action)] = 1.0
        return np.concatenate([obs, onehot])
    onehot = np.zeros((len(obs), n_actions))
    onehot[np.arange(len(obs)), action] = 1.0
    return np.concatenate([obs, onehot], axis=1)


def critic_loss_and_grad(spec: NetSpec, params: np.ndarray, target_params: np.ndarray, batch: Batch,
                         gamma: float, n_actions: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean squared TD error of the value critic.

    The bootstrap term uses the target critic and is cut at terminal
    transitions; only V(s_rwd_t) receives gradient.
    """
    x = reward_obs(batch.obs, batch.action, n_actions)
    x_next = reward_obs(batch.next_obs, batch.next_action, n_actions)
    v, trace = ax.forward_trace(spec, params, x)
    v_next = ax.forward(spec, target_params, x_next)
    if not (np.isfinite(v).all() and np.isfinite(v_next).all()):
        raise NumericError("critic produced a non-finite value")
    delta = batch.r_env + gamma * (1.0 - batch.done) * v_next[:, 0] - v[:, 0]
    n = len(delta)
    loss = float(np.mean(delta * delta))
    grad, _ = ax.backward_trace(spec, params, trace, (-2.0 / n * delta)[:, None], input_grad=False)
    return loss, delta, grad


def actor_loss_and_grad(spec: NetSpec, params: np.ndarray, batch: Batch, delta: np.ndarray,
                        noise: np.ndarray, bounds: RewardSpace, n_actions: int) -> tuple[float, np.ndarray]:
    """``-mean(log pi(r_knw | s_rwd) * delta)`` with ``r_knw`` drawn through
    the reparameterised head using ``noise``; ``delta`` is a constant."""
    x = reward_obs(batch.obs, batch.action, n_actions)
    raw, trace = ax.forward_trace(spec, params, x)
    head = GaussianHeadOutput.from_raw(raw)
    _, logp = ax.gaussian_sample_and_logprob(head, bounds, noise)
    delta = np.asarray(delta, dtype=np.float64)
    n = len(delta)
    loss = float(-np.mean(logp * delta))
    d_mean, d_log_std = ax.gaussian_logprob_grad(head, noise)
    coef = -delta / n
    upstream = np.stack([coef * d_mean, coef * d_log_std], axis=1)
    grad, _ = ax.backward_trace(spec, params, trace, upstream, input_grad=False)
    return loss, grad


@dataclass
class CraState:
    actor_spec: NetSpec
    actor: np.ndarray
    critic_spec: NetSpec
    critic: np.ndarray
    target_critic: np.ndarray
    actor_opt: AdamState
    critic_opt: AdamState
    updates: int = 0


class CentralRewardAgent:
    """Holds a ``CraState`` and exposes the reward/update operations.

    Updates rebind parameter arrays instead of writing into them, so a
    reader holding the old arrays keeps a consistent snapshot.
    """

    def __init__(self, obs_dim: int, n_actions: int, config: CraConfig | None = None,
                 rng: np.random.Generator | None = None, state: CraState | None = None):
        self.config = config or CraConfig()
        self.config.validate()
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.bounds = self.config.reward_space
        if state is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            d_in = obs_dim + n_actions
            actor_spec = NetSpec(d_in, self.config.hidden, 2)
            critic_spec = NetSpec(d_in, self.config.hidden, 1)
            actor = ax.init_params(actor_spec, rng)
            critic = ax.init_params(critic_spec, rng)
            state = CraState(actor_spec, actor, critic_spec, critic, critic.copy(),
                             AdamState.zeros(actor_spec.n_params), AdamState.zeros(critic_spec.n_params))
        self.state = state

    # -- rewards ---------------------------------------------------------------

    def head(self, obs, action) -> GaussianHeadOutput:
        x = reward_obs(obs, action, self.n_actions)
        if x.shape[-1] != self.state.actor_spec.input_dim:
            raise UsageError(f"observation width {np.shape(obs)[-1]} does not match the reward agent")
        return GaussianHeadOutput.from_raw(ax.forward(self.state.actor_spec, self.state.actor, x))

    def knowledge_rewards(self, obs, actions, mode: str = "mean",
                          rng: np.random.Generator | None = None) -> np.ndarray:
        head = self.head(obs, actions)
        if mode == "mean":
            return ax.gaussian_mean_value(head, self.bounds)
        if mode == "sample":
            if rng is None:
                raise UsageError("sample mode needs an rng")
            value, _ = ax.gaussian_sample_and_logprob(head, self.bounds, rng.standard_normal(np.shape(head.mean)))
            return value
        raise UsageError(f"unknown mode {mode!r}")

    def knowledge_reward(self, obs, action: int, mode: str = "mean",
                         rng: np.random.Generator | None = None) -> float:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim != 1:
            raise UsageError("knowledge_reward takes a single observation")
        return float(self.knowledge_rewards(obs, action, mode, rng))

    # -- losses ----------------------------------------------------------------

    def critic_loss(self, batch, gamma: float | None = None) -> tuple[float, np.ndarray]:
        batch = as_batch(batch)
        s = self.state
        loss, delta, _ = critic_loss_and_grad(s.critic_spec, s.critic, s.target_critic, batch,
                                              self.config.gamma if gamma is None else gamma, self.n_actions)
        return loss, delta

    def actor_loss(self, batch, per_item_delta, rng: np.random.Generator) -> float:
        batch = as_batch(batch)
        noise = rng.standard_normal(len(batch))
        loss, _ = actor_loss_and_grad(self.state.actor_spec, self.state.actor, batch, per_item_delta,
                                      noise, self.bounds, self.n_actions)
        return loss

    def update(self, batch, rng: np.random.Generator) -> dict[str, float]:
        """One critic step, an actor step every ``actor_every`` calls, and a
        soft target update. The actor uses the TD errors of the critic as it
        was before this call's critic step."""
        batch = as_batch(batch)
        cfg, s = self.config, self.state
        c_loss, delta, c_grad = critic_loss_and_grad(s.critic_spec, s.critic, s.target_critic, batch,
                                                     cfg.gamma, self.n_actions)
        s.critic, s.critic_opt = ax.adam_step(s.critic_opt, s.critic, c_grad, cfg.lr_critic)
        s.updates += 1
        a_loss = float("nan")
        if s.updates % cfg.actor_every == 0:
            noise = rng.standard_normal(len(batch))
            a_loss, a_grad = actor_loss_and_grad(s.actor_spec, s.actor, batch, delta, noise,
                                                 self.bounds, self.n_actions)
            s.actor, s.actor_opt = ax.adam_step(s.actor_opt, s.actor, a_grad, cfg.lr_actor)
        s.target_critic = ax.soft_update(s.target_critic, s.critic, cfg.tau)
        return {"critic_loss": c_loss, "actor_loss": a_loss, "mean_abs_delta": float(np.mean(np.abs(delta)))}

    # -- persistence -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        s = self.state
        ax.write_checkpoint(path, [("actor", s.actor_spec, s.actor), ("critic", s.critic_spec, s.critic),
                                   ("target_critic", s.critic_spec, s.target_critic)],
                            meta={"kind": "cra", "obs_dim": str(self.obs_dim), "n_actions": str(self.n_actions),
                                  "r_min": repr(self.bounds.r_min), "r_max": repr(self.bounds.r_max)})

    @classmethod
    def load(cls, path: str | Path, config: CraConfig | None = None) -> "CentralRewardAgent":
        nets, meta = ax.read_checkpoint(path)
        if meta.get("kind") != "cra" or not {"actor", "critic", "target_critic"} <= nets.keys():
            raise ConfigurationError(f"{path} is not a reward-agent checkpoint")
        config = config or CraConfig()
        config.r_min, config.r_max = float(meta["r_min"]), float(meta["r_max"])
        actor_spec, actor = nets["actor"]
        critic_spec, critic = nets["critic"]
        _, target = nets["target_critic"]
        config.hidden = actor_spec.hidden
        state = CraState(actor_spec, actor, critic_spec, critic, target,
                         AdamState.zeros(actor_spec.n_params), AdamState.zeros(critic_spec.n_params))
        return cls(int(meta["obs_dim"]), int(meta["n_actions"]), config, state=state)

    def checksum(self) -> str:
        s = self.state
        h = hashlib.sha256()
        for arr in (s.actor, s.critic, s.target_critic):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()
