"""DDPG learner for a single follower vehicle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from platoon_frl import tensorio
from platoon_frl.nn import (
    Gradients,
    NetworkParams,
    OptimizerState,
    actor_spec,
    backward,
    critic_spec,
    forward,
    init_network,
    optimizer_step,
    soft_update,
)

STATE_DIM = 4


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    target_mix: float = 0.001
    batch_size: int = 64
    actor_lr: float = 5e-5
    critic_lr: float = 5e-4
    buffer_capacity: int = 100_000
    ou_theta: float = 0.15
    ou_sigma: float = 0.02
    ou_mu: float = 0.0
    ou_dt: float = 1.0
    u_max: float = 2.5
    actor_hidden: tuple[int, ...] = (256, 128)
    critic_state_units: int = 48
    critic_action_units: int = 256
    critic_hidden: int = 128
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-7

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.target_mix <= 1.0:
            raise ValueError("target_mix must lie in (0, 1]")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must be >= batch_size")

    def actor_spec(self):
        return actor_spec(STATE_DIM, self.actor_hidden, self.u_max, self.bn_momentum, self.bn_eps)

    def critic_spec(self):
        return critic_spec(STATE_DIM, 1, self.critic_state_units, self.critic_action_units,
                           self.critic_hidden, self.bn_momentum, self.bn_eps)


@dataclass
class OUNoise:
    theta: float = 0.15
    sigma: float = 0.02
    mu: float = 0.0
    dt: float = 1.0
    value: float = 0.0

    def reset(self, value: float = 0.0) -> None:
        self.value = value


def ou_step(noise: OUNoise, rng: np.random.Generator) -> OUNoise:
    """Advance the Ornstein-Uhlenbeck process by one ``dt`` in place."""
    noise.value = (
        noise.value
        + noise.theta * (noise.mu - noise.value) * noise.dt
        + noise.sigma * math.sqrt(noise.dt) * rng.standard_normal()
    )
    return noise


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    next_state: np.ndarray
    action: float
    reward: float
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, 1))
        self.rewards = np.zeros((capacity, 1))
        self.terminals = np.zeros((capacity, 1))
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state, next_state, action: float, reward: float, terminal: bool) -> None:
        i = self._next
        self.states[i] = state
        self.next_states[i] = next_state
        self.actions[i, 0] = action
        self.rewards[i, 0] = reward
        self.terminals[i, 0] = float(terminal)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_transition(self, t: Transition) -> None:
        self.add(t.state, t.next_state, t.action, t.reward, t.terminal)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator):
        """``(states, actions, rewards, next_states, terminals)`` as 2-D arrays."""
        idx = self.sample_indices(batch_size, rng)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.terminals[idx])


def select_action(actor: NetworkParams, state, noise: OUNoise | None, explore: bool,
                  rng: np.random.Generator | None = None, u_max: float | None = None) -> float:
    """Deterministic policy output, plus OU noise when exploring, clipped to ``u_max``."""
    bound = actor.spec.output_scale if u_max is None else u_max
    x = np.asarray(state, dtype=np.float64).reshape(1, -1)
    out, _ = forward(actor, x, mode="eval")
    action = float(out[0, 0])
    if explore and noise is not None:
        ou_step(noise, rng)
        action += noise.value
    return min(max(action, -bound), bound)


def bellman_targets(rewards, next_q, terminals, gamma: float) -> np.ndarray:
    return rewards + gamma * (1.0 - terminals) * next_q


class DDPGAgent:
    """Actor, critic, their targets, two optimisers, a replay buffer and OU noise.

    ``rngs`` supplies independent generators for ``init``, ``noise`` and
    ``replay``.
    """

    def __init__(self, config: AgentConfig, rngs: dict[str, np.random.Generator]):
        self.config = config
        self.rng_noise = rngs["noise"]
        self.rng_replay = rngs["replay"]
        init_rng = rngs["init"]
        self.actor = init_network(config.actor_spec(), init_rng)
        self.critic = init_network(config.critic_spec(), init_rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = OptimizerState.create(self.actor, config.actor_lr, config.adam_beta1,
                                               config.adam_beta2, config.adam_eps)
        self.critic_opt = OptimizerState.create(self.critic, config.critic_lr, config.adam_beta1,
                                                config.adam_beta2, config.adam_eps)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.noise = OUNoise(config.ou_theta, config.ou_sigma, config.ou_mu, config.ou_dt)

    @property
    def networks(self) -> dict[str, NetworkParams]:
        return {
            "actor": self.actor,
            "critic": self.critic,
            "target_actor": self.target_actor,
            "target_critic": self.target_critic,
        }

    @property
    def ready(self) -> bool:
        return len(self.buffer) >= self.config.batch_size

    def act(self, state, explore: bool = True) -> float:
        return select_action(self.actor, state, self.noise, explore, self.rng_noise, self.config.u_max)

    def remember(self, state, next_state, action, reward, terminal) -> None:
        self.buffer.add(state, next_state, action, reward, terminal)

    def compute_gradients(self, batch) -> tuple[Gradients, Gradients, dict]:
        """Critic and actor gradients at the current parameters.

        The critic regression and the actor forward run in train mode, so
        their batch-norm running statistics advance; no trainable tensor is
        changed.
        """
        states, actions, rewards, next_states, terminals = batch
        n = states.shape[0]
        cfg = self.config

        next_actions, _ = forward(self.target_actor, next_states, mode="eval")
        next_q, _ = forward(self.target_critic, [next_states, next_actions], mode="eval")
        y = bellman_targets(rewards, next_q, terminals, cfg.gamma)

        q, c_cache = forward(self.critic, [states, actions], mode="train")
        critic_grads, _ = backward(self.critic, c_cache, 2.0 * (q - y) / n)

        mu, a_cache = forward(self.actor, states, mode="train")
        # running statistics: under batch statistics the action branch only sees
        # standardized actions, which hides any shift or rescaling of mu
        q_mu, c_cache2 = forward(self.critic, [states, mu], mode="eval")
        _, (_, dq_dmu) = backward(self.critic, c_cache2, np.full_like(q_mu, -1.0 / n))
        actor_grads, _ = backward(self.actor, a_cache, dq_dmu)

        info = {"critic_loss": float(np.mean((q - y) ** 2)), "actor_objective": float(np.mean(q_mu))}
        return actor_grads, critic_grads, info

    def apply_gradients(self, actor_grads: Gradients, critic_grads: Gradients) -> None:
        optimizer_step(self.critic_opt, self.critic, critic_grads)
        optimizer_step(self.actor_opt, self.actor, actor_grads)

    def update_targets(self) -> None:
        mix = self.config.target_mix
        soft_update(self.target_actor, self.actor, mix)
        soft_update(self.target_critic, self.critic, mix)

    def sample(self):
        return self.buffer.sample(self.config.batch_size, self.rng_replay)

    def check_finite(self) -> None:
        for name, net in self.networks.items():
            if not np.all(np.isfinite(net.data)):
                raise FloatingPointError(f"non-finite parameters in {name}")


def train_step(agent: DDPGAgent, batch=None, apply: bool = True):
    """One DDPG update from a replay batch.

    Returns ``(actor_grads, critic_grads)`` computed before any parameter
    change, or ``None`` while the buffer holds fewer than ``batch_size``
    transitions. With ``apply=False`` the gradients are only returned, which
    is how gradient-averaging rounds defer the update.
    """
    if batch is None:
        if not agent.ready:
            return None
        batch = agent.sample()
    actor_grads, critic_grads, _ = agent.compute_gradients(batch)
    if apply:
        agent.apply_gradients(actor_grads, critic_grads)
        agent.update_targets()
    return actor_grads, critic_grads


NETWORK_FILES = ("actor", "critic", "target_actor", "target_critic")


def save_agent(directory, agent: DDPGAgent) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, net in agent.networks.items():
        tensorio.save_params(d / f"{name}.bin", net)
    tensorio.save_optimizer(d / "actor_opt.bin", agent.actor_opt)
    tensorio.save_optimizer(d / "critic_opt.bin", agent.critic_opt)


def load_agent(directory, config: AgentConfig, rngs: dict[str, np.random.Generator] | None = None) -> DDPGAgent:
    """Rebuild an agent from :func:`save_agent` output (replay buffer starts empty)."""
    if rngs is None:
        rngs = {k: np.random.default_rng(0) for k in ("init", "noise", "replay")}
    agent = DDPGAgent(config, rngs)
    d = Path(directory)
    agent.actor = tensorio.load_params(d / "actor.bin", config.actor_spec())
    agent.critic = tensorio.load_params(d / "critic.bin", config.critic_spec())
    agent.target_actor = tensorio.load_params(d / "target_actor.bin", config.actor_spec())
    agent.target_critic = tensorio.load_params(d / "target_critic.bin", config.critic_spec())
    agent.actor_opt = tensorio.load_optimizer(d / "actor_opt.bin", agent.actor.n_trainable)
    agent.critic_opt = tensorio.load_optimizer(d / "critic_opt.bin", agent.critic.n_trainable)
    return agent
