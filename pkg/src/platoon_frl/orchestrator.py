"""Training and evaluation of DDPG platoons with optional federated rounds."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from platoon_frl import fedserver
from platoon_frl.config import ExperimentConfig
from platoon_frl.ddpg import DDPGAgent, load_agent, save_agent, train_step
from platoon_frl.dynamics import Platoon, leader_input
from platoon_frl.tensorio import LoadError

logger = logging.getLogger(__name__)

PURPOSES = {"init": 0, "noise": 1, "replay": 2, "leader": 3}


def rng_stream(seed: int, platoon: int, vehicle: int, purpose: str) -> np.random.Generator:
    """Independent generator keyed by ``(seed, platoon, vehicle, purpose)``."""
    return np.random.default_rng(np.random.SeedSequence([seed, platoon, vehicle, PURPOSES[purpose]]))


def build_agents(config: ExperimentConfig) -> dict[tuple[int, int], DDPGAgent]:
    agents = {}
    for p, v in config.topology_obj().members():
        rngs = {purpose: rng_stream(config.train_seed, p, v, purpose) for purpose in ("init", "noise", "replay")}
        agents[(p, v)] = DDPGAgent(config.agent, rngs)
    return agents


def build_platoon(config: ExperimentConfig) -> Platoon:
    return Platoon(config.vehicle_params(), config.episode, config.reward, config.divergence_limit)


def guard_reward(reward: float, gamma: float) -> float:
    """Replay reward for a guard trip: the trip cost charged on every future step.

    With all rewards negative, a plain ``y = r`` cutoff would make diverging
    early the cheapest way to end an episode.
    """
    return float(reward) / (1.0 - gamma)


@dataclass
class TrainingLog:
    records: list[dict] = field(default_factory=list)
    episode_seconds: list[float] = field(default_factory=list)
    frl_updates: int = 0
    events: dict = field(default_factory=dict)  # member -> {"local", "aggregated", "noop"}

    def system_rewards(self) -> np.ndarray:
        """Per-episode mean over vehicles of the cumulative reward."""
        by_ep: dict[int, list[float]] = {}
        for r in self.records:
            by_ep.setdefault(r["episode"], []).append(r["cumulative_reward"])
        return np.array([np.mean(by_ep[e]) for e in sorted(by_ep)])

    def vehicle_rewards(self, platoon: int, vehicle: int) -> np.ndarray:
        return np.array([r["cumulative_reward"] for r in self.records
                         if r["platoon"] == platoon and r["vehicle"] == vehicle])


@dataclass
class TrainingResult:
    config: ExperimentConfig
    agents: dict
    log: TrainingLog


def run_training(config: ExperimentConfig, server: fedserver.FedServer | None = None,
                 agents: dict | None = None, progress=None) -> TrainingResult:
    """Algorithm 1: exploratory rollouts with local or federated updates per step.

    On each step every agent does exactly one of: a local DDPG update, an
    aggregated update (it belongs to a multi-member group on an FRL step), or
    nothing (replay warm-up). Platoons that trip the divergence guard stay
    frozen until the episode's step budget ends; their agents keep training.
    """
    topology = config.topology_obj()
    schedule = config.frl_schedule()
    members = topology.members()
    if agents is None:
        agents = build_agents(config)
    platoons = [build_platoon(config) for _ in range(config.platoons)]
    leader_rngs = [rng_stream(config.train_seed, p, 0, "leader") for p in range(1, config.platoons + 1)]
    groups = {m: fedserver.aggregation_group(topology, *m) for m in members}
    shared = {m: g for m, g in groups.items() if len(g) > 1}
    server = server or fedserver.FedServer()
    kind = config.aggregation
    log = TrainingLog(events={m: {"local": 0, "aggregated": 0, "noop": 0} for m in members})
    steps = config.episode.steps
    n_f = config.followers

    for ep in range(config.episodes):
        t0 = time.perf_counter()
        for platoon in platoons:
            platoon.reset()
        for agent in agents.values():
            agent.noise.reset()
        ep_reward = {m: 0.0 for m in members}
        diverged = [False] * config.platoons
        frl_active = config.federated and ep < schedule.active_episodes

        for k in range(steps):
            for pi, platoon in enumerate(platoons):
                if platoon.done:
                    continue
                p = pi + 1
                prev = platoon.states.copy()
                actions = [agents[(p, v)].act(prev[v - 1], explore=True) for v in range(1, n_f + 1)]
                res = platoon.step(actions, leader_input(config.leader_input, leader_rngs[pi]))
                for v in range(1, n_f + 1):
                    tripped = bool(res.diverged[v - 1])
                    stored = guard_reward(res.rewards[v - 1], config.agent.gamma) if tripped else res.rewards[v - 1]
                    agents[(p, v)].remember(prev[v - 1], res.states[v - 1], actions[v - 1], stored, tripped)
                    ep_reward[(p, v)] += float(res.rewards[v - 1])
                if res.diverged.any():
                    diverged[pi] = True

            recipients = {}
            if config.federated and fedserver.should_aggregate(schedule, ep, k):
                recipients = shared
            contributions = {}
            for m in members:
                agent = agents[m]
                if m in recipients:
                    if kind == "gradients":
                        contributions[m] = train_step(agent, apply=False)
                    continue
                out = train_step(agent)
                contributions[m] = out
                log.events[m]["local" if out is not None else "noop"] += 1
            if recipients:
                fedserver.apply_aggregation(kind, agents, recipients, server,
                                            contributions if kind == "gradients" else None)
                for m in recipients:
                    got = kind == "weights" or any(contributions.get(g) is not None for g in recipients[m])
                    log.events[m]["aggregated" if got else "noop"] += 1
                log.frl_updates += 1

        for agent in agents.values():
            agent.check_finite()
        for (p, v), total in ep_reward.items():
            log.records.append({
                "episode": ep + 1,
                "platoon": p,
                "vehicle": v,
                "cumulative_reward": total,
                "frl_active": frl_active,
                "diverged": diverged[p - 1],
            })
        log.episode_seconds.append(time.perf_counter() - t0)
        if sum(diverged) * 2 > config.platoons:
            logger.warning("episode %d: divergence guard tripped in %d/%d platoons",
                           ep + 1, sum(diverged), config.platoons)
        if progress is not None:
            progress(ep + 1, log)
    return TrainingResult(config, agents, log)


@dataclass
class EvalReport:
    eval_seed: int
    step_time: float
    rewards: dict  # (platoon, vehicle) -> cumulative reward
    trajectories: dict  # (platoon, vehicle) -> array (steps, 6): e_p, e_v, a, u, jerk, reward
    diverged: dict = field(default_factory=dict)

    @property
    def system_reward(self) -> float:
        return float(np.mean(list(self.rewards.values())))


def evaluate(agents: dict, config: ExperimentConfig, eval_seed: int | None = None) -> EvalReport:
    """One noise-free episode per platoon from the fixed initial condition.

    The divergence guard only flags vehicles here; every evaluation episode
    runs the full step budget.
    """
    seed = config.eval_seed if eval_seed is None else eval_seed
    n_f = config.followers
    rewards, trajectories, flags = {}, {}, {}
    for p in range(1, config.platoons + 1):
        platoon = build_platoon(config)
        rng = rng_stream(seed, p, 0, "leader")
        traj = np.zeros((n_f, config.episode.steps, 6))
        bad = np.zeros(n_f, dtype=bool)
        for k in range(config.episode.steps):
            prev = platoon.states.copy()
            actions = [agents[(p, v)].act(prev[v - 1], explore=False) for v in range(1, n_f + 1)]
            res = platoon.step(actions, leader_input(config.leader_input, rng), guard=False)
            u = np.clip(actions, -config.vehicle.u_max, config.vehicle.u_max)
            traj[:, k, 0:3] = res.states[:, 0:3]
            traj[:, k, 3] = u
            traj[:, k, 4] = res.jerks
            traj[:, k, 5] = res.rewards
            bad |= np.abs(res.states[:, 0]) > config.divergence_limit
        for v in range(1, n_f + 1):
            rewards[(p, v)] = float(traj[v - 1, :, 5].sum())
            trajectories[(p, v)] = traj[v - 1]
            flags[(p, v)] = bool(bad[v - 1])
    return EvalReport(seed, config.episode.step_time, rewards, trajectories, flags)


def moving_average(series, window: int = 40) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` points average the available prefix."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(len(x)):
        w = x[max(0, i - window + 1): i + 1]
        # offsets from the first value keep a constant window exact
        out[i] = w[0] + (w - w[0]).mean()
    return out


@dataclass(frozen=True)
class SeedSummary:
    per_seed: tuple[float, ...]
    mean: float
    std: float | None


def aggregate_seeds(values, ddof: int = 0) -> SeedSummary:
    """Mean and standard deviation of per-seed system rewards.

    ``values`` holds floats or :class:`EvalReport` objects. ``ddof=0`` is the
    population convention, ``ddof=1`` the sample one; the deviation is
    ``None`` for a single value.
    """
    rewards = tuple(v.system_reward if isinstance(v, EvalReport) else float(v) for v in values)
    if not rewards:
        raise ValueError("need at least one value")
    arr = np.array(rewards)
    std = float(arr.std(ddof=ddof)) if len(arr) > ddof and len(arr) > 1 else None
    return SeedSummary(rewards, float(arr.mean()), std)


def member_dir(p: int, v: int) -> str:
    return f"p{p}_v{v}"


def save_checkpoints(directory, agents: dict, config: ExperimentConfig) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for (p, v), agent in sorted(agents.items()):
        save_agent(d / member_dir(p, v), agent)
    manifest = {
        "format": "platoon-frl-checkpoint/1",
        "members": [list(m) for m in sorted(agents)],
        "files": ["actor.bin", "critic.bin", "target_actor.bin", "target_critic.bin",
                  "actor_opt.bin", "critic_opt.bin"],
        "actor_layout": [[n, list(s)] for n, s, _ in config.agent.actor_spec().layout()],
        "critic_layout": [[n, list(s)] for n, s, _ in config.agent.critic_spec().layout()],
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def load_checkpoints(directory, config: ExperimentConfig) -> dict:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise LoadError(f"cannot read checkpoint manifest in {d}: {exc}") from None
    expected = [list(m) for m in config.topology_obj().members()]
    if manifest.get("members") != expected:
        raise LoadError(f"checkpoint members {manifest.get('members')} do not match config {expected}")
    agents = {}
    for p, v in expected:
        agents[(p, v)] = load_agent(d / member_dir(p, v), config.agent)
    return agents
