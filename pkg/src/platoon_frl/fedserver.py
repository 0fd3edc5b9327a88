"""Synchronous federated aggregation for platoon agents.

Participants are addressed as ``(platoon, vehicle)`` pairs, both 1-based,
vehicle 1 being the first follower behind the scripted leader.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from platoon_frl import tensorio
from platoon_frl.dynamics import ConfigurationError
from platoon_frl.nn import Gradients, optimizer_step

TOPOLOGIES = ("none", "inter", "intra")
KINDS = ("weights", "gradients")
INTRA_MODES = ("directional", "predecessor")

Member = tuple[int, int]


class SynchronizationError(RuntimeError):
    """A group member did not reach the aggregation barrier."""


@dataclass(frozen=True)
class Topology:
    kind: str = "none"
    platoons: int = 1
    vehicles: int = 2
    intra_mode: str = "directional"

    def __post_init__(self):
        if self.kind not in TOPOLOGIES:
            raise ConfigurationError(f"unknown topology {self.kind!r}")
        if self.intra_mode not in INTRA_MODES:
            raise ConfigurationError(f"unknown intra mode {self.intra_mode!r}")
        if self.platoons < 1 or self.vehicles < 1:
            raise ConfigurationError("need at least one platoon and one follower")
        if self.kind == "inter" and self.platoons < 2:
            raise ConfigurationError("inter topology needs at least 2 platoons")

    def members(self) -> list[Member]:
        return [(p, v) for p in range(1, self.platoons + 1) for v in range(1, self.vehicles + 1)]


def aggregation_group(topology: Topology, platoon: int, vehicle: int) -> frozenset[Member]:
    """Participants whose parameters are averaged into ``(platoon, vehicle)``."""
    if not (1 <= platoon <= topology.platoons and 1 <= vehicle <= topology.vehicles):
        raise ConfigurationError(f"member ({platoon}, {vehicle}) outside the configured fleet")
    if topology.kind == "inter":
        return frozenset((p, vehicle) for p in range(1, topology.platoons + 1))
    if topology.kind == "intra":
        if topology.intra_mode == "predecessor":
            return frozenset((platoon, j) for j in (vehicle - 1, vehicle) if j >= 1)
        return frozenset((platoon, j) for j in range(1, vehicle + 1))
    return frozenset({(platoon, vehicle)})


def average_flat(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise uniform mean, exactly independent of participant order.

    Computed as ``min + sum(sorted - min) / n`` so that a consensus input is
    returned unchanged bit for bit.
    """
    if len(vectors) == 0:
        raise ValueError("need at least one vector")
    arrays = [np.asarray(v, dtype=np.float64) for v in vectors]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"length mismatch: {a.shape} vs {shape}")
    if len(arrays) == 1:
        return arrays[0].copy()
    if len(arrays) == 2:
        lo = np.minimum(arrays[0], arrays[1])
        hi = np.maximum(arrays[0], arrays[1])
        return lo + (hi - lo) / 2.0
    stacked = np.sort(np.stack(arrays), axis=0)
    base = stacked[0]
    return base + (stacked - base).sum(axis=0) / len(arrays)


@dataclass(frozen=True)
class FRLSchedule:
    update_delay: float
    cutoff_ratio: float
    step_time: float = 0.1
    episodes_total: int = 1

    def __post_init__(self):
        if self.update_delay < self.step_time - 1e-12:
            raise ConfigurationError("update_delay must be >= step_time")
        if not 0.0 <= self.cutoff_ratio <= 1.0:
            raise ConfigurationError("cutoff_ratio must lie in [0, 1]")

    @property
    def active_episodes(self) -> int:
        return math.ceil(self.cutoff_ratio * self.episodes_total - 1e-9)

    def updates_per_episode(self, steps: int) -> int:
        return sum(self._on_step(k) for k in range(steps))

    def predicted_updates(self, steps: int) -> int:
        """Closed-form update count for a full run of ``steps``-step episodes."""
        ratio = steps * self.step_time / self.update_delay
        per_episode = math.floor(ratio + 1e-9)
        return min(self.active_episodes, self.episodes_total) * per_episode

    def _on_step(self, step_index: int) -> bool:
        ratio = (step_index + 1) * self.step_time / self.update_delay
        return abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1


def should_aggregate(schedule: FRLSchedule, episode_index: int, step_index: int) -> bool:
    """True on steps where an FRL round happens (indices are zero-based)."""
    return episode_index < schedule.active_episodes and schedule._on_step(step_index)


class FedServer:
    """In-process synchronous aggregation barrier.

    A round is opened with the set of expected members; each member submits
    one payload (a flat vector, a tuple of flat vectors, or ``None`` when it
    has nothing to contribute yet). :meth:`results` refuses to run until every
    expected member has submitted. With ``wire=True`` every payload is passed
    through the binary tensor format on the way in and out.
    """

    def __init__(self, wire: bool = False):
        self.wire = wire
        self._lock = threading.Lock()
        self._expected: frozenset = frozenset()
        self._inbox: dict = {}
        self.rounds = 0

    def begin_round(self, members) -> None:
        with self._lock:
            self._expected = frozenset(members)
            self._inbox = {}

    def submit(self, member: Hashable, payload) -> None:
        if payload is not None and self.wire:
            payload = self._decode(self._encode(payload))
        with self._lock:
            if member not in self._expected:
                raise SynchronizationError(f"{member} is not part of this round")
            self._inbox[member] = payload

    def results(self, groups: Mapping[Hashable, frozenset]):
        """Per-recipient group means; ``None`` when no group member contributed."""
        with self._lock:
            missing = self._expected - self._inbox.keys()
            if missing:
                raise SynchronizationError(f"members missing at barrier: {sorted(missing)}")
            inbox = dict(self._inbox)
        out = {}
        for recipient, group in groups.items():
            absent = set(group) - inbox.keys()
            if absent:
                raise SynchronizationError(f"group of {recipient} references {sorted(absent)}")
            payloads = [inbox[m] for m in sorted(group) if inbox[m] is not None]
            if not payloads:
                out[recipient] = None
            elif isinstance(payloads[0], tuple):
                out[recipient] = tuple(average_flat(parts) for parts in zip(*payloads))
            else:
                out[recipient] = average_flat(payloads)
            if out[recipient] is not None and self.wire:
                out[recipient] = self._decode(self._encode(out[recipient]))
        self.rounds += 1
        return out

    @staticmethod
    def _encode(payload) -> bytes:
        parts = payload if isinstance(payload, tuple) else (payload,)
        tag = "tuple" if isinstance(payload, tuple) else "single"
        return tensorio.dumps([(f"{tag}.{i}", p) for i, p in enumerate(parts)])

    @staticmethod
    def _decode(blob: bytes):
        named = tensorio.loads(blob)
        arrays = tuple(a for _, a in named)
        return arrays if named[0][0].startswith("tuple.") else arrays[0]


def apply_aggregation(kind: str, agents: Mapping[Member, object], groups: Mapping[Member, frozenset],
                      server: FedServer | None = None, contributions: Mapping[Member, object] | None = None) -> None:
    """Replace (weights) or update (gradients) every recipient in ``groups``.

    ``agents`` must hold every member referenced by any group. In weights mode
    the contributions are the agents' current flat parameter buffers for all
    four networks; in gradients mode ``contributions`` maps each member to its
    ``(actor_grads, critic_grads)`` pair, or ``None`` during warm-up.
    """
    if kind not in KINDS:
        raise ConfigurationError(f"unknown aggregation kind {kind!r}")
    server = server or FedServer()
    needed = set().union(*groups.values()) if groups else set()
    server.begin_round(needed)
    if kind == "weights":
        for m in sorted(needed):
            if m not in agents:
                raise SynchronizationError(f"agent {m} missing at barrier")
            nets = agents[m].networks
            server.submit(m, tuple(nets[name].data.copy() for name in ("actor", "critic", "target_actor", "target_critic")))
        means = server.results(groups)
        for recipient, mean in means.items():
            nets = agents[recipient].networks
            for name, vec in zip(("actor", "critic", "target_actor", "target_critic"), mean):
                nets[name].assign(vec)
        return

    contributions = contributions or {}
    for m in sorted(needed):
        if m not in contributions:
            raise SynchronizationError(f"gradients of {m} missing at barrier")
        c = contributions[m]
        server.submit(m, None if c is None else (c[0].data, c[1].data))
    means = server.results(groups)
    for recipient, mean in means.items():
        if mean is None:
            continue
        agent = agents[recipient]
        actor_g = Gradients(agent.actor.spec, mean[0])
        critic_g = Gradients(agent.critic.spec, mean[1])
        optimizer_step(agent.critic_opt, agent.critic, critic_g)
        optimizer_step(agent.actor_opt, agent.actor, actor_g)
