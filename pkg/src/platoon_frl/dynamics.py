"""Discrete-time CACC platoon model in error coordinates.

Each follower ``i`` observes ``x = [e_p, e_v, a_i, a_{i-1}]`` and evolves by a
forward-Euler step of the constant time-headway model. An absolute-coordinate
model (positions, velocities) is kept alongside as an independent oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from platoon_frl import kernels


class InvalidParameterError(ValueError):
    """A model constant is outside its admissible range."""


class NumericDomainError(ValueError):
    """Non-finite input to a numeric routine."""


class ConfigurationError(ValueError):
    """Inconsistent platoon or experiment configuration."""


@dataclass(frozen=True)
class VehicleParams:
    tau: float = 0.1
    h: float = 1.0
    r: float = 2.0
    length: float = 4.0
    u_max: float = 2.5

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidParameterError(f"tau must be > 0, got {self.tau}")
        if not self.h > 0:
            raise InvalidParameterError(f"h must be > 0, got {self.h}")
        if not self.u_max > 0:
            raise InvalidParameterError(f"u_max must be > 0, got {self.u_max}")
        if self.r < 0 or self.length < 0:
            raise InvalidParameterError("r and length must be >= 0")


@dataclass(frozen=True)
class DiscreteMatrices:
    a_d: np.ndarray
    b_d: np.ndarray
    c_d: np.ndarray
    step: float


@dataclass(frozen=True)
class ErrorState:
    e_p: float
    e_v: float
    a: float
    a_pred: float

    def as_array(self) -> np.ndarray:
        return np.array([self.e_p, self.e_v, self.a, self.a_pred], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "ErrorState":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))


@dataclass(frozen=True)
class AbsoluteState:
    p: float
    v: float
    a: float


@dataclass(frozen=True)
class RewardCoeffs:
    a_c: float = 0.4
    b_c: float = 0.2
    c_c: float = 0.2
    d_c: float = 0.2
    max_ep: float = 15.0
    max_ev: float = 10.0
    max_u: float = 2.5
    max_a: float = 2.5

    def __post_init__(self):
        if min(self.a_c, self.b_c, self.c_c, self.d_c) < 0:
            raise InvalidParameterError("reward weights must be >= 0")
        if not min(self.max_ep, self.max_ev, self.max_u, self.max_a) > 0:
            raise InvalidParameterError("reward normalizers must be > 0")


@dataclass(frozen=True)
class LeaderInputModel:
    std: float = 0.1
    mean: float = 0.0
    clip: float = 2.5

    def __post_init__(self):
        if self.std < 0:
            raise InvalidParameterError("leader std must be >= 0")
        if not self.clip > 0:
            raise InvalidParameterError("leader clip must be > 0")


@dataclass(frozen=True)
class EpisodeSpec:
    steps: int = 600
    step_time: float = 0.1
    init_ep: float = 1.0
    init_ev: float = 1.0
    init_a: float = 0.03

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidParameterError("steps must be >= 1")
        if not self.step_time > 0:
            raise InvalidParameterError("step_time must be > 0")


def continuous_matrices(own: VehicleParams, pred: VehicleParams):
    """Continuous-time ``(A, B, C)`` of the error-state model."""
    a = np.array(
        [
            [0.0, 1.0, -own.h, 0.0],
            [0.0, 0.0, -1.0, 1.0],
            [0.0, 0.0, -1.0 / own.tau, 0.0],
            [0.0, 0.0, 0.0, -1.0 / pred.tau],
        ]
    )
    b = np.array([0.0, 0.0, 1.0 / own.tau, 0.0])
    c = np.array([0.0, 0.0, 0.0, 1.0 / pred.tau])
    return a, b, c


def build_discrete_matrices(own: VehicleParams, pred: VehicleParams, step: float) -> DiscreteMatrices:
    if not step > 0:
        raise InvalidParameterError(f"step must be > 0, got {step}")
    if not (own.tau > 0 and pred.tau > 0):
        raise InvalidParameterError("tau must be > 0")
    t = step
    a_d = np.array(
        [
            [1.0, t, -t * own.h, 0.0],
            [0.0, 1.0, -t, t],
            [0.0, 0.0, -t / own.tau + 1.0, 0.0],
            [0.0, 0.0, 0.0, -t / pred.tau + 1.0],
        ]
    )
    b_d = np.array([0.0, 0.0, t / own.tau, 0.0])
    c_d = np.array([0.0, 0.0, 0.0, t / pred.tau])
    return DiscreteMatrices(a_d, b_d, c_d, t)


def step_error_state(m: DiscreteMatrices, x: ErrorState, u: float, u_pred: float) -> ErrorState:
    if not all(map(math.isfinite, (x.e_p, x.e_v, x.a, x.a_pred, u, u_pred))):
        raise NumericDomainError(f"non-finite input: x={x}, u={u}, u_pred={u_pred}")
    xv = x.as_array()
    return ErrorState.from_array(m.a_d @ xv + m.b_d * u + m.c_d * u_pred)


def reward(x: ErrorState, u: float, a_prev: float, coeffs: RewardCoeffs, step: float) -> float:
    """Per-step reward; jerk is the backward difference ``(x.a - a_prev) / step``.

    Always <= 0.
    """
    if not step > 0:
        raise InvalidParameterError("step must be > 0")
    if not min(coeffs.max_ep, coeffs.max_ev, coeffs.max_u, coeffs.max_a) > 0:
        raise InvalidParameterError("reward normalizers must be > 0")
    jerk = (x.a - a_prev) / step
    return -(
        coeffs.a_c * abs(x.e_p) / coeffs.max_ep
        + coeffs.b_c * abs(x.e_v) / coeffs.max_ev
        + coeffs.c_c * abs(u) / coeffs.max_u
        + coeffs.d_c * abs(jerk) / (2.0 * coeffs.max_a)
    )


def absolute_to_error(ego: AbsoluteState, pred: AbsoluteState, params: VehicleParams,
                      pred_length: float | None = None) -> tuple[float, float]:
    """Headway and velocity errors of ``ego`` relative to ``pred``.

    ``pred_length`` is the predecessor's length; it defaults to
    ``params.length`` (homogeneous fleet).
    """
    length = params.length if pred_length is None else pred_length
    d = pred.p - ego.p - length
    d_r = params.r + params.h * ego.v
    return d - d_r, pred.v - ego.v


def step_absolute(s: AbsoluteState, u: float, params: VehicleParams, step: float) -> AbsoluteState:
    if not step > 0:
        raise InvalidParameterError("step must be > 0")
    return AbsoluteState(
        s.p + step * s.v,
        s.v + step * s.a,
        s.a + step * (-s.a / params.tau + u / params.tau),
    )


def leader_input(model: LeaderInputModel, rng: np.random.Generator) -> float:
    """One clipped Gaussian draw for the scripted leader."""
    sample = model.mean + model.std * rng.standard_normal()
    return float(min(max(sample, -model.clip), model.clip))


@dataclass
class StepResult:
    states: np.ndarray  # (n, 4) post-step error states
    rewards: np.ndarray  # (n,)
    jerks: np.ndarray  # (n,)
    diverged: np.ndarray  # (n,) bool, per-vehicle guard trip
    terminal: bool  # platoon-level: horizon reached or any guard trip


@dataclass
class Platoon:
    """Episode state of one platoon: a scripted leader plus ``n`` learning followers.

    ``vehicles[0]`` is the leader; ``vehicles[i]`` for ``i >= 1`` is follower
    ``i`` whose predecessor is ``vehicles[i - 1]``.
    """

    vehicles: list[VehicleParams]
    episode: EpisodeSpec
    coeffs: RewardCoeffs
    divergence_limit: float = 50.0
    states: np.ndarray = field(init=False)
    a_prev: np.ndarray = field(init=False)
    k: int = field(init=False, default=0)
    done: bool = field(init=False, default=False)

    def __post_init__(self):
        if len(self.vehicles) < 2:
            raise ConfigurationError("a platoon needs a leader and at least one follower")
        mats = [
            build_discrete_matrices(self.vehicles[i], self.vehicles[i - 1], self.episode.step_time)
            for i in range(1, len(self.vehicles))
        ]
        self.matrices = mats
        self._a = np.ascontiguousarray(np.stack([m.a_d for m in mats]))
        self._b = np.ascontiguousarray(np.stack([m.b_d for m in mats]))
        self._c = np.ascontiguousarray(np.stack([m.c_d for m in mats]))
        self._u_max = np.array([v.u_max for v in self.vehicles[1:]])
        self.reset()

    @property
    def n_followers(self) -> int:
        return len(self.vehicles) - 1

    def reset(self) -> np.ndarray:
        ep = self.episode
        n = self.n_followers
        self.states = np.tile([ep.init_ep, ep.init_ev, ep.init_a, ep.init_a], (n, 1)).astype(np.float64)
        self.a_prev = self.states[:, 2].copy()
        self.k = 0
        self.done = False
        return self.states.copy()

    def step(self, actions, leader_u: float, guard: bool = True) -> StepResult:
        """Advance every follower one step.

        ``actions`` are clipped to each follower's ``u_max``. Follower 1 sees
        the leader input as its predecessor input; follower ``i > 1`` sees the
        applied action of follower ``i - 1``.
        """
        actions = np.asarray(actions, dtype=np.float64).reshape(-1)
        if actions.shape[0] != self.n_followers:
            raise ConfigurationError(
                f"expected {self.n_followers} actions, got {actions.shape[0]}"
            )
        u = np.clip(actions, -self._u_max, self._u_max)
        u_pred = np.empty_like(u)
        u_pred[0] = leader_u
        u_pred[1:] = u[:-1]
        nxt = kernels.affine_step(self._a, self._b, self._c, self.states, u, u_pred)

        t = self.episode.step_time
        c = self.coeffs
        jerks = (nxt[:, 2] - self.states[:, 2]) / t
        rewards = -(
            c.a_c * np.abs(nxt[:, 0]) / c.max_ep
            + c.b_c * np.abs(nxt[:, 1]) / c.max_ev
            + c.c_c * np.abs(u) / c.max_u
            + c.d_c * np.abs(jerks) / (2.0 * c.max_a)
        )
        finite = np.all(np.isfinite(nxt), axis=1)
        diverged = ~finite | (np.abs(nxt[:, 0]) > self.divergence_limit) if guard else np.zeros(len(u), bool)

        self.a_prev = self.states[:, 2].copy()
        self.states = nxt
        self.k += 1
        terminal = self.k >= self.episode.steps or bool(diverged.any())
        self.done = terminal
        return StepResult(nxt.copy(), rewards, jerks, diverged, terminal)
