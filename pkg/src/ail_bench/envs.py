"""envs.py

Built-in continuous-control tasks and the absorbing-state wrapper.

Both tasks are gymnasium environments wrapped in ``TimeLimit``; actions live in
[-1, 1]^d and are clipped before integration.

- ``point-reach-v0``: a point mass chasing a goal. Observation (pos2, vel2, goal2);
  the episode fails early once the point leaves [-2, 2]^2. Time limit 100.
- ``pendulum-swingup-v0``: torque-limited pendulum swing-up. Observation
  (cos th, sin th, thdot); never terminates early. Time limit 200.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import gymnasium as gym
import numpy as np
from gymnasium import spaces
from gymnasium.wrappers import TimeLimit

from ail_bench.errors import ConfigurationError, NumericError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvSpec:
    """Static description of a built-in task."""
    id: str
    obs_dim: int
    act_dim: int
    time_limit: int
    has_early_termination: bool


@dataclass(frozen=True)
class Transition:
    """One environment step.

    Attributes:
        state: Observation before the step.
        action: Action taken, clipped to [-1, 1].
        reward: Environment reward.
        next_state: Observation after the step.
        terminal: The environment ended the episode.
        truncated: The time limit cut the episode.
    """
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool = False
    truncated: bool = False

    def __post_init__(self):
        if self.terminal and self.truncated:
            raise ValueError("a transition cannot be both terminal and truncated")


class PointReachEnv(gym.Env):
    """Point mass with velocity control, rewarded by negative distance to a goal."""
    metadata = {"render_modes": []}

    dt = 0.1
    bound = 2.0

    def __init__(self):
        self.observation_space = spaces.Box(-np.inf, np.inf, shape=(6,), dtype=np.float64)
        self.action_space = spaces.Box(-1.0, 1.0, shape=(2,), dtype=np.float64)
        self._pos = np.zeros(2)
        self._vel = np.zeros(2)
        self._goal = np.zeros(2)

    def _obs(self) -> np.ndarray:
        return np.concatenate([self._pos, self._vel, self._goal])

    def reset(self, *, seed: Optional[int] = None, options=None):
        super().reset(seed=seed)
        self._pos = self.np_random.uniform(-1.0, 1.0, size=2)
        self._vel = np.zeros(2)
        self._goal = self.np_random.uniform(-1.0, 1.0, size=2)
        return self._obs(), {}

    def step(self, action):
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        self._vel = np.clip(self._vel + self.dt * a, -1.0, 1.0)
        self._pos = self._pos + self.dt * self._vel
        reward = -float(np.linalg.norm(self._pos - self._goal))
        terminated = bool(np.max(np.abs(self._pos)) > self.bound)
        return self._obs(), reward, terminated, False, {}


class PendulumSwingupEnv(gym.Env):
    """Classic pendulum with Euler integration; reward penalizes angle, speed and torque."""
    metadata = {"render_modes": []}

    max_speed = 8.0
    max_torque = 2.0
    dt = 0.05
    g = 10.0
    m = 1.0
    l = 1.0

    def __init__(self):
        self.observation_space = spaces.Box(
            low=np.array([-1.0, -1.0, -self.max_speed]),
            high=np.array([1.0, 1.0, self.max_speed]),
            dtype=np.float64,
        )
        self.action_space = spaces.Box(-1.0, 1.0, shape=(1,), dtype=np.float64)
        self._th = 0.0
        self._thdot = 0.0

    def _obs(self) -> np.ndarray:
        return np.array([math.cos(self._th), math.sin(self._th), self._thdot])

    def reset(self, *, seed: Optional[int] = None, options=None):
        super().reset(seed=seed)
        self._th = float(self.np_random.uniform(-math.pi, math.pi))
        self._thdot = float(self.np_random.uniform(-1.0, 1.0))
        return self._obs(), {}

    def step(self, action):
        a = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
        u = self.max_torque * a
        th, thdot = self._th, self._thdot
        # reward is charged on the pre-step state
        cost = angle_normalize(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2
        thdot = thdot + (3 * self.g / (2 * self.l) * math.sin(th) + 3.0 / (self.m * self.l ** 2) * u) * self.dt
        thdot = float(np.clip(thdot, -self.max_speed, self.max_speed))
        self._th = th + thdot * self.dt
        self._thdot = thdot
        return self._obs(), -cost, False, False, {}


def angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2 * math.pi)) - math.pi


ENV_SPECS: Dict[str, EnvSpec] = {
    "point-reach-v0": EnvSpec("point-reach-v0", obs_dim=6, act_dim=2, time_limit=100,
                              has_early_termination=True),
    "pendulum-swingup-v0": EnvSpec("pendulum-swingup-v0", obs_dim=3, act_dim=1, time_limit=200,
                                   has_early_termination=False),
}

_ENV_CLASSES = {
    "point-reach-v0": PointReachEnv,
    "pendulum-swingup-v0": PendulumSwingupEnv,
}


def env_spec(env_id: str) -> EnvSpec:
    """Looks up a built-in task, raising ConfigurationError on unknown ids."""
    try:
        return ENV_SPECS[env_id]
    except KeyError:
        raise ConfigurationError(f"unknown env id {env_id!r}; valid: {sorted(ENV_SPECS)}") from None


def make(env_id: str) -> gym.Env:
    """Builds a fresh, time-limited instance of a built-in task."""
    spec = env_spec(env_id)
    return TimeLimit(_ENV_CLASSES[env_id](), max_episode_steps=spec.time_limit)


def reset(env_id: str, seed: int) -> np.ndarray:
    """Returns the initial state of ``env_id`` under ``seed``."""
    state, _ = make(env_id).reset(seed=seed)
    return state


def step_transition(env: gym.Env, state: np.ndarray, action) -> Transition:
    """Advances ``env`` from ``state`` by one clipped action.

    Raises:
        NumericError: If the action contains NaN.
    """
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if np.isnan(a).any():
        raise NumericError("NaN in action", {"action": a.tolist()})
    a = np.clip(a, -1.0, 1.0)
    next_state, reward, terminated, truncated, _ = env.step(a)
    terminated = bool(terminated)
    return Transition(
        state=np.asarray(state, dtype=np.float64),
        action=a,
        reward=float(reward),
        next_state=np.asarray(next_state, dtype=np.float64),
        terminal=terminated,
        # TimeLimit may flag both on the last step; termination wins
        truncated=bool(truncated) and not terminated,
    )


def run_episode(env: gym.Env, act: Callable[[np.ndarray], np.ndarray], seed: Optional[int] = None) -> List[Transition]:
    """Rolls out one full episode with the action function ``act``."""
    state, _ = env.reset(seed=seed)
    episode: List[Transition] = []
    while True:
        t = step_transition(env, state, act(state))
        episode.append(t)
        if t.terminal or t.truncated:
            return episode
        state = t.next_state


def episode_return(episode: Sequence[Transition]) -> float:
    return float(sum(t.reward for t in episode))


# --- absorbing state -------------------------------------------------------

def add_absorbing_bit(obs: np.ndarray, bit: float = 0.0) -> np.ndarray:
    """Appends the absorbing indicator to one observation (or a batch)."""
    obs = np.asarray(obs, dtype=np.float64)
    pad = np.full(obs.shape[:-1] + (1,), bit)
    return np.concatenate([obs, pad], axis=-1)


def absorbing_state(obs_dim: int) -> np.ndarray:
    """The all-zero absorbing observation with its bit set, length obs_dim + 1."""
    s = np.zeros(obs_dim + 1)
    s[-1] = 1.0
    return s


def absorbing_transitions(t: Transition) -> List[Transition]:
    """Applies the absorbing rewrite to a single transition.

    Non-terminal transitions gain a zero bit. A terminal transition becomes a
    non-terminal step into the absorbing state followed by an absorbing
    self-loop with zero action.
    """
    s = add_absorbing_bit(t.state)
    if not t.terminal:
        return [replace(t, state=s, next_state=add_absorbing_bit(t.next_state))]
    absorbing = absorbing_state(t.state.shape[-1])
    into = Transition(state=s, action=t.action, reward=t.reward, next_state=absorbing)
    loop = Transition(state=absorbing, action=np.zeros_like(t.action), reward=0.0,
                      next_state=absorbing.copy())
    return [into, loop]


def wrap_absorbing(episode: Sequence[Transition]) -> List[Transition]:
    """Rewrites an episode so terminals lead into a self-looping absorbing state.

    Truncated endings are left as they are (bit appended only). The output has
    one more transition than the input iff the last input transition is terminal.
    """
    out: List[Transition] = []
    for t in episode:
        out.extend(absorbing_transitions(t))
    return out


def is_absorbing(obs: np.ndarray) -> np.ndarray:
    """Boolean mask of rows that are the absorbing state (bit set)."""
    return np.asarray(obs)[..., -1] > 0.5


def stack_transitions(episode: Sequence[Transition]) -> Tuple[np.ndarray, ...]:
    """Stacks transitions into (states, actions, rewards, next_states, terminals, truncations)."""
    if not episode:
        raise ValueError("cannot stack an empty episode")
    return (
        np.stack([t.state for t in episode]),
        np.stack([t.action for t in episode]),
        np.array([t.reward for t in episode]),
        np.stack([t.next_state for t in episode]),
        np.array([t.terminal for t in episode]),
        np.array([t.truncated for t in episode]),
    )
