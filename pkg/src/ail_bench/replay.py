"""replay.py

FIFO replay storage, the samples-per-insert update schedule and RL batch
assembly with optional expert replay.

Rewards are not stored for training: a sampled ``RawBatch`` carries every
(s, a, s') of its n-step windows so the trainer can score them with the live
discriminator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np

from ail_bench.envs import Transition
from ail_bench.learner import Batch

_INITIAL_ROWS = 1024


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions with uniform sampling (with replacement).

    Storage grows on demand up to ``capacity`` and then overwrites the oldest
    row. ``last`` marks transitions that close an episode (terminal,
    truncated, or the absorbing self-loop) so n-step windows never cross them.
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.total = 0
        self._alloc(min(self.capacity, _INITIAL_ROWS))

    def _alloc(self, rows: int) -> None:
        old = getattr(self, "obs", None)
        n = 0 if old is None else old.shape[0]
        new = {
            "obs": np.zeros((rows, self.obs_dim)),
            "action": np.zeros((rows, self.act_dim)),
            "env_reward": np.zeros(rows),
            "next_obs": np.zeros((rows, self.obs_dim)),
            "terminal": np.zeros(rows, dtype=bool),
            "last": np.zeros(rows, dtype=bool),
        }
        for k, arr in new.items():
            if n:
                arr[:n] = getattr(self, k)
            setattr(self, k, arr)

    def __len__(self) -> int:
        return min(self.total, self.capacity)

    def add(self, t: Transition, last: Optional[bool] = None) -> None:
        """Appends one transition; ``last`` defaults to terminal-or-truncated."""
        i = self.total % self.capacity
        if i >= self.obs.shape[0]:
            self._alloc(min(self.capacity, 2 * self.obs.shape[0]))
        self.obs[i] = t.state
        self.action[i] = t.action
        self.env_reward[i] = t.reward
        self.next_obs[i] = t.next_state
        self.terminal[i] = t.terminal
        self.last[i] = (t.terminal or t.truncated) if last is None else last
        self.total += 1

    def extend(self, transitions, last: Optional[bool] = None) -> None:
        for t in transitions:
            self.add(t, last)

    def oldest_index(self) -> int:
        """Logical index of the oldest stored transition."""
        return max(0, self.total - self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, len(self), size=n)

    def windows(self, idx: np.ndarray, n_step: int) -> Tuple[np.ndarray, np.ndarray]:
        """Rows of the n-step windows starting at ``idx`` and their validity mask.

        A window stops after a ``last`` or terminal transition and never runs
        past the newest stored row.
        """
        newest = (self.total - 1) % self.capacity
        after = (newest - idx) % self.capacity
        rows = np.repeat(idx[:, None], n_step, axis=1)
        mask = np.zeros(rows.shape, dtype=bool)
        alive = np.ones(idx.shape[0], dtype=bool)
        for j in range(n_step):
            alive &= j <= after
            # invalid steps keep pointing at the window start
            rows[:, j] = np.where(alive, (idx + j) % self.capacity, idx)
            mask[:, j] = alive
            alive &= ~(self.last[rows[:, j]] | self.terminal[rows[:, j]])
        return rows, mask


@dataclass
class RawBatch:
    """Sampled transitions as [B, n] windows (n = 1 without n-step returns).

    ``is_expert`` marks rows drawn from the demonstration buffer.
    """
    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    env_reward: np.ndarray
    terminal: np.ndarray
    mask: np.ndarray
    is_expert: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]

    @classmethod
    def gather(cls, buf: ReplayBuffer, idx: np.ndarray, n_step: int = 1, expert: bool = False) -> "RawBatch":
        rows, mask = buf.windows(idx, n_step) if n_step > 1 else (idx[:, None], np.ones((idx.shape[0], 1), bool))
        return cls(buf.obs[rows], buf.action[rows], buf.next_obs[rows], buf.env_reward[rows],
                   buf.terminal[rows], mask, np.full(idx.shape[0], expert))

    @classmethod
    def concat(cls, a: "RawBatch", b: "RawBatch") -> "RawBatch":
        width = max(a.mask.shape[1], b.mask.shape[1])
        pad = lambda x: _pad_window(x, width)
        return cls(*(np.concatenate([pad(getattr(a, f)), pad(getattr(b, f))])
                     for f in ("obs", "action", "next_obs", "env_reward", "terminal", "mask")),
                   np.concatenate([a.is_expert, b.is_expert]))

    def flat(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All window transitions as flat (s, a, s') arrays for reward scoring."""
        b, n = self.mask.shape
        return (self.obs.reshape(b * n, -1), self.action.reshape(b * n, -1), self.next_obs.reshape(b * n, -1))

    def to_batch(self, rewards: np.ndarray, discount: float) -> Batch:
        """Aggregates per-step ``rewards`` [B, n] into n-step targets.

        reward = sum_j gamma^j r_j over valid steps; discount = gamma^k * (1 - terminal_k)
        with k the window length; next_obs is the last valid step's successor.
        """
        rewards = np.asarray(rewards, dtype=np.float64).reshape(self.mask.shape)
        m = self.mask.astype(np.float64)
        powers = discount ** np.arange(self.mask.shape[1])
        ret = (rewards * m * powers).sum(axis=1)
        k = self.mask.sum(axis=1)
        last = np.arange(len(self)), k - 1
        disc = discount ** k * (1.0 - self.terminal[last])
        return Batch.from_numpy(self.obs[:, 0], self.action[:, 0], ret, self.next_obs[last], disc)


def _pad_window(x: np.ndarray, width: int) -> np.ndarray:
    if x.shape[1] == width:
        return x
    pad = [(0, 0), (0, width - x.shape[1])] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, pad)


def updates_due(step: int, batch_size: int, samples_per_insert: float) -> int:
    """Cumulative RL batches owed after ``step`` post-warmup inserts: floor(step * SPI / B)."""
    return math.floor(Fraction(step) * Fraction(samples_per_insert) / batch_size)


def schedule_updates(env_step: int, batch_size: int, samples_per_insert: float, ratio_disc: int,
                     grad_updates_per_batch: int = 1) -> Tuple[int, int]:
    """(discriminator updates, RL updates) to run at post-warmup step ``env_step`` (1-based).

    RL updates owed so far are floor(step * SPI / B); with batch combining N
    they are released N at a time, so the executed count is N * floor(owed / N).
    """
    if env_step < 1:
        return 0, 0
    n = grad_updates_per_batch

    def executed(s: int) -> int:
        return n * (updates_due(s, batch_size, samples_per_insert) // n)

    rl = executed(env_step) - executed(env_step - 1)
    return ratio_disc * rl, rl


def expert_count(batch_size: int, expert_replay: float) -> int:
    """Expert rows in an RL batch: 0 when off (inf), else max(1, round-half-up(B / (ratio + 1)))."""
    if math.isinf(expert_replay):
        return 0
    return max(1, math.floor(batch_size / (expert_replay + 1) + 0.5))


def assemble_rl_batch(rl_buffer: ReplayBuffer, expert_buffer: Optional[ReplayBuffer], batch_size: int,
                      expert_replay: float, rng: np.random.Generator, n_step: int = 1) -> RawBatch:
    """Samples ``batch_size`` rows: policy data plus ``expert_count`` demonstration rows.

    Demonstration rows always use 1-step windows.
    """
    n_expert = expert_count(batch_size, expert_replay) if expert_buffer is not None else 0
    n_expert = min(n_expert, batch_size)
    policy = RawBatch.gather(rl_buffer, rl_buffer.sample_indices(batch_size - n_expert, rng), n_step)
    if n_expert == 0:
        return policy
    expert = RawBatch.gather(expert_buffer, expert_buffer.sample_indices(n_expert, rng), 1, expert=True)
    return RawBatch.concat(policy, expert)
