"""demos.py

Expert demonstrations: generation, subsampling, persistence and the statistics
used for fixed observation normalization.

Demo file format (text, one transition per CSV row)::

    # env_id: point-reach-v0
    # obs_dim: 6
    # act_dim: 2
    # episodes: 11
    # stride: 20
    # source: synthetic
    # expert_return: -18.25
    episode,s0,...,s5,a0,a1,reward,ns0,...,ns5,terminal,truncated
    0,0.1,...

Floats are written with ``repr`` (shortest round-trip decimal). Files from
other tools only need the header keys up to ``stride`` plus the rows.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from ail_bench.envs import Transition, env_spec, episode_return, make, run_episode
from ail_bench.errors import ConfigurationError, DemoFormatError, RunError

logger = logging.getLogger(__name__)

DEFAULT_STRIDE = 20
DEFAULT_TRAJECTORIES = 11
STD_FLOOR = 0.001
REQUIRED_HEADER = ("env_id", "obs_dim", "act_dim", "episodes", "stride")

Episode = Tuple[Transition, ...]


@dataclass(frozen=True)
class DemoSet:
    """An immutable set of demonstration episodes for one task.

    Attributes:
        env_id: Task the episodes come from.
        trajectories: Episodes, each a tuple of transitions.
        subsample_stride: Spacing of retained pairs in the original episodes.
        source: ``synthetic`` (generated here) or ``imported``.
        expert_return: Mean return of the full expert episodes, when known.
    """
    env_id: str
    trajectories: Tuple[Episode, ...] = ()
    subsample_stride: int = 1
    source: Literal["synthetic", "imported"] = "synthetic"
    expert_return: Optional[float] = None

    def __post_init__(self):
        if self.subsample_stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.subsample_stride}")

    @property
    def obs_dim(self) -> int:
        return env_spec(self.env_id).obs_dim

    @property
    def act_dim(self) -> int:
        return env_spec(self.env_id).act_dim

    @property
    def num_transitions(self) -> int:
        return sum(len(ep) for ep in self.trajectories)

    def transitions(self) -> List[Transition]:
        return [t for ep in self.trajectories for t in ep]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DemoSet):
            return NotImplemented
        if (self.env_id, self.subsample_stride, self.source, self.expert_return) != \
                (other.env_id, other.subsample_stride, other.source, other.expert_return):
            return False
        if [len(ep) for ep in self.trajectories] != [len(ep) for ep in other.trajectories]:
            return False
        return all(_same_transition(a, b) for a, b in zip(self.transitions(), other.transitions()))


def _same_transition(a: Transition, b: Transition) -> bool:
    return (np.array_equal(a.state, b.state) and np.array_equal(a.action, b.action)
            and a.reward == b.reward and np.array_equal(a.next_state, b.next_state)
            and a.terminal == b.terminal and a.truncated == b.truncated)


@dataclass(frozen=True)
class NormStats:
    """Per-coordinate observation mean and (population) std."""
    mean: np.ndarray
    std: np.ndarray = field(repr=False)

    @property
    def divisor(self) -> np.ndarray:
        return np.maximum(self.std, STD_FLOOR)

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        return (np.asarray(obs, dtype=np.float64) - self.mean) / self.divisor


def subsample(demo: DemoSet, stride: int = DEFAULT_STRIDE) -> DemoSet:
    """Keeps every ``stride``-th pair of each episode, starting at index 0.

    A terminal final transition is kept even when it falls off the grid so the
    absorbing-state wrapper still sees the episode's termination.
    """
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    kept = []
    for ep in demo.trajectories:
        picked = list(ep[::stride])
        if ep and ep[-1].terminal and (len(ep) - 1) % stride != 0:
            picked.append(ep[-1])
        kept.append(tuple(picked))
    return DemoSet(
        env_id=demo.env_id,
        trajectories=tuple(kept),
        subsample_stride=demo.subsample_stride * stride,
        source=demo.source,
        expert_return=demo.expert_return,
    )


def fixed_norm_stats(demo: DemoSet) -> NormStats:
    """Population mean/std over every retained demonstration state."""
    states = [t.state for t in demo.transitions()]
    if not states:
        raise ConfigurationError("cannot compute normalization statistics of an empty demo set")
    x = np.stack(states)
    return NormStats(mean=x.mean(axis=0), std=x.std(axis=0))


# --- persistence -----------------------------------------------------------

def _columns(obs_dim: int, act_dim: int) -> List[str]:
    return (["episode"] + [f"s{i}" for i in range(obs_dim)] + [f"a{i}" for i in range(act_dim)]
            + ["reward"] + [f"ns{i}" for i in range(obs_dim)] + ["terminal", "truncated"])


def save_demos(demo: DemoSet, path: str) -> None:
    """Writes ``demo`` in the text demo format."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# env_id: {demo.env_id}\n")
        f.write(f"# obs_dim: {demo.obs_dim}\n")
        f.write(f"# act_dim: {demo.act_dim}\n")
        f.write(f"# episodes: {len(demo.trajectories)}\n")
        f.write(f"# stride: {demo.subsample_stride}\n")
        f.write(f"# source: {demo.source}\n")
        if demo.expert_return is not None:
            f.write(f"# expert_return: {demo.expert_return!r}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(_columns(demo.obs_dim, demo.act_dim))
        for idx, ep in enumerate(demo.trajectories):
            for t in ep:
                w.writerow([idx] + [repr(float(v)) for v in t.state] + [repr(float(v)) for v in t.action]
                           + [repr(float(t.reward))] + [repr(float(v)) for v in t.next_state]
                           + [int(t.terminal), int(t.truncated)])
    logger.info("wrote demos path=%s episodes=%d transitions=%d", path, len(demo.trajectories),
                demo.num_transitions)


def load_demos(path: str) -> DemoSet:
    """Reads a demo file written by ``save_demos`` or by an external tool.

    Raises:
        DemoFormatError: Missing or malformed header, dimension mismatch with
            the env, or bad rows.
    """
    header = {}
    rows: List[List[str]] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().splitlines()
    body_start = 0
    for body_start, line in enumerate(lines):
        if not line.startswith("#"):
            break
        if ":" not in line:
            raise DemoFormatError(f"{path}: malformed header line {line!r}")
        key, value = line[1:].split(":", 1)
        header[key.strip()] = value.strip()
    else:
        body_start = len(lines)
    missing = [k for k in REQUIRED_HEADER if k not in header]
    if missing:
        raise DemoFormatError(f"{path}: header missing {missing}")
    try:
        spec = env_spec(header["env_id"])
        obs_dim, act_dim = int(header["obs_dim"]), int(header["act_dim"])
        n_episodes, stride = int(header["episodes"]), int(header["stride"])
        expert_return = float(header["expert_return"]) if "expert_return" in header else None
    except (ConfigurationError, ValueError) as e:
        raise DemoFormatError(f"{path}: bad header: {e}") from e
    if (obs_dim, act_dim) != (spec.obs_dim, spec.act_dim):
        raise DemoFormatError(
            f"{path}: dims (obs={obs_dim}, act={act_dim}) do not match {spec.id} "
            f"(obs={spec.obs_dim}, act={spec.act_dim})")
    source = header.get("source", "imported")
    if source not in ("synthetic", "imported"):
        raise DemoFormatError(f"{path}: unknown source {source!r}")

    reader = csv.reader(lines[body_start:])
    columns = _columns(obs_dim, act_dim)
    first = next(reader, None)
    if first is not None and first != columns:
        if first and first[0] == "episode":
            raise DemoFormatError(f"{path}: column header does not match dims")
        rows.append(first)
    rows.extend(r for r in reader if r)

    episodes: List[List[Transition]] = [[] for _ in range(n_episodes)]
    for lineno, row in enumerate(rows, start=1):
        if len(row) != len(columns):
            raise DemoFormatError(f"{path}: row {lineno} has {len(row)} fields, expected {len(columns)}")
        try:
            ep = int(row[0])
            vals = [float(v) for v in row[1:-2]]
            terminal, truncated = bool(int(row[-2])), bool(int(row[-1]))
            t = Transition(
                state=np.array(vals[:obs_dim]),
                action=np.array(vals[obs_dim:obs_dim + act_dim]),
                reward=vals[obs_dim + act_dim],
                next_state=np.array(vals[obs_dim + act_dim + 1:]),
                terminal=terminal,
                truncated=truncated,
            )
        except ValueError as e:
            raise DemoFormatError(f"{path}: row {lineno}: {e}") from e
        if not 0 <= ep < n_episodes:
            raise DemoFormatError(f"{path}: row {lineno}: episode index {ep} out of range")
        if np.any(np.abs(t.action) > 1.0):
            raise DemoFormatError(f"{path}: row {lineno}: action outside [-1, 1]")
        episodes[ep].append(t)
    return DemoSet(
        env_id=spec.id,
        trajectories=tuple(tuple(ep) for ep in episodes),
        subsample_stride=stride,
        source=source,
        expert_return=expert_return,
    )


# --- reference scores ------------------------------------------------------

class ReferenceScores(BaseModel):
    """Returns that map raw episode returns to the 0 (random) .. 1 (expert) scale."""
    env_id: str
    random_return: float
    expert_return: float


def refs_path(demos_path: str) -> str:
    return f"{demos_path}.refs.json"


def save_refs(refs: ReferenceScores, demos_path: str) -> str:
    p = refs_path(demos_path)
    Path(p).write_text(refs.model_dump_json(indent=2), encoding="utf-8")
    return p


def load_refs(demos_path: str) -> ReferenceScores:
    """Loads the sidecar next to ``demos_path``.

    Raises:
        DemoFormatError: If the sidecar is missing or invalid.
    """
    p = refs_path(demos_path)
    try:
        return ReferenceScores.model_validate_json(Path(p).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DemoFormatError(f"reference scores not found at {p}; run `ail-bench expert` first") from None
    except ValueError as e:
        raise DemoFormatError(f"{p}: {e}") from e


def random_policy_return(env_id: str, episodes: int = 100, seed: int = 0) -> float:
    """Mean return of uniformly random actions over ``episodes`` episodes."""
    env = make(env_id)
    rng = np.random.default_rng(seed)
    act_dim = env_spec(env_id).act_dim
    returns = [episode_return(run_episode(env, lambda s: rng.uniform(-1.0, 1.0, size=act_dim), seed=seed + i))
               for i in range(episodes)]
    return float(np.mean(returns))


# --- expert generation -----------------------------------------------------

EXPERT_STEPS = 150_000


def generate_expert(env_id: str, config=None, n_trajectories: int = DEFAULT_TRAJECTORIES, seed: int = 0,
                    total_env_steps: int = EXPERT_STEPS, checkpoint_path: Optional[str] = None,
                    progress: bool = False) -> DemoSet:
    """Trains an RL agent on the env reward and records its mode-policy episodes.

    Args:
        env_id: Built-in task id.
        config: ChoiceConfig for the learner (defaults to the best preset with SAC).
        n_trajectories: Episodes to record.
        seed: Seed for training and rollouts.
        total_env_steps: Fixed training budget.
        checkpoint_path: Optional path for the trained policy's checkpoint.
        progress: Show a progress bar.

    Returns:
        An unsubsampled DemoSet whose ``expert_return`` is the episodes' mean return.

    Raises:
        ConfigurationError: If ``n_trajectories`` or ``total_env_steps`` is below 1.
        RunError: If training diverges.
    """
    from ail_bench.config import ChoiceConfig
    from ail_bench.trainer import AilTrainer, collect_episodes

    env_spec(env_id)
    if n_trajectories < 1:
        raise ConfigurationError(f"need at least one expert trajectory, got {n_trajectories}")
    if total_env_steps < 1:
        raise ConfigurationError(f"expert training needs at least one env step, got {total_env_steps}")
    config = config or ChoiceConfig()
    # no demos to normalize with, and nothing to imitate
    config = config.with_updates(
        obsnormalization="none" if config.obsnormalization == "fixed" else config.obsnormalization,
        pretrainwithbc=False,
        explicitabsorbingstate=False,
    )
    trainer = AilTrainer(config, env_id, demos=None, total_env_steps=total_env_steps, seed=seed,
                         reward_source="env", progress=progress)
    record = trainer.run()
    if record.status == "failed":
        raise RunError(f"expert training diverged: {record.error}", {"env_id": env_id, "seed": seed})
    if checkpoint_path:
        trainer.learner.save(checkpoint_path)
    episodes = collect_episodes(trainer, n_trajectories, seed=seed + 10_000, mode="mode")
    expert_return = float(np.mean([episode_return(ep) for ep in episodes]))
    logger.info("expert env=%s episodes=%d mean_return=%.3f", env_id, len(episodes), expert_return)
    return DemoSet(env_id=env_id, trajectories=tuple(tuple(ep) for ep in episodes),
                   subsample_stride=1, source="synthetic", expert_return=expert_return)
