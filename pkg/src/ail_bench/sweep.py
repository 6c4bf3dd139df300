"""sweep.py

Declarative choice spaces, independent uniform sampling and batch execution.

A space file is JSON::

    {
      "description": "two-algorithm demo",
      "total_env_steps": 100000,
      "fixed": {"evalepisodes": 10},
      "space": {"choices": {
        "directrlalgorithm": {
          "values": ["sac", "td3"],
          "given": {
            "sac": {"choices": {"sactau": {"values": [0.001, 0.01]}}},
            "td3": {"choices": {"rlsigma": {"values": [0.1, 0.2]}}}
          }
        },
        "regularizer": {"values": ["GP", "spectral norm"]}
      }}
    }

Choices are drawn in file order. A ``given`` block is sampled only when its
parent draws the matching value, and may set any choice (the wide space sets
``batchsize`` per algorithm). Choices the space never draws keep their
ChoiceConfig defaults; ``fixed`` values are applied last.
"""
from __future__ import annotations

import contextlib
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.multiprocessing as mp
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from tqdm import tqdm

from ail_bench.config import ChoiceConfig, choice_names
from ail_bench.demos import load_demos, load_refs
from ail_bench.errors import ConfigurationError
from ail_bench.run_log import RunRecord, append_record, config_hash, load_records
from ail_bench.trainer import train

logger = logging.getLogger(__name__)

SHIPPED_SPACES = ("wide", "main", "tradeoffs")


def value_key(value: Any) -> str:
    """String form used to match a drawn value against ``given`` keys."""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return str(value)


class ChoiceSpace(BaseModel):
    """Value list of one choice plus the sub-spaces its values unlock."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    values: List[Any] = Field(min_length=1)
    given: Dict[str, "SweepSpace"] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_given(self) -> "ChoiceSpace":
        keys = {value_key(v) for v in self.values}
        unknown = sorted(set(self.given) - keys)
        if unknown:
            raise ValueError(f"conditional blocks {unknown} name values not in {sorted(keys)}")
        return self


class SweepSpace(BaseModel):
    """Mapping of choice name to ChoiceSpace, in sampling order."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    choices: Dict[str, ChoiceSpace] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_names(self) -> "SweepSpace":
        valid = set(choice_names())
        unknown = sorted(set(self.choices) - valid)
        if unknown:
            raise ValueError(f"unknown choices {unknown}")
        return self

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SweepSpace":
        try:
            return cls.model_validate(dict(data))
        except ValidationError as e:
            raise ConfigurationError(f"invalid sweep space: {e}") from e

    def names(self) -> List[str]:
        """Every choice the space can draw, nested blocks included."""
        out: List[str] = []
        for name, choice in self.choices.items():
            out.append(name)
            for sub in choice.given.values():
                out.extend(n for n in sub.names() if n not in out)
        return out


ChoiceSpace.model_rebuild()
SweepSpace.model_rebuild()


class SpaceFile(BaseModel):
    """Contents of a space file."""
    model_config = ConfigDict(extra="forbid")

    description: str = ""
    total_env_steps: int = Field(100_000, ge=1)
    fixed: Dict[str, Any] = Field(default_factory=dict)
    space: SweepSpace


def space_path(name_or_path: str) -> Path:
    """Resolves a shipped space name (``wide``, ``main``, ``tradeoffs``) or a file path."""
    if name_or_path in SHIPPED_SPACES:
        return Path(str(resources.files("ail_bench") / "spaces" / f"{name_or_path}.json"))
    return Path(name_or_path)


def load_space_file(name_or_path: str) -> SpaceFile:
    """Loads and validates a space file.

    Raises:
        ConfigurationError: Missing file, bad JSON, unknown choices or empty value lists.
    """
    path = space_path(name_or_path)
    try:
        return SpaceFile.model_validate_json(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"space file not found: {path}") from None
    except ValidationError as e:
        raise ConfigurationError(f"{path}: {e}") from e


def sample_choices(space: SweepSpace, rng: np.random.Generator) -> Dict[str, Any]:
    """Draws one value per choice, recursing into the blocks the draws unlock."""
    flat: Dict[str, Any] = {}
    for name, choice in space.choices.items():
        value = choice.values[int(rng.integers(len(choice.values)))]
        flat[name] = value
        sub = choice.given.get(value_key(value))
        if sub is not None:
            flat.update(sample_choices(sub, rng))
    return flat


def sample_config(space: SweepSpace, rng: np.random.Generator,
                  fixed: Optional[Mapping[str, Any]] = None) -> ChoiceConfig:
    """Samples a full ChoiceConfig from ``space``.

    Args:
        space: Validated space.
        rng: Sampling stream; a fixed stream gives a fixed sequence of configs.
        fixed: Values applied after sampling (desk-scale knobs).

    Returns:
        The config; choices the space does not draw keep their defaults.
    """
    flat = sample_choices(space, rng)
    if fixed:
        flat.update(fixed)
    return ChoiceConfig.from_flat(flat)


@dataclass(frozen=True)
class TaskBinding:
    """An environment together with the demonstration file that defines the task."""
    env_id: str
    demos_path: str

    @property
    def label(self) -> str:
        return os.path.basename(self.demos_path)


@dataclass(frozen=True)
class SweepJob:
    config: Dict[str, Any]
    task: TaskBinding
    seed: int
    total_env_steps: int

    @property
    def key(self) -> Tuple[str, int, str, str]:
        return (config_hash(self.config), self.seed, self.task.env_id, self.task.label)


@dataclass
class SweepPlan:
    """What a sweep runs: ``n_configs`` samples x tasks x seeds.

    Attributes:
        space: Space to sample from.
        n_configs: Number of configs to sample.
        tasks: Environment and demonstration bindings.
        seeds: Seeds run for every (config, task).
        total_env_steps: Step budget of every run.
        fixed: Values applied to every sampled config.
        sample_seed: Seed of the sampling stream.
    """
    space: SweepSpace
    n_configs: int
    tasks: Sequence[TaskBinding]
    seeds: Sequence[int] = (0,)
    total_env_steps: int = 100_000
    fixed: Dict[str, Any] = field(default_factory=dict)
    sample_seed: int = 0

    def __post_init__(self):
        if self.n_configs < 1:
            raise ConfigurationError(f"n_configs must be >= 1, got {self.n_configs}")
        if not self.tasks:
            raise ConfigurationError("a sweep needs at least one task")
        if not self.seeds:
            raise ConfigurationError("a sweep needs at least one seed")
        if self.total_env_steps < 1:
            raise ConfigurationError("total_env_steps must be >= 1")

    @classmethod
    def from_space_file(cls, space_file: SpaceFile, n_configs: int, tasks: Sequence[TaskBinding],
                        seeds: Sequence[int] = (0,), total_env_steps: Optional[int] = None,
                        fixed: Optional[Mapping[str, Any]] = None, sample_seed: int = 0) -> "SweepPlan":
        merged = dict(space_file.fixed)
        merged.update(fixed or {})
        return cls(space_file.space, n_configs, tuple(tasks), tuple(seeds),
                   total_env_steps or space_file.total_env_steps, merged, sample_seed)

    def configs(self) -> List[ChoiceConfig]:
        rng = np.random.default_rng(self.sample_seed)
        return [sample_config(self.space, rng, self.fixed) for _ in range(self.n_configs)]

    def jobs(self) -> Iterator[SweepJob]:
        for config in self.configs():
            flat = config.to_flat()
            for task in self.tasks:
                for seed in self.seeds:
                    yield SweepJob(flat, task, seed, self.total_env_steps)


def failed_record(job: SweepJob, error: str) -> RunRecord:
    return RunRecord(config=job.config, config_hash=config_hash(job.config), env_id=job.task.env_id,
                     demos=job.task.label, seed=job.seed, total_env_steps=job.total_env_steps,
                     status="failed", error=error)


def run_job(job: SweepJob) -> RunRecord:
    """Trains one job; any exception becomes a failed record."""
    try:
        demos = load_demos(job.task.demos_path)
        refs = load_refs(job.task.demos_path)
        return train(ChoiceConfig.from_flat(job.config), job.task.env_id, demos, job.total_env_steps,
                     seed=job.seed, refs=refs, demos_label=job.task.label)
    except Exception as e:  # noqa: BLE001 - one crash must not abort the sweep
        logger.error("run crashed env=%s seed=%d error=%r", job.task.env_id, job.seed, e)
        return failed_record(job, f"{type(e).__name__}: {e}")


def _init_worker() -> None:
    torch.set_num_threads(1)


@contextlib.contextmanager
def _single_thread():
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def pending_jobs(plan: SweepPlan, results_path: str) -> List[SweepJob]:
    """Jobs of ``plan`` whose key is not yet in the results file (nor repeated in the plan)."""
    done = {r.key for r in load_records(results_path)}
    jobs = []
    for job in plan.jobs():
        if job.key in done:
            continue
        done.add(job.key)
        jobs.append(job)
    return jobs


def run_sweep(plan: SweepPlan, results_path: str, parallelism: int = 1, progress: bool = False) -> List[RunRecord]:
    """Runs every pending job of ``plan`` and appends one record per run.

    Records are appended by this process as runs finish, so the results file
    is the only shared state. Rerunning the same plan resumes it.

    Args:
        plan: What to run.
        results_path: JSONL results file.
        parallelism: Worker processes (1 runs inline).
        progress: Show a tqdm bar.

    Returns:
        The records appended by this call, in completion order.
    """
    for task in plan.tasks:
        # fail fast on unusable tasks
        load_demos(task.demos_path)
        load_refs(task.demos_path)
    jobs = pending_jobs(plan, results_path)
    logger.info("sweep start jobs=%d parallelism=%d results=%s", len(jobs), parallelism, results_path)
    records: List[RunRecord] = []
    bar = tqdm(total=len(jobs), desc="sweep", disable=not progress)

    def finish(record: RunRecord) -> None:
        append_record(results_path, record)
        records.append(record)
        bar.update(1)
        logger.info("sweep run done status=%s final_score=%s done=%d/%d", record.status, record.final_score,
                    len(records), len(jobs))

    try:
        if parallelism <= 1:
            with _single_thread():
                for job in jobs:
                    finish(run_job(job))
        else:
            ctx = mp.get_context("spawn")
            with ProcessPoolExecutor(max_workers=parallelism, mp_context=ctx, initializer=_init_worker) as pool:
                futures = {pool.submit(run_job, job): job for job in jobs}
                for future in as_completed(futures):
                    try:
                        record = future.result()
                    except Exception as e:  # noqa: BLE001 - e.g. a worker killed by the OS
                        record = failed_record(futures[future], f"{type(e).__name__}: {e}")
                    finish(record)
    finally:
        bar.close()
    failed = sum(r.status == "failed" for r in records)
    logger.info("sweep finished runs=%d failed=%d", len(records), failed)
    return records
