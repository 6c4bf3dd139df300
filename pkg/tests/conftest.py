"""conftest.py

Pytest configuration and fixtures for the ail-bench test suite.
"""
import os
import shutil
import tempfile

import numpy as np
import pytest

from ail_bench.config import ChoiceConfig
from ail_bench.demos import DemoSet, ReferenceScores, random_policy_return, save_demos, save_refs, subsample
from ail_bench.envs import episode_return, make, run_episode

# Small networks and short schedules so a full training run takes seconds.
TINY = {
    "numpolicylayers": 1,
    "policylayersize": 8,
    "numcriticlayers": 1,
    "criticlayersize": 8,
    "gailmlpnumwidth": 8,
    "batchsize": 16,
    "samplesperinsert": 16,
    "gradupdatesperbatch": 1,
    "minreplaysize": 32,
    "maxreplaysize": 10_000,
    "gailmaxreplaysize": 10_000,
    "bcsteps": 5,
    "bcbatchsize": 16,
    "numevaluations": 2,
    "evalepisodes": 1,
}


def reach_controller(state):
    """PD controller that drives the point to its goal without leaving the arena."""
    pos, vel, goal = state[0:2], state[2:4], state[4:6]
    return np.clip(3.0 * (goal - pos) - 2.0 * vel, -1.0, 1.0)


def runaway_controller(state):
    """Pushes the point out of the arena, so episodes end with a terminal step."""
    return np.ones(2)


def scripted_demos(controller=reach_controller, episodes=3, seed=0):
    env = make("point-reach-v0")
    eps = [run_episode(env, controller, seed=seed + i) for i in range(episodes)]
    return DemoSet(env_id="point-reach-v0", trajectories=tuple(tuple(ep) for ep in eps),
                   expert_return=float(np.mean([episode_return(ep) for ep in eps])))


@pytest.fixture
def temp_run_dir():
    """Creates a temporary directory for a run and cleans it up afterwards.

    Yields:
        The path to the temporary directory.
    """
    tmp_dir = tempfile.mkdtemp()
    yield tmp_dir
    shutil.rmtree(tmp_dir)


@pytest.fixture
def tiny_config():
    """Best-preset config shrunk to desk-test size."""
    return ChoiceConfig.from_flat(TINY)


@pytest.fixture
def point_demos():
    """Three scripted point-reach episodes subsampled with stride 5."""
    return subsample(scripted_demos(), 5)


@pytest.fixture
def demos_file(temp_run_dir, point_demos):
    """Demo file plus its reference-scores sidecar."""
    path = os.path.join(temp_run_dir, "point.csv")
    save_demos(point_demos, path)
    refs = ReferenceScores(env_id="point-reach-v0",
                           random_return=random_policy_return("point-reach-v0", episodes=5),
                           expert_return=point_demos.expert_return)
    save_refs(refs, path)
    return path
