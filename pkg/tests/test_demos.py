"""test_demos.py

Demo subsampling, the text demo format, reference scores and normalization stats.
"""
import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ail_bench.demos import (DemoSet, ReferenceScores, fixed_norm_stats, generate_expert, load_demos, load_refs,
                             random_policy_return, refs_path, save_demos, save_refs, subsample)
from ail_bench.envs import Transition, episode_return
from ail_bench.errors import ConfigurationError, DemoFormatError

from conftest import runaway_controller, scripted_demos


def test_subsample_keeps_every_stride_th_pair():
    """Indices 0, s, 2s, ... survive; the stride accumulates in the header."""
    full = scripted_demos(episodes=2)
    sub = subsample(full, 20)
    assert [len(ep) for ep in sub.trajectories] == [5, 5]
    for ep_full, ep_sub in zip(full.trajectories, sub.trajectories):
        for k, t in enumerate(ep_sub):
            assert t is ep_full[20 * k]
    assert sub.subsample_stride == 20
    assert subsample(sub, 2).subsample_stride == 40
    assert sub.expert_return == full.expert_return


def test_subsample_keeps_terminal_tail():
    """An off-grid terminal last transition is retained."""
    full = scripted_demos(runaway_controller, episodes=1)
    ep = full.trajectories[0]
    assert ep[-1].terminal
    stride = len(ep) + 1 if len(ep) % 2 == 0 else len(ep) + 2
    sub = subsample(full, stride)
    assert len(sub.trajectories[0]) == 2
    assert sub.trajectories[0][-1].terminal


def test_subsample_rejects_bad_stride():
    with pytest.raises(ConfigurationError):
        subsample(scripted_demos(episodes=1), 0)


def test_save_load_preserves_demos_exactly(temp_run_dir, point_demos):
    """repr floats make the text format lossless."""
    path = os.path.join(temp_run_dir, "d.csv")
    save_demos(point_demos, path)
    loaded = load_demos(path)
    assert loaded == point_demos
    assert loaded.source == "synthetic"
    assert loaded.subsample_stride == 5


def test_load_rejects_dimension_mismatch(temp_run_dir, point_demos):
    path = os.path.join(temp_run_dir, "d.csv")
    save_demos(point_demos, path)
    text = open(path).read().replace("# obs_dim: 6", "# obs_dim: 5", 1)
    with open(path, "w") as f:
        f.write(text)
    with pytest.raises(DemoFormatError):
        load_demos(path)


def test_load_rejects_missing_header_and_bad_rows(temp_run_dir):
    path = os.path.join(temp_run_dir, "d.csv")
    with open(path, "w") as f:
        f.write("# env_id: point-reach-v0\n0,1,2\n")
    with pytest.raises(DemoFormatError):
        load_demos(path)

    with open(path, "w") as f:
        f.write("# env_id: point-reach-v0\n# obs_dim: 3\n# act_dim: 1\n# episodes: 1\n# stride: 1\n")
        f.write("0,1,2,3,0.5,-1.0,1,2,3,0\n")
    with pytest.raises(DemoFormatError):
        load_demos(path)


def test_load_rejects_unknown_env(temp_run_dir):
    path = os.path.join(temp_run_dir, "d.csv")
    with open(path, "w") as f:
        f.write("# env_id: ant-v9\n# obs_dim: 3\n# act_dim: 1\n# episodes: 0\n# stride: 1\n")
    with pytest.raises(DemoFormatError):
        load_demos(path)


def test_imported_file_without_column_header(temp_run_dir):
    """Files from other tools may omit the column line and the optional header keys."""
    path = os.path.join(temp_run_dir, "d.csv")
    with open(path, "w") as f:
        f.write("# env_id: pendulum-swingup-v0\n# obs_dim: 3\n# act_dim: 1\n# episodes: 1\n# stride: 20\n")
        f.write("0,1.0,0.0,0.5,0.25,-0.5,0.9,0.1,0.4,0,1\n")
    demos = load_demos(path)
    assert demos.source == "imported"
    assert demos.num_transitions == 1
    t = demos.trajectories[0][0]
    assert t.truncated and not t.terminal
    assert t.reward == -0.5


@settings(max_examples=60, deadline=None)
@given(row=st.integers(min_value=0, max_value=9), col=st.integers(min_value=0, max_value=16),
       junk=st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"),
                    max_size=12))
def test_corrupted_field_never_crashes_loader(row, col, junk):
    """Replacing any field with junk loads or raises DemoFormatError, nothing else."""
    demos = subsample(scripted_demos(episodes=2), 20)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "d.csv")
        save_demos(demos, path)
        lines = open(path, encoding="utf-8").read().splitlines()
        body = [i for i, ln in enumerate(lines) if not ln.startswith("#")][1:]
        fields = lines[body[row]].split(",")
        fields[col] = junk
        lines[body[row]] = ",".join(fields)
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        try:
            load_demos(path)
        except DemoFormatError:
            pass


def test_fixed_norm_stats():
    """Population statistics over every retained state."""
    states = [np.array([0.0, 1.0, 2.0, 0.0, 0.0, 0.0]), np.array([2.0, 1.0, 4.0, 0.0, 0.0, 0.0])]
    ep = tuple(Transition(s, np.zeros(2), 0.0, s) for s in states)
    stats = fixed_norm_stats(DemoSet("point-reach-v0", (ep,)))
    assert np.allclose(stats.mean, [1, 1, 3, 0, 0, 0])
    assert np.allclose(stats.std, [1, 0, 1, 0, 0, 0])
    # zero std coordinates are divided by the 0.001 floor
    assert np.allclose(stats.normalize(states[1]), [1, 0, 1, 0, 0, 0])
    with pytest.raises(ConfigurationError):
        fixed_norm_stats(DemoSet("point-reach-v0", ()))


def test_reference_scores_sidecar(temp_run_dir):
    demos_path = os.path.join(temp_run_dir, "x.csv")
    refs = ReferenceScores(env_id="point-reach-v0", random_return=-120.0, expert_return=-15.5)
    assert save_refs(refs, demos_path) == refs_path(demos_path) == demos_path + ".refs.json"
    assert load_refs(demos_path) == refs
    with pytest.raises(DemoFormatError):
        load_refs(os.path.join(temp_run_dir, "missing.csv"))


def test_generate_expert_rejects_empty_requests():
    with pytest.raises(ConfigurationError):
        generate_expert("point-reach-v0", n_trajectories=0, total_env_steps=10)
    with pytest.raises(ConfigurationError):
        generate_expert("point-reach-v0", n_trajectories=1, total_env_steps=0)


def test_generate_expert_records_mode_episodes(tiny_config):
    demos = generate_expert("point-reach-v0", tiny_config, n_trajectories=2, total_env_steps=100)
    assert len(demos.trajectories) == 2
    assert demos.subsample_stride == 1 and demos.source == "synthetic"
    assert demos.expert_return == pytest.approx(np.mean([episode_return(ep) for ep in demos.trajectories]))


@pytest.mark.slow
def test_expert_beats_random_policy():
    demos = generate_expert("point-reach-v0", n_trajectories=5, total_env_steps=20_000)
    assert demos.expert_return > random_policy_return("point-reach-v0")
