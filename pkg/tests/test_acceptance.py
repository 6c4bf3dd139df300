"""test_acceptance.py

Desk-scale acceptance runs plus brute-force oracles for the analyses.

The slow runs train full-size agents (100k steps, 500k for PPO; pendulum
demos come from a freshly trained expert) and are deselected by default;
run them with ``pytest -m slow``.
"""
import os
from collections import Counter

import numpy as np
import pytest

from ail_bench.analysis import AnalysisQuery, conditional_percentile, top_fraction_ratio
from ail_bench.config import ChoiceConfig, resolve_config
from ail_bench.demos import (ReferenceScores, generate_expert, random_policy_return, save_demos, save_refs,
                             subsample)
from ail_bench.run_log import RunRecord, config_hash, load_records
from ail_bench.sweep import SweepPlan, SweepSpace, TaskBinding, load_space_file, run_sweep, sample_choices
from ail_bench.trainer import AilTrainer, train

from conftest import scripted_demos


def _synthetic_records(n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    values = ["gp", "mixup", "none", "pugail", "spectral"]
    out = []
    for i in range(n):
        config = {"regularizer": values[int(rng.integers(len(values)))]}
        score = float(rng.beta(2.0, 5.0))
        out.append(RunRecord(config=config, config_hash=config_hash(config), env_id="point-reach-v0",
                             demos="point.csv", seed=i, final_score=score, average_score=score))
    return out


def test_percentile_point_matches_brute_force():
    records = _synthetic_records()
    result = conditional_percentile(records, AnalysisQuery(choice="regularizer", repeats=2))
    for value, est in result.items():
        scores = [r.average_score for r in records if r.config["regularizer"] == value]
        assert est.point == pytest.approx(np.percentile(scores, 95), abs=1e-9)
        assert est.count == len(scores)


def test_top_ratio_matches_brute_force():
    records = _synthetic_records()
    ratios = top_fraction_ratio(records, AnalysisQuery(choice="regularizer", pooled=True))
    scores = np.array([r.average_score for r in records])
    cutoff = np.sort(scores)[::-1][int(np.ceil(0.05 * len(records))) - 1]
    top = [r for r in records if r.average_score >= cutoff]
    for value, ratio in ratios.items():
        f_top = sum(r.config["regularizer"] == value for r in top) / len(top)
        f_all = sum(r.config["regularizer"] == value for r in records) / len(records)
        assert ratio == pytest.approx(f_top / f_all, abs=1e-9)


def _top_level_pvalues(space, seed, n=10_000):
    from scipy.stats import chisquare

    rng = np.random.default_rng(seed)
    draws = [sample_choices(space, rng) for _ in range(n)]
    pvalues = {}
    for name, choice in space.choices.items():
        if len(choice.values) < 2:
            continue
        counts = Counter(str(d[name]) for d in draws)
        pvalues[name] = chisquare([counts[str(v)] for v in choice.values]).pvalue
    return pvalues


def test_main_space_top_level_choices_are_uniform():
    space = load_space_file("main").space
    first, second = _top_level_pvalues(space, 0), _top_level_pvalues(space, 1)
    assert len(first) > 10
    # a choice fails only when two independent streams both reject at 0.01
    for name, p in first.items():
        assert p > 0.01 or second[name] > 0.01, name


def _point_refs():
    expert = scripted_demos(episodes=11)
    return expert, ReferenceScores(env_id="point-reach-v0", random_return=random_policy_return("point-reach-v0"),
                                   expert_return=expert.expert_return)


def _expert_and_refs(env_id):
    if env_id == "point-reach-v0":
        return _point_refs()
    expert = generate_expert(env_id, n_trajectories=11, seed=0)
    return expert, ReferenceScores(env_id=env_id, random_return=random_policy_return(env_id),
                                   expert_return=expert.expert_return)


@pytest.mark.slow
@pytest.mark.parametrize("algorithm,steps", [("sac", 100_000), ("td3", 100_000), ("d4pg", 100_000),
                                             ("ppo", 500_000)])
def test_rl_substrate_solves_point_reach(algorithm, steps):
    _, refs = _point_refs()
    config = ChoiceConfig(directrlalgorithm=algorithm, obsnormalization="none", pretrainwithbc=False,
                          explicitabsorbingstate=False, evalepisodes=10)
    finals = []
    for seed in range(5):
        trainer = AilTrainer(config, "point-reach-v0", None, steps, seed=seed, refs=refs, reward_source="env")
        finals.append(trainer.run().final_score)
    assert np.mean(finals) >= 0.9


@pytest.mark.slow
@pytest.mark.parametrize("env_id", ["point-reach-v0", "pendulum-swingup-v0"])
def test_end_to_end_imitation(env_id):
    expert, refs = _expert_and_refs(env_id)
    demos = subsample(expert, 20)
    assert len(demos.trajectories) == 11
    records = [train(resolve_config("best"), env_id, demos, 100_000, seed=s, refs=refs) for s in range(5)]
    assert all(r.status == "ok" for r in records)
    assert np.mean([r.average_score for r in records]) >= 0.7
    assert np.mean([r.final_score for r in records]) >= 0.9


@pytest.mark.slow
def test_reward_bias_shrinks_with_absorbing_state(temp_run_dir):
    """-ln(1-D) beats ln(D) on a terminating task, less so with the absorbing state."""
    expert, refs = _point_refs()
    path = os.path.join(temp_run_dir, "point.csv")
    save_demos(subsample(expert, 20), path)
    save_refs(refs, path)
    space = SweepSpace.from_dict({"choices": {
        "gailreward": {"values": ["-ln(1-D)", "ln(D)"]},
        "regularizer": {"values": ["GP", "spectral norm", "No regularizer"]},
        "gaildiscriminatorlearningrate": {"values": [1e-5, 1e-4, 1e-3]},
        "discount": {"values": [0.97, 0.99]},
    }})
    gaps = {}
    for absorbing in (False, True):
        plan = SweepPlan(space, 200, [TaskBinding("point-reach-v0", path)], total_env_steps=20_000,
                         fixed={"explicitabsorbingstate": absorbing, "numevaluations": 4, "evalepisodes": 5},
                         sample_seed=int(absorbing))
        results = os.path.join(temp_run_dir, f"absorbing_{absorbing}.jsonl")
        run_sweep(plan, results, parallelism=os.cpu_count() or 1)
        est = conditional_percentile(load_records(results), AnalysisQuery(choice="gailreward", repeats=20))
        gaps[absorbing] = est["gail_pos"].estimate - est["ln_d"].estimate
    assert gaps[False] > 0
    assert gaps[True] <= gaps[False] / 2
