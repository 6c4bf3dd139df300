"""test_trainer.py

End-to-end runs of the AIL loop at desk scale, BC pretraining, scoring and failure handling.
"""
import logging
import math

import numpy as np
import pytest
import torch

from ail_bench.demos import DemoSet, ReferenceScores
from ail_bench.envs import Transition
from ail_bench.errors import ConfigurationError, NumericError
from ail_bench.learner import build_learner
from ail_bench.networks import flatten_state
from ail_bench.replay import expert_count, updates_due
from ail_bench.rewards import compute_reward
from ail_bench.trainer import AilTrainer, bc_pretrain, collect_episodes, evaluation_steps, score, train

from conftest import TINY

REFS = ReferenceScores(env_id="point-reach-v0", random_return=-150.0, expert_return=-20.0)


def test_score_examples():
    assert score(1413.0, -56.0, 2882.0) == pytest.approx(0.5)
    assert score(2882.0, -56.0, 2882.0) == 1.0
    assert score(-56.0, -56.0, 2882.0) == 0.0
    with pytest.raises(ConfigurationError):
        score(1.0, 3.0, 3.0)


def test_evaluation_steps():
    assert evaluation_steps(100_000, 10) == list(range(10_000, 100_001, 10_000))
    assert evaluation_steps(5, 10) == [1, 2, 3, 4, 5]
    assert evaluation_steps(7, 1) == [7]


def test_bc_fits_a_constant_action(tiny_config):
    learner = build_learner(3, 1, tiny_config.rl_config(), seed=0)
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(200, 3))
    assert bc_pretrain(learner, obs, np.full((200, 1), 0.5), 0, 1e-3, 32, rng) == []
    losses = bc_pretrain(learner, obs, np.full((200, 1), 0.5), 5000, 2e-3, 32, rng)
    assert len(losses) == 5000
    assert np.mean(losses[-100:]) < np.mean(losses[:100])
    actions = np.stack([learner.eval_action(o) for o in obs[:20]])
    assert np.all(np.abs(actions - 0.5) < 1e-2)


@pytest.mark.parametrize("algorithm", ["sac", "td3", "d4pg"])
def test_off_policy_run_produces_record(tiny_config, point_demos, algorithm):
    config = tiny_config.with_updates(directrlalgorithm=algorithm)
    trainer = AilTrainer(config, "point-reach-v0", point_demos, 120, seed=0, refs=REFS, demos_label="point.csv")
    record = trainer.run()
    assert record.status == "ok" and record.error is None
    assert [s for s, _ in record.eval_curve] == [60, 120]
    for (_, v), (_, raw) in zip(record.eval_curve, record.raw_curve):
        assert v == pytest.approx(score(raw, REFS.random_return, REFS.expert_return))
    assert record.final_score == record.eval_curve[-1][1]
    assert record.average_score == pytest.approx(np.mean([v for _, v in record.eval_curve]))
    assert record.demos == "point.csv" and record.random_ref == -150.0
    assert trainer.rl_updates > 0 and trainer.disc_updates > 0


def test_update_counts_follow_the_schedule(tiny_config, point_demos):
    config = tiny_config.with_updates(discriminatortorlupdatesratio=2, gradupdatesperbatch=4)
    trainer = AilTrainer(config, "point-reach-v0", point_demos, 150, seed=1)
    trainer.run()
    owed = updates_due(trainer.post_warmup_steps, config.batchsize, config.samplesperinsert)
    assert trainer.rl_updates == 4 * (owed // 4)
    assert trainer.disc_updates == 2 * trainer.rl_updates


def test_no_updates_before_warmup(tiny_config, point_demos):
    trainer = AilTrainer(tiny_config.with_updates(minreplaysize=1000), "point-reach-v0", point_demos, 50)
    record = trainer.run()
    assert trainer.rl_updates == 0 and trainer.disc_updates == 0
    assert record.status == "ok" and len(record.eval_curve) == 2


def test_ppo_run(tiny_config, point_demos):
    config = tiny_config.with_updates(directrlalgorithm="ppo", ppounrolllength=4, pretrainwithbc=False)
    trainer = AilTrainer(config, "point-reach-v0", point_demos, 200, seed=0)
    record = trainer.run()
    assert record.status == "ok"
    assert trainer.rl_updates > 0 and trainer.rl_updates % (5 * 8) == 0
    assert trainer.disc_updates == trainer.rl_updates


def test_same_seed_same_record(tiny_config, point_demos):
    a = train(tiny_config, "point-reach-v0", point_demos, 80, seed=3, refs=REFS)
    b = train(tiny_config, "point-reach-v0", point_demos, 80, seed=3, refs=REFS)
    assert a.model_dump() == b.model_dump()


def test_choice_variants_run(tiny_config, point_demos):
    """Shaping, logit shift, expert replay, online normalization, no absorbing state."""
    variants = [
        {"gaildiscriminatormodule": True, "gailinput": "sas", "regularizer": "gp"},
        {"subtractlogp": True, "gailreward": "gail_pos", "regularizer": "mixup"},
        {"expertreplay": 1, "obsnormalization": "online", "regularizer": "pugail"},
        {"explicitabsorbingstate": False, "gailreward": "fairl", "gailmaxrewardmagnitude": 10,
         "regularizer": "dropout"},
        {"obsnormalization": "none", "regularizer": "entropy", "evalbehaviorpolicytype": "average"},
    ]
    for v in variants:
        record = train(tiny_config.with_updates(**v), "point-reach-v0", point_demos, 60, seed=0)
        assert record.status == "ok", v
        assert all(math.isfinite(s) for _, s in record.eval_curve)


def test_numeric_divergence_gives_failed_record(tiny_config, point_demos, monkeypatch):
    trainer = AilTrainer(tiny_config, "point-reach-v0", point_demos, 120, seed=0, refs=REFS)
    real_update = trainer.learner.update

    def diverging(batch):
        if trainer.env_steps > 70:
            raise NumericError("non-finite sac critic loss: nan", {"loss": float("nan")})
        return real_update(batch)

    monkeypatch.setattr(trainer.learner, "update", diverging)
    record = trainer.run()
    assert record.status == "failed"
    assert "non-finite" in record.error
    assert [s for s, _ in record.eval_curve] == [60]
    assert record.final_score is None and record.average_score is None


def test_env_reward_mode_needs_no_demos(tiny_config):
    with pytest.raises(ConfigurationError):
        AilTrainer(tiny_config, "pendulum-swingup-v0", None, 80, reward_source="env")
    config = tiny_config.with_updates(obsnormalization="none")
    trainer = AilTrainer(config, "pendulum-swingup-v0", None, 80, reward_source="env")
    assert trainer.discriminator is None and trainer.expert_buffer is None
    record = trainer.run()
    assert record.status == "ok" and record.eval_curve == record.raw_curve
    episodes = collect_episodes(trainer, 2, seed=5)
    assert [len(ep) for ep in episodes] == [200, 200]


def test_absorbing_dimensions_agree(tiny_config, point_demos):
    trainer = AilTrainer(tiny_config, "point-reach-v0", point_demos, 10)
    assert trainer.obs_dim == 7
    assert trainer.expert_buffer.obs.shape[1] == 7
    assert trainer._agent_obs(np.zeros(6)).shape == (7,)


def test_constructor_validation(tiny_config, point_demos):
    with pytest.raises(ConfigurationError):
        AilTrainer(tiny_config, "point-reach-v0", None, 100)
    with pytest.raises(ConfigurationError):
        AilTrainer(tiny_config, "pendulum-swingup-v0", point_demos, 100)
    with pytest.raises(ConfigurationError):
        AilTrainer(tiny_config, "point-reach-v0", point_demos, 0)
    with pytest.raises(ConfigurationError):
        AilTrainer(tiny_config, "point-reach-v0", point_demos, 10, reward_source="oracle")
    with pytest.raises(ConfigurationError):
        AilTrainer(tiny_config, "point-reach-v0", DemoSet("point-reach-v0", ()), 10)


def test_terminal_demo_gets_absorbing_rows(tiny_config):
    """A terminating demonstration adds the absorbing self-loop to the expert buffer."""
    s = np.zeros(6)
    ep = (Transition(s, np.zeros(2), -1.0, s), Transition(s, np.ones(2), -1.0, np.full(6, 3.0), terminal=True))
    demos = DemoSet("point-reach-v0", (ep,))
    trainer = AilTrainer(tiny_config.with_updates(obsnormalization="none"), "point-reach-v0", demos, 10)
    assert len(trainer.expert_buffer) == 3
    assert trainer.expert_buffer.obs[2, -1] == 1.0


def test_expert_rows_carry_the_live_discriminator_reward(tiny_config, point_demos, monkeypatch):
    """Every RL row, demonstration rows included, is rewarded from the current logit, not the env reward."""
    config = tiny_config.with_updates(directrlalgorithm="sac", expertreplay=1)
    trainer = AilTrainer(config, "point-reach-v0", point_demos, 100, seed=0)
    s = np.zeros(6)
    for _ in range(config.minreplaysize):
        trainer._store(Transition(s, np.zeros(2), -5.0, s))
    monkeypatch.setattr(trainer.disc_trainer, "logits", lambda batch: torch.full((len(batch),), 0.7))
    seen = []
    monkeypatch.setattr(trainer.learner, "update", lambda batch: seen.append(batch) or {})

    trainer.rl_update(1)
    expected = compute_reward(trainer.reward_spec, np.array([0.7]))[0]
    assert expected != pytest.approx(-5.0)
    assert expert_count(config.batchsize, 1) == 8
    rewards = seen[0].reward.numpy()
    assert len(rewards) == config.batchsize
    assert np.allclose(rewards, expected, atol=1e-6)


def test_env_reward_source_keeps_stored_rewards(tiny_config, monkeypatch):
    config = tiny_config.with_updates(directrlalgorithm="sac", obsnormalization="none")
    trainer = AilTrainer(config, "point-reach-v0", None, 100, seed=0, reward_source="env")
    s = np.zeros(6)
    for _ in range(config.minreplaysize):
        trainer._store(Transition(s, np.zeros(2), -5.0, s))
    seen = []
    monkeypatch.setattr(trainer.learner, "update", lambda batch: seen.append(batch) or {})
    trainer.rl_update(1)
    assert np.allclose(seen[0].reward.numpy(), -5.0)


def test_pretrain_leaves_targets_on_the_cloned_policy(tiny_config, point_demos):
    for algorithm in ("td3", "d4pg"):
        config = tiny_config.with_updates(directrlalgorithm=algorithm, pretrainwithbc=True, bcsteps=20)
        trainer = AilTrainer(config, "point-reach-v0", point_demos, 10, seed=0)
        learner = trainer.learner
        before = flatten_state(learner.policy)
        trainer.pretrain()
        assert len(trainer.bc_losses) == 20
        assert not np.array_equal(before, flatten_state(learner.policy))
        assert np.array_equal(flatten_state(learner.policy), flatten_state(learner.target_policy)), algorithm


def test_ppo_logs_rollouts_dropped_before_warmup(tiny_config, point_demos, caplog):
    config = tiny_config.with_updates(directrlalgorithm="ppo", ppounrolllength=4, pretrainwithbc=False,
                                      minreplaysize=1000)
    trainer = AilTrainer(config, "point-reach-v0", point_demos, 150, seed=0)
    with caplog.at_level(logging.DEBUG, logger="ail_bench.trainer"):
        record = trainer.run()
    assert record.status == "ok" and trainer.rl_updates == 0
    dropped = [r for r in caplog.records if "dropped" in r.getMessage()]
    assert len(dropped) >= 150 // trainer.learner.fragment_steps
    assert "minreplaysize=1000" in dropped[0].getMessage()
