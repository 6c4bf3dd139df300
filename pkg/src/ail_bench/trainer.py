"""trainer.py

The AIL training loop.

Each environment step the agent acts and the transition is stored in the RL
buffer and in the discriminator's policy buffer. Once the RL buffer holds
``minreplaysize`` transitions, the samples-per-insert schedule releases
discriminator updates first and RL updates second. RL rewards are recomputed
from the live discriminator every time a batch is sampled. The policy is
evaluated ``numevaluations`` times at evenly spaced steps on a dedicated
environment and random stream.

``reward_source="env"`` trains on the environment reward instead (used to
produce experts and to check the RL substrate).
"""
from __future__ import annotations

import logging
from typing import List, Literal, Optional

import numpy as np
import torch
from tqdm import trange

from ail_bench.config import ChoiceConfig
from ail_bench.demos import DemoSet, ReferenceScores, fixed_norm_stats
from ail_bench.discriminator import DiscBatch, DiscriminatorTrainer, RegularizerConfig, build_discriminator
from ail_bench.envs import (Transition, absorbing_transitions, add_absorbing_bit, env_spec, episode_return,
                            make, run_episode, step_transition, wrap_absorbing)
from ail_bench.errors import ConfigurationError, NumericError
from ail_bench.learner import Learner, build_learner
from ail_bench.networks import OptimizerSpec, make_optimizer, opt_step
from ail_bench.normalization import ObsNormalizer
from ail_bench.ppo import Rollout
from ail_bench.replay import RawBatch, ReplayBuffer, assemble_rl_batch, schedule_updates
from ail_bench.rewards import RewardSpec, compute_reward
from ail_bench.run_log import RunRecord, config_hash

logger = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 1_000_003

RewardSource = Literal["discriminator", "env"]


def score(mean_return: float, random_ref: float, expert_ref: float) -> float:
    """Normalized score: 0 for the random policy, 1 for the expert."""
    if expert_ref == random_ref:
        raise ConfigurationError("expert and random reference returns coincide")
    return (mean_return - random_ref) / (expert_ref - random_ref)


def evaluation_steps(total_env_steps: int, num_evaluations: int) -> List[int]:
    """Evenly spaced evaluation points ending at ``total_env_steps``."""
    return sorted({max(1, (total_env_steps * (k + 1)) // num_evaluations) for k in range(num_evaluations)})


def bc_pretrain(learner: Learner, obs: np.ndarray, actions: np.ndarray, steps: int, learning_rate: float,
                batch_size: int, rng: np.random.Generator) -> List[float]:
    """Fits the policy's deterministic action to demonstration actions by MSE.

    Target networks are then reset to the cloned policy and current critics.

    Args:
        learner: Learner whose ``policy`` is trained.
        obs: [N, d] network-ready demonstration observations.
        actions: [N, a] demonstration actions.
        steps: Adam steps (0 leaves the policy untouched).
        learning_rate: Adam learning rate.
        batch_size: Rows per step, sampled uniformly with replacement.
        rng: Sampling stream.

    Returns:
        Loss per step.
    """
    if steps <= 0:
        return []
    if len(obs) == 0:
        raise ConfigurationError("behavior cloning needs at least one demonstration transition")
    opt = make_optimizer(learner.policy.parameters(), OptimizerSpec("adam", learning_rate))
    x = torch.as_tensor(obs, dtype=torch.float32)
    y = torch.as_tensor(actions, dtype=torch.float32)
    losses = []
    for _ in range(steps):
        idx = torch.as_tensor(rng.integers(0, len(x), size=batch_size))
        losses.append(opt_step(opt, learner.bc_loss(x[idx], y[idx]), what="bc loss"))
    learner.sync_targets()
    return losses


class AilTrainer:
    """One training run.

    Args:
        config: Every choice of the run.
        env_id: Built-in task id.
        demos: Demonstrations (required for ``reward_source="discriminator"``).
        total_env_steps: Environment steps to train for.
        seed: Run seed.
        refs: Reference returns for score normalization.
        reward_source: ``discriminator`` for imitation, ``env`` for plain RL.
        demos_label: Task label stored in the record.
        progress: Show a tqdm bar.
    """

    def __init__(self, config: ChoiceConfig, env_id: str, demos: Optional[DemoSet], total_env_steps: int,
                 seed: int = 0, refs: Optional[ReferenceScores] = None,
                 reward_source: RewardSource = "discriminator", demos_label: str = "", progress: bool = False):
        spec = env_spec(env_id)
        if total_env_steps < 1:
            raise ConfigurationError("total_env_steps must be >= 1")
        if reward_source not in ("discriminator", "env"):
            raise ConfigurationError(f"unknown reward source {reward_source!r}")
        if demos is not None and demos.env_id != env_id:
            raise ConfigurationError(f"demos are for {demos.env_id}, not {env_id}")
        has_demos = demos is not None and demos.num_transitions > 0
        if reward_source == "discriminator" and not has_demos:
            raise ConfigurationError("imitation needs a non-empty demonstration set")
        if config.obsnormalization == "fixed" and not has_demos:
            raise ConfigurationError("fixed obs normalization needs demonstration statistics")
        if config.subtractlogp and not config.stochastic_policy:
            raise ConfigurationError("logit shift is only defined for stochastic policies")

        self.config = config
        self.env_id = env_id
        self.spec = spec
        self.demos = demos
        self.total_env_steps = total_env_steps
        self.seed = seed
        self.refs = refs
        self.reward_source = reward_source
        self.demos_label = demos_label
        self.progress = progress

        self.absorbing = config.explicitabsorbingstate
        self.obs_dim = spec.obs_dim + int(self.absorbing)
        self.act_dim = spec.act_dim
        self.rng = np.random.default_rng(seed)
        self.env = make(env_id)
        self.eval_env = make(env_id)
        self.eval_generator = torch.Generator().manual_seed(seed + EVAL_SEED_OFFSET)
        self._eval_reset_seed: Optional[int] = seed + EVAL_SEED_OFFSET

        stats = fixed_norm_stats(demos) if config.obsnormalization == "fixed" else None
        self.normalizer = ObsNormalizer(config.obsnormalization, spec.obs_dim, stats, self.absorbing)
        self.learner = build_learner(self.obs_dim, self.act_dim, config.rl_config(), seed)
        self.rl_buffer = ReplayBuffer(config.maxreplaysize, self.obs_dim, self.act_dim)

        self.expert_buffer: Optional[ReplayBuffer] = None
        if has_demos:
            self.expert_buffer = ReplayBuffer(max(1, demos.num_transitions * 2), self.obs_dim, self.act_dim)
            for ep in demos.trajectories:
                # subsampled demos are not contiguous: every row closes its own window
                self.expert_buffer.extend(self._wrap_episode(ep), last=True)

        self.discriminator = None
        self.disc_trainer: Optional[DiscriminatorTrainer] = None
        self.disc_buffer: Optional[ReplayBuffer] = None
        if reward_source == "discriminator":
            self.discriminator = build_discriminator(config, self.obs_dim, self.act_dim)
            if config.subtractlogp:
                self.discriminator.bind_policy(self.learner.log_prob)
            self.disc_trainer = DiscriminatorTrainer(self.discriminator, RegularizerConfig.from_choices(config),
                                                     config.gaildiscriminatorlearningrate, self.rng)
            self.disc_buffer = ReplayBuffer(config.gailmaxreplaysize, self.obs_dim, self.act_dim)
        self.reward_spec = RewardSpec.from_choices(config)

        self.n_step = config.nstep if config.directrlalgorithm == "d4pg" else 1
        self.eval_points = evaluation_steps(total_env_steps, config.numevaluations)
        self.env_steps = 0
        self.post_warmup_steps = 0
        self.rl_updates = 0
        self.disc_updates = 0
        self.bc_losses: List[float] = []
        self.raw_curve: List[tuple] = []

    # --- observation plumbing ---------------------------------------------

    def _wrap_episode(self, episode) -> List[Transition]:
        if self.absorbing:
            return wrap_absorbing(episode)
        return list(episode)

    def _wrap(self, t: Transition) -> List[Transition]:
        return absorbing_transitions(t) if self.absorbing else [t]

    def net_obs(self, obs: np.ndarray) -> np.ndarray:
        """Network input for stored (raw, possibly bit-augmented) observations."""
        return self.normalizer.normalize(obs)

    def _agent_obs(self, raw_state: np.ndarray) -> np.ndarray:
        s = add_absorbing_bit(raw_state) if self.absorbing else raw_state
        return self.net_obs(s)

    # --- rewards ------------------------------------------------------------

    def rewards(self, raw: RawBatch) -> np.ndarray:
        """Per-step rewards [B, n] for a sampled batch under the current reward source."""
        if self.reward_source == "env":
            return raw.env_reward
        s, a, s_next = raw.flat()
        logits = self.disc_trainer.logits(DiscBatch.from_numpy(self.net_obs(s), a, self.net_obs(s_next)))
        return compute_reward(self.reward_spec, logits.numpy()).reshape(raw.mask.shape)

    # --- updates ------------------------------------------------------------

    def _disc_batch(self, buf: ReplayBuffer, n: int) -> DiscBatch:
        idx = buf.sample_indices(n, self.rng)
        return DiscBatch.from_numpy(self.net_obs(buf.obs[idx]), buf.action[idx], self.net_obs(buf.next_obs[idx]))

    def disc_update(self) -> dict:
        b = self.config.batchsize
        stats = self.disc_trainer.update(self._disc_batch(self.expert_buffer, b), self._disc_batch(self.disc_buffer, b))
        self.disc_updates += 1
        return stats

    def rl_update(self, n: int) -> None:
        """Samples one n-times larger batch and applies n sequential updates."""
        b = self.config.batchsize
        raws = [assemble_rl_batch(self.rl_buffer, self.expert_buffer, b, self.config.expertreplay, self.rng,
                                  self.n_step) for _ in range(n)]
        raw = raws[0]
        for other in raws[1:]:
            raw = RawBatch.concat(raw, other)
        rewards = self.rewards(raw)
        raw.obs, raw.next_obs = self.net_obs(raw.obs), self.net_obs(raw.next_obs)
        batch = raw.to_batch(rewards, self.config.discount)
        for mb in batch.split(n):
            self.learner.update(mb)
            self.rl_updates += 1

    # --- evaluation ----------------------------------------------------------

    def evaluate(self) -> float:
        """Mean return of ``evalepisodes`` episodes with ``evalbehaviorpolicytype`` actions."""
        mode = self.config.evalbehaviorpolicytype
        act = lambda s: self.learner.eval_action(self._agent_obs(s), mode, self.eval_generator)
        returns = []
        for _ in range(self.config.evalepisodes):
            returns.append(episode_return(run_episode(self.eval_env, act, seed=self._eval_reset_seed)))
            self._eval_reset_seed = None
        return float(np.mean(returns))

    def _record_eval(self) -> None:
        raw = self.evaluate()
        self.raw_curve.append((self.env_steps, raw))
        logger.info("eval step=%d return=%.3f rl_updates=%d disc_updates=%d",
                    self.env_steps, raw, self.rl_updates, self.disc_updates)

    # --- main loops ----------------------------------------------------------

    def pretrain(self) -> None:
        if not (self.config.pretrainwithbc and self.demos is not None and self.demos.num_transitions):
            return
        rows = [t for t in self._wrap_episode(self.demos.transitions())
                if not (self.absorbing and t.state[-1] > 0.5)]
        obs = self.net_obs(np.stack([t.state for t in rows]))
        actions = np.stack([t.action for t in rows])
        self.bc_losses = bc_pretrain(self.learner, obs, actions, self.config.bcsteps, self.config.bclearningrate,
                                     self.config.bcbatchsize, self.rng)
        if self.bc_losses:
            logger.info("bc steps=%d final_loss=%.5f", len(self.bc_losses), self.bc_losses[-1])

    def _store(self, t: Transition) -> List[Transition]:
        wrapped = self._wrap(t)
        ends = t.terminal or t.truncated
        for i, w in enumerate(wrapped):
            last = ends and i == len(wrapped) - 1
            self.rl_buffer.add(w, last)
            if self.disc_buffer is not None:
                self.disc_buffer.add(w, last)
        return wrapped

    def _tick(self) -> None:
        """Bookkeeping after one environment step: scheduled updates, then evaluation."""
        self.env_steps += 1
        if len(self.rl_buffer) >= self.config.minreplaysize:
            self.post_warmup_steps += 1
            c = self.config
            n_disc, n_rl = schedule_updates(self.post_warmup_steps, c.batchsize, c.samplesperinsert,
                                            c.discriminatortorlupdatesratio, c.gradupdatesperbatch)
            if self.disc_trainer is not None:
                for _ in range(n_disc):
                    self.disc_update()
            if n_rl:
                self.rl_update(n_rl)
        if self.env_steps in self.eval_points:
            self._record_eval()

    def _run_off_policy(self, steps) -> None:
        state, _ = self.env.reset(seed=self.seed)
        self.normalizer.observe(state)
        for _ in steps:
            action = self.learner.act(self._agent_obs(state))
            t = step_transition(self.env, state, action)
            self._store(t)
            if t.terminal or t.truncated:
                state, _ = self.env.reset()
            else:
                state = t.next_state
            self.normalizer.observe(state)
            self._tick()

    def _run_on_policy(self, steps) -> None:
        learner = self.learner
        rows_needed = learner.fragment_steps
        rows: List[tuple] = []
        state, _ = self.env.reset(seed=self.seed)
        self.normalizer.observe(state)
        for _ in steps:
            action = learner.act(self._agent_obs(state))
            t = step_transition(self.env, state, action)
            wrapped = self._store(t)
            for i, w in enumerate(wrapped):
                loop = self.absorbing and i == 1
                rows.append((w, loop))
            if t.terminal or t.truncated:
                state, _ = self.env.reset()
            else:
                state = t.next_state
            self.normalizer.observe(state)
            self.env_steps += 1
            if len(rows) >= rows_needed:
                self._ppo_update(rows[:rows_needed])
                rows = rows[rows_needed:]
            if self.env_steps in self.eval_points:
                self._record_eval()

    def _ppo_update(self, rows) -> None:
        if len(self.rl_buffer) < self.config.minreplaysize:
            logger.debug("ppo rollout of %d rows dropped: replay holds %d < minreplaysize=%d",
                         len(rows), len(self.rl_buffer), self.config.minreplaysize)
            return
        c, p = self.config, self.learner.params
        if self.disc_trainer is not None:
            for _ in range(c.discriminatortorlupdatesratio * p.num_epochs * p.num_minibatches):
                self.disc_update()
        ts = [w for w, _ in rows]
        obs = self.net_obs(np.stack([w.state for w in ts]))
        next_obs = self.net_obs(np.stack([w.next_state for w in ts]))
        actions = np.stack([w.action for w in ts])
        if self.reward_source == "env":
            rewards = np.array([w.reward for w in ts])
        else:
            logits = self.disc_trainer.logits(DiscBatch.from_numpy(obs, actions, next_obs))
            rewards = compute_reward(self.reward_spec, logits.numpy())
        rollout = Rollout.from_numpy(
            obs=obs, action=actions, reward=rewards, next_obs=next_obs,
            terminal=np.array([w.terminal for w in ts], dtype=np.float64),
            # the absorbing self-loop closes its episode
            truncated=np.array([w.truncated or loop for w, loop in rows], dtype=np.float64),
            policy_mask=np.array([0.0 if loop else 1.0 for _, loop in rows]),
        )
        self.learner.update(rollout)
        self.rl_updates += p.num_epochs * p.num_minibatches

    def run(self) -> RunRecord:
        """Pretrains (optionally), trains, evaluates; never raises on numeric divergence."""
        logger.info("run start env=%s algo=%s steps=%d seed=%d", self.env_id, self.config.directrlalgorithm,
                    self.total_env_steps, self.seed)
        steps = trange(self.total_env_steps, desc="training", disable=not self.progress)
        error = None
        try:
            self.pretrain()
            if self.learner.off_policy:
                self._run_off_policy(steps)
            else:
                self._run_on_policy(steps)
        except NumericError as e:
            error = str(e)
            logger.error("run failed step=%d error=%s diagnostics=%s", self.env_steps, e, e.diagnostics)
        finally:
            steps.close()
        return self.record(error)

    def record(self, error: Optional[str] = None) -> RunRecord:
        if self.refs is not None:
            curve = [(s, score(r, self.refs.random_return, self.refs.expert_return)) for s, r in self.raw_curve]
        else:
            curve = list(self.raw_curve)
        flat = self.config.to_flat()
        return RunRecord(
            config=flat,
            config_hash=config_hash(flat),
            env_id=self.env_id,
            demos=self.demos_label,
            seed=self.seed,
            total_env_steps=self.total_env_steps,
            eval_curve=curve,
            raw_curve=list(self.raw_curve),
            final_score=curve[-1][1] if curve and error is None else None,
            average_score=float(np.mean([v for _, v in curve])) if curve and error is None else None,
            status="failed" if error else "ok",
            error=error,
            random_ref=self.refs.random_return if self.refs else None,
            expert_ref=self.refs.expert_return if self.refs else None,
        )


def train(config: ChoiceConfig, env_id: str, demos: Optional[DemoSet], total_env_steps: int, seed: int = 0,
          refs: Optional[ReferenceScores] = None, reward_source: RewardSource = "discriminator",
          demos_label: str = "", progress: bool = False) -> RunRecord:
    """Runs one training run and returns its record."""
    return AilTrainer(config, env_id, demos, total_env_steps, seed, refs, reward_source, demos_label,
                      progress).run()


def collect_episodes(trainer: AilTrainer, n: int, seed: int, mode: str = "mode") -> List[List[Transition]]:
    """Rolls out ``n`` raw episodes of a trained learner on a fresh environment."""
    env = make(trainer.env_id)
    generator = torch.Generator().manual_seed(seed)
    act = lambda s: trainer.learner.eval_action(trainer._agent_obs(s), mode, generator)
    return [run_episode(env, act, seed=seed + i) for i in range(n)]
