"""ppo.py

Proximal policy optimization over fixed-length experience fragments with GAE
advantages, a clipped surrogate, a value loss and an entropy bonus.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Dict

import numpy as np
import torch

from ail_bench.config import RlConfig
from ail_bench.errors import ConfigurationError
from ail_bench.hooks import GradNormMonitor
from ail_bench.learner import Learner
from ail_bench.networks import OptimizerSpec, make_optimizer, opt_step
from ail_bench.policies import GaussianPolicy, ValueNetwork

logger = logging.getLogger(__name__)


def gae_advantages(rewards: torch.Tensor, values: torch.Tensor, next_values: torch.Tensor,
                   terminals: torch.Tensor, truncations: torch.Tensor, discount: float,
                   lam: float) -> torch.Tensor:
    """Generalized advantage estimates along one time-ordered sequence.

    Bootstrapping stops at terminals; at truncations the next value still
    bootstraps the TD residual but the lambda-recursion restarts.

    Args:
        rewards, values, next_values, terminals, truncations: [T] aligned tensors.
        discount: gamma.
        lam: GAE mixing coefficient.

    Returns:
        [T] advantages.
    """
    not_terminal = 1.0 - terminals.to(rewards.dtype)
    carry = not_terminal * (1.0 - truncations.to(rewards.dtype))
    deltas = rewards + discount * not_terminal * next_values - values
    adv = torch.zeros_like(rewards)
    running = torch.zeros((), dtype=rewards.dtype)
    for t in range(rewards.shape[0] - 1, -1, -1):
        running = deltas[t] + discount * lam * carry[t] * running
        adv[t] = running
    return adv


@dataclass
class Rollout:
    """``batch_size`` fragments of ``unroll_length`` transitions, flattened fragment-major.

    ``policy_mask`` is 0 on absorbing self-loops, which only train the value head.
    """
    obs: torch.Tensor
    action: torch.Tensor
    reward: torch.Tensor
    next_obs: torch.Tensor
    terminal: torch.Tensor
    truncated: torch.Tensor
    policy_mask: torch.Tensor

    def __len__(self) -> int:
        return self.obs.shape[0]

    @classmethod
    def from_numpy(cls, **arrays) -> "Rollout":
        return cls(**{f.name: torch.as_tensor(np.asarray(arrays[f.name]), dtype=torch.float32)
                      for f in fields(cls)})


def _masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return (x * mask).sum() / mask.sum().clamp_min(1.0)


class PpoLearner(Learner):
    stochastic = True
    off_policy = False

    def __init__(self, obs_dim: int, act_dim: int, config: RlConfig, seed: int = 0):
        super().__init__(obs_dim, act_dim, config, seed)
        if config.ppo is None:
            raise ConfigurationError("PPO learner needs the ppo sub-record")
        p, nets = config.ppo, config.networks
        self.params = p
        self.policy = GaussianPolicy(obs_dim, act_dim, nets.policy_layers, nets.activation)
        self.value = ValueNetwork(obs_dim, nets.critic_layers, nets.activation)
        self.opt = make_optimizer(list(self.policy.parameters()) + list(self.value.parameters()),
                                  OptimizerSpec("adam", p.learning_rate))
        self.monitor = GradNormMonitor(self.policy, self.value, prefix="ppo.").install()

    @property
    def fragment_steps(self) -> int:
        """Transitions collected per update."""
        return self.config.batch_size * self.params.unroll_length

    def act(self, obs: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            a = self.policy.distribution(self._obs_tensor(obs)).sample(self.generator)
        return a.numpy().astype(np.float64)

    def advantages(self, rollout: Rollout) -> torch.Tensor:
        """GAE per fragment; a fragment boundary acts like a truncation."""
        p = self.params
        with torch.no_grad():
            values = self.value(rollout.obs)
            next_values = self.value(rollout.next_obs)
        truncated = rollout.truncated.clone()
        truncated[p.unroll_length - 1::p.unroll_length] = 1.0
        return gae_advantages(rollout.reward, values, next_values, rollout.terminal, truncated,
                              self.config.discount, p.gae_lambda)

    def loss(self, rollout: Rollout, idx: torch.Tensor, adv: torch.Tensor, returns: torch.Tensor,
             old_logp: torch.Tensor) -> Dict[str, torch.Tensor]:
        """Clipped surrogate, value and entropy terms on the rows ``idx``."""
        p = self.params
        mask = rollout.policy_mask[idx]
        dist = self.policy.distribution(rollout.obs[idx])
        ratio = torch.exp(dist.log_prob(rollout.action[idx]) - old_logp[idx])
        surrogate = torch.min(ratio * adv[idx],
                              ratio.clamp(1.0 - p.clipping_epsilon, 1.0 + p.clipping_epsilon) * adv[idx])
        policy_loss = -_masked_mean(surrogate, mask)
        value_loss = 0.5 * ((self.value(rollout.obs[idx]) - returns[idx]) ** 2).mean()
        entropy = _masked_mean(dist.base_entropy(), mask)
        total = policy_loss + p.value_cost * value_loss - p.entropy_cost * entropy
        return {"loss": total, "policy_loss": policy_loss, "value_loss": value_loss, "entropy": entropy}

    def update(self, rollout: Rollout) -> Dict[str, float]:
        """``num_epochs`` passes, each over ``num_minibatches`` shuffled fragment groups."""
        p = self.params
        n_frag = len(rollout) // p.unroll_length
        if n_frag * p.unroll_length != len(rollout) or n_frag < p.num_minibatches:
            raise ConfigurationError(
                f"rollout of {len(rollout)} does not form {p.num_minibatches} minibatches of "
                f"{p.unroll_length}-step fragments")
        adv = self.advantages(rollout)
        with torch.no_grad():
            returns = adv + self.value(rollout.obs)
            old_logp = self.policy.distribution(rollout.obs).log_prob(rollout.action)
        if p.normalize_advantages:
            mask = rollout.policy_mask
            mean = _masked_mean(adv, mask)
            std = _masked_mean((adv - mean) ** 2, mask).sqrt()
            adv = (adv - mean) / (std + 1e-8)

        stats: Dict[str, float] = {}
        frag_rows = torch.arange(len(rollout)).reshape(n_frag, p.unroll_length)
        for _ in range(p.num_epochs):
            order = torch.randperm(n_frag, generator=self.generator)
            for group in order.chunk(p.num_minibatches):
                idx = frag_rows[group].reshape(-1)
                terms = self.loss(rollout, idx, adv, returns, old_logp)
                opt_step(self.opt, terms["loss"], monitor=self.monitor, what="ppo loss")
                self.num_updates += 1
                stats = {k: float(v.detach()) for k, v in terms.items()}
        return stats

    def modules(self) -> Dict[str, torch.nn.Module]:
        return {"policy": self.policy, "value": self.value}
