"""d4pg.py

Distributional deterministic policy gradients: a categorical critic trained
by cross-entropy against the projected n-step target distribution, an actor
that ascends the critic's expected value, and target networks copied in full
every 100 updates.
"""
from __future__ import annotations

import copy
from typing import Dict

import numpy as np
import torch
import torch.nn as nn

from ail_bench.config import RlConfig
from ail_bench.errors import ConfigurationError
from ail_bench.hooks import GradNormMonitor
from ail_bench.learner import Batch, Learner
from ail_bench.networks import OptimizerSpec, hard_update, make_optimizer, opt_step
from ail_bench.policies import CategoricalCritic, DeterministicPolicy

TARGET_PERIOD = 100


def categorical_projection(next_probs: torch.Tensor, rewards: torch.Tensor, discounts: torch.Tensor,
                           support: torch.Tensor) -> torch.Tensor:
    """Projects the distribution of r + discount * Z onto ``support``.

    Each shifted atom is clipped to the support range and its mass split
    between the two neighbouring atoms in proportion to proximity.

    Args:
        next_probs: [B, A] probabilities over ``support``.
        rewards: [B] (n-step) rewards.
        discounts: [B] gamma^k * (1 - terminal).
        support: [A] equally spaced atoms.

    Returns:
        [B, A] projected probabilities.
    """
    vmin, vmax = support[0], support[-1]
    n_atoms = support.shape[0]
    dz = (vmax - vmin) / (n_atoms - 1)
    tz = (rewards.unsqueeze(-1) + discounts.unsqueeze(-1) * support.unsqueeze(0)).clamp(vmin, vmax)
    b = ((tz - vmin) / dz).clamp(0, n_atoms - 1)
    lower, upper = b.floor().long(), b.ceil().long()
    on_atom = (lower == upper).to(next_probs.dtype)
    m_lower = next_probs * (upper.to(b.dtype) - b + on_atom)
    m_upper = next_probs * (b - lower.to(b.dtype))
    proj = torch.zeros_like(next_probs)
    proj.scatter_add_(-1, lower, m_lower)
    proj.scatter_add_(-1, upper, m_upper)
    return proj


class D4pgLearner(Learner):
    stochastic = False

    def __init__(self, obs_dim: int, act_dim: int, config: RlConfig, seed: int = 0):
        super().__init__(obs_dim, act_dim, config, seed)
        if config.d4pg is None:
            raise ConfigurationError("D4PG learner needs the d4pg sub-record")
        p, nets = config.d4pg, config.networks
        self.params = p
        self.policy = DeterministicPolicy(obs_dim, act_dim, nets.policy_layers, nets.activation)
        self.critic = CategoricalCritic(obs_dim, act_dim, nets.critic_layers, p.num_atoms, p.vmax,
                                        nets.activation)
        self.target_policy = copy.deepcopy(self.policy).requires_grad_(False)
        self.target_critic = copy.deepcopy(self.critic).requires_grad_(False)
        opt = OptimizerSpec("adam", p.learning_rate)
        self.actor_opt = make_optimizer(self.policy.parameters(), opt)
        self.critic_opt = make_optimizer(self.critic.parameters(), opt)
        self.actor_monitor = GradNormMonitor(self.policy, prefix="policy.").install()
        self.critic_monitor = GradNormMonitor(self.critic, prefix="critic.").install()

    def act(self, obs: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            a = self.policy(self._obs_tensor(obs))
            noise = torch.randn(a.shape, generator=self.generator) * self.params.sigma
        return (a + noise).clamp(-1.0, 1.0).numpy().astype(np.float64)

    def target_distribution(self, batch: Batch) -> torch.Tensor:
        with torch.no_grad():
            a_next = self.target_policy(batch.next_obs)
            probs = torch.softmax(self.target_critic(batch.next_obs, a_next), dim=-1)
            return categorical_projection(probs, batch.reward, batch.discount, self.critic.support)

    def critic_loss(self, batch: Batch, target: torch.Tensor) -> torch.Tensor:
        """Cross-entropy of the critic's categorical against the projected target."""
        log_probs = torch.log_softmax(self.critic(batch.obs, batch.action), dim=-1)
        return -(target * log_probs).sum(-1).mean()

    def actor_loss(self, batch: Batch) -> torch.Tensor:
        return -self.critic.expected_q(batch.obs, self.policy(batch.obs)).mean()

    def update(self, batch: Batch) -> Dict[str, float]:
        target = self.target_distribution(batch)
        critic_loss = opt_step(self.critic_opt, self.critic_loss(batch, target), monitor=self.critic_monitor,
                               what="d4pg critic loss")
        actor_loss = opt_step(self.actor_opt, self.actor_loss(batch), monitor=self.actor_monitor,
                              what="d4pg actor loss")

        self.num_updates += 1
        if self.num_updates % TARGET_PERIOD == 0:
            self.sync_targets()
        return {"critic_loss": critic_loss, "actor_loss": actor_loss}

    def sync_targets(self) -> None:
        hard_update(self.target_policy, self.policy)
        hard_update(self.target_critic, self.critic)

    def modules(self) -> Dict[str, nn.Module]:
        return {"policy": self.policy, "critic": self.critic,
                "target_policy": self.target_policy, "target_critic": self.target_critic}
