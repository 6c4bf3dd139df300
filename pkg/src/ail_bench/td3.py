"""td3.py

Twin-delayed DDPG: clipped double-Q targets with target-policy smoothing, an
actor step on every other minibatch, actor gradient clipping and polyak 0.005
targets.
"""
from __future__ import annotations

import copy
from typing import Dict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ail_bench.config import RlConfig
from ail_bench.errors import ConfigurationError
from ail_bench.hooks import GradNormMonitor
from ail_bench.learner import Batch, Learner
from ail_bench.networks import OptimizerSpec, hard_update, make_optimizer, opt_step, polyak_update
from ail_bench.policies import DeterministicPolicy, QNetwork

POLYAK = 0.005
TARGET_NOISE = 0.2
TARGET_NOISE_CLIP = 0.5
POLICY_DELAY = 2


class Td3Learner(Learner):
    stochastic = False

    def __init__(self, obs_dim: int, act_dim: int, config: RlConfig, seed: int = 0):
        super().__init__(obs_dim, act_dim, config, seed)
        if config.td3 is None:
            raise ConfigurationError("TD3 learner needs the td3 sub-record")
        p, nets = config.td3, config.networks
        self.params = p
        self.policy = DeterministicPolicy(obs_dim, act_dim, nets.policy_layers, nets.activation)
        self.target_policy = copy.deepcopy(self.policy).requires_grad_(False)
        self.critics = nn.ModuleList(
            [QNetwork(obs_dim, act_dim, nets.critic_layers, nets.activation) for _ in range(2)])
        self.target_critics = copy.deepcopy(self.critics).requires_grad_(False)
        self.actor_opt = make_optimizer(self.policy.parameters(), OptimizerSpec("adam", p.policy_lr))
        self.critic_opt = make_optimizer(self.critics.parameters(), OptimizerSpec("adam", p.critic_lr))
        self.actor_monitor = GradNormMonitor(self.policy, prefix="policy.").install()
        self.critic_monitor = GradNormMonitor(self.critics, prefix="critic.").install()
        self.actor_steps = 0

    def act(self, obs: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            a = self.policy(self._obs_tensor(obs))
            noise = torch.randn(a.shape, generator=self.generator) * self.params.sigma
        return (a + noise).clamp(-1.0, 1.0).numpy().astype(np.float64)

    def critic_target(self, batch: Batch) -> torch.Tensor:
        with torch.no_grad():
            a_next = self.target_policy(batch.next_obs)
            noise = (torch.randn(a_next.shape, generator=self.generator) * TARGET_NOISE) \
                .clamp(-TARGET_NOISE_CLIP, TARGET_NOISE_CLIP)
            a_next = (a_next + noise).clamp(-1.0, 1.0)
            q_next = torch.min(*(q(batch.next_obs, a_next) for q in self.target_critics))
            return batch.reward + batch.discount * q_next

    def critic_loss(self, batch: Batch, target: torch.Tensor) -> torch.Tensor:
        return sum(F.mse_loss(q(batch.obs, batch.action), target) for q in self.critics)

    def actor_loss(self, batch: Batch) -> torch.Tensor:
        return -self.critics[0](batch.obs, self.policy(batch.obs)).mean()

    def update(self, batch: Batch) -> Dict[str, float]:
        target = self.critic_target(batch)
        stats = {"critic_loss": opt_step(self.critic_opt, self.critic_loss(batch, target),
                                         monitor=self.critic_monitor, what="td3 critic loss")}
        self.num_updates += 1
        if self.num_updates % POLICY_DELAY == 0:
            stats["actor_loss"] = opt_step(self.actor_opt, self.actor_loss(batch),
                                           clip_norm=self.params.gradient_clip,
                                           monitor=self.actor_monitor, what="td3 actor loss")
            self.actor_steps += 1
        polyak_update(self.target_critics, self.critics, POLYAK)
        polyak_update(self.target_policy, self.policy, POLYAK)
        return stats

    def sync_targets(self) -> None:
        hard_update(self.target_policy, self.policy)
        hard_update(self.target_critics, self.critics)

    def modules(self) -> Dict[str, nn.Module]:
        return {"policy": self.policy, "target_policy": self.target_policy,
                "critics": self.critics, "target_critics": self.target_critics}
