"""sac.py

Soft actor-critic with twin critics, polyak-averaged targets and a learned
temperature that holds policy entropy near ``target_entropy_per_dimension * act_dim``.
"""
from __future__ import annotations

import copy
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ail_bench.config import RlConfig
from ail_bench.errors import ConfigurationError
from ail_bench.hooks import GradNormMonitor
from ail_bench.learner import Batch, Learner
from ail_bench.networks import OptimizerSpec, hard_update, make_optimizer, opt_step, polyak_update
from ail_bench.policies import GaussianPolicy, QNetwork


def temperature_loss(log_alpha: torch.Tensor, logp: torch.Tensor, target_entropy: float) -> torch.Tensor:
    """Pushes alpha up when entropy -log pi falls below the target and down otherwise."""
    return -(log_alpha * (logp.detach() + target_entropy)).mean()


class SacLearner(Learner):
    stochastic = True

    def __init__(self, obs_dim: int, act_dim: int, config: RlConfig, seed: int = 0):
        super().__init__(obs_dim, act_dim, config, seed)
        if config.sac is None:
            raise ConfigurationError("SAC learner needs the sac sub-record")
        p, nets = config.sac, config.networks
        self.params = p
        self.policy = GaussianPolicy(obs_dim, act_dim, nets.policy_layers, nets.activation)
        self.critics = nn.ModuleList(
            [QNetwork(obs_dim, act_dim, nets.critic_layers, nets.activation) for _ in range(2)])
        self.target_critics = copy.deepcopy(self.critics).requires_grad_(False)
        self.log_alpha = nn.Parameter(torch.zeros(()))
        self.target_entropy = p.target_entropy_per_dimension * act_dim

        opt = OptimizerSpec("adam", p.learning_rate)
        self.actor_opt = make_optimizer(self.policy.parameters(), opt)
        self.critic_opt = make_optimizer(self.critics.parameters(), opt)
        self.alpha_opt = make_optimizer([self.log_alpha], opt)
        self.actor_monitor = GradNormMonitor(self.policy, prefix="policy.").install()
        self.critic_monitor = GradNormMonitor(self.critics, prefix="critic.").install()

    @property
    def alpha(self) -> torch.Tensor:
        return self.log_alpha.exp()

    def act(self, obs: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            a = self.policy.distribution(self._obs_tensor(obs)).sample(self.generator)
        return a.numpy().astype(np.float64)

    def critic_target(self, batch: Batch) -> torch.Tensor:
        """r + discount * (min target Q(s', a') - alpha * log pi(a'|s'))."""
        with torch.no_grad():
            a_next, logp_next = self.policy.distribution(batch.next_obs).rsample(self.generator)
            q_next = torch.min(*(q(batch.next_obs, a_next) for q in self.target_critics))
            return batch.reward + batch.discount * (q_next - self.alpha * logp_next)

    def critic_loss(self, batch: Batch, target: torch.Tensor) -> torch.Tensor:
        return sum(F.mse_loss(q(batch.obs, batch.action), target) for q in self.critics)

    def actor_loss(self, batch: Batch,
                   generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """alpha * log pi(a|s) - min Q(s, a) with a reparameterized; also returns log pi(a|s)."""
        a, logp = self.policy.distribution(batch.obs).rsample(self.generator if generator is None else generator)
        q = torch.min(*(c(batch.obs, a) for c in self.critics))
        return (self.alpha.detach() * logp - q).mean(), logp

    def update(self, batch: Batch) -> Dict[str, float]:
        target = self.critic_target(batch)
        critic_loss = opt_step(self.critic_opt, self.critic_loss(batch, target), monitor=self.critic_monitor,
                               what="sac critic loss")

        actor_loss, logp = self.actor_loss(batch)
        actor_loss = opt_step(self.actor_opt, actor_loss, monitor=self.actor_monitor, what="sac actor loss")

        opt_step(self.alpha_opt, temperature_loss(self.log_alpha, logp, self.target_entropy),
                 what="sac temperature loss")

        polyak_update(self.target_critics, self.critics, self.params.tau)
        self.num_updates += 1
        return {"critic_loss": critic_loss, "actor_loss": actor_loss, "alpha": float(self.alpha),
                "entropy": float(-logp.detach().mean())}

    def sync_targets(self) -> None:
        hard_update(self.target_critics, self.critics)

    def modules(self) -> Dict[str, nn.Module]:
        return {"policy": self.policy, "critics": self.critics, "target_critics": self.target_critics}
