"""policies.py

Actors and critics built on ``Mlp``.

Stochastic actors output tanh(Normal(mu, softplus(rho) + 0.001)); deterministic
actors output tanh of the network. The D4PG critic is categorical over a fixed
support on [-vmax, vmax].
"""
from __future__ import annotations

from typing import Literal, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.distributions import Normal
from torch.distributions.transforms import TanhTransform

from ail_bench.errors import ConfigurationError
from ail_bench.networks import Mlp

MIN_STD = 0.001
ACTION_CLAMP = 1.0 - 1e-6
AVERAGE_SAMPLES = 5

EvalMode = Literal["stochastic", "mode", "average"]


class PolicyDistribution:
    """tanh-squashed diagonal Gaussian with exact change-of-variables log-density."""

    def __init__(self, mu: torch.Tensor, rho: torch.Tensor):
        self.mu = mu
        self.std = F.softplus(rho) + MIN_STD
        self.base = Normal(mu, self.std)
        self._tanh = TanhTransform()

    def _log_prob_pre_tanh(self, u: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        return (self.base.log_prob(u) - self._tanh.log_abs_det_jacobian(u, a)).sum(-1)

    def rsample(self, generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """Reparameterized sample and its log-probability."""
        eps = torch.randn(self.mu.shape, generator=generator, dtype=self.mu.dtype, device=self.mu.device)
        u = self.mu + self.std * eps
        a = torch.tanh(u)
        return a, self._log_prob_pre_tanh(u, a)

    def sample(self, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        with torch.no_grad():
            return self.rsample(generator)[0]

    def log_prob(self, action: torch.Tensor) -> torch.Tensor:
        a = action.clamp(-ACTION_CLAMP, ACTION_CLAMP)
        return self._log_prob_pre_tanh(torch.atanh(a), a)

    def mode(self) -> torch.Tensor:
        return torch.tanh(self.mu)

    def base_entropy(self) -> torch.Tensor:
        """Entropy of the pre-tanh Gaussian, summed over action dims."""
        return self.base.entropy().sum(-1)


class GaussianPolicy(nn.Module):
    """Stochastic actor: obs -> (mu, rho)."""
    stochastic = True

    def __init__(self, obs_dim: int, act_dim: int, hidden: Sequence[int], activation: str = "relu"):
        super().__init__()
        self.act_dim = act_dim
        self.net = Mlp([obs_dim, *hidden, 2 * act_dim], activation)

    def distribution(self, obs: torch.Tensor) -> PolicyDistribution:
        mu, rho = self.net(obs).chunk(2, dim=-1)
        return PolicyDistribution(mu, rho)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.distribution(obs).mode()


class DeterministicPolicy(nn.Module):
    """Deterministic actor: obs -> tanh(net(obs))."""
    stochastic = False

    def __init__(self, obs_dim: int, act_dim: int, hidden: Sequence[int], activation: str = "relu"):
        super().__init__()
        self.act_dim = act_dim
        self.net = Mlp([obs_dim, *hidden, act_dim], activation)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.net(obs))


def eval_action(policy: nn.Module, obs: torch.Tensor, mode: EvalMode = "mode",
                generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Action used for evaluation rollouts.

    Stochastic policies: ``stochastic`` draws one sample, ``mode`` returns
    tanh(mu), ``average`` returns the mean of five samples. Deterministic
    policies ignore ``mode``.
    """
    with torch.no_grad():
        if not getattr(policy, "stochastic", False):
            return policy(obs)
        dist = policy.distribution(obs)
        if mode == "mode":
            return dist.mode()
        if mode == "stochastic":
            return dist.sample(generator)
        if mode == "average":
            return torch.stack([dist.sample(generator) for _ in range(AVERAGE_SAMPLES)]).mean(0)
    raise ConfigurationError(f"unknown eval mode {mode!r}")


class QNetwork(nn.Module):
    """Scalar critic Q(s, a)."""

    def __init__(self, obs_dim: int, act_dim: int, hidden: Sequence[int], activation: str = "relu"):
        super().__init__()
        self.net = Mlp([obs_dim + act_dim, *hidden, 1], activation)

    def forward(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([obs, action], dim=-1)).squeeze(-1)


class ValueNetwork(nn.Module):
    """Scalar state-value V(s)."""

    def __init__(self, obs_dim: int, hidden: Sequence[int], activation: str = "relu"):
        super().__init__()
        self.net = Mlp([obs_dim, *hidden, 1], activation)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.net(obs).squeeze(-1)


class CategoricalCritic(nn.Module):
    """Distributional critic: logits over ``num_atoms`` equally spaced returns."""

    def __init__(self, obs_dim: int, act_dim: int, hidden: Sequence[int], num_atoms: int, vmax: float,
                 activation: str = "relu"):
        super().__init__()
        if num_atoms < 2:
            raise ConfigurationError(f"num_atoms must be >= 2, got {num_atoms}")
        self.net = Mlp([obs_dim + act_dim, *hidden, num_atoms], activation)
        self.register_buffer("support", torch.linspace(-vmax, vmax, num_atoms))

    def forward(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([obs, action], dim=-1))

    def expected_q(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return (torch.softmax(self(obs, action), dim=-1) * self.support).sum(-1)
