"""learner.py

Common interface of the RL learners and the replay batch they consume.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, fields
from typing import Dict, List, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ail_bench.config import RlConfig
from ail_bench.errors import ConfigurationError
from ail_bench.networks import load_checkpoint, save_checkpoint
from ail_bench.policies import EvalMode, eval_action

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    """Transitions for one off-policy update.

    ``discount`` already folds in termination and n-step aggregation:
    gamma^k * (1 - terminal).
    """
    obs: torch.Tensor
    action: torch.Tensor
    reward: torch.Tensor
    next_obs: torch.Tensor
    discount: torch.Tensor

    def __len__(self) -> int:
        return self.obs.shape[0]

    @classmethod
    def from_numpy(cls, obs, action, reward, next_obs, discount) -> "Batch":
        t = lambda x: torch.as_tensor(np.asarray(x), dtype=torch.float32)
        return cls(t(obs), t(action), t(reward), t(next_obs), t(discount))

    def split(self, n: int) -> List["Batch"]:
        """Splits into ``n`` equal consecutive minibatches."""
        if len(self) % n:
            raise ValueError(f"batch of {len(self)} does not split into {n}")
        size = len(self) // n
        return [Batch(*(getattr(self, f.name)[i * size:(i + 1) * size] for f in fields(self)))
                for i in range(n)]


class Learner(ABC):
    """One RL agent: behavior and evaluation actions plus gradient updates.

    Subclasses set ``policy`` (the actor module) and ``stochastic``.
    """
    stochastic: bool = False
    off_policy: bool = True

    def __init__(self, obs_dim: int, act_dim: int, config: RlConfig, seed: int = 0):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.config = config
        self.generator = torch.Generator().manual_seed(seed)
        self.num_updates = 0
        self.policy: nn.Module

    def _obs_tensor(self, obs: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(np.asarray(obs), dtype=torch.float32)

    @abstractmethod
    def act(self, obs: np.ndarray) -> np.ndarray:
        """Behavior action (with exploration) for one observation."""

    @abstractmethod
    def update(self, batch) -> Dict[str, float]:
        """One gradient update; returns scalar stats."""

    def eval_action(self, obs: np.ndarray, mode: EvalMode = "mode",
                    generator: Optional[torch.Generator] = None) -> np.ndarray:
        return eval_action(self.policy, self._obs_tensor(obs), mode, generator).numpy().astype(np.float64)

    def log_prob(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        """log pi(a|s); only stochastic learners define it."""
        if not self.stochastic:
            raise ConfigurationError(f"{self.config.algorithm} has a deterministic policy; no log-probability")
        return self.policy.distribution(obs).log_prob(action)

    def bc_loss(self, obs: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        """MSE between the policy's deterministic action and demo actions."""
        return F.mse_loss(self.policy(obs), actions)

    def sync_targets(self) -> None:
        """Copies the online networks into their target copies; no-op without targets."""

    def modules(self) -> Dict[str, nn.Module]:
        """Every network of the learner, by name."""
        return {"policy": self.policy}

    def save(self, path: str) -> None:
        meta = {"algorithm": self.config.algorithm, "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "policy_layers": list(self.config.networks.policy_layers),
                "critic_layers": list(self.config.networks.critic_layers),
                "activation": self.config.networks.activation}
        save_checkpoint(nn.ModuleDict(self.modules()), path, meta)

    def load(self, path: str) -> None:
        meta = load_checkpoint(nn.ModuleDict(self.modules()), path)
        if meta.get("algorithm") != self.config.algorithm:
            raise ConfigurationError(f"{path} holds a {meta.get('algorithm')} learner, not {self.config.algorithm}")


def build_learner(obs_dim: int, act_dim: int, config: RlConfig, seed: int = 0) -> Learner:
    """Instantiates the learner named by ``config.algorithm``."""
    from ail_bench.d4pg import D4pgLearner
    from ail_bench.ppo import PpoLearner
    from ail_bench.sac import SacLearner
    from ail_bench.td3 import Td3Learner

    classes = {"sac": SacLearner, "td3": Td3Learner, "d4pg": D4pgLearner, "ppo": PpoLearner}
    if config.algorithm not in classes:
        raise ConfigurationError(f"unknown RL algorithm {config.algorithm!r}")
    torch.manual_seed(seed)
    return classes[config.algorithm](obs_dim, act_dim, config, seed=seed)
