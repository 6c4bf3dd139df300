"""rewards.py

Implicit rewards as functions of the discriminator logit h, then clipped
symmetrically at ``max_magnitude``:

- ``gail_pos``: -ln(1 - D) = softplus(h)      (always positive)
- ``airl``:     ln D - ln(1 - D) = h
- ``ln_d``:     ln D = -softplus(-h)          (always negative)
- ``fairl``:    -h * e^h
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
import torch

from ail_bench.errors import ConfigurationError

RewardKind = Literal["gail_pos", "airl", "ln_d", "fairl"]
REWARD_KINDS = ("gail_pos", "airl", "ln_d", "fairl")


@dataclass(frozen=True)
class RewardSpec:
    kind: RewardKind = "airl"
    max_magnitude: float = math.inf

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ConfigurationError(f"unknown reward {self.kind!r}; valid: {REWARD_KINDS}")
        if not self.max_magnitude > 0:
            raise ConfigurationError(f"max_magnitude must be > 0, got {self.max_magnitude}")

    @classmethod
    def from_choices(cls, config) -> "RewardSpec":
        return cls(config.gailreward, config.gailmaxrewardmagnitude)


def compute_reward(spec: RewardSpec, h: Union[torch.Tensor, np.ndarray, float]) -> Union[torch.Tensor, np.ndarray, float]:
    """Maps logits to rewards in float64; returns the input's container type."""
    as_numpy = not isinstance(h, torch.Tensor)
    x = torch.as_tensor(np.asarray(h) if as_numpy else h, dtype=torch.float64)
    zero = torch.zeros((), dtype=torch.float64)
    if spec.kind == "gail_pos":
        r = torch.logaddexp(x, zero)
    elif spec.kind == "airl":
        r = x
    elif spec.kind == "ln_d":
        r = -torch.logaddexp(-x, zero)
    else:
        r = -x * torch.exp(x)
    if math.isfinite(spec.max_magnitude):
        r = r.clamp(-spec.max_magnitude, spec.max_magnitude)
    if not as_numpy:
        return r
    out = r.numpy()
    return float(out) if out.ndim == 0 else out
