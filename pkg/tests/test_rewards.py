"""test_rewards.py

Implicit reward functions of the discriminator logit and clipping.
"""
import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from ail_bench.config import ChoiceConfig
from ail_bench.errors import ConfigurationError
from ail_bench.rewards import RewardSpec, compute_reward

logits = st.floats(min_value=-30.0, max_value=30.0, allow_nan=False)


@given(h=logits)
def test_reward_signs_and_airl_identity(h):
    """-ln(1-D) is positive, ln D is negative and AIRL is their sum."""
    pos = compute_reward(RewardSpec("gail_pos"), h)
    neg = compute_reward(RewardSpec("ln_d"), h)
    assert pos > 0.0 and neg < 0.0
    assert compute_reward(RewardSpec("airl"), h) == pytest.approx(pos + neg, abs=1e-9)


@given(h=logits, bound=st.floats(min_value=0.01, max_value=100.0))
def test_clipping_is_symmetric(h, bound):
    for kind in ("gail_pos", "airl", "ln_d", "fairl"):
        r = compute_reward(RewardSpec(kind, bound), h)
        assert -bound <= r <= bound
        assert r == pytest.approx(float(np.clip(compute_reward(RewardSpec(kind), h), -bound, bound)))


def test_reward_values():
    assert compute_reward(RewardSpec("gail_pos"), 0.0) == pytest.approx(math.log(2.0))
    assert compute_reward(RewardSpec("ln_d"), 0.0) == pytest.approx(-math.log(2.0))
    assert compute_reward(RewardSpec("airl"), 1.5) == 1.5
    assert compute_reward(RewardSpec("fairl"), 0.0) == 0.0
    assert compute_reward(RewardSpec("fairl"), 1.0) == pytest.approx(-math.e)
    # saturated logits stay finite
    assert compute_reward(RewardSpec("ln_d"), -800.0) == pytest.approx(-800.0)
    assert compute_reward(RewardSpec("gail_pos"), 800.0) == pytest.approx(800.0)


def test_container_types_follow_input():
    spec = RewardSpec("airl", 1.0)
    assert isinstance(compute_reward(spec, 0.5), float)
    out = compute_reward(spec, np.array([-3.0, 0.5, 3.0]))
    assert isinstance(out, np.ndarray) and out.tolist() == [-1.0, 0.5, 1.0]
    t = compute_reward(spec, torch.tensor([2.0]))
    assert isinstance(t, torch.Tensor) and t.dtype == torch.float64


def test_spec_validation_and_from_choices():
    with pytest.raises(ConfigurationError):
        RewardSpec("gail_neg")
    with pytest.raises(ConfigurationError):
        RewardSpec("airl", 0.0)
    spec = RewardSpec.from_choices(ChoiceConfig.from_flat({"gailreward": "ln(D)", "gailmaxrewardmagnitude": 20}))
    assert spec == RewardSpec("ln_d", 20.0)
