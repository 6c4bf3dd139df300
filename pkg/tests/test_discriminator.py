"""test_discriminator.py

Discriminator inputs, AIRL shaping, logit shift, losses and regularizers.
Gradients of every loss are checked against central finite differences in float64.
"""
import math

import numpy as np
import pytest
import torch
from torch.autograd import gradcheck
from torch.func import functional_call

from ail_bench.config import ChoiceConfig
from ail_bench.discriminator import (DiscBatch, Discriminator, DiscriminatorTrainer, RegularizerConfig, base_loss,
                                     build_discriminator, disc_forward, discriminator_loss, entropy_bonus, gp_penalty,
                                     input_dim, mixup_loss, pugail_loss)
from ail_bench.errors import ConfigurationError
from ail_bench.networks import max_singular_value

OBS_DIM, ACT_DIM = 3, 2
LN2 = math.log(2.0)


def _halves(n=6, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    mk = lambda: DiscBatch(torch.randn(n, OBS_DIM, generator=g, dtype=dtype),
                           torch.rand(n, ACT_DIM, generator=g, dtype=dtype) * 2 - 1,
                           torch.randn(n, OBS_DIM, generator=g, dtype=dtype))
    return mk(), mk()


def _disc(mode="sa", **kw):
    torch.manual_seed(0)
    return Discriminator(OBS_DIM, ACT_DIM, mode=mode, hidden=(8,), activation="tanh", **kw)


def _param_gradcheck(model, loss_of):
    """gradcheck of ``loss_of(call)`` with respect to every parameter of ``model``."""
    model = model.double()
    names = [n for n, _ in model.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for _, p in model.named_parameters())

    def fn(*ps):
        call = lambda *x: functional_call(model, dict(zip(names, ps)), x)
        return loss_of(call)

    return gradcheck(fn, params)


def test_input_dims():
    assert input_dim("s", 5, 2) == 5
    assert input_dim("sa", 5, 2) == 7
    assert input_dim("ss", 5, 2) == 10
    assert input_dim("sas", 5, 2) == 12
    with pytest.raises(ConfigurationError):
        input_dim("as", 5, 2)
    for mode in ("s", "sa", "ss", "sas"):
        e, _ = _halves(dtype=torch.float32)
        assert _disc(mode)(e.s, e.a, e.s_next).shape == (6,)


def test_shaping_decomposition():
    """logit = g(s, a) + discount * h(s') - h(s)."""
    model = _disc(shaping=True, discount=0.9).double()
    e, _ = _halves()
    expected = (model.g_net(torch.cat([e.s, e.a], -1)) + 0.9 * model.h_net(e.s_next) - model.h_net(e.s)).squeeze(-1)
    assert torch.allclose(model(e.s, e.a, e.s_next), expected)
    assert len(model.mlps()) == 2


def test_logit_shift():
    model = _disc(logit_shift=True).double()
    e, _ = _halves()
    h = model.raw_logit(e.s, e.a, e.s_next)
    logp = torch.linspace(-2, 1, 6, dtype=torch.float64)
    assert torch.allclose(model(e.s, e.a, e.s_next, logp), h - logp)
    with pytest.raises(ConfigurationError):
        model(e.s, e.a, e.s_next)
    model.bind_policy(lambda s, a: -(a ** 2).sum(-1))
    assert torch.allclose(model(e.s, e.a, e.s_next), h + (e.a ** 2).sum(-1))


def test_base_loss_symmetric_point_and_saturation():
    zeros = torch.zeros(10)
    assert float(base_loss(zeros, zeros)) == pytest.approx(LN2)
    # logit-space loss stays finite where D rounds to 0 or 1
    big = torch.full((4,), 200.0)
    assert math.isfinite(float(base_loss(-big, big)))
    assert float(base_loss(big, -big)) == pytest.approx(0.0, abs=1e-12)


def test_gp_on_linear_discriminator_is_exact():
    """A linear f has input gradient w everywhere: penalty = coef * (||w|| - target)^2."""
    model = Discriminator(OBS_DIM, ACT_DIM, "sa", hidden=()).double()
    e, p = _halves()
    w_norm = float(model.f_net.linear_layers()[0].weight.norm())
    rng = np.random.default_rng(0)
    assert float(gp_penalty(model, e, p, 10.0, 1.0, rng)) == pytest.approx(10.0 * (w_norm - 1.0) ** 2, rel=1e-6)
    assert float(gp_penalty(model, e, p, 1.0, 0.0, rng)) == pytest.approx(w_norm ** 2, rel=1e-6)


def test_mixup_endpoints_and_determinism():
    model = _disc().double()
    e, p = _halves()
    a = mixup_loss(model, e, p, 1.0, np.random.default_rng(5))
    b = mixup_loss(model, e, p, 1.0, np.random.default_rng(5))
    assert float(a) == float(b) and float(a) > 0
    # identical halves: every mix is the same point, the label averages out to the symmetric loss
    zero = Discriminator(OBS_DIM, ACT_DIM, "sa", hidden=(8,), last_layer_init_scale=1e-12).double()
    assert float(mixup_loss(zero, e, e, 1.0, np.random.default_rng(0))) == pytest.approx(LN2, abs=1e-6)


def test_pugail_examples():
    zeros = torch.zeros(8, dtype=torch.float64)
    assert float(pugail_loss(zeros, zeros, 0.5, math.inf)) == pytest.approx(LN2)
    h_p = torch.linspace(-1, 1, 8, dtype=torch.float64)
    policy_only = torch.nn.functional.softplus(h_p).mean()
    assert float(pugail_loss(zeros + 3.0, h_p, 0.0, math.inf)) == pytest.approx(float(policy_only))
    # the unlabeled term is clipped at -beta
    h_e, h_p = torch.full((8,), 10.0), torch.full((8,), -10.0)
    positive = 0.7 * torch.nn.functional.softplus(-h_e).mean()
    assert float(pugail_loss(h_e, h_p, 0.7, 0.0)) == pytest.approx(float(positive), abs=1e-9)
    assert float(pugail_loss(h_e, h_p, 0.7, 1.0)) == pytest.approx(float(positive) - 1.0, abs=1e-6)


def test_entropy_bonus_sign_and_limits():
    assert float(entropy_bonus(torch.zeros(4), 0.03)) == pytest.approx(-0.03 * LN2)
    assert abs(float(entropy_bonus(torch.full((4,), 40.0), 1.0))) < 1e-12
    h = torch.zeros(3, requires_grad=True)
    entropy_bonus(h, 1.0).backward()
    assert torch.allclose(h.grad, torch.zeros(3), atol=1e-7)


@pytest.mark.parametrize("kind", ["none", "entropy", "pugail"])
def test_loss_invariant_to_within_half_permutation(kind):
    model = _disc().double()
    e, p = _halves()
    reg = RegularizerConfig(kind=kind, entropy_coef=0.03)
    perm = torch.tensor([3, 0, 5, 1, 4, 2])
    shuffled = DiscBatch(e.s[perm], e.a[perm], e.s_next[perm])
    a, _ = discriminator_loss(model, e, p, reg, np.random.default_rng(0))
    b, _ = discriminator_loss(model, shuffled, p, reg, np.random.default_rng(0))
    assert torch.allclose(a, b)


def test_loss_rejects_unequal_halves():
    e, p = _halves()
    short = DiscBatch(p.s[:3], p.a[:3], p.s_next[:3])
    with pytest.raises(ValueError):
        discriminator_loss(_disc().double(), e, short, RegularizerConfig(), np.random.default_rng(0))


# --- gradient suite -------------------------------------------------------------

@pytest.mark.parametrize("variant", ["plain", "shaping", "logit_shift"])
def test_base_loss_gradients(variant):
    kw = {"shaping": {"shaping": True}, "logit_shift": {"logit_shift": True}}.get(variant, {})
    model = _disc("sas", **kw)
    if variant == "logit_shift":
        model.bind_policy(lambda s, a: -(a ** 2).sum(-1))
    e, p = _halves()
    assert _param_gradcheck(model, lambda f: base_loss(f(e.s, e.a, e.s_next), f(p.s, p.a, p.s_next)))


def test_gp_gradients():
    e, p = _halves()
    assert _param_gradcheck(_disc(), lambda f: gp_penalty(f, e, p, 10.0, 1.0, np.random.default_rng(0)))


def test_mixup_gradients():
    e, p = _halves()
    assert _param_gradcheck(_disc(), lambda f: mixup_loss(f, e, p, 0.4, np.random.default_rng(0)))


def test_pugail_and_entropy_gradients():
    e, p = _halves()
    assert _param_gradcheck(_disc(), lambda f: pugail_loss(f(e.s, e.a, e.s_next), f(p.s, p.a, p.s_next), 0.7, 2.0))
    assert _param_gradcheck(_disc(), lambda f: entropy_bonus(torch.cat([f(e.s, e.a, e.s_next),
                                                                        f(p.s, p.a, p.s_next)]), 0.5))


# --- regularizers acting on the network or optimizer ----------------------------------

def test_spectral_bound_holds_during_training():
    reg = RegularizerConfig(kind="spectral")
    torch.manual_seed(0)
    model = Discriminator(OBS_DIM, ACT_DIM, "sas", hidden=(16, 16), shaping=True, reg=reg)
    trainer = DiscriminatorTrainer(model, reg, 1e-4, np.random.default_rng(0))
    for i in range(20):
        e, p = _halves(16, seed=i, dtype=torch.float32)
        trainer.update(e, p)
        for mlp in model.mlps():
            for layer in mlp.linear_layers():
                assert max_singular_value(layer.weight) <= 1.01


def test_dropout_disabled_for_reward_logits():
    reg = RegularizerConfig(kind="dropout", dropout_input=0.5, dropout_hidden=0.75)
    torch.manual_seed(0)
    model = Discriminator(OBS_DIM, ACT_DIM, "sa", hidden=(16,), reg=reg)
    trainer = DiscriminatorTrainer(model, reg, 1e-3, np.random.default_rng(0))
    e, _ = _halves(dtype=torch.float32)
    assert torch.equal(trainer.logits(e), trainer.logits(e))
    train_out = disc_forward(model, e.s, e.a, e.s_next).logit
    assert model.training
    assert not torch.equal(train_out, trainer.logits(e))


def test_weight_decay_uses_decoupled_decay():
    reg = RegularizerConfig(kind="weight_decay", weight_decay=10.0)
    trainer = DiscriminatorTrainer(_disc(reg=reg), reg, 3e-5, np.random.default_rng(0))
    assert isinstance(trainer.optimizer, torch.optim.AdamW)
    assert trainer.optimizer.param_groups[0]["weight_decay"] == 10.0


@pytest.mark.parametrize("kind", ["none", "gp", "mixup", "pugail", "entropy"])
def test_trainer_update_stats(kind):
    reg = RegularizerConfig(kind=kind, entropy_coef=0.03)
    trainer = DiscriminatorTrainer(_disc(), reg, 1e-3, np.random.default_rng(0))
    e, p = _halves(dtype=torch.float32)
    stats = trainer.update(e, p)
    assert math.isfinite(stats["loss"])
    assert trainer.num_updates == 1
    if kind == "gp":
        assert stats["gp"] >= 0.0


def test_regularizer_config_validation_and_from_choices():
    with pytest.raises(ConfigurationError):
        RegularizerConfig(kind="l2")
    with pytest.raises(ConfigurationError):
        RegularizerConfig(kind="gp", gp_target=0.5)
    with pytest.raises(ConfigurationError):
        RegularizerConfig(kind="pugail", pugail_prior=1.0)
    c = ChoiceConfig.from_flat({"regularizer": "gp", "gpcoef": 10, "gptarget": 1})
    reg = RegularizerConfig.from_choices(c)
    assert (reg.kind, reg.gp_coef, reg.gp_target) == ("gp", 10.0, 1.0)


def test_build_discriminator_from_config():
    c = ChoiceConfig.from_flat({"gailinput": "sas", "gaildiscriminatormodule": True, "gailmlpnumlayers": 2,
                                "gailmlpnumwidth": 8, "regularizer": "none"})
    model = build_discriminator(c, OBS_DIM + 1, ACT_DIM)
    assert model.shaping and model.discount == c.discount
    assert model.g_net.layer_sizes == (2 * (OBS_DIM + 1) + ACT_DIM, 8, 8, 1)
    assert model.h_net.layer_sizes == (OBS_DIM + 1, 8, 8, 1)
