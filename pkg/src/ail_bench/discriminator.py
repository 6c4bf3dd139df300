"""discriminator.py

Discriminator parameterization, training losses and regularizers.

The network outputs a logit h; D = sigmoid(h) is the probability that a
transition came from the expert. Every loss is written in logit space
(``softplus(-h) = -ln D``, ``softplus(h) = -ln(1 - D)``).

Regularizers that act on the loss: ``gp``, ``mixup``, ``pugail``, ``entropy``.
Regularizers that act on the network or optimizer: ``spectral``, ``dropout``,
``weight_decay`` (their loss is the plain cross-entropy).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Literal, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ail_bench.errors import ConfigurationError
from ail_bench.hooks import GradNormMonitor
from ail_bench.networks import Mlp, OptimizerSpec, make_optimizer, opt_step, spectral_normalize

logger = logging.getLogger(__name__)

InputMode = Literal["s", "sa", "ss", "sas"]
INPUT_MODES = ("s", "sa", "ss", "sas")
REGULARIZERS = ("none", "gp", "spectral", "mixup", "pugail", "dropout", "weight_decay", "entropy")


def input_dim(mode: InputMode, obs_dim: int, act_dim: int) -> int:
    """Width of the assembled discriminator input."""
    if mode not in INPUT_MODES:
        raise ConfigurationError(f"unknown discriminator input {mode!r}")
    return obs_dim + act_dim * ("a" in mode) + obs_dim * (mode in ("ss", "sas"))


def assemble_input(mode: InputMode, s: torch.Tensor, a: torch.Tensor, s_next: torch.Tensor) -> torch.Tensor:
    """Concatenates the parts of (s, a, s') that ``mode`` uses."""
    parts = {"s": [s], "sa": [s, a], "ss": [s, s_next], "sas": [s, a, s_next]}
    if mode not in parts:
        raise ConfigurationError(f"unknown discriminator input {mode!r}")
    return torch.cat(parts[mode], dim=-1)


@dataclass(frozen=True)
class RegularizerConfig:
    """Which regularizer to use and its coefficients (unused ones are ignored)."""
    kind: str = "none"
    gp_coef: float = 1.0
    gp_target: float = 0.0
    mixup_alpha: float = 1.0
    pugail_prior: float = 0.7
    pugail_beta: float = math.inf
    dropout_input: float = 0.0
    dropout_hidden: float = 0.0
    weight_decay: float = 0.0
    entropy_coef: float = 0.0
    spectral_iters: int = 1

    def __post_init__(self):
        if self.kind not in REGULARIZERS:
            raise ConfigurationError(f"unknown regularizer {self.kind!r}; valid: {REGULARIZERS}")
        if min(self.gp_coef, self.weight_decay, self.entropy_coef, self.pugail_beta) < 0:
            raise ConfigurationError("regularizer coefficients must be >= 0")
        if self.gp_target not in (0.0, 1.0):
            raise ConfigurationError(f"gp target must be 0 or 1, got {self.gp_target}")
        if not 0.0 < self.pugail_prior < 1.0:
            raise ConfigurationError(f"pugail prior must be in (0, 1), got {self.pugail_prior}")
        if self.mixup_alpha <= 0:
            raise ConfigurationError(f"mixup alpha must be > 0, got {self.mixup_alpha}")

    @classmethod
    def from_choices(cls, config) -> "RegularizerConfig":
        """Reads the regularizer sub-record of a ChoiceConfig."""
        kind = config.regularizer
        kw = {"kind": kind, "spectral_iters": config.spectralpoweriterations}
        if kind == "gp":
            kw.update(gp_coef=config.gpcoef, gp_target=config.gptarget)
        elif kind == "mixup":
            kw.update(mixup_alpha=config.mixupalpha)
        elif kind == "pugail":
            kw.update(pugail_prior=config.pugailpositiveclassprior, pugail_beta=config.pugailbeta)
        elif kind == "dropout":
            kw.update(dropout_input=config.dropoutinputrate, dropout_hidden=config.dropouthiddenrate)
        elif kind == "weight_decay":
            kw.update(weight_decay=config.regweightdecay)
        elif kind == "entropy":
            kw.update(entropy_coef=config.regentropycoef)
        return cls(**kw)


@dataclass
class DiscBatch:
    """Discriminator-side view of transitions: (s, a, s')."""
    s: torch.Tensor
    a: torch.Tensor
    s_next: torch.Tensor

    def __len__(self) -> int:
        return self.s.shape[0]

    @classmethod
    def from_numpy(cls, s, a, s_next) -> "DiscBatch":
        t = lambda x: torch.as_tensor(np.asarray(x), dtype=torch.float32)
        return cls(t(s), t(a), t(s_next))


@dataclass
class DiscriminatorOutput:
    logit: torch.Tensor
    prob: torch.Tensor


LogProbFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


class Discriminator(nn.Module):
    """f(x), or AIRL-shaped g(x) + discount * h(s') - h(s), optionally shifted by -log pi(a|s).

    Args:
        obs_dim, act_dim: Dimensions of s and a (s includes the absorbing bit when on).
        mode: Input mode, one of ``INPUT_MODES``.
        hidden: Hidden layer sizes of every sub-network.
        activation: Hidden activation.
        last_layer_init_scale: Output-layer init scale.
        shaping: Use the AIRL decomposition.
        discount: Shaping discount.
        logit_shift: Subtract log pi(a|s) from the logit.
        reg: Regularizer; ``dropout`` and ``spectral`` change the networks.
    """

    def __init__(self, obs_dim: int, act_dim: int, mode: InputMode = "sa", hidden: Sequence[int] = (64,),
                 activation: str = "relu", last_layer_init_scale: float = 1.0, shaping: bool = False,
                 discount: float = 0.99, logit_shift: bool = False,
                 reg: Optional[RegularizerConfig] = None):
        super().__init__()
        reg = reg or RegularizerConfig()
        self.mode = mode
        self.shaping = shaping
        self.discount = discount
        self.logit_shift = logit_shift
        self.log_prob_fn: Optional[LogProbFn] = None

        def mlp(n_in: int) -> Mlp:
            net = Mlp([n_in, *hidden, 1], activation, last_layer_init_scale,
                      dropout_input=reg.dropout_input, dropout_hidden=reg.dropout_hidden)
            return spectral_normalize(net, reg.spectral_iters) if reg.kind == "spectral" else net

        x_dim = input_dim(mode, obs_dim, act_dim)
        if shaping:
            self.g_net = mlp(x_dim)
            self.h_net = mlp(obs_dim)
        else:
            self.f_net = mlp(x_dim)

    def mlps(self) -> Tuple[Mlp, ...]:
        return (self.g_net, self.h_net) if self.shaping else (self.f_net,)

    def bind_policy(self, log_prob_fn: Optional[LogProbFn]) -> None:
        """Sets the log pi(a|s) source used when no log-probability is passed in."""
        self.log_prob_fn = log_prob_fn

    def raw_logit(self, s: torch.Tensor, a: torch.Tensor, s_next: torch.Tensor) -> torch.Tensor:
        x = assemble_input(self.mode, s, a, s_next)
        if self.shaping:
            return (self.g_net(x) + self.discount * self.h_net(s_next) - self.h_net(s)).squeeze(-1)
        return self.f_net(x).squeeze(-1)

    def forward(self, s: torch.Tensor, a: torch.Tensor, s_next: torch.Tensor,
                policy_logprob: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = self.raw_logit(s, a, s_next)
        if not self.logit_shift:
            return h
        if policy_logprob is None:
            if self.log_prob_fn is None:
                raise ConfigurationError("logit shift needs log pi(a|s) from a stochastic policy")
            policy_logprob = self.log_prob_fn(s, a)
        return h - policy_logprob


def disc_forward(model: Discriminator, s: torch.Tensor, a: torch.Tensor, s_next: torch.Tensor,
                 policy_logprob: Optional[torch.Tensor] = None, eval_mode: bool = False) -> DiscriminatorOutput:
    """Logit and probability; eval mode disables dropout and freezes spectral vectors."""
    was_training = model.training
    model.train(not eval_mode)
    try:
        h = model(s, a, s_next, policy_logprob)
    finally:
        model.train(was_training)
    return DiscriminatorOutput(logit=h, prob=torch.sigmoid(h))


# --- losses ----------------------------------------------------------------

def base_loss(h_expert: torch.Tensor, h_policy: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy, expert labelled 1 and policy 0."""
    return 0.5 * (F.softplus(-h_expert).mean() + F.softplus(h_policy).mean())


def _interpolate(expert: DiscBatch, policy: DiscBatch, eps: torch.Tensor) -> DiscBatch:
    e = eps.unsqueeze(-1)
    mix = lambda x, y: e * x + (1.0 - e) * y
    return DiscBatch(mix(expert.s, policy.s), mix(expert.a, policy.a), mix(expert.s_next, policy.s_next))


def gp_penalty(model: Discriminator, expert: DiscBatch, policy: DiscBatch, coef: float, target: float,
               rng: np.random.Generator) -> torch.Tensor:
    """coef * mean (||grad_x h(x_hat)|| - target)^2 at per-pair interpolates x_hat."""
    eps = torch.as_tensor(rng.uniform(0.0, 1.0, size=len(expert)), dtype=expert.s.dtype)
    mixed = _interpolate(expert, policy, eps)
    inputs = [x.detach().requires_grad_(True) for x in (mixed.s, mixed.a, mixed.s_next)]
    h = model(*inputs)
    grads = torch.autograd.grad(h.sum(), inputs, create_graph=True, allow_unused=True)
    sq = sum((g ** 2).sum(-1) for g in grads if g is not None)
    norm = torch.sqrt(sq + 1e-12)
    return coef * ((norm - target) ** 2).mean()


def mixup_loss(model: Discriminator, expert: DiscBatch, policy: DiscBatch, alpha: float,
               rng: np.random.Generator) -> torch.Tensor:
    """Cross-entropy on convex mixes with eps ~ Beta(alpha, alpha) as the soft label."""
    eps = torch.as_tensor(rng.beta(alpha, alpha, size=len(expert)), dtype=expert.s.dtype)
    mixed = _interpolate(expert, policy, eps)
    h = model(mixed.s, mixed.a, mixed.s_next)
    return (eps * F.softplus(-h) + (1.0 - eps) * F.softplus(h)).mean()


def pugail_loss(h_expert: torch.Tensor, h_policy: torch.Tensor, prior: float, beta: float) -> torch.Tensor:
    """eta E_exp[-ln D] + max(-beta, E_pol[-ln(1-D)] - eta E_exp[-ln(1-D)])."""
    positive = prior * F.softplus(-h_expert).mean()
    unlabeled = F.softplus(h_policy).mean() - prior * F.softplus(h_expert).mean()
    return positive + torch.clamp(unlabeled, min=-beta)


def entropy_bonus(logits: torch.Tensor, coef: float) -> torch.Tensor:
    """coef * mean(D ln D + (1 - D) ln(1 - D)), added to the loss with this sign.

    The term is the negative Bernoulli entropy, so with coef > 0 minimizing the
    loss pushes D toward 0.5.
    """
    d = torch.sigmoid(logits)
    return coef * (-d * F.softplus(-logits) - (1.0 - d) * F.softplus(logits)).mean()


def discriminator_loss(model: Discriminator, expert: DiscBatch, policy: DiscBatch, reg: RegularizerConfig,
                       rng: np.random.Generator) -> Tuple[torch.Tensor, Dict[str, float]]:
    """Training loss for one discriminator step under ``reg``.

    Returns:
        (loss, stats) where stats holds the scalar terms that were computed.
    """
    if len(expert) != len(policy):
        raise ValueError(f"expert and policy halves differ: {len(expert)} vs {len(policy)}")
    if reg.kind == "mixup":
        loss = mixup_loss(model, expert, policy, reg.mixup_alpha, rng)
        return loss, {"loss": float(loss.detach())}
    h_e = model(expert.s, expert.a, expert.s_next)
    h_p = model(policy.s, policy.a, policy.s_next)
    stats = {"expert_acc": float((h_e > 0).float().mean()), "policy_acc": float((h_p < 0).float().mean())}
    if reg.kind == "pugail":
        loss = pugail_loss(h_e, h_p, reg.pugail_prior, reg.pugail_beta)
    else:
        loss = base_loss(h_e, h_p)
        stats["ce"] = float(loss.detach())
        if reg.kind == "gp":
            gp = gp_penalty(model, expert, policy, reg.gp_coef, reg.gp_target, rng)
            stats["gp"] = float(gp.detach())
            loss = loss + gp
        elif reg.kind == "entropy":
            ent = entropy_bonus(torch.cat([h_e, h_p]), reg.entropy_coef)
            stats["entropy_term"] = float(ent.detach())
            loss = loss + ent
    stats["loss"] = float(loss.detach())
    return loss, stats


class DiscriminatorTrainer:
    """Owns a discriminator's optimizer and the regularizer's random stream.

    Adam at ``learning_rate``; AdamW with decoupled decay under ``weight_decay``.
    """

    def __init__(self, model: Discriminator, reg: RegularizerConfig, learning_rate: float,
                 rng: np.random.Generator):
        self.model = model
        self.reg = reg
        self.rng = rng
        spec = OptimizerSpec("adamw", learning_rate, reg.weight_decay) if reg.kind == "weight_decay" \
            else OptimizerSpec("adam", learning_rate)
        self.optimizer = make_optimizer(model.parameters(), spec)
        self.monitor = GradNormMonitor(model, prefix="disc.").install()
        self.num_updates = 0

    def update(self, expert: DiscBatch, policy: DiscBatch) -> Dict[str, float]:
        self.model.train()
        loss, stats = discriminator_loss(self.model, expert, policy, self.reg, self.rng)
        opt_step(self.optimizer, loss, monitor=self.monitor, what="discriminator loss")
        self.num_updates += 1
        return stats

    def logits(self, batch: DiscBatch) -> torch.Tensor:
        """Eval-mode logits for reward computation."""
        with torch.no_grad():
            return disc_forward(self.model, batch.s, batch.a, batch.s_next, eval_mode=True).logit


def build_discriminator(config, obs_dim: int, act_dim: int) -> Discriminator:
    """Discriminator for a ChoiceConfig; ``obs_dim`` already includes any absorbing bit."""
    return Discriminator(
        obs_dim, act_dim,
        mode=config.gailinput,
        hidden=(config.gailmlpnumwidth,) * config.gailmlpnumlayers,
        activation=config.gailmlpactivation,
        last_layer_init_scale=config.gailmlplastlayerinitscale,
        shaping=config.gaildiscriminatormodule,
        discount=config.discount,
        logit_shift=config.subtractlogp,
        reg=RegularizerConfig.from_choices(config),
    )
