"""networks.py

MLP substrate shared by policies, critics and discriminators: configurable
depth/width/activation, LeCun-uniform init with a last-layer scale, dropout,
spectral normalization, Adam/AdamW optimizers and a flat checkpoint format.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
from torch.nn.utils.parametrizations import spectral_norm

from ail_bench.errors import ConfigurationError, NumericError

logger = logging.getLogger(__name__)

ACTIVATIONS = {
    "relu": nn.ReLU,
    "tanh": nn.Tanh,
    "elu": lambda: nn.ELU(alpha=1.0),
    "leaky_relu": lambda: nn.LeakyReLU(negative_slope=0.01),
    "sigmoid": nn.Sigmoid,
    "swish": nn.SiLU,
}


def lecun_uniform_(layer: nn.Linear, scale: float = 1.0) -> None:
    """Uniform init with bound scale * sqrt(3 / fan_in); zero bias."""
    bound = scale * math.sqrt(3.0 / layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound)
        layer.bias.zero_()


class Mlp(nn.Module):
    """Fully connected network.

    Args:
        layer_sizes: Input size, hidden sizes, output size.
        activation: One of ``ACTIVATIONS``; not applied after the last layer.
        last_layer_init_scale: Multiplies the init bound of the output layer.
        dropout_input: Dropout rate on the network input.
        dropout_hidden: Dropout rate on every hidden activation.
    """

    def __init__(self, layer_sizes: Sequence[int], activation: str = "relu",
                 last_layer_init_scale: float = 1.0, dropout_input: float = 0.0,
                 dropout_hidden: float = 0.0):
        super().__init__()
        if len(layer_sizes) < 2 or any(int(s) < 1 for s in layer_sizes):
            raise ConfigurationError(f"bad layer sizes {list(layer_sizes)}")
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}; valid: {sorted(ACTIVATIONS)}")
        for name, p in (("dropout_input", dropout_input), ("dropout_hidden", dropout_hidden)):
            if not 0.0 <= p < 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1), got {p}")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.activation = activation

        mods: List[nn.Module] = []
        if dropout_input > 0:
            mods.append(nn.Dropout(dropout_input))
        n = len(self.layer_sizes) - 1
        for i in range(n):
            lin = nn.Linear(self.layer_sizes[i], self.layer_sizes[i + 1])
            lecun_uniform_(lin, last_layer_init_scale if i == n - 1 else 1.0)
            mods.append(lin)
            if i < n - 1:
                mods.append(ACTIVATIONS[activation]())
                if dropout_hidden > 0:
                    mods.append(nn.Dropout(dropout_hidden))
        self.net = nn.Sequential(*mods)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    def linear_layers(self) -> List[nn.Linear]:
        return [m for m in self.net if isinstance(m, nn.Linear)]


def spectral_normalize(mlp: Mlp, n_power_iters: int = 1) -> Mlp:
    """Divides every dense matrix of ``mlp`` by its estimated top singular value.

    Power-iteration vectors persist across steps and advance ``n_power_iters``
    times per training-mode forward; eval mode reuses the frozen vectors.
    """
    if n_power_iters < 1:
        raise ConfigurationError(f"n_power_iters must be >= 1, got {n_power_iters}")
    for i, m in enumerate(mlp.net):
        if isinstance(m, nn.Linear):
            mlp.net[i] = spectral_norm(m, n_power_iterations=n_power_iters)
    return mlp


def estimated_sigma(layer: nn.Linear) -> float:
    """Top singular value estimate used by a spectrally normalized layer."""
    original = layer.parametrizations.weight.original
    with torch.no_grad():
        return float(torch.linalg.matrix_norm(original) / torch.linalg.matrix_norm(layer.weight))


def max_singular_value(weight: torch.Tensor) -> float:
    """Exact largest singular value (SVD)."""
    return float(torch.linalg.matrix_norm(weight.detach(), ord=2))


# --- optimizers ------------------------------------------------------------

BETAS = (0.9, 0.999)
EPS = 1e-8


@dataclass(frozen=True)
class OptimizerSpec:
    """Adam, or AdamW with decoupled weight decay."""
    kind: Literal["adam", "adamw"] = "adam"
    learning_rate: float = 3e-4
    weight_decay: float = 0.0


def make_optimizer(params: Iterable[torch.Tensor], spec: OptimizerSpec) -> torch.optim.Optimizer:
    if spec.learning_rate < 0 or spec.weight_decay < 0:
        raise ConfigurationError(f"invalid optimizer spec {spec}")
    if spec.kind == "adamw":
        return torch.optim.AdamW(params, lr=spec.learning_rate, betas=BETAS, eps=EPS,
                                 weight_decay=spec.weight_decay)
    if spec.kind == "adam":
        return torch.optim.Adam(params, lr=spec.learning_rate, betas=BETAS, eps=EPS)
    raise ConfigurationError(f"unknown optimizer kind {spec.kind!r}")


def opt_step(optimizer: torch.optim.Optimizer, loss: torch.Tensor, clip_norm: Optional[float] = None,
             monitor=None, what: str = "loss") -> float:
    """Backpropagates ``loss`` and applies one optimizer step.

    Args:
        optimizer: Optimizer over the parameters the loss should move.
        loss: Scalar loss.
        clip_norm: Optional global gradient-norm clip (inf disables it).
        monitor: Optional GradNormMonitor whose latest norms go into diagnostics.
        what: Loss name used in error messages.

    Returns:
        The loss value.

    Raises:
        NumericError: If the loss or any gradient is non-finite.
    """
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NumericError(f"non-finite {what}: {value}", _diagnostics(what, value, monitor))
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    params = [p for g in optimizer.param_groups for p in g["params"] if p.grad is not None]
    for p in params:
        if not torch.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in {what}", _diagnostics(what, value, monitor))
    if clip_norm is not None and math.isfinite(clip_norm):
        nn.utils.clip_grad_norm_(params, clip_norm)
    optimizer.step()
    if monitor is not None and logger.isEnabledFor(logging.DEBUG):
        logger.debug("step %s=%.5f grad_norm=%.4f", what, value, monitor.total_norm())
    return value


def _diagnostics(what: str, value: float, monitor) -> Dict[str, Any]:
    d: Dict[str, Any] = {"loss_name": what, "loss": value}
    if monitor is not None:
        d["grad_norms"] = monitor.snapshot()
    return d


def hard_update(target: nn.Module, source: nn.Module) -> None:
    target.load_state_dict(source.state_dict())


def polyak_update(target: nn.Module, source: nn.Module, tau: float) -> None:
    """target <- (1 - tau) * target + tau * source, parameter-wise."""
    with torch.no_grad():
        for t, s in zip(target.parameters(), source.parameters()):
            t.mul_(1.0 - tau).add_(s, alpha=tau)


# --- checkpoints -----------------------------------------------------------

def flatten_state(module: nn.Module) -> np.ndarray:
    """Concatenates every state tensor, sorted by name, as float64."""
    state = module.state_dict()
    return np.concatenate([state[k].detach().cpu().reshape(-1).double().numpy() for k in sorted(state)]) \
        if state else np.zeros(0)


def save_checkpoint(module: nn.Module, path: str, meta: Optional[Dict[str, Any]] = None) -> None:
    """Writes a JSON header line followed by little-endian float64 parameters.

    The header records ``meta`` (layer sizes, activation, ...) and the name and
    shape of every state tensor in flattening order.
    """
    state = module.state_dict()
    header = {
        "meta": meta or {},
        "tensors": [[k, list(state[k].shape)] for k in sorted(state)],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(flatten_state(module).astype("<f8").tobytes())


def load_checkpoint(module: nn.Module, path: str) -> Dict[str, Any]:
    """Restores ``module`` from ``save_checkpoint`` output; returns the stored meta."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        flat = np.frombuffer(f.read(), dtype="<f8")
    current = module.state_dict()
    names = [k for k, _ in header["tensors"]]
    if sorted(current) != names:
        raise ConfigurationError(f"{path}: checkpoint tensors do not match the module")
    state, offset = {}, 0
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        if offset + n > flat.size:
            raise ConfigurationError(f"{path}: truncated checkpoint")
        ref = current[name]
        state[name] = torch.from_numpy(flat[offset:offset + n].copy()).reshape(shape).to(ref.dtype)
        offset += n
    module.load_state_dict(state)
    return header["meta"]
