"""normalization.py

Observation normalization shared by policy, critics and discriminator.

Modes: ``none`` (identity), ``fixed`` (demonstration statistics), ``online``
(running population statistics over every agent observation seen so far).
With the absorbing state on, only the raw coordinates are normalized; the
absorbing bit passes through and absorbing rows stay all-zero.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from ail_bench.demos import STD_FLOOR, NormStats
from ail_bench.errors import ConfigurationError

MODES = ("none", "fixed", "online")


class ObsNormalizer:
    """Normalizes observations of width ``obs_dim`` (+1 when ``absorbing``)."""

    def __init__(self, mode: str, obs_dim: int, stats: Optional[NormStats] = None, absorbing: bool = False):
        if mode not in MODES:
            raise ConfigurationError(f"unknown obs normalization {mode!r}; valid: {MODES}")
        if mode == "fixed" and stats is None:
            raise ConfigurationError("fixed obs normalization needs demonstration statistics")
        self.mode = mode
        self.obs_dim = obs_dim
        self.absorbing = absorbing
        self.stats = stats
        self.count = 0
        self.mean = np.zeros(obs_dim)
        self._m2 = np.zeros(obs_dim)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self._m2 / self.count) if self.count else np.ones(self.obs_dim)

    def observe(self, raw_obs: np.ndarray) -> None:
        """Folds raw (pre-normalization, no absorbing bit) observations into the running stats."""
        if self.mode != "online":
            return
        x = np.asarray(raw_obs, dtype=np.float64).reshape(-1, self.obs_dim)
        n_b = x.shape[0]
        if n_b == 0:
            return
        mean_b = x.mean(axis=0)
        m2_b = ((x - mean_b) ** 2).sum(axis=0)
        n = self.count + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * n_b / n
        self._m2 = self._m2 + m2_b + delta ** 2 * self.count * n_b / n
        self.count = n

    def _apply(self, raw: np.ndarray) -> np.ndarray:
        if self.mode == "none":
            return raw
        if self.mode == "fixed":
            return self.stats.normalize(raw)
        return (raw - self.mean) / np.maximum(self.std, STD_FLOOR)

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if not self.absorbing:
            return self._apply(obs)
        raw, bit = obs[..., :-1], obs[..., -1:]
        out = self._apply(raw) * (bit < 0.5)
        return np.concatenate([out, bit], axis=-1)

    __call__ = normalize


def normalize_obs(obs: np.ndarray, mode: str, stats: Optional[NormStats] = None) -> np.ndarray:
    """Stateless form for ``none``/``fixed`` modes."""
    if mode == "online":
        raise ConfigurationError("online normalization is stateful; use ObsNormalizer")
    return ObsNormalizer(mode, np.asarray(obs).shape[-1], stats).normalize(obs)
