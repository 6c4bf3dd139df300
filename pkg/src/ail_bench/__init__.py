"""ail-bench: an adversarial imitation learning workbench.

Built-in tasks, demonstration tooling, four RL learners, a configurable
discriminator, the AIL training loop, sweeps and their analysis.
"""
from ail_bench.config import ChoiceConfig, resolve_config
from ail_bench.errors import AilBenchError, ConfigurationError, DemoFormatError, NumericError, RunError
from ail_bench.run_log import RunRecord
from ail_bench.trainer import AilTrainer, train

__version__ = "0.1.0"

__all__ = [
    "AilBenchError",
    "AilTrainer",
    "ChoiceConfig",
    "ConfigurationError",
    "DemoFormatError",
    "NumericError",
    "RunError",
    "RunRecord",
    "resolve_config",
    "train",
]
