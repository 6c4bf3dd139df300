import torch
from typing import Dict, List


class GradNormMonitor:
    """Records per-parameter gradient norms via autograd hooks.

    The latest norms are attached to NumericError diagnostics when a loss or
    gradient turns non-finite; their total is logged at DEBUG level after each step.
    """
    def __init__(self, *modules: torch.nn.Module, prefix: str = ""):
        """Initializes the monitor.

        Args:
            modules: Networks to watch.
            prefix: Prepended to parameter names (e.g. ``critic.``).
        """
        self.modules = modules
        self.prefix = prefix
        self._handles: List[torch.utils.hooks.RemovableHandle] = []
        self.latest_norms: Dict[str, float] = {}

    def _hook(self, name: str):
        def fn(grad):
            self.latest_norms[name] = float(grad.detach().norm())
        return fn

    def install(self) -> "GradNormMonitor":
        """Installs the gradient hooks."""
        for i, m in enumerate(self.modules):
            for n, p in m.named_parameters():
                if p.requires_grad:
                    key = f"{self.prefix}{i}.{n}" if len(self.modules) > 1 else f"{self.prefix}{n}"
                    self._handles.append(p.register_hook(self._hook(key)))
        return self

    def snapshot(self) -> Dict[str, float]:
        """Returns a copy of the most recent norm of every watched parameter."""
        return dict(sorted(self.latest_norms.items()))

    def total_norm(self) -> float:
        return float(sum(v * v for v in self.latest_norms.values()) ** 0.5)

    def remove(self):
        """Removes the installed hooks."""
        for h in self._handles:
            h.remove()
        self._handles.clear()
