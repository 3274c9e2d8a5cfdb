"""Adam optimizer with bias correction, deterministic by construction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OptimError(RuntimeError):
    """Raised on non-finite gradients, naming the offending parameter."""


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus the step count."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One Adam update over a name->array parameter dict, in place.

    ``grads`` maps the same names to same-shape gradient arrays. Zero
    gradients leave parameters untouched while still advancing the step.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise OptimError(
                f"adam_step: gradient shape {g.shape} != parameter shape "
                f"{p.shape} for '{name}'"
            )
        if not np.isfinite(g).all():
            raise OptimError(f"adam_step: non-finite gradient for '{name}'")
        m = state.first_moment.setdefault(name, np.zeros_like(p))
        v = state.second_moment.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    """Module-facing wrapper binding adam_step to named parameters."""

    def __init__(self, named_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self._params = dict(named_params)  # name -> Tensor
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def step(self):
        arrays = {name: p.data for name, p in self._params.items()}
        grads = {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self._params.items()
        }
        adam_step(arrays, grads, self.state)

    def state_arrays(self, prefix="adam"):
        """Flat name->array view of the moments, for checkpointing."""
        out = {}
        for name, m in self.state.first_moment.items():
            out[f"{prefix}.m.{name}"] = m
        for name, v in self.state.second_moment.items():
            out[f"{prefix}.v.{name}"] = v
        return out

    def load_state_arrays(self, arrays, step, prefix="adam"):
        self.state.step = int(step)
        for name in self._params:
            mkey, vkey = f"{prefix}.m.{name}", f"{prefix}.v.{name}"
            if mkey in arrays:
                self.state.first_moment[name] = np.array(arrays[mkey])
                self.state.second_moment[name] = np.array(arrays[vkey])
