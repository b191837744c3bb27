"""Bias-corrected Adam over named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(ValueError):
    """Raised when a gradient tensor contains NaN or inf; the step is invalid."""


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, tensors: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t) for k, t in tensors.items()},
            v={k: np.zeros_like(t) for k, t in tensors.items()},
            step=0,
        )


def adam_update(tensors: dict, grads: dict, state: AdamState, lr: float,
                betas=(0.9, 0.999), eps: float = 1e-8) -> tuple[dict, AdamState]:
    """One Adam step; returns updated tensors and state (inputs untouched).

    Tensors with no gradient entry are carried through unchanged. Non-finite
    gradients raise NonFiniteGradientError so the caller can skip and report
    the step.
    """
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    b1, b2 = betas
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name!r}")
    t = state.step + 1
    new_tensors, new_m, new_v = {}, {}, {}
    for name, p in tensors.items():
        g = grads.get(name)
        if g is None:
            new_tensors[name] = p.copy()
            new_m[name] = state.m[name].copy()
            new_v[name] = state.v[name].copy()
            continue
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_tensors[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_tensors, AdamState(m=new_m, v=new_v, step=t)
