"""Adam optimizer over engine tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor

__all__ = ["AdamState", "adam_step", "OptimizerError", "zero_grads"]


class OptimizerError(RuntimeError):
    """Raised when an update cannot be applied (non-finite gradients...)."""


@dataclass
class AdamState:
    """First/second-moment accumulators plus hyperparameters.

    Defaults follow the standard Adam recipe: beta1=0.9, beta2=0.999,
    eps=1e-8, with bias-corrected moment estimates.
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None


def adam_step(params: list[Tensor], grads: list[np.ndarray | None],
              state: AdamState) -> list[Tensor]:
    """Apply one bias-corrected Adam update in place.

    ``grads`` aligns with ``params``; a None gradient is treated as zero
    (the parameter still advances its moment decay). Raises
    ``OptimizerError`` on non-finite gradients, naming the parameter.
    """
    if len(params) != len(grads):
        raise OptimizerError(
            f"got {len(params)} params but {len(grads)} gradients")
    # validate everything first so a bad gradient cannot half-apply a step
    checked = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise OptimizerError(
                f"gradient shape {g.shape} does not match parameter "
                f"{p.name or i} of shape {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise OptimizerError(
                f"non-finite gradient for parameter {p.name or i}")
        checked.append((p, g))

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t

    for p, g in checked:
        key = id(p)
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[key] = m
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)
    return params
