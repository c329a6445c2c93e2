"""Adam with bias correction over autodiff leaves."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from pairrl.autodiff.tensor import Tensor
from pairrl.errors import ContractError, DimensionError


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: list[float]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float | Sequence[float], **kw) -> "AdamState":
        lrs = [float(lr)] * len(params) if np.isscalar(lr) else [float(x) for x in lr]
        if len(lrs) != len(params):
            raise DimensionError("one learning rate per parameter expected")
        if any(x <= 0 for x in lrs):
            raise ContractError("learning rate must be positive")
        return cls(m=[np.zeros(p.shape, dtype=p.dtype) for p in params],
                   v=[np.zeros(p.shape, dtype=p.dtype) for p in params],
                   lr=lrs, **kw)


def adam_step(params: Sequence[Tensor], grads, state: AdamState, step: int | None = None):
    """One in-place Adam update. ``grads`` is a list aligned with ``params`` or a map keyed by them.

    Passing an explicit ``step`` that does not advance the counter is a
    contract error (replaying the same step twice).
    """
    if isinstance(grads, Mapping):
        grads = [grads[p] for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise DimensionError("params, grads and optimizer state must align")
    if step is None:
        step = state.step + 1
    elif step <= state.step:
        raise ContractError(f"Adam step counter must increase (have {state.step}, got {step})")
    if any(lr <= 0 for lr in state.lr):
        raise ContractError("learning rate must be positive")
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=p.dtype)
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * state.m[i] + (1 - b1) * g
        v = b2 * state.v[i] + (1 - b2) * g * g
        state.m[i], state.v[i] = m, v
        update = state.lr[i] * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.set_data(p.data - update)
    state.step = step
    return params, state
