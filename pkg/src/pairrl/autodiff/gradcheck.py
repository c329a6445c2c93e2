"""Central-difference gradient verification."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from pairrl.autodiff.tensor import Tensor, backward, no_grad
from pairrl.errors import ContractError


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max over all entries of ``|analytic - numeric| / max(1, |analytic|)``.

    ``f`` closes over ``params`` and returns a scalar tensor. Use float64
    parameters; float32 central differences are too coarse for tight checks.
    """
    if h <= 0:
        raise ContractError("perturbation h must be positive")
    params = list(params)
    analytic = backward(f(), params)
    worst = 0.0
    for p in params:
        base = p.data
        work = base.copy()
        flat = work.reshape(-1)
        a = analytic[p].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            p.data = work
            with no_grad():
                fp = float(np.sum(f().data, dtype=np.float64))
            flat[i] = orig - h
            with no_grad():
                fm = float(np.sum(f().data, dtype=np.float64))
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            worst = max(worst, abs(float(a[i]) - num) / max(1.0, abs(float(a[i]))))
        p.data = base
    return worst
