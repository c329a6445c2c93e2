"""Actor-critic MLP over flattened observations, with exact distribution math.

Both heads share a two-layer tanh trunk. Distribution quantities
(log-probabilities, KL, entropy) are evaluated in float64.

An optional fixed ``input_gain`` rescales observation features before the
first layer. It is not trained but travels with the checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pairrl import autodiff as ad
from pairrl.autodiff import Tensor
from pairrl.errors import ContractError, DimensionError, NumericError

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True, eq=False)
class Categorical:
    logits: Tensor  # (B, K)

    @property
    def batch(self) -> int:
        return self.logits.shape[0]


@dataclass(frozen=True, eq=False)
class DiagGaussian:
    mean: Tensor     # (B, d)
    log_std: Tensor  # (B, d) or (d,)

    @property
    def batch(self) -> int:
        return self.mean.shape[0]


ActionDist = Categorical | DiagGaussian


@dataclass(frozen=True, eq=False)
class PolicyOutput:
    dist: ActionDist
    value: Tensor  # (B,)


def _f64(t: Tensor) -> Tensor:
    return t if t.dtype == np.float64 else ad.astype(t, np.float64)


def log_prob(dist: ActionDist, action) -> Tensor:
    """Per-sample log density (Gaussian) or log mass (categorical), shape ``(B,)``."""
    if isinstance(dist, Categorical):
        a = np.asarray(action).reshape(-1)
        k = dist.logits.shape[1]
        if a.shape[0] != dist.batch:
            raise DimensionError("one action per batch row expected")
        if not np.issubdtype(a.dtype, np.integer) or a.min() < 0 or a.max() >= k:
            raise ContractError(f"categorical action outside [0, {k})")
        lp = ad.log_softmax(_f64(dist.logits))
        return lp[np.arange(a.shape[0]), a]
    a = np.asarray(action, dtype=np.float64)
    mean = _f64(dist.mean)
    if a.shape != mean.shape:
        raise DimensionError(f"action shape {a.shape} != distribution shape {mean.shape}")
    log_std = _f64(dist.log_std)
    z = ad.mul(ad.sub(Tensor(a, dtype=np.float64), mean), ad.exp(ad.neg(log_std)))
    per_dim = ad.sub(ad.scale(ad.square(z), -0.5), ad.add(log_std, 0.5 * _LOG_2PI))
    return ad.sum_(per_dim, axis=-1)


def entropy(dist: ActionDist) -> Tensor:
    """Per-sample entropy, shape ``(B,)``."""
    if isinstance(dist, Categorical):
        lp = ad.log_softmax(_f64(dist.logits))
        return ad.neg(ad.sum_(ad.mul(ad.exp(lp), lp), axis=-1))
    log_std = _f64(dist.log_std)
    per_dim = ad.add(log_std, 0.5 * (1.0 + _LOG_2PI))
    if log_std.ndim == 1:
        total = ad.sum_(per_dim)
        return ad.add(Tensor(np.zeros(dist.batch), dtype=np.float64), total)
    return ad.sum_(per_dim, axis=-1)


def kl(p: ActionDist, q: ActionDist) -> Tensor:
    """Closed-form per-sample ``KL(p || q)``, shape ``(B,)``."""
    if type(p) is not type(q):
        raise ContractError("KL between different distribution families")
    if isinstance(p, Categorical):
        if p.logits.shape != q.logits.shape:
            raise DimensionError("categorical KL needs matching shapes")
        lp = ad.log_softmax(_f64(p.logits))
        lq = ad.log_softmax(_f64(q.logits))
        return ad.sum_(ad.mul(ad.exp(lp), ad.sub(lp, lq)), axis=-1)
    if p.mean.shape != q.mean.shape:
        raise DimensionError("Gaussian KL needs matching shapes")
    mp, mq = _f64(p.mean), _f64(q.mean)
    lsp, lsq = _f64(p.log_std), _f64(q.log_std)
    inv_var_q = ad.exp(ad.scale(lsq, -2.0))
    num = ad.add(ad.exp(ad.scale(lsp, 2.0)), ad.square(ad.sub(mp, mq)))
    per_dim = ad.add(ad.sub(lsq, lsp), ad.sub(ad.scale(ad.mul(num, inv_var_q), 0.5), 0.5))
    return ad.sum_(per_dim, axis=-1)


def categorical_kl_probs(p: np.ndarray, q: np.ndarray) -> float:
    """``sum p log(p/q)`` on explicit probability vectors, with ``0 log 0 = 0``."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError("probability vectors differ in length")
    support = p > 0
    if np.any(q[support] == 0):
        raise NumericError("infinite KL: q has zero mass where p does not")
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def sample(dist: ActionDist, rng: np.random.Generator) -> np.ndarray:
    """Ancestral sample per batch row."""
    if isinstance(dist, Categorical):
        logits = dist.logits.data.astype(np.float64)
        z = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(z)
        probs /= probs.sum(axis=1, keepdims=True)
        u = rng.random(probs.shape[0])
        idx = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
        return np.minimum(idx, probs.shape[1] - 1)
    mean = dist.mean.data.astype(np.float64)
    std = np.exp(np.broadcast_to(dist.log_std.data.astype(np.float64), mean.shape))
    return mean + std * rng.standard_normal(mean.shape)


def mode(dist: ActionDist) -> np.ndarray:
    """Deterministic action: argmax for categorical, mean for Gaussian."""
    if isinstance(dist, Categorical):
        return dist.logits.data.argmax(axis=1)
    return dist.mean.data.astype(np.float64)


def _init(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float, dtype) -> np.ndarray:
    return (rng.standard_normal((fan_in, fan_out)) * gain / math.sqrt(fan_in)).astype(dtype)


class Policy:
    """Shared-trunk actor-critic. ``head`` is ``"discrete"`` or ``"continuous"``."""

    TRUNK = ("w1", "b1", "w2", "b2")

    def __init__(self, obs_dim: int, action_dim: int, head: str = "discrete", hidden: int = 128,
                 seed: int = 0, dtype=np.float32, log_std_init: float = -0.5, input_gain=None):
        if head not in ("discrete", "continuous"):
            raise ContractError(f"unknown head {head!r}")
        self.obs_dim, self.action_dim, self.head, self.hidden = obs_dim, action_dim, head, hidden
        self.dtype = np.dtype(dtype)
        self.input_gain = self._check_gain(input_gain)
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {
            "w1": _init(rng, obs_dim, hidden, 1.0, dtype), "b1": np.zeros(hidden, dtype),
            "w2": _init(rng, hidden, hidden, 1.0, dtype), "b2": np.zeros(hidden, dtype),
        }
        if head == "discrete":
            p["w_pi"] = _init(rng, hidden, action_dim, 0.01, dtype)
            p["b_pi"] = np.zeros(action_dim, dtype)
        else:
            p["w_mu"] = _init(rng, hidden, action_dim, 0.01, dtype)
            p["b_mu"] = np.zeros(action_dim, dtype)
            p["log_std"] = np.full(action_dim, log_std_init, dtype)
        p["w_v"] = _init(rng, hidden, 1, 1.0, dtype)
        p["b_v"] = np.zeros(1, dtype)
        self.params: dict[str, Tensor] = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}

    def _check_gain(self, gain) -> np.ndarray | None:
        if gain is None:
            return None
        gain = np.array(gain, dtype=self.dtype).reshape(-1)
        if gain.shape != (self.obs_dim,):
            raise DimensionError(f"input_gain needs {self.obs_dim} entries, got {gain.shape[0]}")
        if not np.all(np.isfinite(gain)):
            raise NumericError("input_gain must be finite")
        gain.flags.writeable = False
        return gain

    # -- parameters -----------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def critic_names(self) -> tuple[str, ...]:
        return ("w_v", "b_v")

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.data.copy() for k, v in self.params.items()}
        if self.input_gain is not None:
            out["input_gain"] = self.input_gain.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        state = dict(state)
        if "input_gain" in state:
            self.input_gain = self._check_gain(state.pop("input_gain"))
        if set(state) != set(self.params):
            raise ContractError(f"parameter names differ: {sorted(set(state) ^ set(self.params))}")
        for k, v in state.items():
            if tuple(v.shape) != self.params[k].shape:
                raise DimensionError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].set_data(np.asarray(v, dtype=self.dtype))

    def copy(self) -> "Policy":
        other = Policy.__new__(Policy)
        other.obs_dim, other.action_dim, other.head, other.hidden = self.obs_dim, self.action_dim, self.head, self.hidden
        other.dtype, other.input_gain = self.dtype, self.input_gain
        other.params = {k: Tensor(v.data, requires_grad=True, name=k) for k, v in self.params.items()}
        return other

    @classmethod
    def from_state_dict(cls, state: dict[str, np.ndarray], dtype=np.float32) -> "Policy":
        head = "discrete" if "w_pi" in state else "continuous"
        w1 = state["w1"]
        action_dim = state["w_pi" if head == "discrete" else "w_mu"].shape[1]
        pol = cls(w1.shape[0], action_dim, head=head, hidden=w1.shape[1], dtype=dtype)
        pol.load_state_dict(state)
        return pol

    # -- forward ---------------------------------------------------------------
    def forward(self, x) -> PolicyOutput:
        """``x``: ``(B, obs_dim)`` flattened observations (array or tensor)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype), dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.obs_dim:
            raise DimensionError(f"observation batch must be (B, {self.obs_dim}), got {x.shape}")
        if self.input_gain is not None:
            x = ad.mul(x, Tensor(self.input_gain.astype(x.dtype), dtype=x.dtype))
        p = self.params
        h = ad.tanh(ad.add(ad.matmul(x, p["w1"]), p["b1"]))
        h = ad.tanh(ad.add(ad.matmul(h, p["w2"]), p["b2"]))
        value = ad.reshape(ad.add(ad.matmul(h, p["w_v"]), p["b_v"]), (-1,))
        if self.head == "discrete":
            dist = Categorical(ad.add(ad.matmul(h, p["w_pi"]), p["b_pi"]))
        else:
            mean = ad.add(ad.matmul(h, p["w_mu"]), p["b_mu"])
            dist = DiagGaussian(mean, ad.clip(p["log_std"], LOG_STD_MIN, LOG_STD_MAX))
        return PolicyOutput(dist, value)

    __call__ = forward


def flatten_obs(observations: Sequence) -> np.ndarray:
    return np.stack([o.flat() for o in observations]).astype(np.float32)


def stop_dist(dist: ActionDist) -> ActionDist:
    """``sg[dist]``: same parameters, no gradient path."""
    if isinstance(dist, Categorical):
        return Categorical(ad.stop_grad(dist.logits))
    return DiagGaussian(ad.stop_grad(dist.mean), ad.stop_grad(dist.log_std))


def take_rows(dist: ActionDist, idx) -> ActionDist:
    if isinstance(dist, Categorical):
        return Categorical(dist.logits[idx])
    ls = dist.log_std if dist.log_std.ndim == 1 else dist.log_std[idx]
    return DiagGaussian(dist.mean[idx], ls)
