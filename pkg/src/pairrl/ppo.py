"""PPO with paired-view invariance and sensitivity objectives.

The minimised objective per minibatch is::

    L = L_ppo + alpha * L_inv + beta * L_sens + vf_coef * L_value - ent_coef * H

with ``L_ppo`` the negated clipped surrogate, ``L_inv`` the mean
``KL(pi(.|o) || sg[pi(.|o_preserving)])`` and ``L_sens`` the negated mean of
``min(c, KL(pi(.|o) || sg[pi(.|o_altering)]))``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from pairrl import autodiff as ad
from pairrl.autodiff import AdamState, Tensor, adam_step, backward, load_checkpoint, save_checkpoint
from pairrl.env import EnvConfig, Renderer, TabletopEnv
from pairrl.env.config import CH_CATEGORY
from pairrl.errors import ConfigError, DimensionError, NumericError
from pairrl.policy import ActionDist, Policy, entropy, kl, log_prob, sample, stop_dist
from pairrl.splits import build_splits, scenario
from pairrl.views import PoseNoise, ViewBuilder, build_snapshot_bank

log = logging.getLogger(__name__)


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream per ``(seed, keys...)``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(keys)))


def sig6(x: float) -> float:
    return float(f"{float(x):.6g}")


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    update_epochs: int = 4
    batch_size: int = 640
    minibatch_size: int = 160
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    alpha: float = 1.0
    beta: float = 0.2
    sens_clip: float = 0.8
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    n_envs: int = 8
    n_steps: int = 80
    train_steps: int = 300
    normalize_adv: bool = True
    max_grad_norm: float | None = 0.5
    seed: int = 0
    head: str = "discrete"
    hidden: int = 128
    log_std_init: float = -3.0
    category_gain: float = 3.0
    instruction_gain: float = 5.0
    grid_size: int = 16
    view_mode: str = "composite"
    view_every: int = 1
    translation_std: float = 0.06
    bank_size: int = 16
    n_distractors: int = 1
    camera_angles_deg: tuple[float, ...] = (0.0,)
    splits_seed: int = 0
    eval_every: int = 0
    eval_episodes: int = 128
    log_wall_time: bool = False

    def __post_init__(self):
        self.camera_angles_deg = tuple(float(a) for a in self.camera_angles_deg)
        self.validate()

    def validate(self) -> None:
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ConfigError("gamma and lambda must lie in (0, 1]")
        if self.clip_eps <= 0 or self.sens_clip <= 0:
            raise ConfigError("clip parameters must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if min(self.actor_lr, self.critic_lr) <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size != self.n_envs * self.n_steps:
            raise ConfigError(f"batch_size {self.batch_size} != n_envs * n_steps "
                              f"({self.n_envs} * {self.n_steps})")
        if self.minibatch_size < 1 or self.batch_size % self.minibatch_size:
            raise ConfigError("minibatch_size must divide batch_size")
        if self.update_epochs < 1 or self.train_steps < 0 or self.view_every < 1:
            raise ConfigError("update_epochs and view_every must be >= 1")
        if self.view_mode not in ("composite", "viewpoint"):
            raise ConfigError(f"unknown view_mode {self.view_mode!r}")
        if self.head not in ("discrete", "continuous"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.category_gain <= 0 or self.instruction_gain <= 0:
            raise ConfigError("input gains must be positive")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["camera_angles_deg"] = list(self.camera_angles_deg)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TrainConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def env_config(self) -> EnvConfig:
        return EnvConfig(grid_size=self.grid_size, action_head=self.head,
                         splits=build_splits(self.splits_seed))


def policy_input_gain(env_cfg: EnvConfig, category_gain: float, instruction_gain: float) -> np.ndarray | None:
    """Per-feature input scale: category-embedding cells and the instruction are amplified."""
    if category_gain == 1.0 and instruction_gain == 1.0:
        return None
    hw = env_cfg.grid_size ** 2
    gain = np.ones(env_cfg.obs_dim, dtype=np.float32)
    gain[CH_CATEGORY.start * hw:CH_CATEGORY.stop * hw] = category_gain
    gain[env_cfg.obs_dim - env_cfg.n_categories:] = instruction_gain
    return gain


def make_policy(cfg: TrainConfig, env_cfg: EnvConfig) -> Policy:
    return Policy(env_cfg.obs_dim, env_cfg.action_dim, head=cfg.head, hidden=cfg.hidden,
                  log_std_init=cfg.log_std_init, seed=int(rng_for(cfg.seed, 0).integers(2 ** 31)),
                  input_gain=policy_input_gain(env_cfg, cfg.category_gain, cfg.instruction_gain))


# -- advantages ------------------------------------------------------------------

def compute_gae(rewards, values, dones, bootstrap_value=None, gamma: float = 0.99,
                lam: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """GAE over the leading (time) axis; trailing axes are independent streams.

    ``values`` either has one extra bootstrap row, or ``bootstrap_value`` is given.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    n = r.shape[0]
    if d.shape != r.shape:
        raise DimensionError("rewards and dones must align")
    if bootstrap_value is None:
        if v.shape[0] != n + 1:
            raise DimensionError("values needs T+1 entries when no bootstrap value is given")
        next_v, v = v[1:], v[:n]
    else:
        if v.shape != r.shape:
            raise DimensionError("values must align with rewards")
        boot = np.broadcast_to(np.asarray(bootstrap_value, dtype=np.float64), r.shape[1:])
        next_v = np.concatenate([v[1:], boot[None]], axis=0)
    adv = np.zeros_like(r)
    last = np.zeros(r.shape[1:])
    for t in range(n - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * next_v[t] * live - v[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
    return adv, adv + v


# -- rollouts -------------------------------------------------------------------

@dataclass
class RolloutBatch:
    obs: np.ndarray
    prev: np.ndarray
    alt: np.ndarray
    has_views: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    bootstrap: np.ndarray
    n_steps: int
    n_envs: int
    episodes: int = 0
    successes: int = 0
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    provenance: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.obs.shape[0]

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0

    def finish(self, gamma: float, lam: float) -> "RolloutBatch":
        shape = (self.n_steps, self.n_envs)
        adv, ret = compute_gae(self.rewards.reshape(shape), self.values.reshape(shape),
                               self.dones.reshape(shape), self.bootstrap, gamma, lam)
        self.advantages, self.returns = adv.reshape(-1), ret.reshape(-1)
        if not np.all(np.isfinite(self.advantages)):
            raise NumericError("non-finite advantages")
        return self

    def minibatch(self, idx: np.ndarray) -> dict[str, np.ndarray]:
        return {k: getattr(self, k)[idx] for k in
                ("obs", "prev", "alt", "has_views", "actions", "logp", "values", "advantages", "returns")}


class Runner:
    """Training environments, their current observations, and the view machinery."""

    def __init__(self, cfg: TrainConfig, env_cfg: EnvConfig):
        self.cfg, self.env_cfg = cfg, env_cfg
        self.renderer = Renderer(env_cfg)
        spec = scenario("train", env_cfg.splits, n_distractors=cfg.n_distractors,
                        camera_deg=cfg.camera_angles_deg)
        self.envs = [TabletopEnv(env_cfg, spec, seed=cfg.seed, index=i, renderer=self.renderer)
                     for i in range(cfg.n_envs)]
        bank = build_snapshot_bank(self.renderer, cfg.bank_size, rng_for(cfg.seed, 1))
        self.views = ViewBuilder(self.renderer, bank, PoseNoise(cfg.translation_std), mode=cfg.view_mode)
        self.view_rngs = [rng_for(cfg.seed, 2, i) for i in range(cfg.n_envs)]
        self.action_rng = rng_for(cfg.seed, 3)
        self.obs = [env.reset() for env in self.envs]
        self.t = 0


def collect_rollouts(policy: Policy, runner: Runner, n_steps: int, keep_provenance: bool = False) -> RolloutBatch:
    """Act for ``n_steps`` in every env with the current (frozen) parameters."""
    cfg = runner.cfg
    n_envs = len(runner.envs)
    dim = policy.obs_dim
    obs = np.zeros((n_steps, n_envs, dim), np.float32)
    prev = np.zeros_like(obs)
    alt = np.zeros_like(obs)
    has_views = np.zeros((n_steps, n_envs), bool)
    if policy.head == "discrete":
        actions = np.zeros((n_steps, n_envs), np.int64)
    else:
        actions = np.zeros((n_steps, n_envs, policy.action_dim), np.float64)
    logp = np.zeros((n_steps, n_envs))
    values = np.zeros((n_steps, n_envs))
    rewards = np.zeros((n_steps, n_envs))
    dones = np.zeros((n_steps, n_envs))
    episodes = successes = 0
    provenance = []
    for t in range(n_steps):
        cur = np.stack([o.flat() for o in runner.obs])
        with ad.no_grad():
            out = policy.forward(cur)
            a = sample(out.dist, runner.action_rng)
            lp = log_prob(out.dist, a).data
        obs[t], actions[t], logp[t], values[t] = cur, a, lp, out.value.data
        build = runner.t % cfg.view_every == 0
        for e, env in enumerate(runner.envs):
            if build:
                pv = runner.views.build(env.state, runner.obs[e], runner.view_rngs[e])
                prev[t, e] = pv.preserving.flat()
                alt[t, e] = pv.altering.flat()
                has_views[t, e] = True
                if keep_provenance:
                    provenance.append(pv.provenance)
            nxt, r, done, info = env.step(a[e])
            rewards[t, e] = r
            dones[t, e] = float(done)
            if done:
                episodes += 1
                successes += int(info["success"])
                nxt = env.reset()
            runner.obs[e] = nxt
        runner.t += 1
    with ad.no_grad():
        bootstrap = policy.forward(np.stack([o.flat() for o in runner.obs])).value.data.astype(np.float64)
    flat = lambda x: x.reshape((n_steps * n_envs,) + x.shape[2:])
    return RolloutBatch(flat(obs), flat(prev), flat(alt), flat(has_views), flat(actions), flat(logp),
                        flat(rewards), flat(values), flat(dones), bootstrap, n_steps, n_envs,
                        episodes, successes, provenance=provenance)


# -- loss terms -------------------------------------------------------------------

def ppo_surrogate(logp_new: Tensor, logp_old: np.ndarray, adv: np.ndarray, eps: float) -> tuple[Tensor, float]:
    """Negated clipped surrogate and the fraction of clipped ratios."""
    log_ratio = ad.sub(logp_new, Tensor(logp_old, dtype=np.float64))
    bad = ~np.isfinite(np.exp(np.clip(log_ratio.data, None, 700)))
    if np.any(bad) or np.any(log_ratio.data > 700):
        idx = int(np.flatnonzero(bad | (log_ratio.data > 700))[0])
        log.error("non-finite importance ratio at minibatch index %d", idx)
        raise NumericError(f"non-finite importance ratio at minibatch index {idx}")
    ratio = ad.exp(log_ratio)
    a = Tensor(adv, dtype=np.float64)
    surr = ad.minimum(ad.mul(ratio, a), ad.mul(ad.clip(ratio, 1 - eps, 1 + eps), a))
    clip_frac = float(np.mean(np.abs(ratio.data - 1.0) > eps))
    return ad.neg(ad.mean(surr)), clip_frac


def invariance_term(dist: ActionDist, dist_view: ActionDist) -> Tensor:
    """Mean ``KL(dist || sg[dist_view])``."""
    return ad.mean(kl(dist, stop_dist(dist_view)))


def sensitivity_term(dist: ActionDist, dist_view: ActionDist, c: float) -> tuple[Tensor, np.ndarray]:
    """``-mean(min(c, KL(dist || sg[dist_view])))`` and the per-sample KL values."""
    d = kl(dist, stop_dist(dist_view))
    return ad.neg(ad.mean(ad.clip_min(d, c))), d.data


def value_term(value: Tensor, old_value: np.ndarray, returns: np.ndarray, eps: float) -> Tensor:
    """Mean of the larger squared error under raw and clipped value predictions."""
    v = ad.astype(value, np.float64) if value.dtype != np.float64 else value
    old = Tensor(old_value, dtype=np.float64)
    ret = Tensor(returns, dtype=np.float64)
    v_clip = ad.add(old, ad.clip(ad.sub(v, old), -eps, eps))
    return ad.mean(ad.maximum(ad.square(ad.sub(v, ret)), ad.square(ad.sub(v_clip, ret))))


def _normalized_adv(mb: dict, cfg: TrainConfig) -> np.ndarray:
    adv = mb["advantages"].astype(np.float64)
    if cfg.normalize_adv and adv.size > 1:
        adv = (adv - adv.mean()) / max(adv.std(), 1e-8)
    return adv


def _view_rows(mb: dict) -> np.ndarray:
    return np.flatnonzero(mb["has_views"])


def _view_dist(policy: Policy, x: np.ndarray) -> ActionDist:
    with ad.no_grad():
        return stop_dist(policy.forward(x).dist)


def ppo_loss(policy: Policy, mb: dict, cfg: TrainConfig) -> Tensor:
    out = policy.forward(mb["obs"])
    return ppo_surrogate(log_prob(out.dist, mb["actions"]), mb["logp"], _normalized_adv(mb, cfg), cfg.clip_eps)[0]


def invariance_loss(policy: Policy, mb: dict) -> Tensor:
    rows = _view_rows(mb)
    dist = policy.forward(mb["obs"][rows]).dist
    return invariance_term(dist, _view_dist(policy, mb["prev"][rows]))


def sensitivity_loss(policy: Policy, mb: dict, c: float) -> Tensor:
    rows = _view_rows(mb)
    dist = policy.forward(mb["obs"][rows]).dist
    return sensitivity_term(dist, _view_dist(policy, mb["alt"][rows]), c)[0]


def value_loss(policy: Policy, mb: dict, cfg: TrainConfig) -> Tensor:
    out = policy.forward(mb["obs"])
    return value_term(out.value, mb["values"], mb["returns"], cfg.clip_eps)


def _rows(dist: ActionDist, rows: np.ndarray, n: int) -> ActionDist:
    from pairrl.policy import take_rows
    return dist if rows.size == n else take_rows(dist, rows)


def view_targets(policy: Policy, mb: dict) -> tuple[ActionDist, ActionDist] | None:
    """Detached action distributions on the preserving and altering views."""
    rows = _view_rows(mb)
    if not rows.size:
        return None
    return _view_dist(policy, mb["prev"][rows]), _view_dist(policy, mb["alt"][rows])


def combined_loss(policy: Policy, mb: dict, cfg: TrainConfig,
                  targets: tuple[ActionDist, ActionDist] | None = None) -> tuple[Tensor, dict[str, float]]:
    """Full objective on one minibatch with a single shared forward pass on the original views.

    ``targets`` pins the stop-gradient branch to precomputed distributions
    (see ``view_targets``); by default it is evaluated from the current parameters.
    """
    out = policy.forward(mb["obs"])
    n = mb["obs"].shape[0]
    l_ppo, clip_frac = ppo_surrogate(log_prob(out.dist, mb["actions"]), mb["logp"],
                                     _normalized_adv(mb, cfg), cfg.clip_eps)
    l_val = value_term(out.value, mb["values"], mb["returns"], cfg.clip_eps)
    ent = ad.mean(entropy(out.dist))
    total = ad.add(ad.add(l_ppo, ad.scale(l_val, cfg.vf_coef)), ad.scale(ent, -cfg.ent_coef))

    stats = {"ppo_loss": float(l_ppo.data), "value_loss": float(l_val.data), "entropy": float(ent.data),
             "clip_frac": clip_frac, "inv_kl_mean": 0.0, "sens_kl_mean": 0.0, "sens_clip_frac": 0.0}
    rows = _view_rows(mb)
    if rows.size:
        dist = _rows(out.dist, rows, n)
        prev_dist, alt_dist = targets if targets is not None else view_targets(policy, mb)
        if cfg.alpha > 0:
            l_inv = invariance_term(dist, prev_dist)
            total = ad.add(total, ad.scale(l_inv, cfg.alpha))
            stats["inv_kl_mean"] = float(l_inv.data)
        else:
            with ad.no_grad():
                stats["inv_kl_mean"] = float(invariance_term(stop_dist(dist), prev_dist).data)
        if cfg.beta > 0:
            l_sens, sens_kl = sensitivity_term(dist, alt_dist, cfg.sens_clip)
            total = ad.add(total, ad.scale(l_sens, cfg.beta))
        else:
            with ad.no_grad():
                _, sens_kl = sensitivity_term(stop_dist(dist), alt_dist, cfg.sens_clip)
        stats["sens_kl_mean"] = float(np.mean(sens_kl))
        stats["sens_clip_frac"] = float(np.mean(sens_kl > cfg.sens_clip))
    return total, stats


# -- training loop ------------------------------------------------------------------

def _clip_grads(grads: list[np.ndarray], max_norm: float | None) -> list[np.ndarray]:
    if max_norm is None:
        return grads
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * g.dtype.type(scale) for g in grads]
    return grads


def make_optimizer(policy: Policy, cfg: TrainConfig) -> AdamState:
    lrs = [cfg.critic_lr if name in policy.critic_names() else cfg.actor_lr for name in policy.params]
    return AdamState.for_params(policy.parameters(), lrs)


def update(policy: Policy, opt: AdamState, batch: RolloutBatch, cfg: TrainConfig,
           rng: np.random.Generator) -> dict[str, float]:
    params = policy.parameters()
    n = len(batch)
    acc: dict[str, list[float]] = {}
    for _ in range(cfg.update_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            mb = batch.minibatch(perm[start:start + cfg.minibatch_size])
            total, stats = combined_loss(policy, mb, cfg)
            grads = backward(total, params)
            adam_step(params, _clip_grads([grads[p] for p in params], cfg.max_grad_norm), opt)
            for k, v in stats.items():
                acc.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in acc.items()}


METRIC_KEYS = ("step", "ppo_loss", "inv_kl_mean", "sens_kl_mean", "sens_clip_frac", "value_loss",
               "entropy", "clip_frac", "rollout_success_rate", "wall_ms")


@dataclass
class TrainResult:
    policy: Policy
    metrics: list[dict]
    evals: list[dict]
    env_cfg: EnvConfig


EvalHook = Callable[[int, Policy], dict]


def train(cfg: TrainConfig, env_cfg: EnvConfig | None = None, out_dir: str | os.PathLike | None = None,
          eval_hook: EvalHook | None = None, progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Run the full loop; with ``out_dir`` writes config.json, metrics.jsonl and final.ckpt."""
    env_cfg = env_cfg or cfg.env_config()
    policy = make_policy(cfg, env_cfg)
    opt = make_optimizer(policy, cfg)
    runner = Runner(cfg, env_cfg)
    mb_rng = rng_for(cfg.seed, 4)
    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")
        metrics_fh = open(out / "metrics.jsonl", "w", encoding="utf-8")
        (out / "evals.jsonl").unlink(missing_ok=True)
    metrics: list[dict] = []
    evals: list[dict] = []
    try:
        for step in range(1, cfg.train_steps + 1):
            t0 = time.perf_counter()
            last_good = policy.state_dict()
            try:
                batch = collect_rollouts(policy, runner, cfg.n_steps).finish(cfg.gamma, cfg.lam)
                stats = update(policy, opt, batch, cfg, mb_rng)
            except NumericError:
                if out is not None:
                    save_checkpoint(out / "last_good.ckpt", last_good)
                raise
            rec = {"step": step, **{k: sig6(stats[k]) for k in METRIC_KEYS[1:-2]},
                   "rollout_success_rate": sig6(batch.success_rate),
                   "wall_ms": round((time.perf_counter() - t0) * 1000, 1) if cfg.log_wall_time else 0}
            metrics.append(rec)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(rec) + "\n")
                metrics_fh.flush()
            if progress is not None:
                progress(rec)
            if eval_hook is not None and cfg.eval_every and step % cfg.eval_every == 0:
                ev = {"step": step, **eval_hook(step, policy)}
                evals.append(ev)
                if out is not None:
                    with open(out / "evals.jsonl", "a", encoding="utf-8") as fh:
                        fh.write(json.dumps(ev) + "\n")
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    if out is not None:
        save_checkpoint(out / "final.ckpt", policy.state_dict())
    return TrainResult(policy, metrics, evals, env_cfg)


def load_policy(path: str | os.PathLike) -> Policy:
    return Policy.from_state_dict(load_checkpoint(path))
