"""Evaluation suite and experiment drivers.

Evaluation is greedy (argmax / Gaussian mean). Every function here is a pure
function of its inputs and seed, so serialized outputs are byte-identical
across repeated runs.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from pairrl.env import EnvConfig, Renderer, TabletopEnv
from pairrl.errors import ConfigError, ContractError
from pairrl.policy import Policy, mode
from pairrl.ppo import TrainConfig, TrainResult, sig6, train
from pairrl.splits import CLUTTER_LEVELS, ScenarioSpec, SplitTables, scenario

log = logging.getLogger(__name__)

AXES = ("texture", "lighting", "pose", "clutter")
ALPHA_GRID = (0.0, 1.0, 2.0, 4.0)
VIEWPOINT_GRID = (0, 4, 8, 12, 16, 20, 24, 28)
DEFAULT_EPISODES = 128


def evaluate(policy: Policy, env_cfg: EnvConfig, spec: ScenarioSpec, n_episodes: int = DEFAULT_EPISODES,
             seed: int = 0, renderer: Renderer | None = None) -> float:
    """Fraction of ``n_episodes`` greedy episodes that end in success.

    Episodes run in lock-step as one batch; episode ``i`` draws its scene from
    the stream ``(seed, i)`` so rates are comparable across checkpoints.
    """
    if n_episodes < 1:
        raise ContractError("n_episodes must be >= 1")
    if policy.obs_dim != env_cfg.obs_dim or policy.action_dim != env_cfg.action_dim:
        raise ContractError("checkpoint does not match the environment configuration")
    renderer = renderer or Renderer(env_cfg)
    envs = [TabletopEnv(env_cfg, spec, seed=seed, index=i, renderer=renderer) for i in range(n_episodes)]
    obs = [env.reset() for env in envs]
    active = list(range(n_episodes))
    success = np.zeros(n_episodes, bool)
    while active:
        x = np.stack([obs[i].flat() for i in active])
        actions = mode(policy.forward(x).dist)
        still = []
        for row, i in enumerate(active):
            obs[i], _, done, info = envs[i].step(actions[row])
            if done:
                success[i] = info["success"]
            else:
                still.append(i)
        active = still
    return float(success.mean())


def evaluate_many(policy: Policy, env_cfg: EnvConfig, specs: dict[str, ScenarioSpec],
                  n_episodes: int = DEFAULT_EPISODES, seed: int = 0) -> dict[str, float]:
    renderer = Renderer(env_cfg)
    return {k: evaluate(policy, env_cfg, s, n_episodes, seed, renderer) for k, s in specs.items()}


# -- OOD suite -------------------------------------------------------------------

def suite_scenarios(splits: SplitTables) -> dict[str, ScenarioSpec]:
    specs = {
        "texture": scenario("texture_ood", splits),
        "lighting": scenario("lighting_ood", splits),
        "pose": scenario("pose_ood", splits),
    }
    for n in CLUTTER_LEVELS:
        specs[f"clutter_{n}"] = scenario("clutter_ood", splits, n_distractors=n)
    return specs


def _aggregate(cells: dict[str, float]) -> dict:
    clutter = {str(n): cells[f"clutter_{n}"] for n in CLUTTER_LEVELS}
    clutter["mean"] = float(np.mean([cells[f"clutter_{n}"] for n in CLUTTER_LEVELS]))
    axes = {"texture": cells["texture"], "lighting": cells["lighting"], "pose": cells["pose"], "clutter": clutter}
    return {"axes": axes, "avg": float(np.mean([axis_value(axes, a) for a in AXES]))}


def axis_value(axes: dict, axis: str) -> float:
    v = axes[axis]
    return v["mean"] if isinstance(v, dict) else v


def _round_report(obj):
    if isinstance(obj, float):
        return sig6(obj)
    if isinstance(obj, dict):
        return {k: _round_report(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round_report(v) for v in obj]
    return obj


@dataclass
class EvalReport:
    """Mean-over-seeds suite results with the per-seed reports retained."""

    axes: dict
    avg: float
    per_seed: list[dict] = field(default_factory=list)
    baseline_ref: str | None = None
    delta_avg: float | None = None

    def axis(self, name: str) -> float:
        return axis_value(self.axes, name)

    def with_baseline(self, baseline: "EvalReport", ref: str) -> "EvalReport":
        return EvalReport(self.axes, self.avg, self.per_seed, ref, self.avg - baseline.avg)

    def to_json(self) -> dict:
        return _round_report({"axes": self.axes, "avg": self.avg, "per_seed": self.per_seed,
                              "baseline_ref": self.baseline_ref, "delta_avg": self.delta_avg})

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(d["axes"], d["avg"], d.get("per_seed", []), d.get("baseline_ref"), d.get("delta_avg"))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EvalReport":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def table_row(self, name: str) -> str:
        cells = [f"{100 * self.axis(a):6.1f}" for a in AXES] + [f"{100 * self.avg:6.1f}"]
        delta = "     -" if self.delta_avg is None else f"{100 * self.delta_avg:+6.1f}"
        return f"{name:<12}" + " ".join(cells) + " " + delta


TABLE_HEADER = f"{'method':<12}{'Texture':>6} {'Light':>6} {'Pose':>6} {'Clutter':>6} {'Avg.':>6} {'ΔAvg.':>6}"


def combine_reports(per_seed: Sequence[dict]) -> EvalReport:
    """Mean over per-seed ``{axes, avg}`` dicts."""
    if not per_seed:
        raise ContractError("need at least one per-seed report")
    mean = lambda f: float(np.mean([f(r) for r in per_seed]))
    axes: dict = {a: mean(lambda r, a=a: r["axes"][a]) for a in ("texture", "lighting", "pose")}
    axes["clutter"] = {str(n): mean(lambda r, n=n: r["axes"]["clutter"][str(n)]) for n in CLUTTER_LEVELS}
    axes["clutter"]["mean"] = float(np.mean([axes["clutter"][str(n)] for n in CLUTTER_LEVELS]))
    avg = float(np.mean([axis_value(axes, a) for a in AXES]))
    return EvalReport(axes, avg, [dict(r) for r in per_seed])


def suite_single(policy: Policy, env_cfg: EnvConfig, n_episodes: int = DEFAULT_EPISODES,
                 seed: int = 0) -> dict:
    cells = evaluate_many(policy, env_cfg, suite_scenarios(env_cfg.splits), n_episodes, seed)
    return {"seed": seed, **_aggregate(cells)}


def run_ood_suite(policies: Sequence[Policy] | Policy, env_cfg: EnvConfig, seeds: Sequence[int] = (0,),
                  n_episodes: int = DEFAULT_EPISODES) -> EvalReport:
    """One checkpoint per seed (or a single checkpoint evaluated under every seed)."""
    if not seeds:
        raise ContractError("need at least one seed")
    if isinstance(policies, Policy):
        policies = [policies] * len(seeds)
    if len(policies) != len(seeds):
        raise ContractError("one checkpoint per seed expected")
    return combine_reports([suite_single(p, env_cfg, n_episodes, s) for p, s in zip(policies, seeds)])


# -- experiment drivers ------------------------------------------------------------

TrainFn = Callable[[TrainConfig], TrainResult]


def _default_train(cfg: TrainConfig) -> TrainResult:
    return train(cfg)


def run_alpha_sweep(cfg: TrainConfig, alphas: Iterable[float] = ALPHA_GRID, seeds: Sequence[int] = (0, 1, 2),
                    n_episodes: int = DEFAULT_EPISODES, train_fn: TrainFn = _default_train) -> dict[float, EvalReport]:
    """One run per (alpha, seed) with beta forced to 0; reports carry delta vs alpha=0 when present."""
    reports: dict[float, EvalReport] = {}
    for a in alphas:
        if a < 0:
            raise ConfigError("alpha must be non-negative")
        runs = [train_fn(cfg.replace(alpha=float(a), beta=0.0, seed=s)) for s in seeds]
        reports[float(a)] = run_ood_suite([r.policy for r in runs], runs[0].env_cfg, seeds, n_episodes)
    if 0.0 in reports:
        base = reports[0.0]
        reports = {a: r.with_baseline(base, "alpha=0") for a, r in reports.items()}
    return reports


def alpha_sweep_rows(reports: dict[float, EvalReport]) -> list[dict]:
    """Long-form plot data: one row per (alpha, axis, seed)."""
    rows = []
    for a, rep in reports.items():
        for r in rep.per_seed:
            for axis in AXES + ("avg",):
                v = r["avg"] if axis == "avg" else axis_value(r["axes"], axis)
                rows.append({"alpha": a, "axis": axis, "success": sig6(v), "seed": r["seed"]})
    return rows


def clutter_curve(policies_by_method: dict[str, Sequence[Policy]], env_cfg: EnvConfig,
                  seeds: Sequence[int] = (0, 1, 2), levels: Sequence[int] = CLUTTER_LEVELS,
                  n_episodes: int = DEFAULT_EPISODES) -> list[dict]:
    """Success against distractor count per method, mean and std over seeds."""
    rows = []
    renderer = Renderer(env_cfg)
    for method, pols in policies_by_method.items():
        if len(pols) != len(seeds):
            raise ContractError(f"{method}: one checkpoint per seed expected")
        for n in levels:
            spec = scenario("clutter_ood", env_cfg.splits, n_distractors=n)
            vals = [evaluate(p, env_cfg, spec, n_episodes, s, renderer) for p, s in zip(pols, seeds)]
            rows.append(curve_row(method, n, vals))
    return rows


run_clutter_curve = clutter_curve


def curve_row(method: str, x, values: Sequence[float]) -> dict:
    return {"method": method, "x": x, "mean": float(np.mean(values)), "std": float(np.std(values)),
            "seed_values": [float(v) for v in values]}


def viewpoint_curve(policies: Sequence[Policy], env_cfg: EnvConfig, method: str,
                    seeds: Sequence[int] = (0, 1, 2), angles: Sequence[int] = VIEWPOINT_GRID,
                    n_episodes: int = DEFAULT_EPISODES) -> list[dict]:
    rows = []
    renderer = Renderer(env_cfg)
    for ang in angles:
        spec = scenario("camera", env_cfg.splits, camera_deg=(float(ang),))
        vals = [evaluate(p, env_cfg, spec, n_episodes, s, renderer) for p, s in zip(policies, seeds)]
        rows.append(curve_row(method, ang, vals))
    return rows


def viewpoint_summary(rows: Sequence[dict], env_cfg: EnvConfig) -> dict[str, float]:
    """ID mean over the training angles and OOD mean over the held-out angles."""
    by_x = {float(r["x"]): r["mean"] for r in rows}
    id_angles = [float(a) for a in env_cfg.splits.camera_train]
    ood_angles = [float(a) for a in env_cfg.splits.camera_eval]
    return {"id_mean": float(np.mean([by_x[a] for a in id_angles])),
            "ood_mean": float(np.mean([by_x[a] for a in ood_angles]))}


def run_viewpoint_extrapolation(cfg: TrainConfig, seeds: Sequence[int] = (0, 1, 2),
                                n_episodes: int = DEFAULT_EPISODES, train_fn: TrainFn = _default_train) -> dict:
    """Viewpoint-mode training against a PPO baseline, both on the training camera range."""
    base_cfg = viewpoint_train_config(cfg)
    out = {"rows": [], "summary": {}}
    for method, c in (("ppo", base_cfg.replace(alpha=0.0, beta=0.0)), ("viewpoint", base_cfg)):
        runs = [train_fn(c.replace(seed=s)) for s in seeds]
        rows = viewpoint_curve([r.policy for r in runs], runs[0].env_cfg, method, seeds, n_episodes=n_episodes)
        out["rows"] += rows
        out["summary"][method] = viewpoint_summary(rows, runs[0].env_cfg)
    return out


def viewpoint_train_config(cfg: TrainConfig) -> TrainConfig:
    angles = cfg.env_config().splits.camera_train
    return cfg.replace(view_mode="viewpoint", camera_angles_deg=tuple(float(a) for a in angles))


# -- serialization -------------------------------------------------------------------

CURVE_COLUMNS = ("method", "x", "mean", "std", "seed_values")


def curve_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in rows:
        w.writerow([r["method"], r["x"], f"{r['mean']:.6g}", f"{r['std']:.6g}",
                    ";".join(f"{v:.6g}" for v in r["seed_values"])])
    return buf.getvalue()


def long_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def write_text(path: str | os.PathLike, text: str) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")
