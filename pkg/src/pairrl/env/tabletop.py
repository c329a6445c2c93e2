"""Pick-and-place dynamics, rewards and episode resets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from pairrl.env.config import DISCRETE_ACTIONS, EnvConfig, deg2rad
from pairrl.env.render import Renderer
from pairrl.env.state import Entity, Gripper, Observation, SceneState
from pairrl.errors import ContractError, ScenarioError
from pairrl.splits import ORIENTATIONS, ScenarioSpec, validate_scenario

REWARD_SUCCESS = 1.0
REWARD_GRASP = 0.1
REWARD_STREAK = 0.1


def inner_grid(cfg: EnvConfig) -> list[tuple[float, float]]:
    """The ``grid_points x grid_points`` training placement lattice."""
    cx, cy = cfg.workspace_center
    h = cfg.inner_half_edge
    ticks = [-h + i * cfg.grid_spacing for i in range(cfg.grid_points)]
    return [(round(cx + u, 10), round(cy + v, 10)) for v in ticks for u in ticks]


def border_ring(cfg: EnvConfig) -> list[tuple[float, float]]:
    """Perimeter points of the enlarged square, at the training lattice spacing."""
    cx, cy = cfg.workspace_center
    h = cfg.outer_half_edge
    k = int(round(2 * h / cfg.grid_spacing))
    ticks = [-h + i * (2 * h / k) for i in range(k + 1)]
    pts = []
    for v in ticks:
        for u in ticks:
            if abs(abs(u) - h) < 1e-9 or abs(abs(v) - h) < 1e-9:
                pts.append((round(cx + u, 10), round(cy + v, 10)))
    return pts


def _choose(rng: np.random.Generator, pool, k: int) -> list:
    pool = list(pool)
    if k > len(pool):
        raise ScenarioError(f"need {k} distinct draws from a pool of {len(pool)}")
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in idx]


def reset_scene(cfg: EnvConfig, spec: ScenarioSpec, rng: np.random.Generator) -> SceneState:
    splits = cfg.splits
    validate_scenario(spec, splits)
    texture = int(spec.texture_pool[rng.integers(len(spec.texture_pool))])
    lighting_id = int(spec.lighting_pool[rng.integers(len(spec.lighting_pool))])
    angle = deg2rad(float(spec.camera_angle_deg[rng.integers(len(spec.camera_angle_deg))]))

    train_cats = [c for c in spec.category_pool if c in set(splits.category_train)]
    n = spec.n_distractors
    if spec.scenario_kind == "clutter_ood":
        n_eval = n // 2
        chosen = _choose(rng, train_cats, 1 + n - n_eval)
        held = _choose(rng, [c for c in spec.category_pool if c in set(splits.category_eval)], n_eval)
        target_cat, dcats = chosen[0], chosen[1:] + held
    else:
        chosen = _choose(rng, train_cats, 1 + n)
        target_cat, dcats = chosen[0], chosen[1:]

    cells = inner_grid(cfg)
    if spec.pose_region == "border":
        tpos = border_ring(cfg)[rng.integers(len(border_ring(cfg)))]
        if 1 + n > len(cells):
            raise ScenarioError(f"{1 + n} entities do not fit on {len(cells)} grid cells")
        rest = _choose(rng, cells, 1 + n)
    else:
        if 2 + n > len(cells):
            raise ScenarioError(f"{2 + n} entities do not fit on {len(cells)} grid cells")
        picks = _choose(rng, cells, 2 + n)
        tpos, rest = picks[0], picks[1:]
    recep, dpos = rest[0], rest[1:]
    thetas = rng.integers(len(ORIENTATIONS), size=1 + n)

    target = Entity(tpos[0], tpos[1], ORIENTATIONS[thetas[0]], int(target_cat))
    distractors = tuple(Entity(p[0], p[1], ORIENTATIONS[t], int(c)) for p, t, c in zip(dpos, thetas[1:], dcats))
    return SceneState(
        gripper=Gripper(cfg.home[0], cfg.home[1]),
        target=target,
        distractors=distractors,
        receptacle=recep,
        texture_id=texture,
        lighting=splits.lighting(lighting_id),
        camera_angle=angle,
    )


def parse_action(cfg: EnvConfig, action) -> tuple[float, float, bool | None]:
    """Map a raw action to ``(dx, dy, grip_command)``; ``None`` keeps the grip as is."""
    if cfg.action_head == "discrete":
        if isinstance(action, np.ndarray):
            if action.size != 1:
                raise ContractError("discrete action must be a single index")
            action = action.reshape(-1)[0]
        if isinstance(action, (float, np.floating)) and float(action) != int(action):
            raise ContractError(f"discrete action {action!r} is not an integer")
        try:
            idx = int(action)
        except (TypeError, ValueError) as exc:
            raise ContractError(f"discrete action {action!r} is not an integer") from exc
        if not 0 <= idx < len(DISCRETE_ACTIONS):
            raise ContractError(f"discrete action {idx} out of range")
        d = cfg.max_delta
        return [(d, 0.0, None), (-d, 0.0, None), (0.0, d, None), (0.0, -d, None),
                (0.0, 0.0, True), (0.0, 0.0, False)][idx]
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ContractError(f"continuous action must be 3 finite reals, got {action!r}")
    d = cfg.max_delta
    return float(np.clip(a[0], -d, d)), float(np.clip(a[1], -d, d)), bool(a[2] > 0)


def _nearest_graspable(cfg: EnvConfig, state: SceneState) -> int | None:
    gx, gy = state.gripper.x, state.gripper.y
    best, best_d = None, math.inf
    for i, o in enumerate(state.objects):
        d = math.hypot(o.x - gx, o.y - gy)
        if d <= cfg.grasp_radius and d < best_d:  # strict: ties keep the lowest id
            best, best_d = i, d
    return best


def step_scene(cfg: EnvConfig, state: SceneState, action) -> tuple[SceneState, float, bool, dict[str, Any]]:
    """Pure transition: the same ``(state, action)`` always yields the same result."""
    if state.succeeded or state.step_count >= cfg.horizon:
        raise ContractError("step called on a terminal state")
    dx, dy, grip = parse_action(cfg, action)
    g = state.gripper
    x_lo, x_hi, y_lo, y_hi = cfg.reach_bounds()
    nx = float(np.clip(g.x + dx, x_lo, x_hi))
    ny = float(np.clip(g.y + dy, y_lo, y_hi))
    s = replace(state, gripper=replace(g, x=nx, y=ny))
    if g.grasped_id is not None:
        o = s.entity(g.grasped_id)
        s = s.with_entity(g.grasped_id, replace(o, x=nx, y=ny))

    reward = 0.0
    events: list[str] = []
    if grip is True:
        if s.gripper.grasped_id is None:
            hit = _nearest_graspable(cfg, s)
            s = replace(s, gripper=replace(s.gripper, closed=True, grasped_id=hit))
            if hit is not None:
                o = s.entity(hit)
                s = s.with_entity(hit, replace(o, x=nx, y=ny))
                events.append(f"grasp:{hit}")
                if hit == 0 and not s.grasp_reward_given:
                    reward += REWARD_GRASP
                    s = replace(s, grasp_reward_given=True)
        else:
            s = replace(s, gripper=replace(s.gripper, closed=True))
    elif grip is False:
        held = s.gripper.grasped_id
        s = replace(s, gripper=replace(s.gripper, closed=False, grasped_id=None))
        if held is not None:
            events.append(f"release:{held}")
            t = s.target
            if held == 0 and math.hypot(t.x - s.receptacle[0], t.y - s.receptacle[1]) <= cfg.place_radius:
                reward += REWARD_SUCCESS
                s = replace(s, succeeded=True)
                events.append("success")

    streak = s.grasp_streak + 1 if s.gripper.grasped_id == 0 else 0
    s = replace(s, grasp_streak=streak, step_count=s.step_count + 1)
    if streak >= cfg.grasp_streak_k and not s.streak_reward_given:
        reward += REWARD_STREAK
        s = replace(s, streak_reward_given=True)
    done = s.succeeded or s.step_count >= cfg.horizon
    return s, reward, done, {"success": s.succeeded, "events": events}


class TabletopEnv:
    """One environment instance with its own RNG stream ``(seed, index)``."""

    def __init__(self, cfg: EnvConfig, spec: ScenarioSpec, seed: int = 0, index: int = 0,
                 renderer: Renderer | None = None):
        validate_scenario(spec, cfg.splits)
        self.cfg = cfg
        self.spec = spec
        self.rng = np.random.default_rng([seed, index])
        self.renderer = renderer or Renderer(cfg)
        self.state: SceneState | None = None
        self.episode_return = 0.0

    def reset(self) -> Observation:
        self.state = reset_scene(self.cfg, self.spec, self.rng)
        self.episode_return = 0.0
        return self.renderer.render(self.state)

    def step(self, action) -> tuple[Observation, float, bool, dict[str, Any]]:
        if self.state is None:
            raise ContractError("reset before step")
        self.state, reward, done, info = step_scene(self.cfg, self.state, action)
        self.episode_return += reward
        return self.renderer.render(self.state), reward, done, info

    def render(self, state: SceneState | None = None) -> Observation:
        return self.renderer.render(state if state is not None else self.state)

    def segmentation_mask(self, state: SceneState | None = None) -> np.ndarray:
        return self.renderer.segmentation_mask(state if state is not None else self.state)

    def render_background(self, texture_id: int, lighting, camera_angle: float = 0.0) -> np.ndarray:
        return self.renderer.render_background(texture_id, lighting, camera_angle)


def log_record(state: SceneState, action, reward: float, done: bool, **extra) -> str:
    """One JSON Lines record of an episode step."""
    act = action.tolist() if isinstance(action, np.ndarray) else action
    rec = {"state": state.digest(), "step": state.step_count, "action": act,
           "reward": round(float(reward), 6), "done": bool(done)}
    rec.update(extra)
    return json.dumps(rec, sort_keys=True)
