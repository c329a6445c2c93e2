"""Task-preserving and task-altering views of an observation.

* preserving (composite): keep the cells covered by gripper, target and
  receptacle; take every other cell from a pre-rendered object-free
  background snapshot. Distractors disappear and the table texture changes.
* preserving (viewpoint): re-render the same scene from another camera angle.
* altering: move and re-orient the target object, then re-render.

None of the constructors touch the live scene state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from pairrl.env.config import EnvConfig, deg2rad
from pairrl.env.render import Renderer
from pairrl.env.state import Observation, SceneState
from pairrl.errors import ConfigError, ContractError, DimensionError
from pairrl.splits import ORIENTATIONS, LightingConfig


@dataclass(frozen=True, eq=False)
class SnapshotBank:
    snapshots: tuple[np.ndarray, ...]
    provenance: tuple[tuple[int, LightingConfig], ...]

    def __post_init__(self):
        if not self.snapshots:
            raise ConfigError("snapshot bank needs K >= 1")
        for s in self.snapshots:
            s.flags.writeable = False

    def __len__(self) -> int:
        return len(self.snapshots)

    def sample(self, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        k = int(rng.integers(len(self.snapshots)))
        return k, self.snapshots[k]


def build_snapshot_bank(renderer: Renderer, k: int, rng: np.random.Generator,
                        texture_pool=None) -> SnapshotBank:
    """Pre-render ``k`` object-free backgrounds over training textures under training lighting.

    With ``k`` no larger than the pool, textures are drawn without replacement.
    """
    splits = renderer.cfg.splits
    pool = list(splits.texture_train if texture_pool is None else texture_pool)
    if k < 1:
        raise ConfigError("snapshot bank needs K >= 1")
    if not pool:
        raise ConfigError("empty texture pool")
    bad = [t for t in pool if t not in set(splits.texture_train)]
    if bad:
        raise ConfigError(f"snapshot bank is training-only; got held-out textures {bad}")
    idx = rng.choice(len(pool), size=k, replace=k > len(pool))
    lighting = splits.lighting(splits.lighting_train[0])
    textures = [int(pool[i]) for i in idx]
    snaps = tuple(renderer.render_background(t, lighting, 0.0) for t in textures)
    return SnapshotBank(snaps, tuple((t, lighting) for t in textures))


def composite(grid: np.ndarray, mask: np.ndarray, background: np.ndarray) -> np.ndarray:
    """``mask * grid + (1 - mask) * background`` with the mask broadcast over channels."""
    if grid.ndim != 3 or background.shape != grid.shape or mask.shape != grid.shape[1:]:
        raise DimensionError(f"composite shapes: grid {grid.shape}, mask {mask.shape}, "
                             f"background {background.shape}")
    return np.where(mask.astype(bool)[None], grid, background).astype(np.float32)


def make_preserving_view(obs: Observation, mask: np.ndarray, bank: SnapshotBank,
                         rng: np.random.Generator) -> Observation:
    _, bg = bank.sample(rng)
    return obs.with_grid(composite(obs.grid, mask, bg))


def make_preserving_view_viewpoint(state: SceneState, angle_offset: float, renderer: Renderer) -> Observation:
    """Re-render ``state`` with the camera turned by ``angle_offset`` radians."""
    lo, hi = renderer.cfg.camera_range_deg
    new = state.camera_angle + angle_offset
    tol = 1e-9
    if not deg2rad(lo) - tol <= new <= deg2rad(hi) + tol:
        raise ContractError(f"camera angle {math.degrees(new):.3f} deg outside training range [{lo}, {hi}]")
    return renderer.render(replace(state, camera_angle=new))


def sample_viewpoint_offset(state: SceneState, cfg: EnvConfig, rng: np.random.Generator) -> float:
    """Offset (radians) that lands the camera on a uniformly drawn training angle."""
    angles = cfg.splits.camera_train
    target = deg2rad(float(angles[rng.integers(len(angles))]))
    return target - state.camera_angle


@dataclass(frozen=True)
class PoseNoise:
    translation_std: float = 0.06
    rotation_choices: tuple[float, ...] = ORIENTATIONS

    def __post_init__(self):
        if not self.translation_std > 0:
            raise ConfigError("translation_std must be positive")
        if not self.rotation_choices:
            raise ConfigError("rotation_choices must be non-empty")


def perturb_target(state: SceneState, noise: PoseNoise, rng: np.random.Generator) -> tuple[SceneState, tuple]:
    """Copy of ``state`` with a perturbed target pose; a held target moves rigidly with the gripper."""
    dx, dy = rng.normal(0.0, noise.translation_std, size=2)
    theta = noise.rotation_choices[int(rng.integers(len(noise.rotation_choices)))]
    t = state.target
    nx = float(np.clip(t.x + dx, -1.0, 1.0))
    ny = float(np.clip(t.y + dy, -1.0, 1.0))
    moved = replace(state, target=replace(t, x=nx, y=ny, theta=theta))
    if state.gripper.grasped_id == 0:
        moved = replace(moved, gripper=replace(state.gripper, x=nx, y=ny))
    return moved, (nx - t.x, ny - t.y, theta)


def make_altering_view(state: SceneState, noise: PoseNoise, renderer: Renderer,
                       rng: np.random.Generator) -> Observation:
    moved, _ = perturb_target(state, noise, rng)
    return renderer.render(moved)


@dataclass(frozen=True, eq=False)
class PairedViews:
    preserving: Observation
    altering: Observation
    provenance: dict = field(default_factory=dict)


class ViewBuilder:
    """Builds both views for one step; ``mode`` picks composite or viewpoint preserving views."""

    def __init__(self, renderer: Renderer, bank: SnapshotBank | None, noise: PoseNoise,
                 mode: str = "composite"):
        if mode not in ("composite", "viewpoint"):
            raise ConfigError(f"unknown preserving-view mode {mode!r}")
        if mode == "composite" and bank is None:
            raise ConfigError("composite mode needs a snapshot bank")
        self.renderer = renderer
        self.bank = bank
        self.noise = noise
        self.mode = mode

    def build(self, state: SceneState, obs: Observation, rng: np.random.Generator) -> PairedViews:
        if self.mode == "composite":
            k, bg = self.bank.sample(rng)
            mask = self.renderer.segmentation_mask(state)
            preserving = obs.with_grid(composite(obs.grid, mask, bg))
            prov = {"snapshot": k}
        else:
            offset = sample_viewpoint_offset(state, self.renderer.cfg, rng)
            preserving = make_preserving_view_viewpoint(state, offset, self.renderer)
            prov = {"angle_offset_deg": round(math.degrees(offset), 6)}
        moved, delta = perturb_target(state, self.noise, rng)
        altering = self.renderer.render(moved)
        prov["pose_delta"] = [round(float(v), 6) for v in delta]
        return PairedViews(preserving, altering, prov)
