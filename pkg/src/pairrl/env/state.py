from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from pairrl.splits import LightingConfig


@dataclass(frozen=True)
class Entity:
    """A graspable object: position, orientation (radians) and category id."""

    x: float
    y: float
    theta: float
    category: int


@dataclass(frozen=True)
class Gripper:
    x: float
    y: float
    closed: bool = False
    grasped_id: Optional[int] = None  # 0 = target, k >= 1 = distractor k-1


@dataclass(frozen=True)
class SceneState:
    gripper: Gripper
    target: Entity
    distractors: tuple[Entity, ...]
    receptacle: tuple[float, float]
    texture_id: int
    lighting: LightingConfig
    camera_angle: float
    step_count: int = 0
    grasp_streak: int = 0
    grasp_reward_given: bool = False
    streak_reward_given: bool = False
    succeeded: bool = False

    def entity(self, idx: int) -> Entity:
        return self.target if idx == 0 else self.distractors[idx - 1]

    @property
    def objects(self) -> tuple[Entity, ...]:
        return (self.target,) + self.distractors

    def with_entity(self, idx: int, ent: Entity) -> "SceneState":
        if idx == 0:
            return replace(self, target=ent)
        ds = list(self.distractors)
        ds[idx - 1] = ent
        return replace(self, distractors=tuple(ds))

    def digest(self) -> str:
        """Short stable hash of the full state, for episode logs."""
        return hashlib.sha1(repr(self).encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Observation:
    grid: np.ndarray         # (C, H, W) float32
    proprio: np.ndarray      # (3,) gripper x, y, grip bit
    instruction: np.ndarray  # (n_categories,) one-hot

    def __post_init__(self):
        for arr in (self.grid, self.proprio, self.instruction):
            arr.flags.writeable = False

    def with_grid(self, grid: np.ndarray) -> "Observation":
        return Observation(np.ascontiguousarray(grid, dtype=np.float32), self.proprio, self.instruction)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.grid.reshape(-1), self.proprio, self.instruction])

    def equals(self, other: "Observation") -> bool:
        return (np.array_equal(self.grid, other.grid) and np.array_equal(self.proprio, other.proprio)
                and np.array_equal(self.instruction, other.instruction))
