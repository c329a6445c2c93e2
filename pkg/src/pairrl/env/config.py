from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from pairrl.errors import ConfigError
from pairrl.splits import N_CHANNELS, SplitTables, build_splits

# grid channel layout
CH_GRIPPER = 0
CH_OBJECTS = 1
CH_CATEGORY = slice(2, 6)
CH_RECEPTACLE = 6
CH_TEXTURE = slice(7, 10)
EMBED_DIM = 4
N_TEXTURE_CH = 3

DISCRETE_ACTIONS = ("+x", "-x", "+y", "-y", "grasp", "release")


@dataclass(frozen=True)
class EnvConfig:
    """Geometry, rendering and reward constants for the tabletop task.

    Table units: 1 unit = 50 cm, table spans ``[-1, 1]^2``. The camera frames
    a square of half-width ``view_half_extent`` and rotates about its centre.
    With ``camera_frame="gripper"`` that centre follows the gripper (a wrist
    view); with ``"workspace"`` it stays at ``view_center``.
    """

    grid_size: int = 16
    horizon: int = 80
    max_delta: float = 0.1
    grasp_radius: float = 0.08
    place_radius: float = 0.08
    grasp_streak_k: int = 3
    workspace_center: tuple[float, float] = (-0.32, 0.0)
    inner_half_edge: float = 0.15
    outer_half_edge: float = 0.21
    grid_points: int = 6
    view_center: tuple[float, float] = (-0.32, 0.0)
    view_half_extent: float = 0.48
    camera_frame: str = "gripper"
    home: tuple[float, float] = (-0.32, 0.0)
    reach_half_extent: float | None = 0.3  # gripper box around workspace_center; None = whole table
    blob_radius_cells: float = 1.5
    action_head: str = "discrete"
    splits: SplitTables = field(default_factory=build_splits)
    appearance_seed: int = 7

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if min(self.grasp_radius, self.place_radius, self.max_delta) <= 0:
            raise ConfigError("radii and step size must be positive")
        if self.grasp_streak_k < 1:
            raise ConfigError("grasp streak threshold must be >= 1")
        if self.grid_points < 2 or self.grid_size < 2:
            raise ConfigError("grid too small")
        if self.outer_half_edge <= self.inner_half_edge:
            raise ConfigError("pose-OOD square must enclose the training square")
        if self.reach_half_extent is not None and self.reach_half_extent < self.outer_half_edge:
            raise ConfigError("reach box must cover the pose-OOD square")
        if self.action_head not in ("discrete", "continuous"):
            raise ConfigError(f"unknown action head {self.action_head!r}")
        if self.camera_frame not in ("gripper", "workspace"):
            raise ConfigError(f"unknown camera frame {self.camera_frame!r}")

    @property
    def n_channels(self) -> int:
        return N_CHANNELS

    @property
    def n_categories(self) -> int:
        return self.splits.n_categories

    @property
    def cell_size(self) -> float:
        return 2 * self.view_half_extent / self.grid_size

    @property
    def grid_spacing(self) -> float:
        return 2 * self.inner_half_edge / (self.grid_points - 1)

    @property
    def camera_range_deg(self) -> tuple[float, float]:
        return float(min(self.splits.camera_train)), float(max(self.splits.camera_train))

    def reach_bounds(self) -> tuple[float, float, float, float]:
        """``(x_lo, x_hi, y_lo, y_hi)`` the gripper is clipped to."""
        if self.reach_half_extent is None:
            return -1.0, 1.0, -1.0, 1.0
        cx, cy = self.workspace_center
        r = self.reach_half_extent
        return max(-1.0, cx - r), min(1.0, cx + r), max(-1.0, cy - r), min(1.0, cy + r)

    @property
    def obs_dim(self) -> int:
        return self.n_channels * self.grid_size ** 2 + 3 + self.n_categories

    @property
    def action_dim(self) -> int:
        return len(DISCRETE_ACTIONS) if self.action_head == "discrete" else 3

    def to_json(self) -> dict:
        d = asdict(self)
        d["splits"] = {"seed": self.splits.seed}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        splits = build_splits(d.pop("splits", {}).get("seed", 0))
        for key in ("workspace_center", "view_center", "home"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(splits=splits, **d)


def deg2rad(deg: float) -> float:
    return deg * math.pi / 180.0
