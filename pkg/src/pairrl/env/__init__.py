"""Deterministic 2-D tabletop pick-and-place simulator."""

from pairrl.env.config import DISCRETE_ACTIONS, EnvConfig, deg2rad
from pairrl.env.render import Renderer
from pairrl.env.state import Entity, Gripper, Observation, SceneState
from pairrl.env.tabletop import (
    TabletopEnv,
    border_ring,
    inner_grid,
    log_record,
    parse_action,
    reset_scene,
    step_scene,
)

__all__ = [
    "DISCRETE_ACTIONS", "EnvConfig", "Entity", "Gripper", "Observation", "Renderer", "SceneState",
    "TabletopEnv", "border_ring", "deg2rad", "inner_grid", "log_record", "parse_action", "reset_scene",
    "step_scene",
]
