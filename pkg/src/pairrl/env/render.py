"""Rasterisation of scene states into feature grids.

Each entity is a disc of radius ``blob_radius_cells`` cells: a cell is covered
when its centre lies within that radius of the entity's projected position.
No anti-aliasing, so masks and composites are exact selections.
"""

from __future__ import annotations

import math

import numpy as np

from pairrl.env.config import (
    CH_CATEGORY,
    CH_GRIPPER,
    CH_OBJECTS,
    CH_RECEPTACLE,
    CH_TEXTURE,
    EMBED_DIM,
    N_TEXTURE_CH,
    EnvConfig,
)
from pairrl.env.state import Observation, SceneState
from pairrl.splits import LightingConfig

_N_WAVES = 5


def category_embeddings(n: int, seed: int, dim: int = EMBED_DIM, iters: int = 400) -> np.ndarray:
    """``n`` well-spread pseudo-random unit vectors (seeded, then repelled on the sphere)."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(iters):
        diff = v[:, None, :] - v[None, :, :]
        d2 = (diff ** 2).sum(-1) + np.eye(n)
        force = (diff / d2[..., None] ** 2).sum(1)
        v = v + 0.01 * force
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def texture_params(n_textures: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed + 1)
    shape = (n_textures, N_TEXTURE_CH, _N_WAVES)
    freq = rng.uniform(8.0, 30.0, size=shape)
    ang = rng.uniform(0.0, 2 * math.pi, size=shape)
    return {
        "kx": freq * np.cos(ang),
        "ky": freq * np.sin(ang),
        "phase": rng.uniform(0.0, 2 * math.pi, size=shape),
        "amp": rng.uniform(0.5, 1.0, size=shape),
        "base": rng.uniform(0.25, 0.75, size=(n_textures, N_TEXTURE_CH)),
        "depth": rng.uniform(0.1, 0.25, size=(n_textures, N_TEXTURE_CH)),
    }


class Renderer:
    """Deterministic rasteriser bound to one :class:`EnvConfig`."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        n = cfg.grid_size
        cs = cfg.cell_size
        coords = (np.arange(n) + 0.5) * cs - cfg.view_half_extent
        # column index follows +x, row index follows +y (view frame)
        self.vx = np.broadcast_to(coords[None, :], (n, n)).astype(np.float64)
        self.vy = np.broadcast_to(coords[:, None], (n, n)).astype(np.float64)
        self.r2 = (cfg.blob_radius_cells * cs) ** 2 * (1 + 1e-9)
        self.embeddings = category_embeddings(cfg.n_categories, cfg.appearance_seed).astype(np.float32)
        self.textures = texture_params(cfg.splits.n_textures, cfg.appearance_seed)
        self._tex_cache: dict[tuple[int, float], np.ndarray] = {}

    # -- geometry -------------------------------------------------------------
    def origin(self, state: SceneState) -> tuple[float, float]:
        """Table point at the centre of the view for ``state``."""
        if self.cfg.camera_frame == "gripper":
            return state.gripper.x, state.gripper.y
        return self.cfg.view_center

    def project(self, x: float, y: float, angle: float,
                origin: tuple[float, float] | None = None) -> tuple[float, float]:
        cx, cy = self.cfg.view_center if origin is None else origin
        dx, dy = x - cx, y - cy
        c, s = math.cos(angle), math.sin(angle)
        return c * dx - s * dy, s * dx + c * dy

    def dist2(self, x: float, y: float, angle: float, origin=None) -> np.ndarray:
        px, py = self.project(x, y, angle, origin)
        return (self.vx - px) ** 2 + (self.vy - py) ** 2

    def footprint(self, x: float, y: float, angle: float, origin=None) -> np.ndarray:
        return self.dist2(x, y, angle, origin) <= self.r2

    # -- appearance -------------------------------------------------------------
    def texture(self, texture_id: int, angle: float, origin: tuple[float, float] | None = None) -> np.ndarray:
        """Texture channels as seen from ``origin``; the pattern is fixed to the table."""
        cx, cy = self.cfg.view_center if origin is None else (float(origin[0]), float(origin[1]))
        key = (int(texture_id), float(angle), cx, cy)
        tex = self._tex_cache.get(key)
        if tex is not None:
            return tex
        c, s = math.cos(angle), math.sin(angle)
        # inverse camera rotation: view-frame cell centre -> table point
        px = cx + c * self.vx + s * self.vy
        py = cy - s * self.vx + c * self.vy
        p = self.textures
        phase = (p["kx"][texture_id][..., None, None] * px + p["ky"][texture_id][..., None, None] * py
                 + p["phase"][texture_id][..., None, None])
        amp = p["amp"][texture_id][..., None, None]
        wave = (amp * np.sin(phase)).sum(1) / amp.sum(1)
        tex = (p["base"][texture_id][:, None, None] + p["depth"][texture_id][:, None, None] * wave)
        tex = tex.astype(np.float32)
        tex.flags.writeable = False
        if len(self._tex_cache) > 4096:
            self._tex_cache.clear()
        self._tex_cache[key] = tex
        return tex

    @staticmethod
    def apply_lighting(grid: np.ndarray, lit: np.ndarray, lighting: LightingConfig) -> np.ndarray:
        if lighting.is_identity:
            return grid
        gain = np.asarray(lighting.gain, dtype=np.float32)[:, None, None]
        bias = np.asarray(lighting.bias, dtype=np.float32)[:, None, None]
        return (gain * grid + bias * lit).astype(np.float32)

    # -- public -------------------------------------------------------------------
    def render_grid(self, state: SceneState) -> np.ndarray:
        cfg = self.cfg
        n = cfg.grid_size
        a = state.camera_angle
        o = self.origin(state)
        grid = np.zeros((cfg.n_channels, n, n), dtype=np.float32)
        lit = np.zeros((cfg.n_channels, n, n), dtype=bool)

        g = self.footprint(state.gripper.x, state.gripper.y, a, o)
        grid[CH_GRIPPER][g] = 1.0
        lit[CH_GRIPPER] = g

        objs = state.objects
        d2 = np.stack([self.dist2(e.x, e.y, a, o) for e in objs])
        d2 = np.where(d2 <= self.r2, d2, np.inf)
        covered = np.isfinite(d2).any(0)
        # nearest covering object owns the cell; argmin breaks ties by lowest id
        owner = d2.argmin(0)
        cats = np.array([e.category for e in objs])
        emb = self.embeddings[cats[owner]]                     # (n, n, EMBED_DIM)
        grid[CH_OBJECTS][covered] = 1.0
        grid[CH_CATEGORY] = np.where(covered, np.moveaxis(emb, -1, 0), 0.0)
        lit[CH_OBJECTS] = covered
        lit[CH_CATEGORY] = covered

        r = self.footprint(state.receptacle[0], state.receptacle[1], a, o)
        grid[CH_RECEPTACLE][r] = 1.0
        lit[CH_RECEPTACLE] = r

        grid[CH_TEXTURE] = self.texture(state.texture_id, a, o)
        lit[CH_TEXTURE] = True
        return self.apply_lighting(grid, lit, state.lighting)

    def render(self, state: SceneState) -> Observation:
        proprio = np.array([state.gripper.x, state.gripper.y, float(state.gripper.closed)], dtype=np.float32)
        instr = np.zeros(self.cfg.n_categories, dtype=np.float32)
        instr[state.target.category] = 1.0
        return Observation(self.render_grid(state), proprio, instr)

    def segmentation_mask(self, state: SceneState) -> np.ndarray:
        """Cells covered by the gripper, the target or the receptacle."""
        a, o = state.camera_angle, self.origin(state)
        return (self.footprint(state.gripper.x, state.gripper.y, a, o)
                | self.footprint(state.target.x, state.target.y, a, o)
                | self.footprint(state.receptacle[0], state.receptacle[1], a, o))

    def render_background(self, texture_id: int, lighting: LightingConfig, camera_angle: float,
                          origin: tuple[float, float] | None = None) -> np.ndarray:
        """Scene with every object invisible: only the texture channels are non-zero.

        ``origin`` defaults to ``view_center``, the view from the home pose.
        """
        n = self.cfg.grid_size
        grid = np.zeros((self.cfg.n_channels, n, n), dtype=np.float32)
        lit = np.zeros_like(grid, dtype=bool)
        grid[CH_TEXTURE] = self.texture(texture_id, camera_angle, origin)
        lit[CH_TEXTURE] = True
        return self.apply_lighting(grid, lit, lighting)
