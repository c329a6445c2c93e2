import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairrl.env import EnvConfig, Entity, Gripper, Renderer, SceneState
from pairrl.env.config import CH_CATEGORY, CH_OBJECTS, CH_RECEPTACLE, CH_TEXTURE
from pairrl.errors import ConfigError, ContractError, DimensionError
from pairrl.splits import LightingConfig
from pairrl.views import (
    PoseNoise,
    SnapshotBank,
    ViewBuilder,
    build_snapshot_bank,
    composite,
    make_altering_view,
    make_preserving_view,
    make_preserving_view_viewpoint,
    perturb_target,
    sample_viewpoint_offset,
)


@pytest.fixture(scope="module")
def cfg():
    return EnvConfig()


@pytest.fixture(scope="module")
def renderer(cfg):
    return Renderer(cfg)


@pytest.fixture(scope="module")
def bank(renderer):
    return build_snapshot_bank(renderer, 16, np.random.default_rng(0))


def scene(distractors=((-0.17, 0.09, 4), (-0.47, 0.15, 5)), texture=2, angle=0.0, grasped=None):
    g = Gripper(-0.32, 0.0, closed=grasped is not None, grasped_id=grasped)
    tx, ty = (-0.32, 0.0) if grasped == 0 else (-0.23, 0.03)
    return SceneState(gripper=g, target=Entity(tx, ty, 0.0, 3),
                      distractors=tuple(Entity(x, y, 0.0, c) for x, y, c in distractors),
                      receptacle=(-0.41, -0.09), texture_id=texture, lighting=LightingConfig.identity(),
                      camera_angle=angle)


# -- snapshot bank -----------------------------------------------------------------

def test_bank_single_snapshot(renderer):
    b = build_snapshot_bank(renderer, 1, np.random.default_rng(0), texture_pool=[0])
    assert len(b) == 1 and b.provenance[0][0] == 0
    assert np.all(b.snapshots[0][:CH_TEXTURE.start] == 0)


def test_bank_sixteen_distinct(bank):
    assert len(bank) == 16
    assert sorted(t for t, _ in bank.provenance) == list(range(16))
    pats = [s[CH_TEXTURE].tobytes() for s in bank.snapshots]
    assert len(set(pats)) == 16


def test_bank_rejects_eval_texture(renderer):
    with pytest.raises(ConfigError):
        build_snapshot_bank(renderer, 2, np.random.default_rng(0), texture_pool=[0, 17])


def test_bank_rejects_empty_pool(renderer):
    with pytest.raises(ConfigError):
        build_snapshot_bank(renderer, 2, np.random.default_rng(0), texture_pool=[])
    with pytest.raises(ConfigError):
        SnapshotBank((), ())


def test_bank_deterministic(renderer):
    a = build_snapshot_bank(renderer, 5, np.random.default_rng(9))
    b = build_snapshot_bank(renderer, 5, np.random.default_rng(9))
    assert a.provenance == b.provenance


# -- compositing -----------------------------------------------------------------------

def select_oracle(grid, mask, bg):
    out = np.empty_like(grid)
    c, h, w = grid.shape
    for k in range(c):
        for i in range(h):
            for j in range(w):
                out[k, i, j] = grid[k, i, j] if mask[i, j] else bg[k, i, j]
    return out


def test_composite_matches_per_pixel_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        grid = rng.normal(size=(10, 16, 16)).astype(np.float32)
        bg = rng.normal(size=(10, 16, 16)).astype(np.float32)
        mask = rng.random((16, 16)) < rng.random()
        assert composite(grid, mask, bg).tobytes() == select_oracle(grid, mask, bg).tobytes()


def test_composite_mask_identities():
    rng = np.random.default_rng(6)
    grid = rng.normal(size=(10, 16, 16)).astype(np.float32)
    bg = rng.normal(size=(10, 16, 16)).astype(np.float32)
    assert composite(grid, np.ones((16, 16), bool), bg).tobytes() == grid.tobytes()
    assert composite(grid, np.zeros((16, 16), bool), bg).tobytes() == bg.tobytes()


def test_composite_shape_mismatch():
    with pytest.raises(DimensionError):
        composite(np.zeros((10, 16, 16)), np.ones((8, 8), bool), np.zeros((10, 16, 16)))
    with pytest.raises(DimensionError):
        composite(np.zeros((10, 16, 16)), np.ones((16, 16), bool), np.zeros((9, 16, 16)))


def test_preserving_view_keeps_foreground_and_drops_distractors(renderer, bank):
    s = scene()
    obs = renderer.render(s)
    mask = renderer.segmentation_mask(s)
    view = make_preserving_view(obs, mask, bank, np.random.default_rng(1))
    np.testing.assert_array_equal(view.grid[:, mask], obs.grid[:, mask])
    clean = renderer.render(replace(s, distractors=()))
    np.testing.assert_array_equal(view.grid[:CH_TEXTURE.start, ~mask], clean.grid[:CH_TEXTURE.start, ~mask])
    assert view.proprio.tobytes() == obs.proprio.tobytes()
    assert view.instruction.tobytes() == obs.instruction.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 15), st.integers(0, 2**31 - 1))
def test_preserving_view_background_from_bank(texture, seed):
    cfg = EnvConfig()
    r = Renderer(cfg)
    b = build_snapshot_bank(r, 4, np.random.default_rng(0))
    s = scene(texture=texture)
    obs = r.render(s)
    mask = r.segmentation_mask(s)
    view = make_preserving_view(obs, mask, b, np.random.default_rng(seed))
    k, bg = b.sample(np.random.default_rng(seed))
    np.testing.assert_array_equal(view.grid[:, ~mask], bg[:, ~mask])


# -- viewpoint views -----------------------------------------------------------------------

def test_viewpoint_zero_offset_is_identity(renderer):
    s = scene()
    assert make_preserving_view_viewpoint(s, 0.0, renderer).equals(renderer.render(s))


def test_viewpoint_out_of_range(renderer):
    with pytest.raises(ContractError):
        make_preserving_view_viewpoint(scene(), math.radians(24), renderer)
    with pytest.raises(ContractError):
        make_preserving_view_viewpoint(scene(), math.radians(-4), renderer)


def test_viewpoint_offsets_on_training_grid(renderer, cfg):
    s = scene(angle=math.radians(8))
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(200):
        off = sample_viewpoint_offset(s, cfg, rng)
        seen.add(round(math.degrees(s.camera_angle + off), 6))
    assert seen == {0.0, 4.0, 8.0, 12.0, 16.0, 20.0}


def test_view_construction_leaves_state_untouched(renderer, bank):
    s = scene()
    before = s.digest()
    vb = ViewBuilder(renderer, bank, PoseNoise())
    vb.build(s, renderer.render(s), np.random.default_rng(0))
    ViewBuilder(renderer, None, PoseNoise(), mode="viewpoint").build(s, renderer.render(s), np.random.default_rng(0))
    assert s.digest() == before


# -- altering views -------------------------------------------------------------------------

def test_pose_noise_validation():
    with pytest.raises(ConfigError):
        PoseNoise(translation_std=0.0)


def test_degenerate_noise_reproduces_render(renderer):
    s = scene()
    noise = PoseNoise(translation_std=1e-300, rotation_choices=(0.0,))
    assert make_altering_view(s, noise, renderer, np.random.default_rng(0)).equals(renderer.render(s))


def test_perturbed_target_within_bounds():
    s = replace(scene(), target=Entity(0.99, -0.99, 0.0, 3))
    rng = np.random.default_rng(0)
    noise = PoseNoise(translation_std=0.5)
    xs = np.empty(100_000)
    ys = np.empty(100_000)
    for i in range(100_000):
        m, _ = perturb_target(s, noise, rng)
        xs[i], ys[i] = m.target.x, m.target.y
    assert xs.min() >= -1 and xs.max() <= 1 and ys.min() >= -1 and ys.max() <= 1


def test_altering_view_only_moves_target(renderer):
    s = scene(distractors=((-0.47, 0.15, 5),))
    rng = np.random.default_rng(3)
    for _ in range(20):
        moved, _ = perturb_target(s, PoseNoise(0.02), rng)
        a, b = renderer.render(s).grid, renderer.render(moved).grid
        np.testing.assert_array_equal(a[CH_RECEPTACLE], b[CH_RECEPTACLE])
        old = renderer.footprint(s.target.x, s.target.y, 0.0) | renderer.footprint(moved.target.x, moved.target.y, 0.0)
        np.testing.assert_array_equal(a[CH_OBJECTS][~old], b[CH_OBJECTS][~old])
        np.testing.assert_array_equal(a[CH_CATEGORY][:, ~old], b[CH_CATEGORY][:, ~old])
        assert moved.distractors == s.distractors and moved.receptacle == s.receptacle


def test_held_target_moves_with_gripper():
    s = scene(grasped=0)
    m, delta = perturb_target(s, PoseNoise(), np.random.default_rng(2))
    assert (m.gripper.x, m.gripper.y) == (m.target.x, m.target.y)
    assert m.gripper.grasped_id == 0


def test_paired_views_invariants(renderer, bank):
    s = scene()
    obs = renderer.render(s)
    pv = ViewBuilder(renderer, bank, PoseNoise()).build(s, obs, np.random.default_rng(4))
    for v in (pv.preserving, pv.altering):
        assert v.instruction.tobytes() == obs.instruction.tobytes()
    assert pv.preserving.proprio.tobytes() == obs.proprio.tobytes()
    assert set(pv.provenance) == {"snapshot", "pose_delta"}


def test_view_builder_modes(renderer, bank):
    with pytest.raises(ConfigError):
        ViewBuilder(renderer, bank, PoseNoise(), mode="nope")
    with pytest.raises(ConfigError):
        ViewBuilder(renderer, None, PoseNoise(), mode="composite")
