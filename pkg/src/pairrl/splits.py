"""Train/eval split tables and scenario specifications.

Every visual factor of the tabletop task has a training pool and a disjoint
held-out pool. A :class:`ScenarioSpec` names the pools one environment draws
from; :func:`scenario` builds the canonical spec for each evaluation kind.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from pairrl.errors import ConfigError, ScenarioError

N_CHANNELS = 10
N_TEXTURES = 21
N_CATEGORIES = 25
ORIENTATIONS = (0.0, math.pi / 4, math.pi / 2, math.pi)
CLUTTER_LEVELS = (2, 4, 6, 8)
CAMERA_TRAIN_DEG = (0, 4, 8, 12, 16, 20)
CAMERA_EVAL_DEG = (24, 28)
SCENARIO_KINDS = ("train", "texture_ood", "lighting_ood", "pose_ood", "clutter_ood", "camera")
POSE_REGIONS = ("inner", "border")


@dataclass(frozen=True)
class LightingConfig:
    """Per-channel affine lighting: ``gain * x + bias`` on lit cells."""

    gain: tuple[float, ...]
    bias: tuple[float, ...]

    def __post_init__(self):
        if len(self.gain) != len(self.bias):
            raise ConfigError("gain and bias must have one entry per channel")
        if any(not 0.3 <= g <= 2.0 for g in self.gain):
            raise ConfigError("lighting gain outside [0.3, 2.0]")
        if any(not -0.3 <= b <= 0.3 for b in self.bias):
            raise ConfigError("lighting bias outside [-0.3, 0.3]")

    @classmethod
    def identity(cls, n_channels: int = N_CHANNELS) -> "LightingConfig":
        return cls(gain=(1.0,) * n_channels, bias=(0.0,) * n_channels)

    @property
    def is_identity(self) -> bool:
        return all(g == 1.0 for g in self.gain) and all(b == 0.0 for b in self.bias)


def _ood_lighting(rng: np.random.Generator, n_channels: int) -> LightingConfig:
    # global brightness kept at least 0.15 away from the training value of 1
    while True:
        brightness = rng.uniform(0.55, 1.6)
        if abs(brightness - 1.0) >= 0.15:
            break
    tint = rng.uniform(0.9, 1.1, size=n_channels)
    gain = np.clip(brightness * tint, 0.3, 2.0)
    bias = np.clip(rng.uniform(-0.15, 0.15) + rng.uniform(-0.05, 0.05, size=n_channels), -0.3, 0.3)
    return LightingConfig(tuple(float(g) for g in gain), tuple(float(b) for b in bias))


@dataclass(frozen=True)
class SplitTables:
    texture_train: tuple[int, ...]
    texture_eval: tuple[int, ...]
    category_train: tuple[int, ...]
    category_eval: tuple[int, ...]
    lighting_train: tuple[int, ...]
    lighting_eval: tuple[int, ...]
    lighting_table: tuple[LightingConfig, ...]
    pose_train: str = "inner"
    pose_eval: str = "border"
    camera_train: tuple[int, ...] = CAMERA_TRAIN_DEG
    camera_eval: tuple[int, ...] = CAMERA_EVAL_DEG
    seed: int = 0

    def __post_init__(self):
        for name in ("texture", "category", "lighting", "camera"):
            tr, ev = getattr(self, f"{name}_train"), getattr(self, f"{name}_eval")
            if set(tr) & set(ev):
                raise ConfigError(f"{name} train/eval splits overlap")
        if self.pose_train == self.pose_eval:
            raise ConfigError("pose train/eval regions must differ")

    def lighting(self, lighting_id: int) -> LightingConfig:
        return self.lighting_table[lighting_id]

    @property
    def n_textures(self) -> int:
        return len(self.texture_train) + len(self.texture_eval)

    @property
    def n_categories(self) -> int:
        return len(self.category_train) + len(self.category_eval)

    def to_json(self) -> dict:
        d = asdict(self)
        d["lighting_table"] = [asdict(lc) for lc in self.lighting_table]
        return d


def build_splits(seed: int = 0, n_channels: int = N_CHANNELS) -> SplitTables:
    """Fixed id ranges per axis; ``seed`` generates the 20 held-out lighting rigs."""
    rng = np.random.default_rng(seed)
    table = [LightingConfig.identity(n_channels)] + [_ood_lighting(rng, n_channels) for _ in range(20)]
    return SplitTables(
        texture_train=tuple(range(16)),
        texture_eval=tuple(range(16, 21)),
        category_train=tuple(range(16)),
        category_eval=tuple(range(16, 25)),
        lighting_train=(0,),
        lighting_eval=tuple(range(1, 21)),
        lighting_table=tuple(table),
        seed=seed,
    )


@dataclass(frozen=True)
class ScenarioSpec:
    """Which pools an episode's visual factors are drawn from.

    For ``clutter_ood`` the category pool holds both training and held-out
    categories; the environment draws the target and half the distractors
    from its training part and the other half from its held-out part.
    """

    scenario_kind: str
    n_distractors: int
    texture_pool: tuple[int, ...]
    category_pool: tuple[int, ...]
    lighting_pool: tuple[int, ...]
    pose_region: str = "inner"
    camera_angle_deg: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        if self.scenario_kind not in SCENARIO_KINDS:
            raise ScenarioError(f"unknown scenario kind {self.scenario_kind!r}")
        if self.pose_region not in POSE_REGIONS:
            raise ScenarioError(f"unknown pose region {self.pose_region!r}")
        if self.n_distractors < 0:
            raise ScenarioError("n_distractors must be >= 0")
        if not (self.texture_pool and self.category_pool and self.lighting_pool and self.camera_angle_deg):
            raise ScenarioError("scenario pools must be non-empty")

    @property
    def name(self) -> str:
        if self.scenario_kind == "clutter_ood":
            return f"clutter_{self.n_distractors}"
        if self.scenario_kind == "camera":
            return "camera_" + "_".join(f"{a:g}" for a in self.camera_angle_deg)
        return self.scenario_kind

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, d: dict) -> "ScenarioSpec":
        angles = d.get("camera_angle_deg", (0.0,))
        if isinstance(angles, (int, float)):
            angles = (angles,)
        return cls(
            scenario_kind=d["scenario_kind"],
            n_distractors=int(d["n_distractors"]),
            texture_pool=tuple(int(t) for t in d["texture_pool"]),
            category_pool=tuple(int(c) for c in d["category_pool"]),
            lighting_pool=tuple(int(x) for x in d["lighting_pool"]),
            pose_region=d.get("pose_region", "inner"),
            camera_angle_deg=tuple(float(a) for a in angles),
        )

    @classmethod
    def loads(cls, s: str) -> "ScenarioSpec":
        return cls.from_json(json.loads(s))


def scenario(kind: str, splits: SplitTables, n_distractors: int | None = None,
             camera_deg: float | tuple[float, ...] | None = None) -> ScenarioSpec:
    """Canonical scenario for ``kind``: training pools except on the shifted axis."""
    if isinstance(camera_deg, (int, float)):
        camera_deg = (float(camera_deg),)
    base = dict(
        scenario_kind=kind,
        n_distractors=1 if n_distractors is None else n_distractors,
        texture_pool=splits.texture_train,
        category_pool=splits.category_train,
        lighting_pool=splits.lighting_train,
        pose_region=splits.pose_train,
        camera_angle_deg=(0.0,),
    )
    if kind == "train":
        if camera_deg is not None:
            base["camera_angle_deg"] = camera_deg
    elif kind == "texture_ood":
        base["texture_pool"] = splits.texture_eval
    elif kind == "lighting_ood":
        base["lighting_pool"] = splits.lighting_eval
    elif kind == "pose_ood":
        base["pose_region"] = splits.pose_eval
    elif kind == "clutter_ood":
        n = 4 if n_distractors is None else n_distractors
        if n < 2:
            raise ScenarioError("clutter scenarios need at least 2 distractors")
        base["n_distractors"] = n
        base["category_pool"] = splits.category_train + splits.category_eval
    elif kind == "camera":
        if camera_deg is None:
            raise ScenarioError("camera scenario needs an angle")
        base["camera_angle_deg"] = tuple(float(a) for a in camera_deg)
    else:
        raise ScenarioError(f"unknown scenario kind {kind!r}")
    return ScenarioSpec(**base)


def validate_scenario(spec: ScenarioSpec, splits: SplitTables) -> None:
    """Pool-membership discipline: raise :class:`ScenarioError` on any violation."""
    tex_all = set(splits.texture_train) | set(splits.texture_eval)
    cat_all = set(splits.category_train) | set(splits.category_eval)
    light_all = set(splits.lighting_train) | set(splits.lighting_eval)
    if not set(spec.texture_pool) <= tex_all:
        raise ScenarioError("texture pool has unknown ids")
    if not set(spec.category_pool) <= cat_all:
        raise ScenarioError("category pool has unknown ids")
    if not set(spec.lighting_pool) <= light_all:
        raise ScenarioError("lighting pool has unknown ids")

    def only_train(pool, train, axis):
        if not set(pool) <= set(train):
            raise ScenarioError(f"{spec.scenario_kind}: {axis} pool must be training-only")

    def only_eval(pool, evals, axis):
        if not set(pool) <= set(evals):
            raise ScenarioError(f"{spec.scenario_kind}: {axis} pool must be held-out-only")

    kind = spec.scenario_kind
    if kind == "texture_ood":
        only_eval(spec.texture_pool, splits.texture_eval, "texture")
    else:
        only_train(spec.texture_pool, splits.texture_train, "texture")
    if kind == "lighting_ood":
        only_eval(spec.lighting_pool, splits.lighting_eval, "lighting")
    else:
        only_train(spec.lighting_pool, splits.lighting_train, "lighting")
    if kind == "pose_ood":
        if spec.pose_region != splits.pose_eval:
            raise ScenarioError("pose_ood must use the held-out pose region")
    elif spec.pose_region != splits.pose_train:
        raise ScenarioError(f"{kind}: pose region must be the training region")
    if kind == "clutter_ood":
        if spec.n_distractors < 2:
            raise ScenarioError("clutter_ood needs at least 2 distractors")
        n_eval = spec.n_distractors // 2
        if len(set(spec.category_pool) & set(splits.category_eval)) < n_eval:
            raise ScenarioError("clutter_ood needs enough held-out categories")
    else:
        only_train(spec.category_pool, splits.category_train, "category")
    if len(set(spec.category_pool) & set(splits.category_train)) < 1 + (spec.n_distractors - spec.n_distractors // 2
                                                                         if kind == "clutter_ood" else spec.n_distractors):
        raise ScenarioError("not enough training categories for target and distractors")
    if kind != "camera":
        only_train([round(a) for a in spec.camera_angle_deg], splits.camera_train, "camera")
