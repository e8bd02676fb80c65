"""Scenario configuration: versioned JSON schema and the five study presets.

Preset 1 is the baseline: 2 Hz cycle, no clustering, full amplitude, dry
hand. The others override single aspects (faster cycle, clustering,
reduced amplitude, moistened hand). `moistened` is inert metadata so
condition files stay faithful; no wetting physics is simulated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .acoustics import TransducerArray, grid_array
from .fish import Aquarium, FishConfig
from .geometry import HandModel, HandPose, Vec3
from .stm import StmParams

SCHEMA_VERSION = 1

# overrides relative to the baseline parameter set (preset 1)
PRESET_OVERRIDES: dict[int, dict] = {
    1: {},
    2: {"stm_frequency": 10.0},
    3: {"stm_frequency": 10.0, "clustering_enabled": True},
    4: {"amplitude_scale": 0.75},
    5: {"moistened": True},
}

BASELINE = {
    "stm_frequency": 2.0,
    "clustering_enabled": False,
    "amplitude_scale": 1.0,
    "moistened": False,
}


class ScenarioError(ValueError):
    pass


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FishSection(_Model):
    count: int = Field(50, ge=0)
    max_speed: float = Field(80.0, gt=0)
    max_turn_rate: float = Field(math.pi, gt=0)
    nibble_distance: float = Field(5.0, gt=0)
    hand_threshold: int = Field(200, ge=0)
    tick_rate: float = Field(60.0, gt=0)
    nibble_dwell_s: float = Field(2.0, gt=0)
    retreat_s: float = Field(1.0, gt=0)


class AquariumSection(_Model):
    min: tuple[float, float, float] = (-200.0, -150.0, 50.0)
    max: tuple[float, float, float] = (200.0, 150.0, 350.0)


class HandScriptEntry(_Model):
    t: float = Field(ge=0)
    kind: Literal["flat-palm", "index-finger", "ellipsoid-blob", "absent"]
    position: tuple[float, float, float] = (0.0, 0.0, 200.0)
    yaw: float = 0.0


class StmSection(_Model):
    frequency: float = Field(2.0, gt=0)
    amplitude_scale: float = Field(1.0, gt=0, le=1.0)
    control_rate: float = Field(1000.0, gt=0)
    max_phase_step: float = Field(math.pi / 8, gt=0)


class ClusteringSection(_Model):
    enabled: bool = False
    distance: float = Field(8.0, ge=0)


class ArraySection(_Model):
    grid: tuple[int, int] = (16, 16)
    pitch: float = Field(10.0, gt=0)
    carrier_frequency: float = Field(40_000.0, gt=0)
    sound_speed: float = Field(340_000.0, gt=0)


class ScenarioModel(_Model):
    version: Literal[1]
    name: str = "scenario"
    seed: int = 0
    duration_s: float = Field(90.0, gt=0)
    fish: FishSection = FishSection()
    aquarium: AquariumSection = AquariumSection()
    hand: Union[Literal["live"], list[HandScriptEntry]] = "live"
    hand_samples: int = Field(5000, ge=1)
    stm: StmSection = StmSection()
    clustering: ClusteringSection = ClusteringSection()
    array: ArraySection = ArraySection()
    moistened: bool = False

    @model_validator(mode="after")
    def _feasibility(self) -> "ScenarioModel":
        # every fish could nibble at once; the cycle needs >= 2 control
        # ticks per point even then
        needed = 2.0 * self.stm.frequency * max(self.fish.count, 1)
        if self.stm.control_rate < needed:
            raise ValueError(
                f"control_rate {self.stm.control_rate} Hz cannot schedule "
                f"{self.fish.count} points at {self.stm.frequency} Hz "
                f"(needs >= {needed} Hz)"
            )
        if isinstance(self.hand, list):
            ts = [e.t for e in self.hand]
            if ts != sorted(ts):
                raise ValueError("hand script entries must be time-ordered")
        return self


@dataclass(frozen=True)
class RenderParams:
    """Runtime-switchable rendering parameters (the study's dimensions)."""

    stm_frequency: float
    clustering_enabled: bool
    cluster_distance: float
    amplitude_scale: float
    moistened: bool
    preset_id: Optional[int] = None


@dataclass(frozen=True)
class Scenario:
    model: ScenarioModel

    @property
    def name(self) -> str:
        return self.model.name

    @property
    def seed(self) -> int:
        return self.model.seed

    @property
    def duration_s(self) -> float:
        return self.model.duration_s

    def fish_config(self) -> FishConfig:
        f = self.model.fish
        return FishConfig(
            fish_count=f.count,
            max_speed=f.max_speed,
            max_turn_rate=f.max_turn_rate,
            nibble_distance=f.nibble_distance,
            hand_threshold=f.hand_threshold,
            tick_rate=f.tick_rate,
            nibble_dwell_s=f.nibble_dwell_s,
            retreat_s=f.retreat_s,
        )

    def aquarium(self) -> Aquarium:
        a = self.model.aquarium
        return Aquarium(Vec3(*a.min), Vec3(*a.max))

    def array(self) -> TransducerArray:
        a = self.model.array
        return grid_array(
            a.grid[0],
            a.grid[1],
            a.pitch,
            carrier_frequency=a.carrier_frequency,
            sound_speed=a.sound_speed,
        )

    def initial_params(self) -> RenderParams:
        return RenderParams(
            stm_frequency=self.model.stm.frequency,
            clustering_enabled=self.model.clustering.enabled,
            cluster_distance=self.model.clustering.distance,
            amplitude_scale=self.model.stm.amplitude_scale,
            moistened=self.model.moistened,
        )

    def stm_params(self, render: RenderParams) -> StmParams:
        return StmParams(
            stm_frequency=render.stm_frequency,
            amplitude_scale=render.amplitude_scale,
            control_rate=self.model.stm.control_rate,
            max_phase_step=self.model.stm.max_phase_step,
        )

    def hand_model_at(self, t_s: float) -> Optional[HandModel]:
        """Scripted hand pose active at time t, or None when absent/live."""
        script = self.model.hand
        if script == "live":
            return None
        active: Optional[HandScriptEntry] = None
        for entry in script:
            if entry.t <= t_s:
                active = entry
            else:
                break
        if active is None or active.kind == "absent":
            return None
        return HandModel(
            kind=active.kind,
            pose=HandPose(Vec3(*active.position), active.yaw),
            sample_count=self.model.hand_samples,
            seed=self.seed,
        )

    def is_live(self) -> bool:
        return self.model.hand == "live"


def apply_preset(params: RenderParams, preset_id: int) -> RenderParams:
    """Reset to the baseline, then apply the preset's overrides."""
    if preset_id not in PRESET_OVERRIDES:
        raise ScenarioError(f"unknown preset id {preset_id} (valid: 1-5)")
    merged = dict(BASELINE)
    merged.update(PRESET_OVERRIDES[preset_id])
    return RenderParams(
        stm_frequency=merged["stm_frequency"],
        clustering_enabled=merged["clustering_enabled"],
        cluster_distance=params.cluster_distance,
        amplitude_scale=merged["amplitude_scale"],
        moistened=merged["moistened"],
        preset_id=preset_id,
    )


def preset_path(name: str) -> Optional[Path]:
    """Resolve a bare preset name against the packaged scenario files."""
    stem = name[:-5] if name.endswith(".json") else name
    candidate = resources.files("fishhaptics") / "scenarios" / f"{stem}.json"
    try:
        if candidate.is_file():
            return Path(str(candidate))
    except (OSError, TypeError):
        pass
    return None


def load_scenario(path_or_name) -> Scenario:
    """Load and validate a scenario file (path, or packaged preset name)."""
    path = Path(path_or_name)
    if not path.exists():
        packaged = preset_path(str(path_or_name))
        if packaged is None:
            raise ScenarioError(f"scenario file not found: {path_or_name}")
        path = packaged
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON: {exc}") from exc
    try:
        model = ScenarioModel.model_validate(raw)
    except ValidationError as exc:
        locs = "; ".join(
            "/".join(str(p) for p in err["loc"]) + ": " + err["msg"]
            for err in exc.errors()
        )
        raise ScenarioError(f"{path}: {locs}") from exc
    return Scenario(model)


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(
        json.dumps(scenario.model.model_dump(), indent=2) + "\n", encoding="utf-8"
    )
