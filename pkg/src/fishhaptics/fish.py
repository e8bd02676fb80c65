"""Per-tick fish population simulation.

Fish patrol the aquarium until a hand cloud appears, then chase the nearest
hand point and nibble it once close enough. Motion is forward-only with a
bounded turn rate; everything is deterministic in the world's rng state.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .geometry import PointCloud, SpatialIndex, Vec3, hand_present

_U64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15

# distance at which a patrol waypoint counts as reached
WAYPOINT_REACHED_MM = 20.0
# forward-ray lookahead that triggers wall-avoidance steering
WALL_LOOKAHEAD_MM = 30.0


def _rng_next(state: int) -> tuple[int, float]:
    """Advance a splitmix64 state, returning (new_state, unit float)."""
    state = (state + _GAMMA) & _U64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    z ^= z >> 31
    return state, z / 2.0**64


class FishState(enum.Enum):
    PATROL = "patrol"
    APPROACH = "approach"
    NIBBLE = "nibble"


@dataclass(frozen=True)
class Aquarium:
    """Axis-aligned box, mm."""

    min_corner: Vec3
    max_corner: Vec3

    def __post_init__(self) -> None:
        if not (
            self.min_corner.x < self.max_corner.x
            and self.min_corner.y < self.max_corner.y
            and self.min_corner.z < self.max_corner.z
        ):
            raise ValueError("aquarium must have positive volume")

    @property
    def center(self) -> Vec3:
        return Vec3(
            (self.min_corner.x + self.max_corner.x) / 2.0,
            (self.min_corner.y + self.max_corner.y) / 2.0,
            (self.min_corner.z + self.max_corner.z) / 2.0,
        )

    def contains(self, p: Vec3) -> bool:
        return (
            self.min_corner.x <= p.x <= self.max_corner.x
            and self.min_corner.y <= p.y <= self.max_corner.y
            and self.min_corner.z <= p.z <= self.max_corner.z
        )

    def clamp(self, p: Vec3) -> Vec3:
        return Vec3(
            min(max(p.x, self.min_corner.x), self.max_corner.x),
            min(max(p.y, self.min_corner.y), self.max_corner.y),
            min(max(p.z, self.min_corner.z), self.max_corner.z),
        )


DEFAULT_AQUARIUM = Aquarium(Vec3(-200.0, -150.0, 50.0), Vec3(200.0, 150.0, 350.0))


@dataclass(frozen=True)
class FishConfig:
    fish_count: int = 50
    max_speed: float = 80.0          # mm/s
    max_turn_rate: float = math.pi   # rad/s
    nibble_distance: float = 5.0     # mm
    hand_threshold: int = 200        # points
    tick_rate: float = 60.0          # Hz
    nibble_dwell_s: float = 2.0      # max continuous nibble time
    retreat_s: float = 1.0           # post-nibble retreat time

    def __post_init__(self) -> None:
        if self.fish_count < 0:
            raise ValueError("fish_count must be >= 0")
        for name in ("max_speed", "max_turn_rate", "nibble_distance", "tick_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hand_threshold < 0:
            raise ValueError("hand_threshold must be >= 0")


@dataclass(frozen=True)
class Fish:
    id: int
    position: Vec3
    heading: Vec3          # unit
    speed: float           # mm/s
    state: FishState = FishState.PATROL
    target: Optional[Vec3] = None
    patrol_waypoint: Vec3 = Vec3(0.0, 0.0, 0.0)
    nibble_ticks: int = 0
    retreat_ticks: int = 0


@dataclass(frozen=True)
class ContactEvent:
    tick: int
    fish_id: int
    kind: str              # nibble-start | nibble-active | nibble-end
    position: Vec3


@dataclass(frozen=True)
class ContactPoint:
    position: Vec3
    fish_id: int
    tick: int


@dataclass(frozen=True)
class WorldState:
    fish: tuple[Fish, ...]
    aquarium: Aquarium
    tick: int
    rng_state: int
    config: FishConfig


def _sample_point(state: int, box: Aquarium, margin: float) -> tuple[int, Vec3]:
    lo, hi = box.min_corner, box.max_corner
    margin = min(margin, (hi.x - lo.x) / 4.0, (hi.y - lo.y) / 4.0, (hi.z - lo.z) / 4.0)
    state, ux = _rng_next(state)
    state, uy = _rng_next(state)
    state, uz = _rng_next(state)
    return state, Vec3(
        lo.x + margin + ux * (hi.x - lo.x - 2 * margin),
        lo.y + margin + uy * (hi.y - lo.y - 2 * margin),
        lo.z + margin + uz * (hi.z - lo.z - 2 * margin),
    )


def _sample_heading(state: int) -> tuple[int, Vec3]:
    state, u = _rng_next(state)
    state, v = _rng_next(state)
    z = 2.0 * u - 1.0
    r = math.sqrt(max(0.0, 1.0 - z * z))
    phi = 2.0 * math.pi * v
    return state, Vec3(r * math.cos(phi), r * math.sin(phi), z)


def spawn(config: FishConfig, aquarium: Aquarium = DEFAULT_AQUARIUM, seed: int = 0) -> WorldState:
    """Seeded initial population, everyone patrolling."""
    state = seed & _U64
    fish = []
    margin = 20.0
    for i in range(config.fish_count):
        state, pos = _sample_point(state, aquarium, margin)
        state, heading = _sample_heading(state)
        state, u = _rng_next(state)
        speed = (0.5 + 0.5 * u) * config.max_speed
        state, waypoint = _sample_point(state, aquarium, margin)
        fish.append(Fish(i, pos, heading, speed, FishState.PATROL, None, waypoint))
    return WorldState(tuple(fish), aquarium, 0, state, config)


def _rotate_toward(heading: Vec3, desired: Vec3, max_angle: float) -> Vec3:
    """Rotate `heading` toward unit vector `desired` by at most `max_angle`."""
    dot = max(-1.0, min(1.0, heading.dot(desired)))
    angle = math.acos(dot)
    if angle <= max_angle or angle == 0.0:
        return desired
    if angle > math.pi - 1e-9:
        # anti-parallel: pick a deterministic perpendicular rotation plane
        aux = Vec3(1.0, 0.0, 0.0) if abs(heading.x) < 0.9 else Vec3(0.0, 1.0, 0.0)
        ax = aux.y * heading.z - aux.z * heading.y
        ay = aux.z * heading.x - aux.x * heading.z
        az = aux.x * heading.y - aux.y * heading.x
        perp = Vec3(ax, ay, az).normalized()
        c, s = math.cos(max_angle), math.sin(max_angle)
        return Vec3(
            heading.x * c + perp.x * s,
            heading.y * c + perp.y * s,
            heading.z * c + perp.z * s,
        ).normalized()
    # slerp by max_angle along the great circle toward desired
    sa = math.sin(angle)
    w0 = math.sin(angle - max_angle) / sa
    w1 = math.sin(max_angle) / sa
    return Vec3(
        heading.x * w0 + desired.x * w1,
        heading.y * w0 + desired.y * w1,
        heading.z * w0 + desired.z * w1,
    ).normalized()


def _wall_ray_hit(box: Aquarium, pos: Vec3, heading: Vec3, lookahead: float) -> bool:
    """True if the forward ray leaves the box within `lookahead` mm."""
    t_exit = math.inf
    for p, h, lo, hi in (
        (pos.x, heading.x, box.min_corner.x, box.max_corner.x),
        (pos.y, heading.y, box.min_corner.y, box.max_corner.y),
        (pos.z, heading.z, box.min_corner.z, box.max_corner.z),
    ):
        if h > 1e-12:
            t_exit = min(t_exit, (hi - p) / h)
        elif h < -1e-12:
            t_exit = min(t_exit, (lo - p) / h)
    return t_exit <= lookahead


def step(
    world: WorldState,
    hand_index: Optional[SpatialIndex],
    dt: Optional[float] = None,
) -> tuple[WorldState, list[ContactEvent]]:
    """Advance the world one tick against the current hand cloud.

    Pure transition: `world` is left untouched. `hand_index` may be None
    (no hand data at all this tick).
    """
    cfg = world.config
    if dt is None:
        dt = 1.0 / cfg.tick_rate
    if dt <= 0:
        raise ValueError("dt must be positive")

    cloud = hand_index.cloud if hand_index is not None else None
    present = cloud is not None and hand_present(cloud, cfg.hand_threshold)

    nearest_pts = nearest_dists = None
    if present and world.fish:
        queries = np.array([f.position for f in world.fish], dtype=np.float64)
        nearest_pts, _, nearest_dists = hand_index.nearest_batch(queries)

    tick = world.tick
    max_step_angle = cfg.max_turn_rate * dt
    dwell_ticks = max(1, round(cfg.nibble_dwell_s * cfg.tick_rate))
    retreat_ticks_full = max(1, round(cfg.retreat_s * cfg.tick_rate))
    rng = world.rng_state
    events: list[ContactEvent] = []
    new_fish: list[Fish] = []

    for i, f in enumerate(world.fish):
        state = f.state
        target = f.target
        waypoint = f.patrol_waypoint
        nibble_ticks = f.nibble_ticks
        retreat_ticks = f.retreat_ticks
        was_nibbling = state is FishState.NIBBLE
        desired_point: Optional[Vec3] = None

        if not present:
            if was_nibbling:
                events.append(ContactEvent(tick, f.id, "nibble-end", target))
            state = FishState.PATROL
            target = None
            nibble_ticks = 0
            retreat_ticks = 0
            if f.position.distance_to(waypoint) < WAYPOINT_REACHED_MM:
                rng, waypoint = _sample_point(rng, world.aquarium, WAYPOINT_REACHED_MM)
            desired_point = waypoint
        else:
            np_point = Vec3(*nearest_pts[i])
            np_dist = float(nearest_dists[i])
            if retreat_ticks > 0:
                # post-nibble retreat leg: ignore the hand briefly
                retreat_ticks -= 1
                state = FishState.APPROACH
                target = None
                desired_point = waypoint
            elif np_dist < cfg.nibble_distance:
                target = np_point
                if was_nibbling:
                    nibble_ticks += 1
                    if nibble_ticks >= dwell_ticks:
                        events.append(ContactEvent(tick, f.id, "nibble-end", target))
                        state = FishState.APPROACH
                        rng, waypoint = _sample_point(rng, world.aquarium, WAYPOINT_REACHED_MM)
                        retreat_ticks = retreat_ticks_full
                        nibble_ticks = 0
                        target = None
                        desired_point = waypoint
                    else:
                        events.append(ContactEvent(tick, f.id, "nibble-active", target))
                        state = FishState.NIBBLE
                else:
                    events.append(ContactEvent(tick, f.id, "nibble-start", target))
                    state = FishState.NIBBLE
                    nibble_ticks = 1
            else:
                if was_nibbling:
                    events.append(ContactEvent(tick, f.id, "nibble-end", target))
                    nibble_ticks = 0
                state = FishState.APPROACH
                target = np_point
                desired_point = target

        heading = f.heading
        position = f.position
        if state is FishState.NIBBLE:
            # hover on the bite point, keep orienting toward it
            to_target = target - position
            if to_target.norm() > 1e-9:
                heading = _rotate_toward(heading, to_target.normalized(), max_step_angle)
        else:
            if _wall_ray_hit(world.aquarium, position, heading, WALL_LOOKAHEAD_MM):
                desired_point = world.aquarium.center
            to_des = desired_point - position
            if to_des.norm() > 1e-9:
                heading = _rotate_toward(heading, to_des.normalized(), max_step_angle)
            step_len = f.speed * dt
            position = world.aquarium.clamp(
                Vec3(
                    position.x + heading.x * step_len,
                    position.y + heading.y * step_len,
                    position.z + heading.z * step_len,
                )
            )

        new_fish.append(
            replace(
                f,
                position=position,
                heading=heading,
                state=state,
                target=target,
                patrol_waypoint=waypoint,
                nibble_ticks=nibble_ticks,
                retreat_ticks=retreat_ticks,
            )
        )

    return WorldState(tuple(new_fish), world.aquarium, tick + 1, rng, cfg), events


def active_contacts(world: WorldState) -> list[ContactPoint]:
    """One contact per fish currently nibbling, at its bite point."""
    return [
        ContactPoint(f.target, f.id, world.tick)
        for f in world.fish
        if f.state is FishState.NIBBLE and f.target is not None
    ]


def write_event_log(events: list[ContactEvent], path) -> None:
    """CSV event log: tick,fish_id,kind,x,y,z."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("tick,fish_id,kind,x,y,z\n")
        for e in events:
            fh.write(
                f"{e.tick},{e.fish_id},{e.kind},"
                f"{e.position.x:.6f},{e.position.y:.6f},{e.position.z:.6f}\n"
            )


def read_event_log(path) -> list[ContactEvent]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() and header.strip() != "tick,fish_id,kind,x,y,z":
            raise ValueError("unrecognized event log header")
        for line in fh:
            if not line.strip():
                continue
            t, fid, kind, x, y, z = line.strip().split(",")
            events.append(ContactEvent(int(t), int(fid), kind, Vec3(float(x), float(y), float(z))))
    return events
