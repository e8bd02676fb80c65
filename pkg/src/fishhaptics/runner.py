"""End-to-end tick loop: hand -> fish -> clusters -> schedule -> frames.

One SimulationLoop instance drives both batch runs and the live service.
Each simulation tick advances the fish world, reclusters the active
contacts, rebuilds the focus schedule when the cluster set or parameters
changed, and emits one command frame per elapsed control tick.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import fish as fish_mod
from .acoustics import PhaseSolution, TransducerArray, focus_phase_matrix
from .clustering import Cluster, cluster_contacts
from .fish import ContactEvent, ContactPoint, WorldState, active_contacts, spawn
from .geometry import HandModel, SpatialIndex, build_index, generate_hand
from .protocol import StreamWriter, CommandFrame, quantize
from .scenario import RenderParams, Scenario, apply_preset
from .stm import (
    InfeasibleScheduleError,
    SchedulePlayer,
    StmSchedule,
    TransitionPlanner,
    build_schedule,
)


class ScenarioRuntimeError(RuntimeError):
    pass


@dataclass
class RunMetrics:
    contact_counts: list[int] = field(default_factory=list)
    cluster_counts: list[int] = field(default_factory=list)
    cycle_ms: list[float] = field(default_factory=list)
    tick_wall_ms: list[float] = field(default_factory=list)
    frames: int = 0
    rebuilds: int = 0

    @property
    def ticks(self) -> int:
        return len(self.contact_counts)

    def summary(self, duration_s: float, control_rate: float) -> dict:
        def mean(xs):
            return float(np.mean(xs)) if xs else 0.0

        active_clusters = [c for c, n in zip(self.cluster_counts, self.contact_counts) if n > 0]
        return {
            "ticks": self.ticks,
            "duration_s": duration_s,
            "frames": self.frames,
            "expected_frames": int(duration_s * control_rate),
            "rebuilds": self.rebuilds,
            "mean_contacts": mean(self.contact_counts),
            "max_contacts": int(max(self.contact_counts, default=0)),
            "mean_clusters": mean(self.cluster_counts),
            "max_clusters": int(max(self.cluster_counts, default=0)),
            "mean_clusters_while_touched": mean(active_clusters),
            "mean_cycle_ms": mean(self.cycle_ms),
            "mean_tick_wall_ms": mean(self.tick_wall_ms),
            "max_tick_wall_ms": float(max(self.tick_wall_ms, default=0.0)),
        }


@dataclass
class TickResult:
    tick: int
    events: list[ContactEvent]
    contacts: list[ContactPoint]
    clusters: list[Cluster]
    schedule: Optional[StmSchedule]
    infeasible_reason: Optional[str]


class _FrameEmitter:
    """Turns player runs into encoded frames; idle frames hold the last
    commanded phases at zero amplitude so replays never see phantom jumps."""

    def __init__(self, array: TransducerArray, writer: Optional[StreamWriter]):
        self.array = array
        self.writer = writer
        self.timestamp = 0
        self._last_phases = np.zeros(array.element_count, dtype=np.uint8)

    def emit(self, runs) -> int:
        total = 0
        for target, amplitude, _kind, ticks in runs:
            if self.writer is None:
                self.timestamp += ticks
                total += ticks
                continue
            if target is None:
                phase_bytes = self._last_phases
                amp_bytes = np.zeros(self.array.element_count, dtype=np.uint8)
            else:
                phases = focus_phase_matrix(self.array, np.asarray(target, float))[0]
                sol_amp = np.full(self.array.element_count, amplitude)
                phase_bytes, amp_bytes = quantize(PhaseSolution(phases, sol_amp))
                self._last_phases = phase_bytes
            for _ in range(ticks):
                self.writer.write(CommandFrame(self.timestamp, phase_bytes, amp_bytes))
                self.timestamp += 1
            total += ticks
        return total


class SimulationLoop:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.config = scenario.fish_config()
        self.box = scenario.aquarium()
        self.array = scenario.array()
        self.params: RenderParams = scenario.initial_params()
        self.world: WorldState = spawn(self.config, self.box, scenario.seed)
        self.planner = TransitionPlanner(self.array, scenario.model.stm.max_phase_step)
        self.player = SchedulePlayer(
            self.array, scenario.model.stm.max_phase_step, self.planner
        )
        self.schedule: Optional[StmSchedule] = None
        self.infeasible_reason: Optional[str] = None
        self.tick_index = 0
        self.control_rate = scenario.model.stm.control_rate
        self.live_pose: Optional[HandModel] = None
        self._hand_cache: dict = {}
        self._cluster_key = None
        self._params_dirty = False

    # -- hand handling -------------------------------------------------

    def _hand_index(self) -> Optional[SpatialIndex]:
        if self.scenario.is_live():
            model = self.live_pose
        else:
            model = self.scenario.hand_model_at(self.tick_index / self.config.tick_rate)
        if model is None:
            return None
        key = (model.kind, model.pose.position, model.pose.yaw, model.sample_count, model.seed)
        idx = self._hand_cache.get(key)
        if idx is None:
            self._hand_cache.clear()  # keep only the active pose
            idx = build_index(generate_hand(model))
            self._hand_cache[key] = idx
        return idx

    def set_live_pose(self, model: Optional[HandModel]) -> None:
        self.live_pose = model

    # -- parameters -----------------------------------------------------

    def apply_params(self, **changes) -> RenderParams:
        """Apply a partial parameter change (between ticks only)."""
        params = self.params
        if "preset_id" in changes and changes["preset_id"] is not None:
            params = apply_preset(params, int(changes.pop("preset_id")))
        else:
            changes.pop("preset_id", None)
        known = {
            "stm_frequency",
            "clustering_enabled",
            "cluster_distance",
            "amplitude_scale",
            "moistened",
        }
        unknown = set(changes) - known
        if unknown:
            raise ValueError(f"unknown parameters: {sorted(unknown)}")
        explicit = {k: v for k, v in changes.items() if v is not None}
        if explicit:
            params = replace(params, preset_id=None, **explicit)
        if params.stm_frequency <= 0 or params.stm_frequency > 50:
            raise ValueError("stm_frequency must be in (0, 50] Hz")
        if not 0 < params.amplitude_scale <= 1:
            raise ValueError("amplitude_scale must be in (0, 1]")
        if params.cluster_distance < 0 or params.cluster_distance > 200:
            raise ValueError("cluster_distance must be in [0, 200] mm")
        needed = 2.0 * params.stm_frequency * max(self.config.fish_count, 1)
        if self.control_rate < needed:
            raise ValueError(
                f"stm_frequency {params.stm_frequency} Hz is infeasible at "
                f"control rate {self.control_rate} Hz with {self.config.fish_count} fish"
            )
        self.params = params
        self._params_dirty = True
        return params

    # -- ticking ---------------------------------------------------------

    def reset(self, seed: int) -> None:
        """Respawn the population; the tick counter keeps running."""
        old_tick = self.world.tick
        fresh = spawn(self.config, self.box, seed)
        self.world = replace(fresh, tick=old_tick)
        self.player.set_schedule(None)
        self.schedule = None
        self._cluster_key = None

    def control_ticks_for(self, tick: int) -> int:
        rate = self.control_rate / self.config.tick_rate
        return int((tick + 1) * rate) - int(tick * rate)

    def step(self, strict_schedule: bool = True) -> TickResult:
        hand = self._hand_index()
        self.world, events = fish_mod.step(self.world, hand)
        contacts = active_contacts(self.world)
        d_c = self.params.cluster_distance if self.params.clustering_enabled else 0.0
        clusters = cluster_contacts(contacts, d_c)

        key = (
            tuple(c.centroid for c in clusters),
            self.params.stm_frequency,
            self.params.amplitude_scale,
        )
        if key != self._cluster_key or self._params_dirty:
            stm_params = self.scenario.stm_params(self.params)
            try:
                self.schedule = build_schedule(clusters, stm_params, self.array, self.planner)
                self.player.set_schedule(self.schedule)
                self.infeasible_reason = None
            except InfeasibleScheduleError as exc:
                if strict_schedule:
                    raise ScenarioRuntimeError(
                        f"tick {self.tick_index}: {exc}"
                    ) from exc
                # live mode: keep playing the previous schedule
                self.infeasible_reason = str(exc)
            self._cluster_key = key
            self._params_dirty = False

        result = TickResult(
            tick=self.world.tick,
            events=events,
            contacts=contacts,
            clusters=clusters,
            schedule=self.schedule,
            infeasible_reason=self.infeasible_reason,
        )
        self.tick_index += 1
        return result


@dataclass
class RunResult:
    metrics: RunMetrics
    summary: dict
    out_dir: Optional[Path]
    events_path: Optional[Path] = None
    schedule_path: Optional[Path] = None
    frames_path: Optional[Path] = None
    metrics_path: Optional[Path] = None
    contact_sets: Optional[list[list[ContactPoint]]] = None


def run(
    scenario: Scenario,
    out_dir=None,
    emit_frames: bool = True,
    collect_contact_sets: bool = False,
) -> RunResult:
    """Execute a scripted scenario to completion.

    With an out_dir, writes events.csv, schedule.csv, frames.ahs and
    metrics.json. Deterministic in the scenario seed (wall-clock metrics
    aside).
    """
    if scenario.is_live():
        raise ScenarioRuntimeError("live scenarios need the service, not run()")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    loop = SimulationLoop(scenario)
    metrics = RunMetrics()
    ticks_total = max(1, round(scenario.duration_s * loop.config.tick_rate))
    rebuild_seen = 0

    events_fh = open(out / "events.csv", "w", encoding="utf-8") if out else None
    sched_fh = open(out / "schedule.csv", "w", encoding="utf-8") if out else None
    writer = StreamWriter(out / "frames.ahs") if (out and emit_frames) else None
    emitter = _FrameEmitter(loop.array, writer)
    if events_fh:
        events_fh.write("tick,fish_id,kind,x,y,z\n")
    if sched_fh:
        sched_fh.write("t_ms,kind,x,y,z,amplitude\n")

    contact_sets: list[list[ContactPoint]] = []
    last_schedule = None
    try:
        for tick in range(ticks_total):
            t0 = time.perf_counter()
            result = loop.step(strict_schedule=True)
            if result.schedule is not last_schedule:
                metrics.rebuilds += 1
                last_schedule = result.schedule
            runs = loop.player.advance(loop.control_ticks_for(tick))
            frame_t0 = emitter.timestamp
            metrics.frames += emitter.emit(runs)
            if sched_fh:
                t_ms = frame_t0 * 1000.0 / loop.control_rate
                for target, amplitude, kind, ticks_n in runs:
                    if target is None:
                        sched_fh.write(f"{t_ms:.3f},{kind},0,0,0,{amplitude:.6f}\n")
                    else:
                        sched_fh.write(
                            f"{t_ms:.3f},{kind},{target.x:.6f},{target.y:.6f},"
                            f"{target.z:.6f},{amplitude:.6f}\n"
                        )
                    t_ms += ticks_n * 1000.0 / loop.control_rate
            if events_fh:
                for e in result.events:
                    events_fh.write(
                        f"{e.tick},{e.fish_id},{e.kind},"
                        f"{e.position.x:.6f},{e.position.y:.6f},{e.position.z:.6f}\n"
                    )
            if collect_contact_sets:
                contact_sets.append(result.contacts)
            metrics.contact_counts.append(len(result.contacts))
            metrics.cluster_counts.append(len(result.clusters))
            metrics.cycle_ms.append(result.schedule.cycle_ms if result.schedule else 0.0)
            metrics.tick_wall_ms.append((time.perf_counter() - t0) * 1000.0)
    finally:
        if events_fh:
            events_fh.close()
        if sched_fh:
            sched_fh.close()
        if writer:
            writer.close()

    summary = metrics.summary(scenario.duration_s, loop.control_rate)
    result = RunResult(metrics, summary, out)
    if collect_contact_sets:
        result.contact_sets = contact_sets
    if out is not None:
        result.events_path = out / "events.csv"
        result.schedule_path = out / "schedule.csv"
        result.metrics_path = out / "metrics.json"
        if emit_frames:
            result.frames_path = out / "frames.ahs"
        (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    return result


def calibrate_cluster_distance(
    scenario: Scenario,
    target_clusters: float = 20.0,
    distances: Optional[list[float]] = None,
    seeds: Optional[list[int]] = None,
    duration_s: Optional[float] = None,
) -> tuple[float, float, list[tuple[float, float]]]:
    """Sweep the linkage distance for the mean cluster count closest to the
    target; returns (best_distance, achieved_mean, full_table)."""
    distances = distances or [round(0.5 * i, 2) for i in range(1, 41)]
    seeds = seeds or [scenario.seed + i for i in range(5)]
    model = scenario.model.model_copy(deep=True)
    if duration_s is not None:
        model.duration_s = duration_s
    tick_contacts: list[list[ContactPoint]] = []
    for seed in seeds:
        m = model.model_copy(deep=True)
        m.seed = seed
        res = run(Scenario(m), out_dir=None, emit_frames=False, collect_contact_sets=True)
        tick_contacts.extend(res.contact_sets)

    table = []
    for d in distances:
        counts = [len(cluster_contacts(c, d)) for c in tick_contacts]
        table.append((d, float(np.mean(counts)) if counts else 0.0))
    best_d, best_mean = min(table, key=lambda row: abs(row[1] - target_clusters))
    return best_d, best_mean, table
