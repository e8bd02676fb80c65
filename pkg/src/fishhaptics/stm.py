"""Spatio-temporal modulation scheduling.

A single focus is cycled over the current cluster centroids: a
nearest-neighbor tour yields the visit order, every point is revisited at
the configured cycle frequency, and focal jumps whose per-element phase
change would exceed the configured step are split into short intermediate
hops so transducer output stays smooth during switching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .acoustics import PhaseSolution, TransducerArray, focus_phase_matrix, pressure_field
from .clustering import Cluster
from .geometry import Vec3

TWO_PI = 2.0 * math.pi
# relative slack so boundary-exact phase steps survive fp rounding
_STEP_EPS = 1e-9


class InfeasibleScheduleError(RuntimeError):
    pass


@dataclass(frozen=True)
class StmParams:
    stm_frequency: float                  # Hz, full-cycle repetition rate
    amplitude_scale: float = 1.0          # (0, 1]
    control_rate: float = 1000.0          # command ticks per second
    max_phase_step: float = math.pi / 8   # radians per control tick

    def __post_init__(self) -> None:
        if self.stm_frequency <= 0:
            raise ValueError("stm_frequency must be positive")
        if not 0.0 < self.amplitude_scale <= 1.0:
            raise ValueError("amplitude_scale must be in (0, 1]")
        if self.control_rate <= 0:
            raise ValueError("control_rate must be positive")
        if self.max_phase_step <= 0:
            raise ValueError("max_phase_step must be positive")

    @property
    def tick_ms(self) -> float:
        return 1000.0 / self.control_rate

    @property
    def cycle_ticks(self) -> int:
        return max(1, round(self.control_rate / self.stm_frequency))


@dataclass(frozen=True)
class FocusCommand:
    target: Vec3
    amplitude_scale: float
    ticks: int
    duration_ms: float
    kind: str                 # "dwell" | "transition"

    def __post_init__(self) -> None:
        if self.ticks <= 0:
            raise ValueError("command duration must be positive")


@dataclass(frozen=True)
class StmSchedule:
    commands: tuple[FocusCommand, ...]
    cycle_ms: float
    params: StmParams
    tour: tuple[Vec3, ...]

    @property
    def total_ticks(self) -> int:
        return sum(c.ticks for c in self.commands)

    def dwell_commands(self) -> list[FocusCommand]:
        return [c for c in self.commands if c.kind == "dwell"]


def _wrapped_abs(delta: np.ndarray) -> np.ndarray:
    return np.abs((delta + math.pi) % TWO_PI - math.pi)


def order_tour(clusters: Sequence[Cluster]) -> list[Vec3]:
    """Nearest-neighbor visit order, starting at the lowest fish id."""
    if not clusters:
        return []
    ordered = sorted(clusters, key=lambda c: c.member_ids[0])
    pts = [c.centroid for c in ordered]
    tour = [pts.pop(0)]
    while pts:
        cur = tour[-1]
        best = min(range(len(pts)), key=lambda j: (cur.distance_to(pts[j]), j))
        tour.append(pts.pop(best))
    return tour


def plan_transition(
    start: Vec3,
    end: Vec3,
    array: TransducerArray,
    max_phase_step: float,
) -> list[Vec3]:
    """Minimal uniformly spaced intermediate targets from `start` to `end`.

    Guarantees that stepping through [start, *intermediates, end] one
    control tick at a time changes no element's conjugate-focus phase by
    more than `max_phase_step` (circularly) per tick.
    """
    if max_phase_step <= 0:
        raise ValueError("max_phase_step must be positive")
    a = np.asarray(start, dtype=np.float64)
    b = np.asarray(end, dtype=np.float64)
    if np.array_equal(a, b):
        raise ValueError("transition endpoints must differ")
    if max_phase_step >= math.pi:
        # circular distance never exceeds pi: direct jumps are always legal
        return []
    limit = max_phase_step * (1.0 + _STEP_EPS)

    def passes(m: int) -> Optional[np.ndarray]:
        ts = np.linspace(0.0, 1.0, m + 2)
        path = a[None, :] + ts[:, None] * (b - a)[None, :]
        phases = focus_phase_matrix(array, path)
        if float(_wrapped_abs(np.diff(phases, axis=0)).max()) <= limit:
            return path
        return None

    # Each element's total (unwrapped) phase travel splits across m+1 steps,
    # so no plan below this count can stay within the budget without
    # exploiting 2*pi wrap-around, which would not be a gradual shift.
    k = array.wavenumber
    r_a = np.sqrt(((a - array.positions) ** 2).sum(axis=1))
    r_b = np.sqrt(((b - array.positions) ** 2).sum(axis=1))
    total = float(np.abs(r_b - r_a).max()) * k
    m = max(0, math.ceil(total / limit) - 1)
    misses = 0
    last_fail = m - 1
    while True:
        path = passes(m)
        if path is not None:
            break
        last_fail = m
        misses += 1
        m = m + 1 if misses <= 8 else int(m * 1.05) + 1
        if m > 1_000_000:
            raise InfeasibleScheduleError(
                f"cannot bound phase step for jump {tuple(start)} -> {tuple(end)}"
            )
    # growth may overshoot; bisect back to the smallest passing count
    lo, hi = last_fail, m
    while hi - lo > 1:
        mid = (lo + hi) // 2
        trial = passes(mid)
        if trial is not None:
            hi, path = mid, trial
        else:
            lo = mid
    return [Vec3(*p) for p in path[1:-1]]


class TransitionPlanner:
    """Memoizing wrapper around plan_transition.

    Cluster sets churn by one or two members per rebuild, so most hops of
    a rebuilt tour were already planned; caching keeps steady-state
    rebuilds cheap.
    """

    def __init__(self, array: TransducerArray, max_phase_step: float):
        self.array = array
        self.max_phase_step = max_phase_step
        self._cache: dict[tuple[Vec3, Vec3], list[Vec3]] = {}

    def plan(self, start: Vec3, end: Vec3) -> list[Vec3]:
        key = (start, end)
        hit = self._cache.get(key)
        if hit is None:
            hit = plan_transition(start, end, self.array, self.max_phase_step)
            self._cache[key] = hit
        return hit


def build_schedule(
    clusters: Sequence[Cluster],
    params: StmParams,
    array: TransducerArray,
    planner: Optional[TransitionPlanner] = None,
) -> StmSchedule:
    """One full STM cycle over the cluster centroids.

    The cycle visits every centroid exactly once; transitions borrow ticks
    from the shared dwell budget so the cycle stays exactly one repetition
    period long. Command order is D0, T1, D1, ..., T(n-1), D(n-1), T0 with
    T0 closing the loop back to the first point.
    """
    cycle_ticks = params.cycle_ticks
    tick_ms = params.tick_ms
    cycle_ms = cycle_ticks * tick_ms
    tour = order_tour(clusters)
    n = len(tour)
    if n == 0:
        return StmSchedule((), cycle_ms, params, ())
    if n == 1:
        cmd = FocusCommand(tour[0], params.amplitude_scale, cycle_ticks,
                           cycle_ticks * tick_ms, "dwell")
        return StmSchedule((cmd,), cycle_ms, params, tuple(tour))
    if cycle_ticks < 2 * n:
        raise InfeasibleScheduleError(
            f"control rate {params.control_rate} Hz is too low for {n} points "
            f"at {params.stm_frequency} Hz (needs >= {2 * n * params.stm_frequency} Hz)"
        )

    if planner is None:
        planner = TransitionPlanner(array, params.max_phase_step)
    hops: list[list[Vec3]] = []
    for i in range(n):
        prev = tour[i - 1]
        cur = tour[i]
        hops.append([] if prev == cur else planner.plan(prev, cur))
    transition_ticks = sum(len(h) for h in hops)
    if transition_ticks + n > cycle_ticks:
        worst = max(range(n), key=lambda i: len(hops[i]))
        raise InfeasibleScheduleError(
            f"transitions need {transition_ticks} of {cycle_ticks} control ticks "
            f"per cycle, leaving less than 1 dwell tick per point; limiting pair "
            f"{tuple(tour[worst - 1])} -> {tuple(tour[worst])} "
            f"({len(hops[worst])} ticks)"
        )

    budget = cycle_ticks - transition_ticks
    dwells = [  # spread the dwell budget as evenly as integer ticks allow
        (i + 1) * budget // n - i * budget // n for i in range(n)
    ]
    s = params.amplitude_scale
    commands: list[FocusCommand] = []
    for i in range(n):
        commands.append(
            FocusCommand(tour[i], s, dwells[i], dwells[i] * tick_ms, "dwell")
        )
        nxt = (i + 1) % n
        for wp in hops[nxt]:
            commands.append(FocusCommand(wp, s, 1, tick_ms, "transition"))
    return StmSchedule(tuple(commands), cycle_ms, params, tuple(tour))


def max_cycle_phase_step(array: TransducerArray, schedule: StmSchedule) -> float:
    """Largest per-element circular phase change between consecutive control
    ticks over one full cycle (wrap-around included)."""
    targets: list[Vec3] = []
    for c in schedule.commands:
        targets.extend([c.target] * c.ticks)
    if len(targets) < 2:
        return 0.0
    targets.append(targets[0])
    phases = focus_phase_matrix(array, np.asarray(targets))
    return float(_wrapped_abs(np.diff(phases, axis=0)).max())


def switch_pressure_floor(
    array: TransducerArray,
    path: Sequence[Vec3],
    amplitude_scale: float = 1.0,
) -> float:
    """Minimum focal pressure while sweeping the focus along `path`.

    Models each one-tick hop as the element phases slewing halfway between
    the two conjugate solutions while the focus is at the hop midpoint: for
    small hops that mid-state is still nearly a valid focus, for a large
    instantaneous jump it is incoherent and pressure collapses.
    """
    if len(path) < 2:
        raise ValueError("path needs at least two points")
    pts = np.asarray(path, dtype=np.float64)
    phases = focus_phase_matrix(array, pts)
    deltas = (np.diff(phases, axis=0) + math.pi) % TWO_PI - math.pi
    mid_phases = (phases[:-1] + 0.5 * deltas) % TWO_PI
    midpoints = 0.5 * (pts[:-1] + pts[1:])
    amps = np.full(array.element_count, amplitude_scale)
    floor = math.inf
    for mp, mph in zip(midpoints, mid_phases):
        p = pressure_field(array, PhaseSolution(mph, amps), mp.reshape(1, 3))
        floor = min(floor, float(np.abs(p[0])))
    return floor


def write_schedule_csv(path, rows) -> None:
    """Timeline CSV: t_ms,kind,x,y,z,amplitude."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t_ms,kind,x,y,z,amplitude\n")
        for t_ms, kind, target, amplitude in rows:
            if target is None:
                fh.write(f"{t_ms:.3f},{kind},0,0,0,{amplitude:.6f}\n")
            else:
                fh.write(
                    f"{t_ms:.3f},{kind},{target.x:.6f},{target.y:.6f},"
                    f"{target.z:.6f},{amplitude:.6f}\n"
                )


def schedule_rows(schedule: StmSchedule, t0_ms: float = 0.0):
    """One (t_ms, kind, target, amplitude) row per command of one cycle."""
    rows = []
    t = t0_ms
    for c in schedule.commands:
        rows.append((t, c.kind, c.target, c.amplitude_scale))
        t += c.duration_ms
    return rows


class SchedulePlayer:
    """Plays schedules tick by tick, smoothing schedule swaps.

    When a new schedule replaces the old one mid-stream, an entry
    transition from the last played target into the new tour's first point
    is inserted so the per-tick phase-step bound also holds across the
    seam. With no schedule the player idles (zero amplitude, focus parked).
    """

    def __init__(
        self,
        array: TransducerArray,
        max_phase_step: float,
        planner: Optional[TransitionPlanner] = None,
    ):
        self.array = array
        self.max_phase_step = max_phase_step
        self.planner = planner or TransitionPlanner(array, max_phase_step)
        self.schedule: Optional[StmSchedule] = None
        self.last_target: Optional[Vec3] = None
        self._entry: list[Vec3] = []
        self._cmd_idx = 0
        self._ticks_left = 0

    def set_schedule(self, schedule: Optional[StmSchedule]) -> None:
        self.schedule = schedule if schedule and schedule.commands else None
        self._entry = []
        self._cmd_idx = 0
        self._ticks_left = 0
        if self.schedule is None:
            return
        first = self.schedule.commands[0].target
        if self.last_target is not None and self.last_target != first:
            self._entry = list(self.planner.plan(self.last_target, first))

    @property
    def current_target(self) -> Optional[Vec3]:
        return self.last_target if self.schedule is not None else None

    def advance(self, n_ticks: int):
        """Yield (target, amplitude, kind, ticks) runs covering n_ticks."""
        runs: list[tuple[Optional[Vec3], float, str, int]] = []
        remaining = n_ticks
        while remaining > 0:
            if self.schedule is None:
                runs.append((None, 0.0, "idle", remaining))
                remaining = 0
                break
            if self._entry:
                wp = self._entry.pop(0)
                runs.append((wp, self.schedule.params.amplitude_scale, "transition", 1))
                self.last_target = wp
                remaining -= 1
                continue
            cmds = self.schedule.commands
            if self._ticks_left == 0:
                self._ticks_left = cmds[self._cmd_idx].ticks
            cmd = cmds[self._cmd_idx]
            take = min(self._ticks_left, remaining)
            runs.append((cmd.target, cmd.amplitude_scale, cmd.kind, take))
            self.last_target = cmd.target
            self._ticks_left -= take
            remaining -= take
            if self._ticks_left == 0:
                self._cmd_idx = (self._cmd_idx + 1) % len(cmds)
        return runs
