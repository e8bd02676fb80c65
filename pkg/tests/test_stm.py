from __future__ import annotations

import itertools
import math
import random

import numpy as np
import pytest

from fishhaptics.acoustics import TransducerArray, default_array
from fishhaptics.clustering import Cluster
from fishhaptics.geometry import Vec3
from fishhaptics.stm import (
    FocusCommand,
    InfeasibleScheduleError,
    SchedulePlayer,
    StmParams,
    build_schedule,
    max_cycle_phase_step,
    order_tour,
    plan_transition,
    schedule_rows,
    switch_pressure_floor,
    write_schedule_csv,
)


def clusters_at(coords, first_ids=None):
    ids = first_ids or list(range(len(coords)))
    return [Cluster(Vec3(*c), (i,), 0.0) for c, i in zip(coords, ids)]


def single_element_array():
    return TransducerArray(
        np.array([[0.0, 0.0, 0.0]]), np.array([[0.0, 0.0, 1.0]])
    )


def wrapped_abs(d):
    return np.abs((d + math.pi) % (2 * math.pi) - math.pi)


def oracle_min_steps(array, a, b, max_step):
    """Brute force: smallest m whose uniform path keeps every element's
    per-step wrapped phase change within max_step."""
    k = array.wavenumber
    a, b = np.asarray(a, float), np.asarray(b, float)
    m = 0
    while True:
        ts = np.linspace(0, 1, m + 2)
        path = a[None, :] + ts[:, None] * (b - a)[None, :]
        r = np.sqrt(((path[:, None, :] - array.positions[None, :, :]) ** 2).sum(axis=2))
        phases = (-k * r) % (2 * math.pi)
        if wrapped_abs(np.diff(phases, axis=0)).max() <= max_step * (1 + 1e-9):
            return m
        m += 1


def tour_length(points):
    total = 0.0
    for i in range(len(points)):
        total += math.dist(points[i], points[(i + 1) % len(points)])
    return total


class TestOrderTour:
    def test_single_cluster(self):
        tour = order_tour(clusters_at([(1, 2, 3)]))
        assert tour == [Vec3(1, 2, 3)]

    def test_empty(self):
        assert order_tour([]) == []

    def test_collinear_nearest_neighbor(self):
        tour = order_tour(clusters_at([(0, 0, 0), (10, 0, 0), (50, 0, 0)]))
        assert [p.x for p in tour] == [0, 10, 50]

    def test_starts_at_lowest_fish_id(self):
        tour = order_tour(clusters_at([(0, 0, 0), (10, 0, 0)], first_ids=[9, 4]))
        assert tour[0] == Vec3(10, 0, 0)

    def test_within_bound_of_optimal(self):
        rng = random.Random(23)
        for _ in range(12):
            coords = [
                (rng.uniform(-80, 80), rng.uniform(-50, 50), rng.uniform(180, 220))
                for _ in range(8)
            ]
            tour = order_tour(clusters_at(coords))
            nn_len = tour_length(tour)
            # optimal cyclic tour: fix the start, try all orders of the rest
            best = min(
                tour_length([coords[0], *perm])
                for perm in itertools.permutations(coords[1:])
            )
            assert nn_len <= 2.5 * best + 1e-9


class TestPlanTransition:
    def test_small_jump_needs_no_intermediates(self):
        arr = default_array()
        # 0.1 mm hop: worst phase change well under pi/8
        out = plan_transition(Vec3(0, 0, 200), Vec3(0.1, 0, 200), arr, math.pi / 8)
        assert out == []

    def test_identical_endpoints_rejected(self):
        with pytest.raises(ValueError):
            plan_transition(Vec3(0, 0, 200), Vec3(0, 0, 200), default_array(), 1.0)

    def test_pi_jump_with_eighth_limit(self):
        # single element: half-wavelength range change flips the phase by pi,
        # so an eighth-pi budget needs 8 segments = 7 intermediates
        arr = single_element_array()
        lam = arr.wavelength
        out = plan_transition(
            Vec3(0, 0, 100), Vec3(0, 0, 100 + lam / 2), arr, math.pi / 8
        )
        assert len(out) == 7

    def test_matches_exhaustive_oracle_for_lateral_jump(self):
        arr = default_array()
        a, b = Vec3(-10, 0, 200), Vec3(10, 0, 200)
        step = math.pi / 8
        out = plan_transition(a, b, arr, step)
        assert len(out) == oracle_min_steps(arr, a, b, step)

    def test_oracle_match_random_jumps(self):
        arr = default_array()
        rng = random.Random(6)
        for _ in range(5):
            a = Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(150, 250))
            b = Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(150, 250))
            step = rng.choice([math.pi / 4, math.pi / 2])
            out = plan_transition(a, b, arr, step)
            assert len(out) == oracle_min_steps(arr, a, b, step)

    def test_path_respects_bound(self):
        arr = default_array()
        a, b = Vec3(-15, 5, 180), Vec3(12, -8, 220)
        step = math.pi / 6
        out = plan_transition(a, b, arr, step)
        path = np.asarray([a, *out, b], dtype=float)
        r = np.sqrt(((path[:, None, :] - arr.positions[None, :, :]) ** 2).sum(axis=2))
        phases = (-arr.wavenumber * r) % (2 * math.pi)
        assert wrapped_abs(np.diff(phases, axis=0)).max() <= step * (1 + 1e-9)


class TestBuildSchedule:
    def test_four_points_ten_hz_zero_transitions(self):
        params = StmParams(10.0, 1.0, 1000.0, math.pi)
        coords = [(0, 0, 200), (20, 0, 200), (20, 20, 200), (0, 20, 200)]
        sched = build_schedule(clusters_at(coords), params, default_array())
        dwells = sched.dwell_commands()
        assert len(dwells) == 4
        assert all(c.ticks == 25 and c.duration_ms == 25.0 for c in dwells)
        assert all(c.kind == "dwell" for c in sched.commands)
        assert sched.cycle_ms == 100.0
        assert sched.total_ticks == 100

    def test_single_point_two_hz(self):
        params = StmParams(2.0, 1.0, 1000.0, math.pi / 8)
        sched = build_schedule(clusters_at([(0, 0, 200)]), params, default_array())
        assert len(sched.commands) == 1
        assert sched.commands[0].duration_ms == 500.0
        assert sched.cycle_ms == 500.0

    def test_condition1_shape_fifty_points(self):
        rng = random.Random(4)
        coords = [
            (rng.uniform(-90, 90), rng.uniform(-50, 50), 200.0) for _ in range(50)
        ]
        params = StmParams(2.0, 1.0, 1000.0, math.pi)
        sched = build_schedule(clusters_at(coords), params, default_array())
        dwells = sched.dwell_commands()
        assert len(dwells) == 50
        assert all(c.ticks == 10 for c in dwells)
        assert sched.total_ticks == 500

    def test_empty_cluster_set(self):
        sched = build_schedule([], StmParams(10.0), default_array())
        assert sched.commands == ()

    def test_amplitude_passthrough(self):
        params = StmParams(10.0, 0.75, 10000.0, math.pi / 8)
        coords = [(0, 0, 200), (15, 5, 200), (-10, -10, 210)]
        sched = build_schedule(clusters_at(coords), params, default_array())
        assert all(c.amplitude_scale == 0.75 for c in sched.commands)
        assert any(c.kind == "transition" for c in sched.commands)

    def test_control_rate_floor(self):
        params = StmParams(10.0, 1.0, 50.0, math.pi)
        coords = [(i * 10.0, 0, 200) for i in range(5)]
        with pytest.raises(InfeasibleScheduleError, match="too low"):
            build_schedule(clusters_at(coords), params, default_array())

    def test_infeasible_names_limiting_pair(self):
        params = StmParams(10.0, 1.0, 1000.0, math.pi / 512)
        coords = [(0, 0, 200), (40, 0, 200)]
        with pytest.raises(InfeasibleScheduleError, match="limiting pair"):
            build_schedule(clusters_at(coords), params, default_array())

    def test_cycle_duration_matches_frequency(self):
        for f in (2.0, 10.0):
            params = StmParams(f, 1.0, 10000.0, math.pi / 8)
            coords = [(0, 0, 200), (12, 4, 205), (-8, 9, 195)]
            sched = build_schedule(clusters_at(coords), params, default_array())
            assert sched.total_ticks == params.cycle_ticks
            assert abs(sched.cycle_ms - 1000.0 / f) <= params.tick_ms

    def test_phase_step_bound_holds_cyclically(self):
        rng = random.Random(9)
        params = StmParams(10.0, 1.0, 10000.0, math.pi / 8)
        arr = default_array()
        for _ in range(3):
            coords = [
                (rng.uniform(-60, 60), rng.uniform(-40, 40), rng.uniform(190, 210))
                for _ in range(rng.randint(2, 8))
            ]
            sched = build_schedule(clusters_at(coords), params, arr)
            assert max_cycle_phase_step(arr, sched) <= params.max_phase_step * (1 + 1e-9)


class TestSchedulePlayer:
    def expand(self, runs):
        out = []
        for target, amp, kind, ticks in runs:
            out.extend([(target, amp, kind)] * ticks)
        return out

    def test_idle_without_schedule(self):
        player = SchedulePlayer(default_array(), math.pi / 8)
        runs = player.advance(10)
        assert runs == [(None, 0.0, "idle", 10)]

    def test_revisit_period_is_exact(self):
        params = StmParams(10.0, 1.0, 10000.0, math.pi / 8)
        coords = [(0, 0, 200), (18, 3, 200), (-14, -6, 200), (5, 22, 200)]
        arr = default_array()
        sched = build_schedule(clusters_at(coords), params, arr)
        player = SchedulePlayer(arr, params.max_phase_step)
        player.set_schedule(sched)
        ticks = self.expand(player.advance(3 * params.cycle_ticks))
        onsets: dict[Vec3, list[int]] = {}
        prev = None
        for t, (target, _, kind) in enumerate(ticks):
            if kind == "dwell" and (prev is None or prev != (target, kind)):
                onsets.setdefault(target, []).append(t)
            prev = (target, kind)
        assert len(onsets) == 4
        for target, times in onsets.items():
            assert len(times) == 3
            diffs = {b - a for a, b in zip(times, times[1:])}
            assert diffs == {params.cycle_ticks}

    def test_coverage_once_per_cycle(self):
        params = StmParams(2.0, 1.0, 1000.0, math.pi)
        coords = [(i * 9.0, 0, 200) for i in range(20)]
        sched = build_schedule(clusters_at(coords), params, default_array())
        dwell_targets = [c.target for c in sched.dwell_commands()]
        assert len(dwell_targets) == 20
        assert len(set(dwell_targets)) == 20

    def test_entry_transition_keeps_bound_across_swap(self):
        arr = default_array()
        params = StmParams(10.0, 1.0, 10000.0, math.pi / 8)
        s1 = build_schedule(clusters_at([(0, 0, 200), (10, 0, 200)]), params, arr)
        s2 = build_schedule(clusters_at([(25, 10, 205), (-20, 0, 195)]), params, arr)
        player = SchedulePlayer(arr, params.max_phase_step)
        player.set_schedule(s1)
        first = self.expand(player.advance(140))
        player.set_schedule(s2)
        second = self.expand(player.advance(400))
        timeline = [t for t, _, _ in first + second if t is not None]
        pts = np.asarray(timeline, dtype=float)
        r = np.sqrt(((pts[:, None, :] - arr.positions[None, :, :]) ** 2).sum(axis=2))
        phases = (-arr.wavenumber * r) % (2 * math.pi)
        assert wrapped_abs(np.diff(phases, axis=0)).max() <= params.max_phase_step * (1 + 1e-9)


class TestSwitchPressureFloor:
    def test_planned_beats_instantaneous(self):
        arr = default_array()
        rng = random.Random(15)
        for _ in range(5):
            a = Vec3(rng.uniform(-35, 35), rng.uniform(-25, 25), rng.uniform(160, 240))
            b = Vec3(rng.uniform(-35, 35), rng.uniform(-25, 25), rng.uniform(160, 240))
            if a.distance_to(b) < 10.0:
                b = Vec3(a.x + 25.0, a.y, a.z)
            planned = [a, *plan_transition(a, b, arr, math.pi / 8), b]
            assert switch_pressure_floor(arr, planned) >= switch_pressure_floor(arr, [a, b])

    def test_requires_two_points(self):
        with pytest.raises(ValueError):
            switch_pressure_floor(default_array(), [Vec3(0, 0, 200)])


class TestScheduleCsv:
    def test_rows_and_dump(self, tmp_path):
        params = StmParams(10.0, 0.9, 1000.0, math.pi)
        coords = [(0, 0, 200), (20, 0, 200)]
        sched = build_schedule(clusters_at(coords), params, default_array())
        rows = schedule_rows(sched)
        assert rows[0][0] == 0.0
        assert sum(1 for r in rows if r[1] == "dwell") == 2
        path = tmp_path / "sched.csv"
        write_schedule_csv(path, rows)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t_ms,kind,x,y,z,amplitude"
        assert len(lines) == len(rows) + 1


class TestStmParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            StmParams(0.0)
        with pytest.raises(ValueError):
            StmParams(10.0, amplitude_scale=0.0)
        with pytest.raises(ValueError):
            StmParams(10.0, amplitude_scale=1.5)
        with pytest.raises(ValueError):
            StmParams(10.0, control_rate=-5)

    def test_cycle_ticks(self):
        assert StmParams(2.0, control_rate=1000.0).cycle_ticks == 500
        assert StmParams(10.0, control_rate=10000.0).cycle_ticks == 1000

    def test_command_duration_positive(self):
        with pytest.raises(ValueError):
            FocusCommand(Vec3(0, 0, 200), 1.0, 0, 0.0, "dwell")
