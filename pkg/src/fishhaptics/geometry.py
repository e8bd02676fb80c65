"""Vectors, point clouds, synthetic hand surfaces and nearest-point queries.

Coordinate frame: origin at the transducer array center, z pointing up into
the aquarium, all lengths in millimeters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

# Coordinates are quantized to 1e-6 mm by the generators so that the text
# point-cloud format (6 decimal places) round-trips exactly.
COORD_DECIMALS = 6

HAND_KINDS = ("flat-palm", "index-finger", "ellipsoid-blob")

# Local-frame extents of each hand kind, mm.
PALM_SIZE = (180.0, 100.0)
FINGER_SIZE = (80.0, 18.0)
BLOB_SEMIAXES = (60.0, 40.0, 25.0)


class Vec3(NamedTuple):
    x: float
    y: float
    z: float

    def __add__(self, other):  # type: ignore[override]
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other):
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scaled(self, k: float) -> "Vec3":
        return Vec3(self.x * k, self.y * k, self.z * k)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def distance_to(self, other: "Vec3") -> float:
        return math.dist(self, other)

    def normalized(self) -> "Vec3":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize zero vector")
        return Vec3(self.x / n, self.y / n, self.z / n)

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)


@dataclass
class PointCloud:
    """Ordered surface samples, (n, 3) float64 mm."""

    points: np.ndarray
    timestamp_ms: float = 0.0

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must be an (n, 3) array")
        if not np.isfinite(pts).all():
            raise ValueError("points contain non-finite components")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)

    def point(self, i: int) -> Vec3:
        return Vec3(*self.points[i])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.timestamp_ms == other.timestamp_ms and np.array_equal(
            self.points, other.points
        )


@dataclass(frozen=True)
class HandPose:
    position: Vec3 = Vec3(0.0, 0.0, 200.0)
    yaw: float = 0.0


@dataclass(frozen=True)
class HandModel:
    kind: str
    pose: HandPose = field(default_factory=HandPose)
    sample_count: int = 5000
    seed: int = 0


class NearestHit(NamedTuple):
    point: Vec3
    index: int
    distance: float


# Tiny splitmix64 stream; keeps generated clouds identical across platforms
# and numpy versions.
_U64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _splitmix_next(state: int) -> tuple[int, int]:
    state = (state + _GAMMA) & _U64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return state, z ^ (z >> 31)


def _splitmix_unit(state: int) -> tuple[int, float]:
    state, u = _splitmix_next(state)
    return state, u / 2.0**64


def _stratified_unit_square(n: int, seed: int, aspect: float) -> np.ndarray:
    """n jittered samples in [0,1)^2, cells roughly square under `aspect`."""
    gx = max(1, round(math.sqrt(n * aspect)))
    gy = max(1, math.ceil(n / gx))
    state = seed & _U64
    out = np.empty((n, 2))
    for i in range(n):
        cx, cy = (i % gx), (i // gx) % gy
        state, jx = _splitmix_unit(state)
        state, jy = _splitmix_unit(state)
        out[i, 0] = (cx + jx) / gx
        out[i, 1] = (cy + jy) / gy
    return out


def _local_samples(model: HandModel) -> np.ndarray:
    n, seed = model.sample_count, model.seed
    if model.kind == "flat-palm":
        w, h = PALM_SIZE
        uv = _stratified_unit_square(n, seed, w / h)
        local = np.column_stack(((uv[:, 0] - 0.5) * w, (uv[:, 1] - 0.5) * h, np.zeros(n)))
    elif model.kind == "index-finger":
        w, h = FINGER_SIZE
        uv = _stratified_unit_square(n, seed, w / h)
        local = np.column_stack(((uv[:, 0] - 0.5) * w, (uv[:, 1] - 0.5) * h, np.zeros(n)))
    elif model.kind == "ellipsoid-blob":
        a, b, c = BLOB_SEMIAXES
        uv = _stratified_unit_square(n, seed, 2.0)
        theta = uv[:, 0] * 2.0 * math.pi
        # acos mapping gives an area-uniform latitude distribution
        phi = np.arccos(1.0 - 2.0 * uv[:, 1])
        local = np.column_stack(
            (a * np.sin(phi) * np.cos(theta), b * np.sin(phi) * np.sin(theta), c * np.cos(phi))
        )
    else:
        raise ValueError(f"unknown hand kind: {model.kind!r}")
    return local


def generate_hand(model: HandModel) -> PointCloud:
    """Deterministic synthetic hand-surface cloud for the given model.

    Stands in for a depth camera: same (kind, pose, sample_count, seed)
    always yields the identical cloud.
    """
    if model.sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    local = _local_samples(model)
    cy, sy = math.cos(model.pose.yaw), math.sin(model.pose.yaw)
    px, py, pz = model.pose.position
    world = np.column_stack(
        (
            local[:, 0] * cy - local[:, 1] * sy + px,
            local[:, 0] * sy + local[:, 1] * cy + py,
            local[:, 2] + pz,
        )
    )
    return PointCloud(np.round(world, COORD_DECIMALS))


def hand_present(cloud: PointCloud, threshold: int) -> bool:
    """True iff the cloud has strictly more points than `threshold`."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return len(cloud) > threshold


class SpatialIndex:
    """Uniform-grid nearest-neighbor index over a point cloud.

    Queries return exactly the brute-force nearest point; equidistant
    candidates resolve to the lowest point index.
    """

    def __init__(self, cloud: PointCloud, cell_size: Optional[float] = None):
        pts = cloud.points
        self.cloud = cloud
        self._pts = pts
        self.n = len(pts)
        if self.n == 0:
            self.cell_size = 1.0
            self._mins = np.zeros(3)
            self._cells: dict[tuple[int, int, int], np.ndarray] = {}
            return
        mins = pts.min(axis=0)
        maxs = pts.max(axis=0)
        if cell_size is None:
            extents = np.maximum(maxs - mins, 1.0)
            cell_size = max(float((extents.prod() / self.n) ** (1.0 / 3.0)), 0.25)
        self.cell_size = float(cell_size)
        self._mins = mins
        keys = np.floor((pts - mins) / self.cell_size).astype(np.int64)
        cells: dict[tuple[int, int, int], list[int]] = {}
        for i, k in enumerate(map(tuple, keys)):
            cells.setdefault(k, []).append(i)
        self._cells = {k: np.asarray(v, dtype=np.intp) for k, v in cells.items()}
        self._key_min = keys.min(axis=0)
        self._key_max = keys.max(axis=0)

    def _cell_of(self, q: np.ndarray) -> np.ndarray:
        return np.floor((q - self._mins) / self.cell_size).astype(np.int64)

    def _scan_cell(self, key: tuple[int, int, int], q: np.ndarray, best: tuple[float, int]):
        idx = self._cells.get(key)
        if idx is None:
            return best
        diff = self._pts[idx] - q
        d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
        j = int(np.argmin(d2))
        cand = (float(d2[j]), int(idx[j]))
        # argmin already yields the lowest index within the cell; across
        # cells compare (distance, index) lexicographically
        return cand if cand < best else best

    def nearest(self, query: Vec3) -> Optional[NearestHit]:
        if self.n == 0:
            return None
        q = np.asarray(query, dtype=np.float64)
        qc = self._cell_of(q)
        # far outside the populated grid, shell walking degenerates; the
        # vectorized full scan is exact and fast
        if (qc < self._key_min - 2).any() or (qc > self._key_max + 2).any():
            return self._brute(q)
        # every occupied cell lies within this Chebyshev radius of qc
        max_ring = int(max(int(np.maximum(self._key_max - qc, qc - self._key_min).max()), 0))
        best: tuple[float, int] = (math.inf, -1)
        for ring in range(max_ring + 1):
            # cells at ring s hold points no closer than (s-1)*cell_size;
            # shaved slightly so fp rounding can never skip a true tie
            reachable = (ring - 1) * self.cell_size
            if best[1] >= 0 and reachable > 0 and reachable * reachable * (1.0 - 1e-12) > best[0]:
                break
            for key in self._ring_keys(qc, ring):
                if key in self._cells:
                    best = self._scan_cell(key, q, best)
        d2, idx = best
        return NearestHit(Vec3(*self._pts[idx]), idx, math.sqrt(d2))

    def _ring_keys(self, center: np.ndarray, ring: int):
        cx, cy, cz = (int(v) for v in center)
        if ring == 0:
            yield (cx, cy, cz)
            return
        r = ring
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                if max(abs(dx), abs(dy)) == r:
                    for dz in range(-r, r + 1):
                        yield (cx + dx, cy + dy, cz + dz)
                else:
                    yield (cx + dx, cy + dy, cz - r)
                    yield (cx + dx, cy + dy, cz + r)

    def _brute(self, q: np.ndarray) -> NearestHit:
        diff = self._pts - q
        d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
        i = int(np.argmin(d2))
        return NearestHit(Vec3(*self._pts[i]), i, math.sqrt(float(d2[i])))

    def nearest_batch(self, queries: np.ndarray):
        """Vectorized exact nearest for (m, 3) queries.

        Returns (points (m,3), indices (m,), distances (m,)); argmin keeps
        the lowest-index tie-break of single queries.
        """
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if self.n == 0:
            raise ValueError("index over empty cloud has no nearest points")
        diff = queries[:, None, :] - self._pts[None, :, :]
        d2 = (
            diff[:, :, 0] * diff[:, :, 0]
            + diff[:, :, 1] * diff[:, :, 1]
            + diff[:, :, 2] * diff[:, :, 2]
        )
        idx = d2.argmin(axis=1)
        dist = np.sqrt(d2[np.arange(len(queries)), idx])
        return self._pts[idx], idx, dist


def build_index(cloud: PointCloud, cell_size: Optional[float] = None) -> SpatialIndex:
    return SpatialIndex(cloud, cell_size)


def nearest_point(index: SpatialIndex, query: Vec3) -> Optional[NearestHit]:
    return index.nearest(query)


class CloudParseError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def save_cloud(cloud: PointCloud, path) -> None:
    """Text format: one `x,y,z` per line, mm, 6 decimal places."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in cloud.points:
            fh.write(f"{x:.6f},{y:.6f},{z:.6f}\n")


def load_cloud(path) -> PointCloud:
    pts: list[tuple[float, float, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise CloudParseError(path, line_no, f"expected 3 fields, got {len(parts)}")
            try:
                pts.append((float(parts[0]), float(parts[1]), float(parts[2])))
            except ValueError:
                raise CloudParseError(path, line_no, f"invalid number in {line!r}") from None
    return PointCloud(np.asarray(pts, dtype=np.float64).reshape(len(pts), 3))
