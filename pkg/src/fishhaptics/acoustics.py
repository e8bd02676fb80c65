"""Simulated ultrasound phased array.

Conjugate-phase focusing and point-source superposition: each element
contributes amplitude/distance with propagation phase k*r plus its command
phase. Pressures are in model units (element amplitude per mm); there is no
pascal calibration because there is no hardware.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TransducerArray:
    positions: np.ndarray                 # (n, 3) mm
    normals: np.ndarray                   # (n, 3) unit
    carrier_frequency: float = 40_000.0   # Hz
    sound_speed: float = 340_000.0        # mm/s
    amplitude_cap: float = 1.0
    use_directivity: bool = False
    element_radius: float = 4.5           # mm, only used by the directivity model

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.float64)
        nrm = np.asarray(self.normals, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or nrm.shape != pos.shape:
            raise ValueError("positions/normals must be matching (n, 3) arrays")
        if len(np.unique(pos, axis=0)) != len(pos):
            raise ValueError("element positions must be distinct")
        if not np.allclose((nrm**2).sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("normals must be unit length")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "normals", nrm)

    @property
    def element_count(self) -> int:
        return len(self.positions)

    @property
    def wavelength(self) -> float:
        return self.sound_speed / self.carrier_frequency

    @property
    def wavenumber(self) -> float:
        return TWO_PI / self.wavelength


@dataclass(frozen=True)
class PhaseSolution:
    phases: np.ndarray       # per element, radians in [0, 2*pi)
    amplitudes: np.ndarray   # per element, [0, 1]

    def __post_init__(self) -> None:
        p = np.asarray(self.phases, dtype=np.float64)
        a = np.asarray(self.amplitudes, dtype=np.float64)
        if p.shape != a.shape or p.ndim != 1:
            raise ValueError("phases and amplitudes must be equal-length vectors")
        object.__setattr__(self, "phases", p)
        object.__setattr__(self, "amplitudes", a)


@dataclass(frozen=True)
class FieldSample:
    position: np.ndarray
    pressure: complex


class FieldMeasurementError(RuntimeError):
    pass


def default_array(**overrides) -> TransducerArray:
    """16x16 grid, 10 mm pitch, centered at the origin in z=0, facing +z."""
    coords = (np.arange(16) - 7.5) * 10.0
    gx, gy = np.meshgrid(coords, coords, indexing="ij")
    positions = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(256)])
    normals = np.tile([0.0, 0.0, 1.0], (256, 1))
    return TransducerArray(positions, normals, **overrides)


def grid_array(nx: int, ny: int, pitch: float, **overrides) -> TransducerArray:
    cx = (np.arange(nx) - (nx - 1) / 2.0) * pitch
    cy = (np.arange(ny) - (ny - 1) / 2.0) * pitch
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    n = nx * ny
    positions = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(n)])
    normals = np.tile([0.0, 0.0, 1.0], (n, 1))
    return TransducerArray(positions, normals, **overrides)


def focus_phases(array: TransducerArray, target, amplitude_scale: float = 1.0) -> PhaseSolution:
    """Conjugate-phase solution: every element arrives in phase at `target`."""
    if not 0.0 < amplitude_scale <= 1.0:
        raise ValueError("amplitude_scale must be in (0, 1]")
    t = np.asarray(target, dtype=np.float64)
    r = np.sqrt(((t - array.positions) ** 2).sum(axis=1))
    if (r == 0.0).any():
        raise ValueError("target coincides with an array element")
    phases = (-array.wavenumber * r) % TWO_PI
    return PhaseSolution(phases, np.full(array.element_count, amplitude_scale))


def focus_phase_matrix(array: TransducerArray, targets: np.ndarray) -> np.ndarray:
    """Conjugate phases for (m, 3) targets, shape (m, n_elements)."""
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    r = np.sqrt(((t[:, None, :] - array.positions[None, :, :]) ** 2).sum(axis=2))
    if (r == 0.0).any():
        raise ValueError("a target coincides with an array element")
    return (-array.wavenumber * r) % TWO_PI


def _directivity(array: TransducerArray, diff: np.ndarray, r: np.ndarray) -> np.ndarray:
    """First-order piston factor 2*J1(x)/x per element/probe pair."""
    from scipy.special import j1

    cos_theta = (diff * array.normals[None, :, :]).sum(axis=2) / r
    sin_theta = np.sqrt(np.clip(1.0 - cos_theta**2, 0.0, 1.0))
    x = array.wavenumber * array.element_radius * sin_theta
    out = np.ones_like(x)
    nz = x > 1e-12
    out[nz] = 2.0 * j1(x[nz]) / x[nz]
    return out


def pressure_field(array: TransducerArray, solution: PhaseSolution, probes: np.ndarray) -> np.ndarray:
    """Complex pressure at each probe of an (m, 3) grid."""
    p = np.asarray(probes, dtype=np.float64).reshape(-1, 3)
    diff = p[:, None, :] - array.positions[None, :, :]
    r = np.sqrt((diff**2).sum(axis=2))
    if (r == 0.0).any():
        raise ValueError("probe coincides with an array element")
    terms = (solution.amplitudes[None, :] / r) * np.exp(
        1j * (array.wavenumber * r + solution.phases[None, :])
    )
    if array.use_directivity:
        terms = terms * _directivity(array, diff, r)
    return terms.sum(axis=1)


def pressure_at(array: TransducerArray, solution: PhaseSolution, probe) -> FieldSample:
    probe = np.asarray(probe, dtype=np.float64)
    value = pressure_field(array, solution, probe.reshape(1, 3))[0]
    return FieldSample(probe, complex(value))


def focal_radius(array: TransducerArray, target, max_radius: float = 50.0) -> float:
    """Lateral half-amplitude radius of the focus at `target`.

    Marches along +x from the target on a 0.1 mm grid until |p| first drops
    below half the focal value, then bisects inside that step.
    """
    t = np.asarray(target, dtype=np.float64)
    if t[2] <= 0:
        raise ValueError("target must be in front of the array (z > 0)")
    sol = focus_phases(array, t)
    p0 = abs(pressure_field(array, sol, t.reshape(1, 3))[0])
    half = p0 / 2.0
    xs = np.arange(0.0, max_radius + 1e-9, 0.1)
    probes = np.tile(t, (len(xs), 1))
    probes[:, 0] += xs
    mags = np.abs(pressure_field(array, sol, probes))
    below = np.nonzero(mags < half)[0]
    if len(below) == 0:
        raise FieldMeasurementError(
            f"no half-amplitude crossing within {max_radius} mm of {tuple(t)}"
        )
    i = int(below[0])
    lo, hi = xs[i - 1], xs[i]
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        probe = t + np.array([mid, 0.0, 0.0])
        if abs(pressure_field(array, sol, probe.reshape(1, 3))[0]) < half:
            hi = mid
        else:
            lo = mid
    return float(0.5 * (lo + hi))


def field_scan(
    array: TransducerArray,
    solution: PhaseSolution,
    center,
    extent: float,
    step: float,
    axes: str = "xy",
) -> tuple[np.ndarray, np.ndarray]:
    """Regular planar scan around `center`; returns (probes, pressures)."""
    c = np.asarray(center, dtype=np.float64)
    offsets = np.arange(-extent, extent + step / 2.0, step)
    ia, ib = ("xyz".index(axes[0]), "xyz".index(axes[1]))
    ga, gb = np.meshgrid(offsets, offsets, indexing="ij")
    probes = np.tile(c, (ga.size, 1))
    probes[:, ia] += ga.ravel()
    probes[:, ib] += gb.ravel()
    return probes, pressure_field(array, solution, probes)


def write_field_csv(path, probes: np.ndarray, pressures: np.ndarray) -> None:
    """CSV dump: x,y,z,re,im,abs per probe."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,z,re,im,abs\n")
        for (x, y, z), p in zip(probes, pressures):
            fh.write(f"{x:.3f},{y:.3f},{z:.3f},{p.real:.9g},{p.imag:.9g},{abs(p):.9g}\n")
