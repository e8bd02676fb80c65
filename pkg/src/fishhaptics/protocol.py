"""Bit-exact array command frames and the .ahs stream format.

This is the seam where a real array driver would replace the simulator:
one frame per control tick carrying 8-bit phase and amplitude per element.

Frame layout, little-endian:

    0x48 0x41  magic "HA"
    0x01       version
    u32        timestamp (control ticks since stream start)
    u16        element count n
    n x (u8 phase, u8 amplitude)

Total size: 9 + 2n bytes. Streams are frames concatenated with no padding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .acoustics import PhaseSolution

MAGIC = b"HA"
VERSION = 1
HEADER = struct.Struct("<2sBIH")
PHASE_LSB = 2.0 * np.pi / 256.0
MAX_TIMESTAMP = 2**32 - 1
MAX_ELEMENTS = 2**16 - 1


class FrameFormatError(ValueError):
    pass


class UnsupportedVersionError(FrameFormatError):
    pass


class FrameTruncationError(FrameFormatError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"truncated frame body: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class StreamCorruptionError(FrameFormatError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"stream corrupt at byte {offset}: {message}")
        self.offset = offset


@dataclass(frozen=True)
class CommandFrame:
    timestamp: int
    phases: np.ndarray       # u8, units of 2*pi/256
    amplitudes: np.ndarray   # u8, 0 = off, 255 = cap

    def __post_init__(self) -> None:
        p = np.asarray(self.phases, dtype=np.uint8)
        a = np.asarray(self.amplitudes, dtype=np.uint8)
        if p.shape != a.shape or p.ndim != 1:
            raise ValueError("phases and amplitudes must be equal-length u8 vectors")
        if not 0 <= self.timestamp <= MAX_TIMESTAMP:
            raise ValueError("timestamp out of u32 range")
        if len(p) > MAX_ELEMENTS:
            raise ValueError("too many elements for a frame")
        object.__setattr__(self, "phases", p)
        object.__setattr__(self, "amplitudes", a)

    @property
    def element_count(self) -> int:
        return len(self.phases)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CommandFrame):
            return NotImplemented
        return (
            self.timestamp == other.timestamp
            and np.array_equal(self.phases, other.phases)
            and np.array_equal(self.amplitudes, other.amplitudes)
        )


def quantize(solution: PhaseSolution) -> tuple[np.ndarray, np.ndarray]:
    """Round-half-up quantization to (u8 phase, u8 amplitude)."""
    phases = np.floor(solution.phases * (256.0 / (2.0 * np.pi)) + 0.5).astype(np.int64) % 256
    amps = np.floor(solution.amplitudes * 255.0 + 0.5).astype(np.int64)
    if (amps < 0).any() or (amps > 255).any():
        raise ValueError("amplitudes must lie in [0, 1]")
    return phases.astype(np.uint8), amps.astype(np.uint8)


def dequantize(phases: np.ndarray, amplitudes: np.ndarray) -> PhaseSolution:
    return PhaseSolution(
        phases.astype(np.float64) * PHASE_LSB,
        amplitudes.astype(np.float64) / 255.0,
    )


def frame_from_solution(timestamp: int, solution: PhaseSolution) -> CommandFrame:
    p, a = quantize(solution)
    return CommandFrame(timestamp, p, a)


def encode_frame(frame: CommandFrame) -> bytes:
    header = HEADER.pack(MAGIC, VERSION, frame.timestamp, frame.element_count)
    body = np.empty(2 * frame.element_count, dtype=np.uint8)
    body[0::2] = frame.phases
    body[1::2] = frame.amplitudes
    return header + body.tobytes()


def decode_frame(data: bytes) -> CommandFrame:
    frame, consumed = _decode_at(data, 0)
    if consumed != len(data):
        raise FrameFormatError(f"{len(data) - consumed} trailing bytes after frame")
    return frame


def _decode_at(buf: bytes, offset: int) -> tuple[CommandFrame, int]:
    if len(buf) - offset < HEADER.size:
        raise FrameTruncationError(HEADER.size, len(buf) - offset)
    magic, version, timestamp, count = HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FrameFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported frame version {version}")
    body_len = 2 * count
    start = offset + HEADER.size
    if len(buf) - start < body_len:
        raise FrameTruncationError(body_len, len(buf) - start)
    body = np.frombuffer(buf, dtype=np.uint8, count=body_len, offset=start)
    return CommandFrame(timestamp, body[0::2].copy(), body[1::2].copy()), start + body_len


class StreamWriter:
    """Appends frames to an .ahs file."""

    def __init__(self, path, append: bool = False):
        self._fh = open(path, "ab" if append else "wb")
        self.frames_written = 0

    def write(self, frame: CommandFrame) -> None:
        self._fh.write(encode_frame(frame))
        self.frames_written += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "StreamWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def stream_write(frames, path) -> None:
    with StreamWriter(path) as w:
        for f in frames:
            w.write(f)


def stream_read(path) -> Iterator[CommandFrame]:
    """Yield frames in order; corruption reports its byte offset."""
    with open(path, "rb") as fh:
        buf = fh.read()
    offset = 0
    while offset < len(buf):
        try:
            frame, offset_next = _decode_at(buf, offset)
        except FrameFormatError as exc:
            raise StreamCorruptionError(offset, str(exc)) from exc
        yield frame
        offset = offset_next
