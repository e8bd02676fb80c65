from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fishhaptics.acoustics import PhaseSolution
from fishhaptics.protocol import (
    PHASE_LSB,
    CommandFrame,
    FrameFormatError,
    FrameTruncationError,
    StreamCorruptionError,
    UnsupportedVersionError,
    decode_frame,
    dequantize,
    encode_frame,
    quantize,
    stream_read,
    stream_write,
)


def sol(phases, amps):
    return PhaseSolution(np.asarray(phases, float), np.asarray(amps, float))


class TestQuantize:
    def test_zero_phase_full_amp(self):
        p, a = quantize(sol([0.0], [1.0]))
        assert (p[0], a[0]) == (0, 255)

    def test_pi_maps_to_128(self):
        p, _ = quantize(sol([math.pi], [0.5]))
        assert p[0] == 128

    def test_amp_075_rounds_half_up_to_191(self):
        # 0.75 * 255 = 191.25 -> 191
        _, a = quantize(sol([0.0], [0.75]))
        assert a[0] == 191

    def test_round_half_up(self):
        # amplitude exactly between two codes: 0.5/255ths above 63
        _, a = quantize(sol([0.0], [63.5 / 255.0]))
        assert a[0] == 64

    def test_phase_wraps_to_zero(self):
        p, _ = quantize(sol([2 * math.pi - 1e-9], [1.0]))
        assert p[0] == 0

    def test_quantization_error_bounds(self):
        rng = np.random.default_rng(3)
        phases = rng.uniform(0, 2 * math.pi, 500)
        amps = rng.uniform(0, 1, 500)
        p, a = quantize(sol(phases, amps))
        back = dequantize(p, a)
        phase_err = np.abs((back.phases - phases + math.pi) % (2 * math.pi) - math.pi)
        assert phase_err.max() <= math.pi / 256 + 1e-12
        assert np.abs(back.amplitudes - amps).max() <= 1 / 510 + 1e-12


class TestEncodeDecode:
    def test_single_element_layout(self):
        frame = CommandFrame(0, np.array([0], np.uint8), np.array([255], np.uint8))
        data = encode_frame(frame)
        assert data == bytes([0x48, 0x41, 0x01, 0, 0, 0, 0, 0x01, 0x00, 0x00, 0xFF])
        assert len(data) == 11

    def test_256_elements_length(self):
        frame = CommandFrame(9, np.zeros(256, np.uint8), np.zeros(256, np.uint8))
        assert len(encode_frame(frame)) == 521

    def test_bad_magic(self):
        with pytest.raises(FrameFormatError, match="magic"):
            decode_frame(bytes([0x00, 0x41, 0x01, 0, 0, 0, 0, 0, 0]))

    def test_bad_version(self):
        with pytest.raises(UnsupportedVersionError):
            decode_frame(bytes([0x48, 0x41, 0x02, 0, 0, 0, 0, 0, 0]))

    def test_truncated_body_reports_lengths(self):
        good = encode_frame(
            CommandFrame(1, np.zeros(256, np.uint8), np.zeros(256, np.uint8))
        )
        with pytest.raises(FrameTruncationError) as e:
            decode_frame(good[: 9 + 10])
        assert e.value.expected == 512
        assert e.value.actual == 10

    def test_round_trip_seeded(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(0, 300))
            frame = CommandFrame(
                int(rng.integers(0, 2**32)),
                rng.integers(0, 256, n).astype(np.uint8),
                rng.integers(0, 256, n).astype(np.uint8),
            )
            assert decode_frame(encode_frame(frame)) == frame

    @settings(max_examples=200, deadline=None)
    @given(
        ts=st.integers(0, 2**32 - 1),
        body=st.integers(0, 64).flatmap(
            lambda n: st.tuples(
                arrays(np.uint8, n, elements=st.integers(0, 255)),
                arrays(np.uint8, n, elements=st.integers(0, 255)),
            )
        ),
    )
    def test_round_trip_property(self, ts, body):
        frame = CommandFrame(ts, body[0], body[1])
        assert decode_frame(encode_frame(frame)) == frame


class TestStreams:
    def frames(self, n=3, elements=8):
        rng = np.random.default_rng(5)
        return [
            CommandFrame(
                i,
                rng.integers(0, 256, elements).astype(np.uint8),
                rng.integers(0, 256, elements).astype(np.uint8),
            )
            for i in range(n)
        ]

    def test_write_read_round_trip(self, tmp_path):
        path = tmp_path / "run.ahs"
        frames = self.frames(3)
        stream_write(frames, path)
        assert list(stream_read(path)) == frames

    def test_empty_stream(self, tmp_path):
        path = tmp_path / "empty.ahs"
        path.write_bytes(b"")
        assert list(stream_read(path)) == []

    def test_corruption_names_offset(self, tmp_path):
        path = tmp_path / "bad.ahs"
        frames = self.frames(2, elements=4)
        good = encode_frame(frames[0]) + encode_frame(frames[1])
        # flip the second frame's magic
        bad = bytearray(good)
        second = len(encode_frame(frames[0]))
        bad[second] = 0x00
        path.write_bytes(bytes(bad))
        reader = stream_read(path)
        assert next(reader) == frames[0]
        with pytest.raises(StreamCorruptionError) as e:
            next(reader)
        assert e.value.offset == second

    def test_trailing_garbage_is_corruption(self, tmp_path):
        path = tmp_path / "trail.ahs"
        frame = self.frames(1, elements=2)[0]
        data = encode_frame(frame) + b"\x48"
        path.write_bytes(data)
        reader = stream_read(path)
        next(reader)
        with pytest.raises(StreamCorruptionError):
            next(reader)

    def test_phase_lsb_constant(self):
        assert PHASE_LSB == pytest.approx(2 * math.pi / 256)
