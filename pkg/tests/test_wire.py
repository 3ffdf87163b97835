import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capskin.core import FRAME_PERIOD_MS, SensorFrame
from capskin.errors import RangeExceededError
from capskin.wire import (
    BAD_VERSION,
    CRC_MISMATCH,
    MAGIC,
    RESYNC,
    TRUNCATED,
    crc16_ccitt_false,
    decode_frame,
    decode_stream,
    encode_frame,
    frame_length,
)


def canonical_frame(seq, counts, sensor_id=0):
    """Build a frame whose timestamp matches the decoder's seq-derived one."""
    return SensorFrame(
        timestamp_ms=round(seq * FRAME_PERIOD_MS),
        sensor_id=sensor_id,
        seq=seq,
        counts=np.asarray(counts),
    )


def random_frames(rng, n, taxel_count=120):
    frames = []
    for seq in range(n):
        counts = rng.integers(0, 65536, size=taxel_count)
        frames.append(canonical_frame(seq, counts, sensor_id=int(rng.integers(0, 256))))
    return frames


class TestCrc:
    def test_reference_check_value(self):
        # Standard check vector for CRC-16/CCITT-FALSE.
        assert crc16_ccitt_false(b"123456789") == 0x29B1

    def test_empty_is_init(self):
        assert crc16_ccitt_false(b"") == 0xFFFF


class TestEncode:
    def test_frame_is_250_bytes(self):
        frame = canonical_frame(0, [0] * 120)
        assert len(encode_frame(frame)) == 250
        assert frame_length(120) == 250

    def test_starts_with_magic_and_version(self):
        data = encode_frame(canonical_frame(0, [0] * 120))
        assert data[:2] == MAGIC
        assert data[2] == 1

    def test_count_out_of_u16_range(self):
        frame = canonical_frame(0, [65536] + [0] * 119)
        with pytest.raises(RangeExceededError):
            encode_frame(frame)

    def test_round_trip_identity(self):
        rng = np.random.default_rng(1)
        for frame in random_frames(rng, 20):
            assert decode_frame(encode_frame(frame)) == frame

    @given(
        seq=st.integers(min_value=0, max_value=2**32 - 1),
        sensor_id=st.integers(min_value=0, max_value=255),
        counts=st.lists(
            st.integers(min_value=0, max_value=65535), min_size=120, max_size=120
        ),
    )
    @settings(max_examples=100, deadline=None)
    def test_round_trip_property(self, seq, sensor_id, counts):
        frame = canonical_frame(seq, counts, sensor_id=sensor_id)
        data = encode_frame(frame)
        assert decode_frame(data) == frame
        # bytes -> frame -> bytes is also the identity
        assert encode_frame(decode_frame(data)) == data


class TestDecodeStream:
    def test_clean_stream(self):
        rng = np.random.default_rng(2)
        frames = random_frames(rng, 100)
        data = b"".join(encode_frame(f) for f in frames)
        decoded, events = decode_stream(data)
        assert decoded == frames
        assert events == []

    def test_single_flipped_payload_bit(self):
        rng = np.random.default_rng(3)
        frames = random_frames(rng, 100)
        blob = bytearray(b"".join(encode_frame(f) for f in frames))
        # flip one bit inside frame 50's payload
        blob[50 * 250 + 20] ^= 0x01
        decoded, events = decode_stream(bytes(blob))
        assert len(decoded) == 99
        assert decoded == frames[:50] + frames[51:]
        assert any(e.kind == CRC_MISMATCH for e in events)

    def test_stream_starting_mid_frame(self):
        rng = np.random.default_rng(4)
        frames = random_frames(rng, 10)
        data = b"".join(encode_frame(f) for f in frames)
        decoded, events = decode_stream(data[97:])
        assert decoded == frames[1:]
        assert events[0].kind == RESYNC

    def test_trailing_partial_frame(self):
        frames = random_frames(np.random.default_rng(5), 3)
        data = b"".join(encode_frame(f) for f in frames)
        decoded, events = decode_stream(data[:-10])
        assert decoded == frames[:2]
        assert events[-1].kind == TRUNCATED

    def test_garbage_between_frames(self):
        frames = random_frames(np.random.default_rng(6), 4)
        encoded = [encode_frame(f) for f in frames]
        data = encoded[0] + b"\x00\x01\x02" + encoded[1] + encoded[2] + encoded[3]
        decoded, events = decode_stream(data)
        assert decoded == frames
        assert sum(e.kind == RESYNC for e in events) == 1

    def test_bad_version_is_skipped(self):
        frames = random_frames(np.random.default_rng(7), 2)
        first = bytearray(encode_frame(frames[0]))
        first[2] = 9
        data = bytes(first) + encode_frame(frames[1])
        decoded, events = decode_stream(data)
        assert decoded == frames[1:]
        assert any(e.kind == BAD_VERSION for e in events)

    def test_pure_garbage(self):
        decoded, events = decode_stream(b"\x00" * 1000)
        assert decoded == []
        assert len(events) == 1 and events[0].kind == RESYNC

    def test_magic_inside_corrupt_frame_does_not_skip_good_frames(self):
        # Plant a spurious magic in a corrupted frame's payload; the scanner
        # must still recover every later frame.
        rng = np.random.default_rng(8)
        frames = random_frames(rng, 6)
        blob = bytearray(b"".join(encode_frame(f) for f in frames))
        blob[2 * 250 + 30 : 2 * 250 + 32] = MAGIC
        decoded, events = decode_stream(bytes(blob))
        assert decoded == frames[:2] + frames[3:]
        assert any(e.kind == CRC_MISMATCH for e in events)
