"""Bit-exact framing codec for the taxel serial stream.

Frame layout (250 bytes for the standard 120-taxel two-finger stream):

  offset  size  field
  0       2     magic 0xD5 0x4B
  2       1     version (currently 1)
  3       1     sensor_id
  4       4     seq, little-endian unsigned
  8       2*n   counts, n x little-endian unsigned 16-bit
  8+2n    2     CRC-16/CCITT-FALSE over all preceding bytes, little-endian

CRC-16/CCITT-FALSE: polynomial 0x1021, init 0xFFFF, no reflection, no final
xor; check value for ASCII "123456789" is 0x29B1. The real PCB's protocol is
unpublished, so this codec is a clean-room stand-in with the same payload
semantics: counts are the post-averaging values (the readout board measures
each taxel four times and averages before transmitting).

Wire frames carry no timestamp; the decoder assigns one from seq at the
nominal 30 Hz frame rate.

decode_stream never raises on malformed input. Corruption surfaces as
CodecEvent diagnostics and the scanner resynchronizes at the next magic
occurrence, so one corrupted frame cannot take down the rest of a capture.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import FRAME_PERIOD_MS, SensorFrame
from .errors import RangeExceededError

MAGIC = b"\xd5\x4b"
VERSION = 1
HEADER = struct.Struct("<2sBBI")
CRC_SIZE = 2

# Diagnostic kinds emitted by decode_stream.
RESYNC = "resync"
CRC_MISMATCH = "crc_mismatch"
BAD_VERSION = "bad_version"
TRUNCATED = "truncated"


def frame_length(taxel_count: int = 120) -> int:
    return HEADER.size + 2 * taxel_count + CRC_SIZE


_CRC_TABLE = None


def _crc_table() -> list[int]:
    global _CRC_TABLE
    if _CRC_TABLE is None:
        table = []
        for byte in range(256):
            crc = byte << 8
            for _ in range(8):
                crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
            table.append(crc)
        _CRC_TABLE = table
    return _CRC_TABLE


def crc16_ccitt_false(data: bytes) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, unreflected)."""
    table = _crc_table()
    crc = 0xFFFF
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ table[((crc >> 8) ^ byte) & 0xFF]
    return crc


@dataclass(frozen=True)
class CodecEvent:
    """One decoder diagnostic: what happened and at which byte offset."""

    kind: str
    offset: int
    detail: str = ""


def encode_frame(frame: SensorFrame) -> bytes:
    """Encode a frame into its canonical wire bytes.

    Raises RangeExceededError if any count exceeds the unsigned 16-bit
    payload range.
    """
    counts = frame.counts
    if (counts > 0xFFFF).any():
        raise RangeExceededError(
            f"count {int(counts.max())} exceeds the u16 wire payload"
        )
    header = HEADER.pack(MAGIC, VERSION, frame.sensor_id & 0xFF, frame.seq & 0xFFFFFFFF)
    payload = counts.astype("<u2").tobytes()
    body = header + payload
    return body + struct.pack("<H", crc16_ccitt_false(body))


def decode_frame(
    data: bytes, taxel_count: int = 120, period_ms: float = FRAME_PERIOD_MS
) -> SensorFrame:
    """Decode exactly one frame from bytes of the exact frame length.

    The timestamp is synthesized as round(seq * period_ms) since the wire
    format carries none. Raises ValueError on any malformation; use
    decode_stream for tolerant scanning.
    """
    expected = frame_length(taxel_count)
    if len(data) != expected:
        raise ValueError(f"expected {expected} bytes, got {len(data)}")
    magic, version, sensor_id, seq = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError("bad magic")
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    (crc,) = struct.unpack_from("<H", data, expected - CRC_SIZE)
    if crc != crc16_ccitt_false(data[: expected - CRC_SIZE]):
        raise ValueError("CRC mismatch")
    counts = np.frombuffer(data, dtype="<u2", count=taxel_count, offset=HEADER.size)
    return SensorFrame(
        timestamp_ms=round(seq * period_ms),
        sensor_id=sensor_id,
        seq=seq,
        counts=counts.astype(np.int64),
    )


def decode_stream(
    data: bytes, taxel_count: int = 120, period_ms: float = FRAME_PERIOD_MS
) -> tuple[list[SensorFrame], list[CodecEvent]]:
    """Scan arbitrary bytes for frames; never aborts.

    Valid frames are emitted in order. Any fault (garbage before a magic,
    CRC failure, unknown version, trailing partial frame) produces one
    CodecEvent and the scanner resumes just past the failed magic, so a
    later valid frame is never skipped.
    """
    flen = frame_length(taxel_count)
    frames: list[SensorFrame] = []
    events: list[CodecEvent] = []
    pos = 0
    while pos < len(data):
        found = data.find(MAGIC, pos)
        if found < 0:
            events.append(CodecEvent(RESYNC, pos, f"skipped {len(data) - pos} trailing bytes"))
            break
        if found > pos:
            events.append(CodecEvent(RESYNC, pos, f"skipped {found - pos} bytes to next magic"))
        if found + flen > len(data):
            events.append(
                CodecEvent(TRUNCATED, found, f"{len(data) - found} bytes left of {flen}")
            )
            break
        chunk = data[found : found + flen]
        version = chunk[2]
        if version != VERSION:
            events.append(CodecEvent(BAD_VERSION, found, f"version {version}"))
            pos = found + len(MAGIC)
            continue
        body = chunk[: flen - CRC_SIZE]
        (crc,) = struct.unpack_from("<H", chunk, flen - CRC_SIZE)
        if crc != crc16_ccitt_false(body):
            events.append(CodecEvent(CRC_MISMATCH, found))
            pos = found + len(MAGIC)
            continue
        _, _, sensor_id, seq = HEADER.unpack_from(chunk)
        counts = np.frombuffer(chunk, dtype="<u2", count=taxel_count, offset=HEADER.size)
        frames.append(
            SensorFrame(
                timestamp_ms=round(seq * period_ms),
                sensor_id=sensor_id,
                seq=seq,
                counts=counts.astype(np.int64),
            )
        )
        pos = found + flen
    return frames, events
