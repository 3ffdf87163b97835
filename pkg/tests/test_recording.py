import io

import numpy as np
import pytest

from capskin.core import SensorFrame
from capskin.errors import RecordingParseError
from capskin.recording import (
    GaugeSample,
    Recording,
    RecordingHeader,
    SensorDescriptor,
    read_recording,
    write_recording,
)


def header(taxels=4):
    return RecordingHeader(
        layout_id="finger-60",
        sensors=(SensorDescriptor(0, taxels),),
        start_epoch_ms=1234,
        gauge_unit="N",
    )


def frame(ts, seq, counts):
    return SensorFrame(timestamp_ms=ts, sensor_id=0, seq=seq, counts=np.asarray(counts))


def dumps(recording):
    buf = io.StringIO()
    write_recording(buf, recording)
    return buf.getvalue()


def loads(text):
    return read_recording(io.StringIO(text))


class TestRoundTrip:
    def test_empty_recording_is_header_only(self):
        text = dumps(Recording(header=header()))
        assert text.count("\n") == 1
        rec = loads(text)
        assert rec.header == header()
        assert rec.rows == []

    def test_mixed_rows_round_trip_byte_identical(self):
        rng = np.random.default_rng(0)
        rows = []
        ts = 0
        seq = 0
        for _ in range(10_000):
            ts += int(rng.integers(1, 5))
            if rng.random() < 0.75:
                rows.append(frame(ts, seq, rng.integers(0, 65536, size=4)))
                seq += 1
            else:
                rows.append(GaugeSample(ts, float(rng.normal() * 10), "N"))
        rec = Recording(header=header(), rows=rows)
        text = dumps(rec)
        rec2 = loads(text)
        assert dumps(rec2) == text
        assert len(rec2.rows) == 10_000

    def test_read_write_read_is_read(self, tmp_path):
        path = tmp_path / "capture.rec"
        rec = Recording(
            header=header(),
            rows=[frame(1, 0, [1, 2, 3, 4]), GaugeSample(2, 0.5, "N"), frame(3, 1, [4, 3, 2, 1])],
        )
        write_recording(path, rec)
        first = read_recording(path)
        write_recording(path, first)
        second = read_recording(path)
        assert dumps(first) == dumps(second)


class TestValidation:
    def test_unknown_channel_tag_names_line(self):
        text = dumps(Recording(header=header(), rows=[frame(1, 0, [1, 2, 3, 4])]))
        text += "Q 5 1.0 N\n"
        with pytest.raises(RecordingParseError) as err:
            loads(text)
        assert err.value.line_no == 3

    def test_malformed_frame_row_names_line(self):
        text = dumps(Recording(header=header()))
        text += "F 1 0 notanint 1 2 3 4\n"
        with pytest.raises(RecordingParseError) as err:
            loads(text)
        assert err.value.line_no == 2

    def test_bad_gauge_unit(self):
        with pytest.raises(ValueError):
            GaugeSample(0, 1.0, "psi")

    def test_out_of_order_rows_rejected(self):
        rec = Recording(header=header(), rows=[frame(5, 0, [1, 2, 3, 4]), GaugeSample(1, 0.0, "N")])
        with pytest.raises(ValueError):
            write_recording(io.StringIO(), rec)

    def test_unknown_sensor_rejected(self):
        rec = Recording(
            header=header(),
            rows=[SensorFrame(timestamp_ms=0, sensor_id=9, seq=0, counts=np.array([1, 2, 3, 4]))],
        )
        with pytest.raises(ValueError):
            rec.validate()

    def test_missing_header(self):
        with pytest.raises(RecordingParseError):
            loads("")


class TestAccessors:
    def test_series_extraction(self):
        rec = Recording(
            header=header(),
            rows=[
                frame(0, 0, [10, 20, 30, 40]),
                GaugeSample(1, 1.5, "N"),
                frame(33, 1, [11, 21, 31, 41]),
            ],
        )
        ts, counts = rec.taxel_series(2)
        assert list(ts) == [0.0, 33.0]
        assert list(counts) == [30.0, 31.0]
        gts, gv = rec.gauge_series()
        assert list(gts) == [1.0]
        assert list(gv) == [1.5]
