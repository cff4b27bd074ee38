import gzip

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import frame, small_log
from dreamcycle.experience import (ChannelMismatch, EventRecord, ExperienceLog, InvalidEvent,
                                   MalformedLog, MissingChannel, NonMonotonicTick, RangeViolation,
                                   deserialize_log, read_log, record_tick, serialize_log,
                                   validate_log, write_log)


def test_record_tick_appends_without_mutating():
    empty = ExperienceLog("r", "e")
    one = record_tick(empty, frame(0, (0.1, 0.2)), "forward")
    assert empty.frames == ()
    assert len(one.frames) == 1 and one.actions == ((0, "forward"),)
    assert one.channels == ("a", "b")


def test_record_tick_rejects_repeated_tick():
    log = record_tick(ExperienceLog("r", "e"), frame(5, (0, 0)), "stay")
    with pytest.raises(NonMonotonicTick):
        record_tick(log, frame(5, (0, 0)), "stay")


def test_record_tick_rejects_changed_channels():
    log = record_tick(ExperienceLog("r", "e"), frame(0, (0, 0)), "stay")
    with pytest.raises(ChannelMismatch):
        record_tick(log, frame(1, (0, 0), channels=("a", "c")), "stay")


def test_event_must_share_frame_tick():
    with pytest.raises(InvalidEvent):
        record_tick(ExperienceLog("r", "e"), frame(3, (0, 0)), "stay", [EventRecord(2, "pain", "a")])


def test_validate_flags_out_of_range_value():
    log = small_log([(0.2, 0.3), (1.5, 0.3)])
    assert validate_log(log) == [RangeViolation(1, "a")]


def test_validate_flags_pain_without_channel():
    log = small_log([(0.2, 0.3)], events=[(0, "pain")])
    assert validate_log(log) == [MissingChannel(0)]


def test_valid_log_has_no_violations():
    log = small_log([(0.2, 0.3), (0.9, 0.1)], ["forward", "stay"], [(1, "pain", "a")])
    assert validate_log(log) == []


def test_roundtrip_plain_and_gzip(tmp_path):
    log = small_log([(0.2, 0.3), (0.9, 0.1)], ["forward", "stay"], [(1, "pain", "a"), (1, "charge_start")])
    assert deserialize_log(serialize_log(log)) == log
    p = write_log(tmp_path / "x.explog.gz", log)
    assert p.read_bytes()[:2] == b"\x1f\x8b"
    assert read_log(p) == log
    assert gzip.decompress(p.read_bytes()) == serialize_log(log)


def test_truncated_stream_reports_offset():
    data = serialize_log(small_log([(0.2, 0.3), (0.4, 0.5)]))
    with pytest.raises(MalformedLog) as exc:
        deserialize_log(data[:-5])
    assert exc.value.offset == len(data) - 5


def test_bad_line_reports_its_byte_offset():
    data = serialize_log(small_log([(0.2, 0.3), (0.4, 0.5)]))
    lines = data.split(b"\n")
    broken = b"\n".join(lines[:2] + [b"{not json"] + lines[3:])
    with pytest.raises(MalformedLog) as exc:
        deserialize_log(broken)
    assert exc.value.offset == len(lines[0]) + len(lines[1]) + 2


def test_missing_header_schema():
    with pytest.raises(MalformedLog):
        deserialize_log(b'{"schema":99}\n')


values = st.floats(0.0, 1.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(values, values), min_size=1, max_size=20),
       st.lists(st.sampled_from(["forward", "stay", "turn_left"]), min_size=20, max_size=20))
def test_serialization_roundtrip_property(rows, acts):
    log = small_log(rows, acts[:len(rows)])
    data = serialize_log(log)
    back = deserialize_log(data)
    assert back == log
    assert serialize_log(back) == data
