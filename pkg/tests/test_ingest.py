import io
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citypulse.errors import ConfigError, DataError
from citypulse.ingest import (GeoEvent, RejectionReport, filter_workdays, parse_events,
                              parse_timestamp, quarter_bin, write_events_ndjson)

NDJSON_ROW = '{"u":"a1","t":"2013-03-05T10:07:00+01:00","lon":-3.70,"lat":40.42}'


def test_parse_ndjson_row_maps_fields():
    events, report = parse_events(io.StringIO(NDJSON_ROW), "ndjson")
    assert report.rejected == 0
    (event,) = events
    assert event.user_id == "a1"
    assert event.lon == -3.70
    assert event.lat == 40.42
    assert event.timestamp.isoformat() == "2013-03-05T10:07:00+01:00"


def test_lat_out_of_range_rejected():
    row = '{"u":"a1","t":"2013-03-05T10:07:00+01:00","lon":-3.70,"lat":95.0}'
    events, report = parse_events(io.StringIO(row), "ndjson")
    assert events == []
    assert report.entries == [(1, "lat out of range")]


def test_ten_row_file_with_two_malformed():
    good = [f'{{"u":"u{i}","t":"2013-03-05T0{i}:00:00+01:00","lon":1.0,"lat":2.0}}'
            for i in range(8)]
    rows = good[:4] + ["not json"] + good[4:] + ['{"u":"x","lon":1.0,"lat":2.0}']
    events, report = parse_events(io.StringIO("\n".join(rows)), "ndjson")
    assert len(events) == 8
    assert report.rejected == 2
    assert report.total_rows == 10
    assert [line for line, _ in report.entries] == [5, 10]


def test_parse_csv_with_optional_columns():
    csv_text = ("user_id,timestamp,lon,lat,lang,device,text\n"
                "a1,2013-03-05T10:07:00+01:00,-3.70,40.42,es,android,hola\n"
                "a2,2013-03-05T11:00:00+01:00,-3.71,40.43,,,\n")
    events, report = parse_events(io.StringIO(csv_text), "csv")
    assert report.rejected == 0
    assert events[0].lang == "es" and events[0].text == "hola"
    assert events[1].lang is None and events[1].device is None


def test_csv_missing_required_column_is_fatal():
    with pytest.raises(DataError, match="missing column"):
        parse_events(io.StringIO("user_id,timestamp,lon\na,2013-01-01T00:00:00Z,1\n"), "csv")


def test_unknown_format_rejected():
    with pytest.raises(ConfigError):
        parse_events(io.StringIO(""), "parquet")


def test_naive_timestamp_rejected():
    row = '{"u":"a1","t":"2013-03-05T10:07:00","lon":-3.70,"lat":40.42}'
    events, report = parse_events(io.StringIO(row), "ndjson")
    assert events == []
    assert "no UTC offset" in report.entries[0][1]


def test_zulu_suffix_accepted():
    ts = parse_timestamp("2013-03-05T10:07:00Z")
    assert ts.utcoffset().total_seconds() == 0


def test_ordering_preserved_and_empty_lines_skipped():
    rows = "\n".join([
        '{"u":"b","t":"2013-03-05T10:00:00Z","lon":0.0,"lat":0.0}',
        "",
        '{"u":"a","t":"2013-03-05T11:00:00Z","lon":0.0,"lat":0.0}',
    ])
    events, _ = parse_events(io.StringIO(rows), "ndjson")
    assert [e.user_id for e in events] == ["b", "a"]


events_strategy = st.lists(
    st.builds(
        GeoEvent,
        user_id=st.text(st.characters(min_codepoint=33, max_codepoint=126), min_size=1, max_size=8),
        timestamp=st.datetimes(
            min_value=datetime(2012, 1, 1), max_value=datetime(2013, 12, 31),
            timezones=st.just(timezone.utc)),
        lon=st.floats(min_value=-180, max_value=180, allow_nan=False),
        lat=st.floats(min_value=-90, max_value=90, allow_nan=False),
        lang=st.none() | st.just("es"),
        device=st.none() | st.just("android"),
        text=st.none() | st.text(st.characters(min_codepoint=32, max_codepoint=1000),
                                 min_size=1, max_size=20),
    ),
    max_size=8,
)


@settings(max_examples=30, deadline=None)
@given(events_strategy)
def test_ndjson_round_trip_identity(tmp_path_factory, events):
    path = tmp_path_factory.mktemp("rt") / "events.ndjson"
    write_events_ndjson(events, path)
    parsed, report = parse_events(path, "ndjson")
    assert report.rejected == 0
    assert parsed == events


def _event(ts: str) -> GeoEvent:
    return GeoEvent("u", parse_timestamp(ts), 0.0, 0.0)


def test_filter_workdays_keeps_tue_wed_thu():
    wednesday = _event("2013-03-06T12:00:00+01:00")
    saturday = _event("2013-03-09T12:00:00+01:00")
    kept = filter_workdays([wednesday, saturday], "Europe/Madrid")
    assert kept == [wednesday]


def test_filter_workdays_uses_local_weekday():
    # Monday 23:30 UTC is Tuesday 00:30 in Madrid (UTC+1 in March)
    boundary = _event("2013-03-04T23:30:00Z")
    assert filter_workdays([boundary], "Europe/Madrid") == [boundary]
    assert filter_workdays([boundary], "UTC") == []


def test_filter_workdays_idempotent():
    events = [_event("2013-03-05T10:00:00Z"), _event("2013-03-09T10:00:00Z"),
              _event("2013-03-07T01:00:00Z")]
    once = filter_workdays(events, "Europe/Madrid")
    assert filter_workdays(once, "Europe/Madrid") == once


def test_unknown_timezone_is_fatal():
    with pytest.raises(ConfigError, match="timezone"):
        filter_workdays([], "Mars/Olympus_Mons")


@pytest.mark.parametrize("clock,expected", [
    ("00:00", 0), ("10:07", 40), ("23:59", 95), ("12:00", 48), ("07:59", 31),
])
def test_quarter_bin_examples(clock, expected):
    ts = parse_timestamp(f"2013-03-05T{clock}:00+01:00")
    assert quarter_bin(ts, "Europe/Madrid") == expected


def test_quarter_bin_partitions_the_day():
    hits = [0] * 96
    for minute in range(24 * 60):
        ts = parse_timestamp(f"2013-03-05T{minute // 60:02d}:{minute % 60:02d}:30+01:00")
        hits[quarter_bin(ts, "Europe/Madrid")] += 1
    assert hits == [15] * 96


def test_quarter_bin_converts_timezone():
    ts = parse_timestamp("2013-03-05T23:30:00Z")  # 00:30 next day in Madrid
    assert quarter_bin(ts, "Europe/Madrid") == 2
    assert quarter_bin(ts, "UTC") == 94


def test_rejection_report_merge():
    left = RejectionReport(entries=[(7, "bad")], total_rows=10, parsed=9)
    right = RejectionReport(entries=[(2, "worse")], total_rows=5, parsed=4)
    merged = left.merge(right)
    assert merged.total_rows == 15
    assert merged.parsed == 13
    assert merged.entries == [(2, "worse"), (7, "bad")]


def test_rejection_report_csv(tmp_path):
    report = RejectionReport(entries=[(3, "lat out of range"), (1, "invalid json")])
    path = tmp_path / "rej.csv"
    report.write_csv(path)
    assert path.read_text() == "line,reason\n1,invalid json\n3,lat out of range\n"
