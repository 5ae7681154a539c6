import io
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal
from zoneinfo import ZoneInfo

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpopt.ingest import (
    ClickEvent,
    ConfigError,
    EventStore,
    hourly_counts,
    parse_events,
    serialize_errors,
    serialize_events,
    split_train_test,
)

from conftest import ev, random_events
from oracles import tally

HEADER = "timestamp,domain_id,campaign_id,cost,revenue,converted\n"


def test_csv_row_maps_fields():
    events, errors = parse_events(io.BytesIO((HEADER + "2021-04-01T13:05:00Z,dom1,camp1,0.10,0.00,false\n").encode()), "csv")
    assert errors == []
    (e,) = events
    assert e.hour == 13
    assert e.cost == Decimal("0.10")
    assert e.revenue == 0
    assert e.converted is False
    assert e.domain_id == "dom1" and e.campaign_id == "camp1"


def test_negative_cost_is_record_error():
    events, errors = parse_events(io.StringIO(HEADER + "2021-04-01T13:05:00Z,dom1,camp1,-0.10,0,false\n"), "csv")
    assert events == []
    assert len(errors) == 1
    assert errors[0].line == 2
    assert errors[0].reason == "negative cost"


MIXED = HEADER + """\
2021-04-01T00:00:00Z,a,c,0.10,0,false
2021-04-01T01:00:00Z,b,c,0.10,0,false
2021-04-01T02:00:00Z,a,c,-1,0,false
2021-04-01T03:00:00Z,c,c,0.10,5.00,true
2021-04-01T04:00:00Z,a,c,0.10,0,false
not-a-time,a,c,0.10,0,false
2021-04-01T06:00:00Z,d,c,0.10,0,false
2021-04-01T07:00:00Z,a,c,0.10,0,false
2021-04-01T08:00:00Z,b,c,0.20,0,false
2021-04-01T09:00:00Z,a,c,0.10,1.5,true
"""


def test_mixed_file_counts_and_order():
    events, errors = parse_events(io.StringIO(MIXED), "csv")
    # hand count: rows 3 and 6 (file lines 4 and 7) are bad
    assert len(events) == 8
    assert [e.line for e in errors] == [4, 7]
    assert [e.reason for e in errors] == ["negative cost", "unparseable timestamp"]
    assert [e.hour for e in events] == [0, 1, 3, 4, 6, 7, 8, 9]


@pytest.mark.parametrize("row,reason", [
    ("2021-04-01T00:00:00Z,a,c,0.10,2.0,false", "revenue > 0 with converted=false"),
    ("2021-04-01T00:00:00,a,c,0.10,0,false", "unparseable timestamp"),
    ("2021-04-01T00:00:00Z,a,c,abc,0,false", "unparseable cost"),
    ("2021-04-01T00:00:00Z,a,c,0.1,0,maybe", "invalid converted flag 'maybe'"),
    ("2021-04-01T00:00:00Z,a,c,0.1,0", "expected 6 columns, got 5"),
])
def test_invalid_records(row, reason):
    events, errors = parse_events(io.StringIO(HEADER + row + "\n"), "csv")
    assert events == []
    assert errors[0].reason == reason


def test_unknown_format_is_fatal():
    with pytest.raises(ConfigError):
        parse_events(io.StringIO(""), "xml")


def test_unreadable_stream_is_fatal():
    class Broken(io.RawIOBase):
        def read(self, *a):
            raise OSError("disk gone")

    with pytest.raises(OSError):
        parse_events(Broken(), "csv")


def test_jsonl_parse_and_errors():
    text = (
        '{"timestamp": "2021-04-01T13:05:00+02:00", "domain_id": "x", "campaign_id": "c", '
        '"cost": 0.25, "revenue": 1.5, "converted": true}\n'
        "{broken\n"
        '{"timestamp": "2021-04-01T13:05:00Z", "domain_id": "x", "campaign_id": "c", "cost": 0.25}\n'
    )
    events, errors = parse_events(io.StringIO(text), "jsonl")
    assert len(events) == 1
    assert events[0].hour == 11
    assert events[0].cost == Decimal("0.25")
    assert [(e.line, e.reason) for e in errors] == [
        (2, "malformed JSON"), (3, "missing field(s): revenue, converted")]


def test_error_report_csv():
    _, errors = parse_events(io.StringIO(MIXED), "csv")
    assert serialize_errors(errors) == "line,reason\n4,negative cost\n7,unparseable timestamp\n"


money = st.decimals(min_value=0, max_value=10_000, places=4, allow_nan=False, allow_infinity=False)
event_st = st.builds(
    lambda ts, d, c, cost, rev, conv: ClickEvent(ts, d, c, cost, rev if conv else Decimal(0), conv),
    st.datetimes(min_value=datetime(2000, 1, 1), max_value=datetime(2100, 1, 1),
                 timezones=st.just(timezone.utc)).map(lambda t: t.replace(microsecond=0)),
    st.text("abcxyz0123-_.", min_size=1, max_size=8),
    st.text("abc,\"' 01", max_size=6).map(str.strip),
    money, money, st.booleans(),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(event_st, max_size=20), st.sampled_from(["csv", "jsonl"]))
def test_round_trip(events, fmt):
    parsed, errors = parse_events(io.StringIO(serialize_events(events, fmt)), fmt)
    assert errors == []
    assert parsed == events


def test_split_instant_starts_test_period():
    # train = [2020-03-16, 2021-04-23), test = [2021-04-23, 2021-06-30]
    start, split, end = (datetime(2020, 3, 16, tzinfo=timezone.utc), datetime(2021, 4, 23, tzinfo=timezone.utc),
                         datetime(2021, 6, 30, tzinfo=timezone.utc))
    events = [ev(start), ev(split - timedelta(seconds=1)), ev(split), ev(end)]
    train, test = split_train_test(EventStore(events), split)
    assert train.events == tuple(events[:2])
    assert test.events == tuple(events[2:])


def test_split_before_everything(small_store, caplog):
    train, test = split_train_test(small_store, datetime(2000, 1, 1, tzinfo=timezone.utc))
    assert len(train) == 0 and len(test) == len(small_store)
    assert "outside event span" in caplog.text


def test_split_at_median(rng):
    events = random_events(rng, 100)
    store = EventStore(events)
    ts = sorted(e.timestamp for e in events)
    split = ts[50]
    train, test = split_train_test(store, split)
    assert train.events == tuple(e for e in events if e.timestamp < split)
    assert test.events == tuple(e for e in events if e.timestamp >= split)
    assert (len(train), len(test)) == (50, 50)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5 * 86400))
def test_split_partition(offset):
    events = random_events(np.random.default_rng(3), 60)
    store = EventStore(events)
    split = datetime(2021, 4, 1, tzinfo=timezone.utc) + timedelta(seconds=offset)
    train, test = split_train_test(store, split)
    ids = [id(e) for e in train.events] + [id(e) for e in test.events]
    assert sorted(ids) == sorted(id(e) for e in events)
    assert len(set(ids)) == len(events)


def test_hourly_counts_single_hour():
    events = [ev(f"2021-04-01T13:{m:02d}:00Z") for m in (0, 10, 59)]
    counts = hourly_counts(EventStore(events), "dom1")
    expected = np.zeros(24, dtype=int)
    expected[13] = 3
    assert np.array_equal(counts, expected)


def test_hourly_counts_full_exclusion(small_store):
    d = small_store.domains[0]
    days = {e.timestamp.date() for e in small_store.for_domain(d)}
    assert hourly_counts(small_store, d, days).sum() == 0


def test_hourly_counts_unknown_domain(small_store):
    assert not hourly_counts(small_store, "nope").any()


def test_hourly_counts_match_tally(rng):
    events = random_events(rng, 200)
    store = EventStore(events)
    ref = tally(events)
    for d in store.domains:
        expected = [0] * 24
        for (dom, _), row in ref.items():
            if dom == d:
                expected = [a + b for a, b in zip(expected, row)]
        got = hourly_counts(store, d)
        assert got.tolist() == expected
        assert got.sum() == len(store.for_domain(d))


def test_indexes_agree(small_store):
    by_domain = sorted((e for d in small_store.domains for e in small_store.for_domain(d)),
                       key=lambda e: id(e))
    by_time = sorted(small_store.between(), key=lambda e: id(e))
    assert by_domain == by_time
    assert small_store.between() == small_store.between()


def test_timezone_hour_and_day():
    e = ev("2021-04-01T23:30:00Z")
    store = EventStore([e], tz="Europe/Warsaw")  # UTC+2 in April
    assert hourly_counts(store, "dom1")[1] == 1
    assert store.days == [date(2021, 4, 2)]
    assert e.local(ZoneInfo("Europe/Warsaw")) == (date(2021, 4, 2), 1)


def test_half_hour_zone():
    e = ev("2021-04-01T10:45:00Z")
    store = EventStore([e], tz="Asia/Kolkata")  # UTC+5:30 -> 16:15
    assert hourly_counts(store, "dom1")[16] == 1


def test_append_only_batches(small_store):
    before = small_store.events
    small_store.append([ev("2030-01-01T00:00:00Z", domain="new")])
    assert small_store.events[:len(before)] == before
    assert "new" in small_store.domains
