"""Click/conversion event logs: parsing, validation and the in-memory store."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone, tzinfo
from decimal import Decimal, InvalidOperation
from typing import IO, Iterable, Sequence
from zoneinfo import ZoneInfo

import numpy as np

log = logging.getLogger(__name__)

FIELDS = ("timestamp", "domain_id", "campaign_id", "cost", "revenue", "converted")
FORMATS = ("csv", "jsonl")
UTC = timezone.utc


class ConfigError(ValueError):
    """Unknown input format or other unusable configuration."""


@dataclass(frozen=True, slots=True)
class ClickEvent:
    timestamp: datetime  # tz-aware, UTC, second precision
    domain_id: str
    campaign_id: str
    cost: Decimal
    revenue: Decimal
    converted: bool

    def __post_init__(self):
        if self.timestamp.tzinfo is None:
            raise ValueError("timestamp must be timezone-aware")
        if self.cost < 0:
            raise ValueError("negative cost")
        if self.revenue < 0:
            raise ValueError("negative revenue")
        if self.revenue > 0 and not self.converted:
            raise ValueError("revenue > 0 with converted=false")

    @property
    def hour(self) -> int:
        """Hour of day in UTC."""
        return self.timestamp.astimezone(UTC).hour

    def local(self, tz: tzinfo = UTC) -> tuple[date, int]:
        """(civil day, hour of day) in ``tz``."""
        t = self.timestamp.astimezone(tz)
        return t.date(), t.hour


@dataclass(frozen=True, slots=True)
class RecordError:
    line: int
    reason: str


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError("timestamp has no UTC offset")
    return ts.astimezone(UTC).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(UTC).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_money(value, name: str) -> Decimal:
    if isinstance(value, bool) or value is None:
        raise ValueError(f"invalid {name}")
    try:
        amount = Decimal(str(value).strip()) if not isinstance(value, Decimal) else value
    except InvalidOperation:
        raise ValueError(f"unparseable {name}") from None
    if not amount.is_finite():
        raise ValueError(f"unparseable {name}")
    return amount


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"invalid converted flag {value!r}")


def _build_event(record: dict) -> ClickEvent:
    missing = [f for f in FIELDS if f not in record or record[f] is None]
    if missing:
        raise ValueError("missing field(s): " + ", ".join(missing))
    try:
        ts = parse_timestamp(str(record["timestamp"]))
    except ValueError:
        raise ValueError("unparseable timestamp") from None
    domain = str(record["domain_id"]).strip()
    if not domain:
        raise ValueError("empty domain_id")
    return ClickEvent(
        timestamp=ts,
        domain_id=domain,
        campaign_id=str(record["campaign_id"]).strip(),
        cost=_parse_money(record["cost"], "cost"),
        revenue=_parse_money(record["revenue"], "revenue"),
        converted=_parse_bool(record["converted"]),
    )


def parse_events(stream: IO, fmt: str) -> tuple[list[ClickEvent], list[RecordError]]:
    """Parse a CSV or JSONL event log.

    Bad records are skipped and reported as :class:`RecordError` with their
    1-based physical line number; valid events keep input order. ``stream``
    may be binary or text.
    """
    if fmt not in FORMATS:
        raise ConfigError(f"unknown input format {fmt!r} (expected one of {FORMATS})")
    raw = stream.read()
    text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw

    events: list[ClickEvent] = []
    errors: list[RecordError] = []
    if fmt == "csv":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None:
            return events, errors
        if tuple(h.strip() for h in header) != FIELDS:
            raise ConfigError(f"CSV header must be {','.join(FIELDS)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(FIELDS):
                errors.append(RecordError(line, f"expected {len(FIELDS)} columns, got {len(row)}"))
                continue
            try:
                events.append(_build_event(dict(zip(FIELDS, row))))
            except ValueError as exc:
                errors.append(RecordError(line, str(exc)))
    else:
        for line, chunk in enumerate(text.splitlines(), start=1):
            if not chunk.strip():
                continue
            try:
                record = json.loads(chunk, parse_float=Decimal, parse_int=Decimal)
            except json.JSONDecodeError:
                errors.append(RecordError(line, "malformed JSON"))
                continue
            if not isinstance(record, dict):
                errors.append(RecordError(line, "record is not an object"))
                continue
            try:
                events.append(_build_event(record))
            except ValueError as exc:
                errors.append(RecordError(line, str(exc)))
    return events, errors


def read_events(path, fmt: str | None = None) -> tuple[list[ClickEvent], list[RecordError]]:
    path = str(path)
    if fmt is None:
        fmt = "jsonl" if path.endswith((".jsonl", ".ndjson")) else "csv"
    with open(path, "rb") as fh:
        return parse_events(fh, fmt)


def serialize_events(events: Iterable[ClickEvent], fmt: str) -> str:
    if fmt not in FORMATS:
        raise ConfigError(f"unknown format {fmt!r}")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(FIELDS)
        for e in events:
            writer.writerow([format_timestamp(e.timestamp), e.domain_id, e.campaign_id,
                             str(e.cost), str(e.revenue), "true" if e.converted else "false"])
        return buf.getvalue()
    lines = []
    for e in events:
        # str(Decimal) is always a valid JSON number for finite values
        lines.append(
            "{"
            f'"timestamp": {json.dumps(format_timestamp(e.timestamp))}, '
            f'"domain_id": {json.dumps(e.domain_id)}, '
            f'"campaign_id": {json.dumps(e.campaign_id)}, '
            f'"cost": {e.cost}, "revenue": {e.revenue}, '
            f'"converted": {"true" if e.converted else "false"}'
            "}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def serialize_errors(errors: Iterable[RecordError]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["line", "reason"])
    for err in errors:
        writer.writerow([err.line, err.reason])
    return buf.getvalue()


class EventStore:
    """Append-only collection of click events with per-domain/day/hour indexes.

    Hour-of-day and civil day are computed in one timezone ``tz`` for all
    events. ``blocked_days`` holds ``(domain_id, date)`` pairs whose traffic
    is censored by blocking and must not feed fingerprints.
    """

    def __init__(self, events: Iterable[ClickEvent] = (), tz: tzinfo | str = UTC,
                 blocked_days: Iterable[tuple[str, date]] = ()):
        self.tz = ZoneInfo(tz) if isinstance(tz, str) else tz
        self._events: list[ClickEvent] = []
        self.blocked_days: set[tuple[str, date]] = set(blocked_days)
        self._index: _Index | None = None
        self.append(events)

    def append(self, events: Iterable[ClickEvent]) -> None:
        """Append one batch; indexes are rebuilt lazily on next read."""
        batch = list(events)
        if batch:
            self._events.extend(batch)
            self._index = None

    def mark_blocked(self, pairs: Iterable[tuple[str, date]]) -> None:
        self.blocked_days.update(pairs)

    def __len__(self) -> int:
        return len(self._events)

    @property
    def events(self) -> tuple[ClickEvent, ...]:
        return tuple(self._events)

    @property
    def index(self) -> _Index:
        if self._index is None:
            self._index = _Index(self._events, self.tz)
        return self._index

    @property
    def domains(self) -> list[str]:
        return list(self.index.domains)

    @property
    def days(self) -> list[date]:
        return [date.fromordinal(int(d)) for d in np.unique(self.index.day)]

    def span(self) -> tuple[datetime, datetime] | None:
        if not self._events:
            return None
        ts = self.index.ts
        return (datetime.fromtimestamp(int(ts.min()), UTC), datetime.fromtimestamp(int(ts.max()), UTC))

    def between(self, start: datetime | None = None, end: datetime | None = None) -> list[ClickEvent]:
        """Events with ``start <= timestamp < end`` in storage order."""
        mask = self._range_mask(start, end)
        return [self._events[i] for i in np.flatnonzero(mask)]

    def for_domain(self, domain_id: str) -> list[ClickEvent]:
        rows = self.index.rows_by_domain.get(domain_id)
        if rows is None:
            return []
        return [self._events[i] for i in rows]

    def on_day(self, day: date) -> list[ClickEvent]:
        return [self._events[i] for i in np.flatnonzero(self.index.day == day.toordinal())]

    def subset(self, mask: np.ndarray) -> EventStore:
        return EventStore((self._events[i] for i in np.flatnonzero(mask)), self.tz,
                          self.blocked_days)

    def _range_mask(self, start, end) -> np.ndarray:
        ts = self.index.ts
        mask = np.ones(len(ts), dtype=bool)
        if start is not None:
            mask &= ts >= int(start.timestamp())
        if end is not None:
            mask &= ts < int(end.timestamp())
        return mask


class _Index:
    """Columnar view of the events used by the numeric modules."""

    def __init__(self, events: Sequence[ClickEvent], tz: tzinfo):
        n = len(events)
        self.domains = sorted({e.domain_id for e in events})
        pos = {d: i for i, d in enumerate(self.domains)}
        self.ts = np.fromiter((int(e.timestamp.timestamp()) for e in events), dtype=np.int64, count=n)
        self.dom = np.fromiter((pos[e.domain_id] for e in events), dtype=np.int64, count=n)
        self.day = np.empty(n, dtype=np.int64)
        self.hour = np.empty(n, dtype=np.int64)
        # zone offsets are whole quarter-hours, so local (day, hour) is constant
        # within each 15-minute UTC bucket
        cache: dict[int, tuple[int, int]] = {}
        for i, t in enumerate(self.ts.tolist()):
            bucket = t - t % 900
            loc = cache.get(bucket)
            if loc is None:
                lt = datetime.fromtimestamp(bucket, UTC).astimezone(tz)
                loc = (lt.date().toordinal(), lt.hour)
                cache[bucket] = loc
            self.day[i], self.hour[i] = loc
        self.converted = np.fromiter((e.converted for e in events), dtype=bool, count=n)
        self.cost = np.empty(n, dtype=object)
        self.cost[:] = [e.cost for e in events]
        self.revenue = np.empty(n, dtype=object)
        self.revenue[:] = [e.revenue for e in events]

        order = np.argsort(self.dom, kind="stable")
        bounds = np.searchsorted(self.dom[order], np.arange(len(self.domains) + 1))
        self.rows_by_domain = {d: order[bounds[i]:bounds[i + 1]] for i, d in enumerate(self.domains)}

        # per (domain, day) hourly click counts
        if n:
            keys = self.dom * 10_000_000 + self.day
            uniq, inv = np.unique(keys, return_inverse=True)
            self.dd_dom = uniq // 10_000_000
            self.dd_day = uniq % 10_000_000
            self.dd_counts = np.zeros((len(uniq), 24), dtype=np.int64)
            np.add.at(self.dd_counts, (inv, self.hour), 1)
        else:
            self.dd_dom = np.zeros(0, dtype=np.int64)
            self.dd_day = np.zeros(0, dtype=np.int64)
            self.dd_counts = np.zeros((0, 24), dtype=np.int64)

    def dd_rows(self, pairs: Iterable[tuple[str, date]]) -> np.ndarray:
        """Boolean mask over (domain, day) rows for the given pairs."""
        mask = np.zeros(len(self.dd_dom), dtype=bool)
        if not len(mask):
            return mask
        pos = {d: i for i, d in enumerate(self.domains)}
        keys = [pos[d] * 10_000_000 + day.toordinal() for d, day in pairs if d in pos]
        if keys:
            mask |= np.isin(self.dd_dom * 10_000_000 + self.dd_day, keys)
        return mask


def split_train_test(store: EventStore, split_instant: datetime) -> tuple[EventStore, EventStore]:
    """Events strictly before ``split_instant`` go to train, the rest to test."""
    if split_instant.tzinfo is None:
        raise ValueError("split_instant must be timezone-aware")
    span = store.span()
    if span is not None and not (span[0] <= split_instant <= span[1]):
        log.warning("split %s outside event span %s..%s; one partition is empty",
                    split_instant.isoformat(), span[0].isoformat(), span[1].isoformat())
    before = store.index.ts < int(split_instant.timestamp())
    return store.subset(before), store.subset(~before)


def day_start(day: date, tz: tzinfo) -> datetime:
    """First instant of civil ``day`` in ``tz``."""
    return datetime(day.year, day.month, day.day, tzinfo=tz)


def hourly_counts(store: EventStore, domain: str, exclude: Iterable[date] = ()) -> np.ndarray:
    """Clicks of ``domain`` per local hour of day, skipping ``exclude`` days."""
    out = np.zeros(24, dtype=np.int64)
    idx = store.index
    rows = idx.rows_by_domain.get(domain)
    if rows is None:
        return out
    excluded = np.array(sorted({d.toordinal() for d in exclude}), dtype=np.int64)
    keep = rows[~np.isin(idx.day[rows], excluded)]
    np.add.at(out, idx.hour[keep], 1)
    return out


def next_day(day: date) -> date:
    return day + timedelta(days=1)
