"""Traffic fingerprints: normalized 24-hour click distributions per domain."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Mapping

import numpy as np

from .ingest import EventStore

HOURS = 24
DEFAULT_MIN_CLICKS = 50


class UndefinedFingerprint(ValueError):
    """Raised for a domain with no clicks; its fingerprint does not exist."""


@dataclass(frozen=True)
class TrafficFingerprint:
    domain_id: str
    f: np.ndarray
    total_clicks: int
    as_of: date | None = None

    def __post_init__(self):
        if self.total_clicks <= 0:
            raise UndefinedFingerprint(f"{self.domain_id}: no clicks")

    def __eq__(self, other):
        if not isinstance(other, TrafficFingerprint):
            return NotImplemented
        return (self.domain_id == other.domain_id and self.total_clicks == other.total_clicks
                and self.as_of == other.as_of and np.array_equal(self.f, other.f))

    __hash__ = None


def compute_fingerprint(counts) -> tuple[np.ndarray, int]:
    """Return ``(f, total_clicks)`` with ``f = counts / counts.sum()``."""
    c = np.asarray(counts)
    if c.shape != (HOURS,):
        raise ValueError(f"expected {HOURS} hourly counts, got shape {c.shape}")
    if np.any(c < 0):
        raise ValueError("hourly counts must be non-negative")
    total = int(c.sum())
    if total == 0:
        raise UndefinedFingerprint("all-zero hourly counts")
    return c.astype(np.float64) / total, total


def domain_hourly_counts(store: EventStore, up_to: date | None = None,
                         exclude: Iterable[tuple[str, date]] | None = None,
                         before: date | None = None) -> tuple[list[str], np.ndarray]:
    """Hourly click counts for every domain in ``store``.

    Counts events on days ``<= up_to`` (or ``< before``), dropping any
    ``(domain, day)`` in ``exclude`` (defaults to ``store.blocked_days``).
    Returns the sorted domain list and a ``(n_domains, 24)`` count matrix.
    """
    idx = store.index
    keep = np.ones(len(idx.dd_dom), dtype=bool)
    if up_to is not None:
        keep &= idx.dd_day <= up_to.toordinal()
    if before is not None:
        keep &= idx.dd_day < before.toordinal()
    keep &= ~idx.dd_rows(store.blocked_days if exclude is None else exclude)
    counts = np.zeros((len(idx.domains), HOURS), dtype=np.int64)
    np.add.at(counts, idx.dd_dom[keep], idx.dd_counts[keep])
    return idx.domains, counts


def fingerprints_from_counts(domains: list[str], counts: np.ndarray,
                             as_of: date | None = None) -> dict[str, TrafficFingerprint]:
    out = {}
    totals = counts.sum(axis=1)
    for i in np.flatnonzero(totals > 0):
        f, total = compute_fingerprint(counts[i])
        out[domains[i]] = TrafficFingerprint(domains[i], f, total, as_of)
    return out


def update_fingerprints(store: EventStore, up_to: date | None = None) -> dict[str, TrafficFingerprint]:
    """Recompute every domain's fingerprint from full history through ``up_to``.

    Days listed in ``store.blocked_days`` for a domain are left out; domains
    with no remaining clicks are omitted. Keys come out sorted.
    """
    domains, counts = domain_hourly_counts(store, up_to=up_to)
    if up_to is None and len(store):
        up_to = store.days[-1]
    return fingerprints_from_counts(domains, counts, up_to)


def eligible_domains(fingerprints: Mapping[str, TrafficFingerprint],
                     min_clicks: int = DEFAULT_MIN_CLICKS) -> set[str]:
    if min_clicks < 1:
        raise ValueError("min_clicks must be >= 1")
    return {d for d, fp in fingerprints.items() if fp.total_clicks >= min_clicks}


def fingerprint_matrix(fingerprints: Mapping[str, TrafficFingerprint],
                       domains: Iterable[str] | None = None) -> tuple[list[str], np.ndarray]:
    keys = sorted(fingerprints if domains is None else domains)
    if not keys:
        return keys, np.zeros((0, HOURS))
    return keys, np.vstack([fingerprints[d].f for d in keys])


def write_snapshot(fingerprints: Mapping[str, TrafficFingerprint]) -> str:
    """Snapshot CSV: ``domain_id,total_clicks,as_of,f0..f23`` at 12 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain_id", "total_clicks", "as_of"] + [f"f{i}" for i in range(HOURS)])
    for d in sorted(fingerprints):
        fp = fingerprints[d]
        w.writerow([d, fp.total_clicks, fp.as_of.isoformat() if fp.as_of else ""]
                   + [f"{v:.12g}" for v in fp.f])
    return buf.getvalue()


def read_snapshot(text: str) -> dict[str, TrafficFingerprint]:
    out = {}
    for row in csv.DictReader(io.StringIO(text)):
        f = np.array([float(row[f"f{i}"]) for i in range(HOURS)])
        as_of = date.fromisoformat(row["as_of"]) if row["as_of"] else None
        out[row["domain_id"]] = TrafficFingerprint(row["domain_id"], f, int(row["total_clicks"]), as_of)
    return out
