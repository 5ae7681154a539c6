"""Nearest-centroid assignment of domains against a frozen cluster model."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import date
from typing import Mapping

import numpy as np

from .clustering import ClusterModel
from .fingerprint import (
    DEFAULT_MIN_CLICKS,
    TrafficFingerprint,
    domain_hourly_counts,
)
from .ingest import EventStore

UNASSIGNED = -1


class NoModel(ValueError):
    """The cluster model has no centroids."""


@dataclass
class AssignmentSnapshot:
    day: date
    assignments: dict[str, int] = field(default_factory=dict)
    unassigned: set[str] = field(default_factory=set)

    def cluster_of(self, domain_id: str) -> int:
        return self.assignments.get(domain_id, UNASSIGNED)

    def to_csv(self) -> str:
        """``day,domain_id,cluster_id`` rows, -1 for unassigned, sorted by domain."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["day", "domain_id", "cluster_id"])
        for d in sorted(self.assignments.keys() | self.unassigned):
            w.writerow([self.day.isoformat(), d, self.cluster_of(d)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> AssignmentSnapshot:
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty snapshot")
        snap = cls(date.fromisoformat(rows[0]["day"]))
        for row in rows:
            c = int(row["cluster_id"])
            if c == UNASSIGNED:
                snap.unassigned.add(row["domain_id"])
            else:
                snap.assignments[row["domain_id"]] = c
        return snap


def nearest_centroid(f: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the closest centroid for each row of ``f``; ties go to the lowest id."""
    f = np.atleast_2d(f)
    diff = f[:, None, :] - centroids[None, :, :]
    return np.argmin(np.einsum("ijk,ijk->ij", diff, diff), axis=1)


def assign_domain(fp: TrafficFingerprint, model: ClusterModel) -> int:
    if model.k == 0 or len(model.centroids) == 0:
        raise NoModel("model has no centroids")
    return int(nearest_centroid(fp.f, model.centroids)[0])


def assign_counts(domains: list[str], counts: np.ndarray, model: ClusterModel,
                  min_clicks: int, day: date) -> AssignmentSnapshot:
    """Snapshot from a ``(n_domains, 24)`` count matrix."""
    if model.k == 0 or len(model.centroids) == 0:
        raise NoModel("model has no centroids")
    totals = counts.sum(axis=1)
    snap = AssignmentSnapshot(day)
    eligible = np.flatnonzero(totals >= min_clicks)
    if len(eligible):
        f = counts[eligible] / totals[eligible, None]
        for i, c in zip(eligible.tolist(), nearest_centroid(f, model.centroids).tolist()):
            snap.assignments[domains[i]] = c
    for i in np.flatnonzero((totals > 0) & (totals < min_clicks)).tolist():
        snap.unassigned.add(domains[i])
    return snap


def daily_snapshot(store: EventStore, model: ClusterModel, day: date,
                   min_clicks: int = DEFAULT_MIN_CLICKS) -> AssignmentSnapshot:
    """Assign every domain using its fingerprint through ``day``.

    Blocked days recorded in the store are excluded; domains below
    ``min_clicks`` are listed as unassigned.
    """
    domains, counts = domain_hourly_counts(store, up_to=day)
    return assign_counts(domains, counts, model, min_clicks, day)


def assign_all(fingerprints: Mapping[str, TrafficFingerprint], model: ClusterModel) -> dict[str, int]:
    if not fingerprints:
        return {}
    keys = sorted(fingerprints)
    labels = nearest_centroid(np.vstack([fingerprints[d].f for d in keys]), model.centroids)
    return dict(zip(keys, labels.tolist()))
