"""Plot-ready tabular datasets for cluster centroids, hourly CR, profit trends and summaries."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .clustering import ClusterModel
from .fingerprint import HOURS
from .ingest import EventStore
from .rules import RuleKind, RuleSet, is_blocked
from .simulate import SimulationReport, moving_average

KINDS = ("centroid_fingerprints", "hourly_cr_by_cluster", "moving_avg_profit_per_click",
         "offline_summary_table")


class DatasetInvariantError(ValueError):
    pass


@dataclass
class FigureDataset:
    kind: str
    columns: list[str]
    rows: list[list]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_cell(v) for v in row])
        return buf.getvalue()

    def filename(self, run_id: str) -> str:
        return f"{self.kind}_{run_id}.csv"

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def _cell(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def file_digest(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha256(data).hexdigest()


def emit_centroids(model: ClusterModel, sources: Mapping[str, str] | None = None) -> FigureDataset:
    """One row per cluster with its 24 centroid components."""
    columns = ["cluster_id"] + [f"h{h}" for h in range(HOURS)]
    rows = [[c] + [float(v) for v in model.centroids[c]] for c in range(model.k)]
    return FigureDataset("centroid_fingerprints", columns, rows, {"sources": dict(sources or {})})


def emit_hourly_cr(store: EventStore, assignments: Mapping[str, int], rules: RuleSet,
                   sources: Mapping[str, str] | None = None) -> FigureDataset:
    """Per (cluster, hour) clicks, conversions and CR, annotated with the rule.

    ``blocked`` is 1 for hours the cluster's rule blocks; ``boundary`` marks
    the hour where blocking starts (``block``) or ends (``unblock``).
    """
    idx = store.index
    k = max([len(rules)] + [c + 1 for c in assignments.values()])
    dom_cluster = np.full(len(idx.domains), -1, dtype=np.int64)
    for j, d in enumerate(idx.domains):
        dom_cluster[j] = assignments.get(d, -1)
    ev_cluster = dom_cluster[idx.dom]
    member = ev_cluster >= 0
    clicks = np.zeros((k, HOURS), dtype=np.int64)
    conv = np.zeros((k, HOURS), dtype=np.int64)
    np.add.at(clicks, (ev_cluster[member], idx.hour[member]), 1)
    conv_rows = member & idx.converted
    np.add.at(conv, (ev_cluster[conv_rows], idx.hour[conv_rows]), 1)

    rows = []
    for c in range(k):
        rule = rules.get(c)
        for h in range(HOURS):
            blocked = bool(rule is not None and is_blocked(rule, h))
            boundary = ""
            if rule is not None and rule.kind is RuleKind.BLOCKED_WINDOW:
                if h == rule.start:
                    boundary = "block"
                elif h == rule.end % HOURS:
                    boundary = "unblock"
            n, k_conv = int(clicks[c, h]), int(conv[c, h])
            rows.append([c, h, n, k_conv, k_conv / n if n else 0.0, int(blocked),
                         boundary, rule.render() if rule is not None else ""])
    columns = ["cluster_id", "hour", "clicks", "conversions", "cr", "blocked", "boundary", "rule"]
    return FigureDataset("hourly_cr_by_cluster", columns, rows, {"sources": dict(sources or {})})


def emit_moving_average(report: SimulationReport, window_days: int = 14,
                        sources: Mapping[str, str] | None = None) -> FigureDataset:
    """Daily profit per click for both arms and their trailing moving averages."""
    base = [float(d.baseline_profit) / d.baseline_clicks if d.baseline_clicks else 0.0
            for d in report.days]
    blocked = [float(d.blocked_profit) / d.blocked_clicks if d.blocked_clicks else 0.0
               for d in report.days]
    rows = [[d.day.isoformat(), b, bl, bm, blm] for d, b, bl, bm, blm in
            zip(report.days, base, blocked, moving_average(base, window_days),
                moving_average(blocked, window_days))]
    columns = ["day", "baseline_ppc", "blocked_ppc", f"baseline_ppc_ma{window_days}",
               f"blocked_ppc_ma{window_days}"]
    return FigureDataset("moving_avg_profit_per_click", columns, rows,
                         {"window_days": window_days, "sources": dict(sources or {})})


@dataclass
class RunSummary:
    network: str
    model: ClusterModel
    rules: RuleSet
    report: SimulationReport | None = None


def emit_summary(runs: Sequence[RunSummary], sources: Mapping[str, str] | None = None) -> FigureDataset:
    """One row per (network, cluster): silhouette, profit increase, rendered rule."""
    rows = []
    for run in runs:
        inc = run.report.profit_increase if run.report is not None else None
        for c in range(run.model.k):
            rule = run.rules.get(c)
            rows.append([run.network, run.model.silhouette, inc, c,
                         rule.render() if rule is not None else "Not blocked"])
    columns = ["network", "silhouette", "profit_increase", "cluster_id", "rule"]
    return FigureDataset("offline_summary_table", columns, rows, {"sources": dict(sources or {})})


def check_dataset(ds: FigureDataset, tol: float = 1e-9) -> None:
    """Raise :class:`DatasetInvariantError` if ``ds`` breaks its kind's invariants."""
    if ds.kind == "centroid_fingerprints":
        for row in ds.rows:
            total = sum(row[1:])
            if abs(total - 1.0) > tol:
                raise DatasetInvariantError(f"centroid {row[0]} sums to {total!r}")
    elif ds.kind == "hourly_cr_by_cluster":
        per_cluster: dict[int, list[int]] = {}
        for row in ds.rows:
            per_cluster.setdefault(row[0], []).append(row[1])
            clicks, conv, cr = row[2], row[3], row[4]
            if not 0 <= conv <= clicks or not 0.0 <= cr <= 1.0:
                raise DatasetInvariantError(f"cluster {row[0]} hour {row[1]}: bad counts or cr")
        for c, hours in per_cluster.items():
            if sorted(hours) != list(range(HOURS)):
                raise DatasetInvariantError(f"cluster {c} has {len(hours)} hour rows")


def write_metadata(ds: FigureDataset) -> str:
    return json.dumps({"kind": ds.kind, "columns": ds.columns, **ds.metadata},
                      indent=2, sort_keys=True) + "\n"


def read_dataset(text: str, kind: str) -> FigureDataset:
    """Parse a dataset CSV back, converting numeric cells."""
    reader = csv.reader(io.StringIO(text))
    columns = next(reader)
    rows = [[_parse_cell(v) for v in row] for row in reader]
    return FigureDataset(kind, columns, rows)


def _parse_cell(v: str):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v

