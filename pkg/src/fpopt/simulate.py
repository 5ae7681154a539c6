"""Offline replay of a test period under frozen blocking rules."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from datetime import date
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np

from .assign import UNASSIGNED, NoModel
from .clustering import ClusterModel
from .fingerprint import DEFAULT_MIN_CLICKS, HOURS
from .ingest import EventStore
from .rules import RuleSet

ZERO = Decimal(0)


class EmptyPeriod(ValueError):
    """The replay period contains no events."""


def metric_suite(clicks: int, conversions: int, cost, revenue):
    """Return ``(cr, profit, roas, profit_per_click)``.

    ``cr`` and ``profit_per_click`` are 0 without clicks; ``roas`` is None
    when nothing was spent.
    """
    if clicks < 0 or conversions < 0 or conversions > clicks:
        raise ValueError("need clicks >= conversions >= 0")
    cost, revenue = Decimal(cost), Decimal(revenue)
    if cost < 0 or revenue < 0:
        raise ValueError("cost and revenue must be non-negative")
    profit = revenue - cost
    cr = conversions / clicks if clicks else 0.0
    roas = float(revenue / cost) if cost else None
    ppc = profit / clicks if clicks else ZERO
    return cr, profit, roas, ppc


def format_cr_percent(cr: float) -> str:
    """CR as a percentage with two decimals, e.g. ``0.41``."""
    return str((Decimal(repr(cr)) * 100).quantize(Decimal("0.01"), ROUND_HALF_UP))


def format_ppc(ppc) -> str:
    """Profit per click with three decimals, e.g. ``0.021``."""
    return str(Decimal(ppc).quantize(Decimal("0.001"), ROUND_HALF_UP))


def format_roas(roas: float | None) -> str:
    if roas is None:
        return "n/a"
    return str(Decimal(repr(roas)).quantize(Decimal("0.01"), ROUND_HALF_UP))


@dataclass(frozen=True)
class ArmMetrics:
    clicks: int
    conversions: int
    cost: Decimal
    revenue: Decimal
    profit: Decimal
    cr: float
    roas: float | None
    profit_per_click: Decimal

    @property
    def roas_defined(self) -> bool:
        return self.roas is not None

    @classmethod
    def from_totals(cls, clicks: int, conversions: int, cost, revenue) -> ArmMetrics:
        cr, profit, roas, ppc = metric_suite(clicks, conversions, cost, revenue)
        return cls(clicks, conversions, Decimal(cost), Decimal(revenue), profit, cr, roas, ppc)

    def to_dict(self) -> dict:
        return {
            "clicks": self.clicks,
            "conversions": self.conversions,
            "cost": str(self.cost),
            "revenue": str(self.revenue),
            "profit": str(self.profit),
            "cr": self.cr,
            "roas": self.roas,
            "roas_defined": self.roas_defined,
            "profit_per_click": str(self.profit_per_click),
        }


@dataclass(frozen=True)
class ClusterDay:
    day: date
    cluster_id: int
    clicks_kept: int
    clicks_dropped: int
    conversions: int
    cost: Decimal
    revenue: Decimal
    profit: Decimal


@dataclass(frozen=True)
class DayTotals:
    day: date
    baseline_clicks: int
    baseline_profit: Decimal
    blocked_clicks: int
    blocked_profit: Decimal


@dataclass
class SimulationReport:
    baseline: ArmMetrics
    blocked: ArmMetrics
    profit_increase: float | None
    days: list[DayTotals] = field(default_factory=list)
    clusters: list[ClusterDay] = field(default_factory=list)
    # per-day domain -> cluster map used for blocking; not serialized
    trace: dict[date, dict[str, int]] = field(default_factory=dict, repr=False)

    @property
    def clicks_dropped(self) -> int:
        return self.baseline.clicks - self.blocked.clicks

    def to_json(self) -> str:
        payload = {
            "baseline": self.baseline.to_dict(),
            "blocked": self.blocked.to_dict(),
            "profit_increase": self.profit_increase,
            "clicks_dropped": self.clicks_dropped,
            "days": [
                {**asdict(d), "day": d.day.isoformat(),
                 "baseline_profit": str(d.baseline_profit), "blocked_profit": str(d.blocked_profit)}
                for d in self.days
            ],
            "clusters": [
                {**asdict(c), "day": c.day.isoformat(), "cost": str(c.cost),
                 "revenue": str(c.revenue), "profit": str(c.profit)}
                for c in self.clusters
            ],
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> SimulationReport:
        raw = json.loads(text)

        def arm(d):
            return ArmMetrics(d["clicks"], d["conversions"], Decimal(d["cost"]), Decimal(d["revenue"]),
                              Decimal(d["profit"]), d["cr"], d["roas"], Decimal(d["profit_per_click"]))

        days = [DayTotals(date.fromisoformat(d["day"]), d["baseline_clicks"], Decimal(d["baseline_profit"]),
                          d["blocked_clicks"], Decimal(d["blocked_profit"])) for d in raw["days"]]
        clusters = [ClusterDay(date.fromisoformat(c["day"]), c["cluster_id"], c["clicks_kept"],
                               c["clicks_dropped"], c["conversions"], Decimal(c["cost"]),
                               Decimal(c["revenue"]), Decimal(c["profit"])) for c in raw["clusters"]]
        return cls(arm(raw["baseline"]), arm(raw["blocked"]), raw["profit_increase"], days, clusters)

    def daily_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["day", "cluster_id", "clicks_kept", "clicks_dropped", "conversions",
                    "cost", "revenue", "profit"])
        for c in self.clusters:
            w.writerow([c.day.isoformat(), c.cluster_id, c.clicks_kept, c.clicks_dropped,
                        c.conversions, c.cost, c.revenue, c.profit])
        return buf.getvalue()


def profit_increase(baseline: Decimal, blocked: Decimal) -> float | None:
    """Relative profit change against ``|baseline|``; None for zero baseline."""
    if baseline == 0:
        return None
    return float((blocked - baseline) / abs(baseline))


def _dsum(values) -> Decimal:
    return sum(values, ZERO)


def replay(test_store: EventStore, model: ClusterModel, rules: RuleSet,
           min_clicks: int = DEFAULT_MIN_CLICKS, history: EventStore | None = None) -> SimulationReport:
    """Replay ``test_store`` day by day with rules applied to daily assignments.

    Day D uses fingerprints built from ``history`` plus test days before D.
    An event is dropped when its domain sits in a cluster whose rule blocks
    the event's hour. A domain assigned to a cluster with any blocked hour
    is blocked that day, and the day is left out of its later fingerprints.
    Baseline keeps every event.
    """
    if len(test_store) == 0:
        raise EmptyPeriod("no events in the replay period")
    if model.k == 0:
        raise NoModel("model has no centroids")
    missing = [c for c in range(model.k) if c not in rules]
    if missing:
        raise ValueError(f"rules missing for clusters {missing}")

    past = history.events if history is not None else ()
    blocked_days = set(test_store.blocked_days)
    if history is not None:
        blocked_days |= history.blocked_days
    store = EventStore(past + test_store.events, test_store.tz)
    idx = store.index
    n_hist = len(past)

    excluded = idx.dd_rows(blocked_days)
    block = rules.block_matrix(model.k)
    # extra row for unassigned domains, which are never blocked
    block = np.vstack([block, np.zeros((1, HOURS), dtype=bool)])
    blocks_any = block.any(axis=1)
    centroids = model.centroids

    test_rows = np.arange(n_hist, len(store))
    test_rows = test_rows[np.argsort(idx.day[test_rows], kind="stable")]
    test_days, starts = np.unique(idx.day[test_rows], return_index=True)
    bounds = list(starts) + [len(test_rows)]

    report_days: list[DayTotals] = []
    report_clusters: list[ClusterDay] = []
    trace: dict[date, dict[str, int]] = {}
    n_dom = len(idx.domains)
    for i, day_ord in enumerate(test_days.tolist()):
        day = date.fromordinal(day_ord)
        use = (idx.dd_day < day_ord) & ~excluded
        counts = np.zeros((n_dom, HOURS), dtype=np.int64)
        np.add.at(counts, idx.dd_dom[use], idx.dd_counts[use])
        totals = counts.sum(axis=1)
        cluster = np.full(n_dom, UNASSIGNED, dtype=np.int64)
        eligible = np.flatnonzero(totals >= min_clicks)
        if len(eligible):
            f = counts[eligible] / totals[eligible, None]
            diff = f[:, None, :] - centroids[None, :, :]
            cluster[eligible] = np.argmin(np.einsum("ijk,ijk->ij", diff, diff), axis=1)
        trace[day] = {idx.domains[j]: int(cluster[j]) for j in eligible.tolist()}

        rows = test_rows[bounds[i]:bounds[i + 1]]
        ev_cluster = cluster[idx.dom[rows]]
        dropped = block[ev_cluster, idx.hour[rows]]
        kept = ~dropped

        today = idx.dd_day == day_ord
        excluded |= today & blocks_any[cluster[idx.dd_dom]]

        conv = idx.converted[rows]
        cost = idx.cost[rows]
        revenue = idx.revenue[rows]
        base_profit = _dsum(revenue) - _dsum(cost)
        kept_profit = _dsum(revenue[kept]) - _dsum(cost[kept])
        report_days.append(DayTotals(day, len(rows), base_profit, int(kept.sum()), kept_profit))
        for c in np.unique(ev_cluster).tolist():
            sel = ev_cluster == c
            k_sel = sel & kept
            c_cost, c_rev = _dsum(cost[k_sel]), _dsum(revenue[k_sel])
            report_clusters.append(ClusterDay(
                day, c, int(k_sel.sum()), int((sel & dropped).sum()), int(conv[k_sel].sum()),
                c_cost, c_rev, c_rev - c_cost))

    all_rows = test_rows
    base = ArmMetrics.from_totals(len(all_rows), int(idx.converted[all_rows].sum()),
                                  _dsum(idx.cost[all_rows]), _dsum(idx.revenue[all_rows]))
    kept_clicks = sum(c.clicks_kept for c in report_clusters)
    blocked = ArmMetrics.from_totals(kept_clicks, sum(c.conversions for c in report_clusters),
                                     _dsum(c.cost for c in report_clusters),
                                     _dsum(c.revenue for c in report_clusters))
    return SimulationReport(base, blocked, profit_increase(base.profit, blocked.profit),
                            report_days, report_clusters, trace)


def moving_average(series: Sequence, window_days: int) -> list[float]:
    """Trailing mean over the last ``window_days`` values (shorter at the start)."""
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    out = []
    for i in range(len(series)):
        chunk = series[max(0, i - window_days + 1):i + 1]
        out.append(float(sum(float(v) for v in chunk) / len(chunk)))
    return out
