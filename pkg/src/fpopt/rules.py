"""Per-cluster hourly profit profiles and the blocking rules derived from them."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .ingest import EventStore

HOURS = 24
DEFAULT_MIN_PROFITABLE_HOURS = 6
ZERO = Decimal(0)


class RuleKind(str, Enum):
    UNBLOCKED = "unblocked"
    BLOCKED_ALWAYS = "blocked_always"
    BLOCKED_WINDOW = "blocked_window"


@dataclass(frozen=True)
class BlockingRule:
    """Hour-of-day blocking decision for one cluster.

    A window ``(start, end)`` blocks hours ``start .. end-1`` modulo 24, so
    ``(20, 5)`` covers 20-23 and 0-4 and ``(16, 24)`` covers 16-23.
    """

    cluster_id: int
    kind: RuleKind
    start: int | None = None
    end: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        if self.kind is RuleKind.BLOCKED_WINDOW:
            if self.start is None or self.end is None:
                raise ValueError("blocked window needs start and end")
            if not (0 <= self.start <= 23 and 1 <= self.end <= 24):
                raise ValueError(f"window bounds out of range: {self.start}-{self.end}")
            if not 1 <= (self.end - self.start) % HOURS <= 23:
                raise ValueError(f"window {self.start}-{self.end} must block 1..23 hours")
        elif self.start is not None or self.end is not None:
            raise ValueError(f"{self.kind.value} rule takes no window")

    @property
    def blocked_hours(self) -> tuple[int, ...]:
        return tuple(h for h in range(HOURS) if is_blocked(self, h))

    def render(self) -> str:
        if self.kind is RuleKind.UNBLOCKED:
            return "Not blocked"
        if self.kind is RuleKind.BLOCKED_ALWAYS:
            return "Blocked"
        return f"Blocked {self.start} - {self.end}"

    def hours_spec(self) -> str | None:
        """Compact form used in action lists: ``always``, ``16-24`` or None."""
        if self.kind is RuleKind.UNBLOCKED:
            return None
        if self.kind is RuleKind.BLOCKED_ALWAYS:
            return "always"
        return f"{self.start}-{self.end}"


_RENDERED = re.compile(r"^Blocked\s+(\d+)\s*-\s*(\d+)$")


def parse_rule(text: str, cluster_id: int = 0) -> BlockingRule:
    """Inverse of :meth:`BlockingRule.render`."""
    s = text.strip()
    if s in ("Not blocked", "Non blocked"):
        return BlockingRule(cluster_id, RuleKind.UNBLOCKED)
    if s == "Blocked":
        return BlockingRule(cluster_id, RuleKind.BLOCKED_ALWAYS)
    m = _RENDERED.match(s)
    if not m:
        raise ValueError(f"unrecognised rule {text!r}")
    return BlockingRule(cluster_id, RuleKind.BLOCKED_WINDOW, int(m.group(1)), int(m.group(2)))


def is_blocked(rule: BlockingRule, hour: int) -> bool:
    if not 0 <= hour <= 23:
        raise ValueError(f"hour out of range: {hour}")
    if rule.kind is RuleKind.UNBLOCKED:
        return False
    if rule.kind is RuleKind.BLOCKED_ALWAYS:
        return True
    return (hour - rule.start) % HOURS < (rule.end - rule.start) % HOURS


@dataclass(frozen=True)
class HourlyProfitProfile:
    cluster_id: int
    profit: tuple[Decimal, ...]
    clicks: tuple[int, ...]
    conversions: tuple[int, ...]

    def __add__(self, other: HourlyProfitProfile) -> HourlyProfitProfile:
        return HourlyProfitProfile(
            self.cluster_id,
            tuple(a + b for a, b in zip(self.profit, other.profit)),
            tuple(a + b for a, b in zip(self.clicks, other.clicks)),
            tuple(a + b for a, b in zip(self.conversions, other.conversions)),
        )


def profile_cluster(store: EventStore, members: Iterable[str], cluster_id: int = 0) -> HourlyProfitProfile:
    """Hourly clicks, conversions and revenue minus cost over members' events."""
    idx = store.index
    rows = [idx.rows_by_domain[d] for d in set(members) if d in idx.rows_by_domain]
    rows = np.sort(np.concatenate(rows)) if rows else np.zeros(0, dtype=np.int64)
    hours = idx.hour[rows]
    clicks = np.bincount(hours, minlength=HOURS)
    conversions = np.bincount(hours[idx.converted[rows]], minlength=HOURS)
    profit = [ZERO] * HOURS
    for h, c, r in zip(hours.tolist(), idx.cost[rows], idx.revenue[rows]):
        profit[h] += r - c
    return HourlyProfitProfile(cluster_id, tuple(profit), tuple(int(v) for v in clicks),
                               tuple(int(v) for v in conversions))


def _negative_runs(negative: list[bool]) -> list[tuple[int, int]]:
    """Maximal circular runs of True as (start, length)."""
    n = len(negative)
    runs = []
    for s in range(n):
        if negative[s] and not negative[(s - 1) % n]:
            length = 0
            while length < n and negative[(s + length) % n]:
                length += 1
            runs.append((s, length))
    return runs


def synthesize_rule(profile: HourlyProfitProfile,
                    min_profitable_hours: int = DEFAULT_MIN_PROFITABLE_HOURS) -> BlockingRule:
    """Turn an hourly profit profile into a single blocking decision.

    No loss-making hour: unblocked. Fewer than ``min_profitable_hours``
    hours with profit >= 0: blocked all day. Otherwise block the longest
    circular run of loss-making hours; ties prefer the run covering hour 0,
    then the earliest start. Other loss-making hours stay open.
    """
    cid = profile.cluster_id
    negative = [p < 0 for p in profile.profit]
    n_neg = sum(negative)
    if n_neg == 0:
        return BlockingRule(cid, RuleKind.UNBLOCKED)
    if n_neg == HOURS or HOURS - n_neg < min_profitable_hours:
        return BlockingRule(cid, RuleKind.BLOCKED_ALWAYS)

    def covers_zero(run):
        s, length = run
        return s + length > HOURS or s == 0

    start, length = min(_negative_runs(negative),
                        key=lambda r: (-r[1], not covers_zero(r), r[0]))
    end = start + length
    if end > HOURS:
        end -= HOURS
    return BlockingRule(cid, RuleKind.BLOCKED_WINDOW, start, end)


class RuleSet(dict):
    """``cluster_id -> BlockingRule`` for every cluster of a model."""

    def render(self) -> dict[int, str]:
        return {c: r.render() for c, r in sorted(self.items())}

    def block_matrix(self, k: int | None = None) -> np.ndarray:
        """``(k, 24)`` boolean matrix of blocked hours per cluster."""
        k = len(self) if k is None else k
        out = np.zeros((k, HOURS), dtype=bool)
        for c, rule in self.items():
            if c < k:
                out[c] = [is_blocked(rule, h) for h in range(HOURS)]
        return out

    def to_json(self) -> str:
        payload = {}
        for c, rule in sorted(self.items()):
            entry = {"kind": rule.kind.value}
            if rule.kind is RuleKind.BLOCKED_WINDOW:
                entry.update(start=rule.start, end=rule.end)
            payload[str(c)] = entry
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> RuleSet:
        out = cls()
        for key, entry in json.loads(text).items():
            c = int(key)
            out[c] = BlockingRule(c, RuleKind(entry["kind"]), entry.get("start"), entry.get("end"))
        return out


def build_ruleset(model, store: EventStore, assignments: Mapping[str, int],
                  min_profitable_hours: int = DEFAULT_MIN_PROFITABLE_HOURS) -> RuleSet:
    """One rule per cluster id ``0..k-1``; clusters without members stay unblocked."""
    members: dict[int, list[str]] = {c: [] for c in range(model.k)}
    for d, c in assignments.items():
        if not 0 <= c < model.k:
            raise ValueError(f"domain {d} assigned to cluster {c} outside 0..{model.k - 1}")
        members[c].append(d)
    rules = RuleSet()
    for c in range(model.k):
        if not members[c]:
            rules[c] = BlockingRule(c, RuleKind.UNBLOCKED)
            continue
        rules[c] = synthesize_rule(profile_cluster(store, members[c], c), min_profitable_hours)
    return rules
