from __future__ import annotations

from datetime import date, datetime, timedelta, timezone
from decimal import Decimal

import numpy as np
import pytest

from fpopt.ingest import ClickEvent, EventStore

UTC = timezone.utc

_CRITERIA: dict[int, tuple[str, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    _CRITERIA[number] = (title, ("PASS" if passed else "FAIL") + (f"  {detail}" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status = _CRITERIA[n]
        terminalreporter.write_line(f"[{n}] {title}: {status}")


def ev(ts, domain="dom1", cost="0.10", revenue="0", converted=None, campaign="camp1") -> ClickEvent:
    if isinstance(ts, str):
        ts = datetime.fromisoformat(ts.replace("Z", "+00:00"))
    revenue = Decimal(revenue)
    if converted is None:
        converted = revenue > 0
    return ClickEvent(ts, domain, campaign, Decimal(cost), revenue, converted)


def at(day: date, hour: int, minute: int = 0) -> datetime:
    return datetime(day.year, day.month, day.day, hour, minute, tzinfo=UTC)


def random_events(rng: np.random.Generator, n: int, domains: int = 10, days: int = 5,
                  start: date = date(2021, 4, 1), conv_rate: float = 0.1) -> list[ClickEvent]:
    out = []
    base = datetime(start.year, start.month, start.day, tzinfo=UTC)
    for _ in range(n):
        ts = base + timedelta(seconds=int(rng.integers(0, days * 86400)))
        converted = bool(rng.random() < conv_rate)
        revenue = Decimal(int(rng.integers(1, 500))) / 100 if converted else Decimal(0)
        out.append(ClickEvent(ts, f"d{int(rng.integers(domains)):02d}", "c1",
                              Decimal(int(rng.integers(0, 30))) / 100, revenue, converted))
    return out


def random_rule(rng: np.random.Generator, cluster_id: int):
    from fpopt.rules import BlockingRule, RuleKind
    roll = rng.random()
    if roll < 0.3:
        return BlockingRule(cluster_id, RuleKind.UNBLOCKED)
    if roll < 0.4:
        return BlockingRule(cluster_id, RuleKind.BLOCKED_ALWAYS)
    start = int(rng.integers(0, 24))
    length = int(rng.integers(1, 24))
    end = (start + length) % 24 or 24
    return BlockingRule(cluster_id, RuleKind.BLOCKED_WINDOW, start, end)


def random_replay_instance(rng: np.random.Generator, n_events: int):
    """History and test events, a random model and ruleset for replay checks."""
    from fpopt.clustering import ClusterModel
    from fpopt.rules import RuleSet
    n_domains = int(rng.integers(3, 40))
    hist_days = int(rng.integers(1, 6))
    test_days = int(rng.integers(1, 8))
    start = date(2021, 5, 1)
    n_hist = int(n_events * hist_days / (hist_days + test_days))
    history = random_events(rng, n_hist, n_domains, hist_days, start)
    test = random_events(rng, n_events - n_hist, n_domains, test_days, start + timedelta(days=hist_days))
    k = int(rng.integers(2, 5))
    centroids = rng.dirichlet(np.full(24, 0.7), size=k)
    model = ClusterModel(centroids, k, 0.0, {}, 0)
    rules = RuleSet({c: random_rule(rng, c) for c in range(k)})
    min_clicks = int(rng.integers(1, 60))
    return test, history, model, rules, min_clicks


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_store(rng):
    return EventStore(random_events(rng, 200))
