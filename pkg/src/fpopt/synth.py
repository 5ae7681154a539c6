"""Seeded synthetic click logs with two diurnal domain populations.

"day" domains concentrate traffic on 9-17, "night" domains on 21-3. Night
domains convert poorly from 22 to 5, which makes that window loss-making.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timedelta
from decimal import Decimal

import numpy as np

from .ingest import UTC, ClickEvent

HOURS = 24
DAY_PEAK = tuple(range(9, 18))
NIGHT_PEAK = (21, 22, 23, 0, 1, 2, 3)
NIGHT_LOSS_HOURS = (22, 23, 0, 1, 2, 3, 4, 5)


def diurnal_profile(peak_hours, peak_mass: float = 0.8) -> np.ndarray:
    """Hour-of-day distribution putting ``peak_mass`` evenly on ``peak_hours``."""
    peak = np.zeros(HOURS, dtype=bool)
    peak[list(peak_hours)] = True
    p = np.where(peak, peak_mass / peak.sum(), (1 - peak_mass) / (~peak).sum())
    return p / p.sum()


DAY_PROFILE = diurnal_profile(DAY_PEAK)
NIGHT_PROFILE = diurnal_profile(NIGHT_PEAK)


def mixture_counts(seed: int = 0, n_per_group: int = 200, lo: int = 50, hi: int = 500):
    """Multinomial hourly counts for ``n_per_group`` day and night domains.

    Returns ``(counts, groups)`` where ``groups`` is 0 for day, 1 for night.
    """
    rng = np.random.default_rng(seed)
    counts, groups = [], []
    for g, profile in enumerate((DAY_PROFILE, NIGHT_PROFILE)):
        for _ in range(n_per_group):
            counts.append(rng.multinomial(int(rng.integers(lo, hi + 1)), profile))
            groups.append(g)
    return np.array(counts, dtype=np.int64), np.array(groups)


@dataclass
class SynthConfig:
    seed: int = 7
    n_domains: int = 1000
    night_share: float = 0.5
    start: date = date(2021, 3, 1)
    n_days: int = 60
    clicks_lo: int = 20  # total clicks per domain over the whole period
    clicks_hi: int = 180
    cpc: Decimal = Decimal("0.10")
    payout: Decimal = Decimal("6.00")
    day_cr: float = 0.04
    night_cr: float = 0.04
    night_loss_cr: float = 0.006


def _events_for_domain(rng, domain: str, group: int, n: int, cfg: SynthConfig, margin_fn):
    profile = NIGHT_PROFILE if group else DAY_PROFILE
    hours = rng.choice(HOURS, size=n, p=profile)
    days = rng.integers(0, cfg.n_days, size=n)
    secs = rng.integers(0, 3600, size=n)
    draws = rng.random(n)
    jitter = rng.integers(-20, 21, size=n)
    base = datetime(cfg.start.year, cfg.start.month, cfg.start.day, tzinfo=UTC)
    out = []
    for h, d, s, u, j in zip(hours.tolist(), days.tolist(), secs.tolist(), draws.tolist(), jitter.tolist()):
        ts = base + timedelta(days=d, hours=h, seconds=s)
        cost, revenue, converted = margin_fn(group, h, u, j)
        out.append(ClickEvent(ts, domain, f"camp{(d % 3) + 1}", cost, revenue, converted))
    return out


def generate_events(cfg: SynthConfig | None = None) -> list[ClickEvent]:
    """Bundled demo dataset, sorted by timestamp then domain."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)

    def margin(group, hour, u, jitter):
        cost = cfg.cpc + Decimal(jitter) / 1000
        if group == 1:
            cr = cfg.night_loss_cr if hour in NIGHT_LOSS_HOURS else cfg.night_cr
        else:
            cr = cfg.day_cr
        if u < cr:
            return cost, cfg.payout, True
        return cost, Decimal("0"), False

    events = []
    width = len(str(cfg.n_domains))
    for i in range(cfg.n_domains):
        group = int(rng.random() < cfg.night_share)
        n = int(rng.integers(cfg.clicks_lo, cfg.clicks_hi + 1))
        events.extend(_events_for_domain(rng, f"dom{i:0{width}d}", group, n, cfg, margin))
    events.sort(key=lambda e: (e.timestamp, e.domain_id))
    return events


def mixture_events(seed: int = 0, n_per_group: int = 200, lo: int = 50, hi: int = 500,
                   start: date = date(2021, 1, 1), n_days: int = 40):
    """Two-population mixture with deterministic margins.

    Every click costs 0.10. Night-domain clicks during 22-5 never convert;
    all other clicks convert with revenue 0.25. Returns ``(events, groups)``
    with ``groups`` mapping domain id to 0 (day) or 1 (night).
    """
    cfg = SynthConfig(seed=seed, start=start, n_days=n_days)
    rng = np.random.default_rng(seed)
    cost, win = Decimal("0.10"), Decimal("0.25")

    def margin(group, hour, u, jitter):
        if group == 1 and hour in NIGHT_LOSS_HOURS:
            return cost, Decimal("0"), False
        return cost, win, True

    events, groups = [], {}
    for g in (0, 1):
        for i in range(n_per_group):
            d = f"{'day' if g == 0 else 'night'}{i:03d}"
            groups[d] = g
            n = int(rng.integers(lo, hi + 1))
            events.extend(_events_for_domain(rng, d, g, n, cfg, margin))
    events.sort(key=lambda e: (e.timestamp, e.domain_id))
    return events, groups
