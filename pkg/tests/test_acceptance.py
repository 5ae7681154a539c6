"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the lines are printed in the
"acceptance criteria" section at the end of the session.
"""

import shutil
import time
from datetime import date, datetime, timedelta
from decimal import Decimal
from pathlib import Path

import numpy as np

from fpopt.assign import assign_all
from fpopt.cli import main
from fpopt.clustering import ClusterModel, kmeans, select_k
from fpopt.config import load_config
from fpopt.fingerprint import eligible_domains, fingerprint_matrix, update_fingerprints
from fpopt.ingest import UTC, ClickEvent, EventStore, split_train_test
from fpopt.report import KINDS, check_dataset, read_dataset
from fpopt.rules import HourlyProfitProfile, build_ruleset, synthesize_rule
from fpopt.simulate import format_cr_percent, format_ppc, metric_suite, replay
from fpopt.synth import mixture_counts, mixture_events

from conftest import record_criterion, random_replay_instance
from oracles import (
    exhaustive_two_clustering,
    oracle_rules,
    replay_oracle,
    report_mismatches,
    same_partition,
    tally,
)


def test_criterion_1_fingerprints():
    rng = np.random.default_rng(2024)
    base = datetime(2021, 1, 1, tzinfo=UTC)
    events = []
    for i in range(1000):
        n = int(rng.integers(1, 120))
        offsets = rng.integers(0, 30 * 86400, size=n)
        events.extend(ClickEvent(base + timedelta(seconds=int(s)), f"dom{i:04d}", "c", Decimal("0.1"),
                                 Decimal(0), False) for s in offsets)
    t0 = time.perf_counter()
    fps = update_fingerprints(EventStore(events))
    elapsed = time.perf_counter() - t0

    counts = {}
    for (d, _), hours in tally(events).items():
        acc = counts.setdefault(d, [0] * 24)
        for h in range(24):
            acc[h] += hours[h]
    worst_norm = max(abs(fp.f.sum() - 1.0) for fp in fps.values())
    mismatches = [d for d, c in counts.items()
                  if fps[d].total_clicks != sum(c) or fps[d].f.tolist() != [x / sum(c) for x in c]]
    ok = len(fps) == 1000 and worst_norm <= 1e-9 and not mismatches and elapsed < 5.0
    record_criterion(1, "fingerprint correctness", ok,
                     f"{len(fps)} domains, max |sum-1|={worst_norm:.1e}, {len(mismatches)} mismatches, "
                     f"{elapsed:.2f}s")
    assert ok


def test_criterion_2_kmeans_validity():
    non_monotone = 0
    for instance in range(100):
        rng = np.random.default_rng(instance)
        x = rng.dirichlet(np.full(24, float(rng.uniform(0.2, 3))), size=int(rng.integers(10, 80)))
        h = kmeans(x, int(rng.integers(1, 7)), seed=instance, tol=1e-9).history
        non_monotone += any(b > a for a, b in zip(h, h[1:]))

    wrong = 0
    for instance in range(10):
        rng = np.random.default_rng(500 + instance)
        centres = rng.dirichlet(np.full(24, 0.3), size=2)
        x = np.vstack([rng.multinomial(60, centres[i // 6]) for i in range(12)]) / 60.0
        _, labels = exhaustive_two_clustering(x.tolist())
        wrong += not same_partition(kmeans(x, 2, seed=instance).labels.tolist(), labels)
    ok = non_monotone == 0 and wrong == 0
    record_criterion(2, "k-means validity", ok,
                     f"{non_monotone}/100 non-monotone runs, {wrong}/10 exhaustive mismatches")
    assert ok


def test_criterion_3_model_selection():
    counts, groups = mixture_counts(seed=0, n_per_group=200, lo=50, hi=500)
    x = counts / counts.sum(axis=1, keepdims=True)
    model = select_k(x)
    one_hots = np.zeros((40, 24))
    for i, h in enumerate((2, 8, 14, 20)):
        one_hots[i * 10:(i + 1) * 10, h] = 1.0
    k4 = select_k(one_hots).k
    recovered = same_partition(model.labels.tolist(), groups.tolist())
    ok = model.k == 2 and model.silhouette >= 0.5 and k4 == 4
    record_criterion(3, "model selection", ok,
                     f"mixture k={model.k} silhouette={model.silhouette:.3f} groups recovered={recovered}; "
                     f"one-hot k={k4}")
    assert ok


def _profile(profitable_hours):
    profit = tuple(Decimal("1.5") if h in profitable_hours else Decimal("-0.7") for h in range(24))
    return HourlyProfitProfile(0, profit, (10,) * 24, (1,) * 24)


def _rule_from_events(negative_hours):
    # one cluster, one domain, hourly clicks with engineered margins
    d = date(2021, 2, 1)
    events = [ClickEvent(datetime(d.year, d.month, d.day, h, m, tzinfo=UTC), "dom", "c", Decimal("0.10"),
                         Decimal("0") if h in negative_hours else Decimal("0.30"), h not in negative_hours)
              for h in range(24) for m in (0, 20, 40)]
    store = EventStore(events)
    model = ClusterModel(np.full((1, 24), 1 / 24), 1, 0.0, {}, 0)
    return build_ruleset(model, store, {"dom": 0})[0].render()


def test_criterion_4_rule_recovery():
    night = {22, 23, 0, 1, 2, 3, 4, 5}
    got = {
        "night": _rule_from_events(night),
        "none": _rule_from_events(set()),
        "four": synthesize_rule(_profile({9, 10, 11, 12})).render(),
        "one": synthesize_rule(_profile({12})).render(),
    }
    want = {"night": "Blocked 22 - 6", "none": "Not blocked", "four": "Blocked", "one": "Blocked"}
    ok = got == want
    record_criterion(4, "rule recovery", ok, "; ".join(f"{k}={v!r}" for k, v in got.items()))
    assert ok


def test_criterion_5_metric_arithmetic():
    cr, _, _, _ = metric_suite(186528, 760, 0, 0)
    ppc = Decimal("3931.55") / 186528
    got = (format_cr_percent(cr), format_ppc(ppc))
    ok = got == ("0.41", "0.021")
    record_criterion(5, "metric arithmetic", ok, f"CR%={got[0]} profit/click={got[1]}")
    assert ok


def test_criterion_6_replay_oracle():
    rng = np.random.default_rng(6)
    replay_time, failures, total_events = 0.0, [], 0
    for i in range(50):
        test, hist, model, rules, mc = random_replay_instance(rng, int(rng.integers(1, 10_001)))
        if not test:
            test, hist = hist[-1:], hist[:-1]
        total_events += len(test) + len(hist)
        t0 = time.perf_counter()
        report = replay(EventStore(test), model, rules, mc, EventStore(hist))
        replay_time += time.perf_counter() - t0
        problems = report_mismatches(report, replay_oracle(test, hist, model.centroids, oracle_rules(rules), mc))
        if problems:
            failures.append((i, problems[:3]))
    ok = not failures and replay_time < 60.0
    record_criterion(6, "simulator oracle equivalence", ok,
                     f"{50 - len(failures)}/50 identical, {total_events} events, replay {replay_time:.2f}s")
    assert ok, failures


def test_criterion_7_synthetic_uplift():
    events, _ = mixture_events(seed=0, n_per_group=200, lo=50, hi=500)
    store = EventStore(events)
    train, test = split_train_test(store, datetime(2021, 1, 21, tzinfo=UTC))
    fps = update_fingerprints(train)
    eligible = eligible_domains(fps, 50)
    _, x = fingerprint_matrix(fps, eligible)
    model = select_k(x)
    assignments = assign_all({d: fps[d] for d in eligible}, model)
    rules = build_ruleset(model, train, assignments, 6)
    report = replay(test, model, rules, 50, history=train)
    oracle = replay_oracle(test.events, train.events, model.centroids, oracle_rules(rules), 50)
    want = oracle["profit_increase"]
    rel = abs(report.profit_increase - want) / abs(want)
    ok = report.blocked.profit > report.baseline.profit and rel <= 1e-9
    record_criterion(7, "synthetic uplift", ok,
                     f"rules={rules.render()} baseline={report.baseline.profit} "
                     f"blocked={report.blocked.profit} increase={report.profit_increase:.4f} rel.err={rel:.1e}")
    assert ok


def _write_config(folder: Path, events: Path) -> Path:
    conf = folder / "fpopt.conf"
    conf.write_text(f"input_path = {events}\noutput_dir = out\nsplit = 2021-03-31\nseed = 11\n")
    return conf


STEPS = ("ingest", "train", "rules", "assign", "simulate", "report")


def _bundled_dataset(folder: Path) -> Path:
    events = folder / "events.csv"
    assert main(["synth", "--out", str(events)]) == 0
    return events


def test_criterion_8_determinism(tmp_path):
    events = _bundled_dataset(tmp_path)
    conf = _write_config(tmp_path, events)
    out = tmp_path / "out"
    runs = []
    for _ in range(2):
        shutil.rmtree(out, ignore_errors=True)
        codes = [main([s, "--config", str(conf)]) for s in STEPS]
        assert codes == [0] * len(STEPS)
        runs.append({p.relative_to(out).as_posix(): p.read_bytes() for p in out.rglob("*") if p.is_file()})
    key = ["model.json", "ruleset.json", "report.json"] + [n for n in runs[0] if n.startswith("snapshot_")]
    same_key = all(runs[0][n] == runs[1][n] for n in key)
    same_all = runs[0] == runs[1]
    ok = same_key and same_all and len(key) == 4
    record_criterion(8, "determinism", ok, f"{len(runs[0])} artifacts, byte-identical={same_all}")
    assert ok


def test_criterion_9_end_to_end(tmp_path):
    events = _bundled_dataset(tmp_path)
    conf = _write_config(tmp_path, events)
    t0 = time.perf_counter()
    codes = [main([s, "--config", str(conf)]) for s in STEPS]
    elapsed = time.perf_counter() - t0
    cfg = load_config(conf, environ={})
    n_events = sum(1 for _ in events.open()) - 1
    problems = []
    for kind in KINDS:
        path = cfg.out / "figures" / f"{kind}_{cfg.run_id}.csv"
        if not path.exists():
            problems.append(f"missing {path.name}")
            continue
        ds = read_dataset(path.read_text(), kind)
        try:
            check_dataset(ds)
        except ValueError as exc:
            problems.append(str(exc))
        if kind == "centroid_fingerprints":
            problems += [f"centroid {r[0]} sums to {sum(r[1:])}" for r in ds.rows if abs(sum(r[1:]) - 1) > 1e-9]
        if kind == "hourly_cr_by_cluster":
            per = {}
            for r in ds.rows:
                per[r[0]] = per.get(r[0], 0) + 1
            problems += [f"cluster {c} has {n} rows" for c, n in per.items() if n != 24]
    ok = codes == [0] * len(STEPS) and elapsed < 120.0 and not problems
    record_criterion(9, "end-to-end", ok,
                     f"{n_events} events, exit codes {codes}, {elapsed:.1f}s, figure problems: {problems or 'none'}")
    assert ok
