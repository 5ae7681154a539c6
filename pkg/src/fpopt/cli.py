"""``fpopt`` command line: ingest, train, rules, assign, simulate, report, daily."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from datetime import date, timedelta
from pathlib import Path

from . import synth
from .assign import AssignmentSnapshot, assign_all, daily_snapshot
from .clustering import ClusterModel, InsufficientPoints, select_k
from .config import ConfigValidationError, PipelineConfig, load_config
from .fingerprint import eligible_domains, fingerprint_matrix, update_fingerprints, write_snapshot
from .ingest import (
    ConfigError,
    EventStore,
    parse_events,
    read_events,
    serialize_errors,
    serialize_events,
    split_train_test,
)
from .report import (
    RunSummary,
    check_dataset,
    emit_centroids,
    emit_hourly_cr,
    emit_moving_average,
    emit_summary,
    write_metadata,
)
from .rules import RuleSet, build_ruleset
from .simulate import EmptyPeriod, SimulationReport, replay

log = logging.getLogger("fpopt")

EVENTS = "events.csv"
ERRORS = "record_errors.csv"
MODEL = "model.json"
FINGERPRINTS = "fingerprints_train.csv"
RULESET = "ruleset.json"
TRAIN_ASSIGNMENTS = "train_assignments.csv"
BLOCKED_DAYS = "blocked_days.csv"
REPORT = "report.json"
REPORT_DAILY = "report_daily.csv"


class FatalError(RuntimeError):
    pass


def write_atomic(path: Path, text: str) -> str:
    """Write via temp file + rename; return the sha256 of the content."""
    data = text.encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(data).hexdigest()


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _require(cfg: PipelineConfig, name: str, step: str) -> Path:
    path = cfg.out / name
    if not path.exists():
        raise FatalError(f"missing {path}: run {step} first")
    return path


class Run:
    """Artifact bookkeeping for one subcommand; writes its manifest at the end."""

    def __init__(self, cfg: PipelineConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}

    def read(self, name: str, step: str) -> str:
        path = _require(self.cfg, name, step)
        self.inputs[name] = _digest(path)
        return path.read_text()

    def write(self, name: str, text: str) -> None:
        self.outputs[name] = write_atomic(self.cfg.out / name, text)

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "config_hash": self.cfg.digest(),
            "seed": self.cfg.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
        }
        write_atomic(self.cfg.out / "manifests" / f"{self.command}.json",
                     json.dumps(manifest, indent=2) + "\n")


def _load_store(run: Run) -> EventStore:
    events, _ = parse_events(io.StringIO(run.read(EVENTS, "ingest")), "csv")
    store = EventStore(events, run.cfg.tz)
    blocked = run.cfg.out / BLOCKED_DAYS
    if blocked.exists():
        run.inputs[BLOCKED_DAYS] = _digest(blocked)
        store.mark_blocked(read_blocked_days(blocked.read_text()))
    return store


def read_blocked_days(text: str) -> set[tuple[str, date]]:
    return {(r["domain_id"], date.fromisoformat(r["day"])) for r in csv.DictReader(io.StringIO(text))}


def write_blocked_days(pairs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain_id", "day"])
    for d, day in sorted(pairs):
        w.writerow([d, day.isoformat()])
    return buf.getvalue()


def _split(cfg: PipelineConfig, store: EventStore):
    train, test = split_train_test(store, cfg.split_instant)
    if not len(train):
        raise FatalError(f"no training events before split {cfg.split}")
    return train, test


def cmd_ingest(cfg: PipelineConfig, args) -> int:
    run = Run(cfg, "ingest")
    src = Path(cfg.input_path)
    try:
        events, errors = read_events(src, cfg.input_format)
    except OSError as exc:
        raise FatalError(f"cannot read {src}: {exc.strerror}") from None
    run.inputs[src.name] = _digest(src)
    run.write(EVENTS, serialize_events(events, "csv"))
    run.write(ERRORS, serialize_errors(errors))
    run.finish()
    print(f"ingested {len(events)} events, {len(errors)} record errors")
    return 0


def cmd_train(cfg: PipelineConfig, args) -> int:
    run = Run(cfg, "train")
    train, _ = _split(cfg, _load_store(run))
    fps = update_fingerprints(train)
    eligible = eligible_domains(fps, cfg.min_clicks)
    domains, x = fingerprint_matrix(fps, eligible)
    k_max = cfg.k_max
    if len(x) < k_max:
        log.warning("%d eligible domains < k_max=%d; capping k_max", len(x), k_max)
        k_max = len(x)
    if k_max < cfg.k_min:
        raise FatalError(f"only {len(x)} domains with >= {cfg.min_clicks} clicks; need {cfg.k_min}")
    try:
        model = select_k(x, cfg.k_min, k_max, cfg.elbow_threshold, cfg.seed,
                         cfg.n_restarts, cfg.max_iters, cfg.tol)
    except InsufficientPoints as exc:
        raise FatalError(str(exc)) from None
    model.trained_through = train.days[-1]
    run.write(MODEL, model.to_json())
    run.write(FINGERPRINTS, write_snapshot(fps))
    run.finish()
    print(f"k={model.k} silhouette={model.silhouette:.3f} on {len(x)} domains")
    return 0


def _train_assignments(cfg, train: EventStore, model: ClusterModel) -> AssignmentSnapshot:
    fps = update_fingerprints(train)
    eligible = eligible_domains(fps, cfg.min_clicks)
    snap = AssignmentSnapshot(model.trained_through or train.days[-1])
    snap.assignments = assign_all({d: fps[d] for d in eligible}, model)
    snap.unassigned = set(fps) - eligible
    return snap


def cmd_rules(cfg: PipelineConfig, args) -> int:
    run = Run(cfg, "rules")
    model = ClusterModel.from_json(run.read(MODEL, "train"))
    train, _ = _split(cfg, _load_store(run))
    snap = _train_assignments(cfg, train, model)
    rules = build_ruleset(model, train, snap.assignments, cfg.min_profitable_hours)
    run.write(RULESET, rules.to_json())
    run.write(TRAIN_ASSIGNMENTS, snap.to_csv())
    run.finish()
    for c, text in rules.render().items():
        print(f"cluster {c}: {text}")
    return 0


def _day_arg(args, store: EventStore, required: bool) -> date:
    if getattr(args, "day", None):
        return date.fromisoformat(args.day)
    if required:
        raise FatalError("--day YYYY-MM-DD is required")
    if not len(store):
        raise FatalError("event store is empty")
    return store.days[-1]


def cmd_assign(cfg: PipelineConfig, args) -> int:
    run = Run(cfg, "assign")
    model = ClusterModel.from_json(run.read(MODEL, "train"))
    store = _load_store(run)
    day = _day_arg(args, store, required=False)
    snap = daily_snapshot(store, model, day, cfg.min_clicks)
    run.write(f"snapshot_{day.isoformat()}.csv", snap.to_csv())
    run.finish()
    print(f"{day}: {len(snap.assignments)} assigned, {len(snap.unassigned)} unassigned")
    return 0


def cmd_simulate(cfg: PipelineConfig, args) -> int:
    run = Run(cfg, "simulate")
    model = ClusterModel.from_json(run.read(MODEL, "train"))
    rules = RuleSet.from_json(run.read(RULESET, "rules"))
    train, test = _split(cfg, _load_store(run))
    try:
        report = replay(test, model, rules, cfg.min_clicks, history=train)
    except EmptyPeriod as exc:
        raise FatalError(f"{exc} (split {cfg.split})") from None
    run.write(REPORT, report.to_json())
    run.write(REPORT_DAILY, report.daily_csv())
    run.finish()
    inc = report.profit_increase
    print(f"profit baseline={report.baseline.profit} blocked={report.blocked.profit} "
          f"increase={'n/a' if inc is None else f'{inc:.1%}'}")
    return 0


def cmd_report(cfg: PipelineConfig, args) -> int:
    run = Run(cfg, "report")
    model = ClusterModel.from_json(run.read(MODEL, "train"))
    rules = RuleSet.from_json(run.read(RULESET, "rules"))
    snap = AssignmentSnapshot.from_csv(run.read(TRAIN_ASSIGNMENTS, "rules"))
    sim = SimulationReport.from_json(run.read(REPORT, "simulate"))
    train, _ = _split(cfg, _load_store(run))
    sources = dict(sorted(run.inputs.items()))
    datasets = [
        emit_centroids(model, sources),
        emit_hourly_cr(train, snap.assignments, rules, sources),
        emit_moving_average(sim, cfg.ma_window, sources),
        emit_summary([RunSummary(cfg.network, model, rules, sim)], sources),
    ]
    for ds in datasets:
        check_dataset(ds)
        ds.metadata["data_through"] = max(d.day for d in sim.days).isoformat() if sim.days else None
        name = ds.filename(cfg.run_id)
        run.write(f"figures/{name}", ds.to_csv())
        run.write(f"figures/{name[:-4]}.meta.json", write_metadata(ds))
    run.finish()
    print(f"wrote {len(datasets)} datasets to {cfg.out / 'figures'}")
    return 0


def _state_files(cfg: PipelineConfig) -> dict[date, Path]:
    folder = cfg.out / "daily"
    if not folder.exists():
        return {}
    return {date.fromisoformat(p.stem[len("state_"):]): p for p in folder.glob("state_*.json")}


def diff_actions(previous: dict[str, str], current: dict[str, str]) -> list[tuple[str, str, str]]:
    """Block/unblock deltas turning ``previous`` into ``current``.

    States map domain -> hours spec (``always`` or ``start-end``). A block
    action sets the domain's blocked hours; unblock clears them.
    """
    actions = []
    for d in sorted(previous.keys() | current.keys()):
        old, new = previous.get(d), current.get(d)
        if old == new:
            continue
        if old is not None:
            actions.append((d, old, "unblock"))
        if new is not None:
            actions.append((d, new, "block"))
    return actions


def apply_actions(state: dict[str, str], actions) -> dict[str, str]:
    out = dict(state)
    for d, hours, action in actions:
        if action == "block":
            out[d] = hours
        else:
            out.pop(d, None)
    return out


def cmd_daily(cfg: PipelineConfig, args) -> int:
    """Emit the block/unblock delta computed after ``--day``'s data.

    Actions take effect on the following day, which is recorded as a
    blocked day for every domain left in a blocking state.
    """
    run = Run(cfg, "daily")
    model = ClusterModel.from_json(run.read(MODEL, "train"))
    rules = RuleSet.from_json(run.read(RULESET, "rules"))
    store = _load_store(run)
    day = _day_arg(args, store, required=True)
    snap = daily_snapshot(store, model, day, cfg.min_clicks)
    current = {}
    for d, c in sorted(snap.assignments.items()):
        spec = rules[c].hours_spec()
        if spec is not None:
            current[d] = spec

    earlier = {k: p for k, p in _state_files(cfg).items() if k < day}
    previous = {}
    if earlier:
        last = max(earlier)
        name = f"daily/state_{last.isoformat()}.json"
        previous = json.loads(run.read(name, "daily"))["blocked"]
    actions = diff_actions(previous, current)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["day", "domain_id", "hours", "action"])
    for d, hours, action in actions:
        w.writerow([day.isoformat(), d, hours, action])
    run.write(f"daily/actions_{day.isoformat()}.csv", buf.getvalue())
    run.write(f"daily/state_{day.isoformat()}.json",
              json.dumps({"day": day.isoformat(), "blocked": current}, indent=2, sort_keys=True) + "\n")

    effective = day + timedelta(days=1)
    blocked = set(store.blocked_days)
    blocked = {p for p in blocked if p[1] != effective} | {(d, effective) for d in current}
    run.write(BLOCKED_DAYS, write_blocked_days(blocked))
    run.finish()
    print(f"{day}: {len(actions)} actions ({len(current)} domains blocked from {effective})")
    return 0


def cmd_synth(args) -> int:
    cfg = synth.SynthConfig(seed=args.seed, n_domains=args.domains, n_days=args.days)
    events = synth.generate_events(cfg)
    write_atomic(Path(args.out), serialize_events(events, args.format))
    print(f"wrote {len(events)} events for {cfg.n_domains} domains to {args.out}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "rules": cmd_rules,
    "assign": cmd_assign,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "daily": cmd_daily,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpopt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--day", help="civil day YYYY-MM-DD")
    p = sub.add_parser("synth", help="write the bundled synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--domains", type=int, default=1000)
    p.add_argument("--days", type=int, default=60)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigValidationError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return 2
    except (FatalError, ConfigError, ValueError) as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
