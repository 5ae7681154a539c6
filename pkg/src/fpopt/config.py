"""Flat ``key = value`` pipeline config with ``FPOPT_<KEY>`` environment overrides."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields
from datetime import date, datetime
from pathlib import Path
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

from .ingest import FORMATS, day_start, parse_timestamp

ENV_PREFIX = "FPOPT_"


class ConfigValidationError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class PipelineConfig:
    input_path: str
    output_dir: str
    split: str  # first test day (YYYY-MM-DD) or an RFC 3339 instant
    input_format: str = "csv"
    timezone: str = "UTC"
    min_clicks: int = 50
    k_min: int = 2
    k_max: int = 8
    elbow_threshold: float = 0.10
    n_restarts: int = 10
    max_iters: int = 300
    tol: float = 1e-6
    min_profitable_hours: int = 6
    seed: int = 0
    network: str = "default"
    ma_window: int = 14

    @property
    def tz(self) -> ZoneInfo:
        return ZoneInfo(self.timezone)

    @property
    def split_instant(self) -> datetime:
        if "T" in self.split or " " in self.split.strip():
            return parse_timestamp(self.split)
        return day_start(date.fromisoformat(self.split), self.tz)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def run_id(self) -> str:
        return self.digest()[:12]


_FIELDS = {f.name: f for f in fields(PipelineConfig)}
_REQUIRED = ("input_path", "output_dir", "split")
_CASTS = {"int": int, "float": float, "str": str}


def parse_text(text: str) -> dict[str, str]:
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigValidationError([f"line {n}: expected 'key = value'"])
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def load_config(path: str | os.PathLike, environ: dict | None = None) -> PipelineConfig:
    """Read ``path``, apply environment overrides, validate everything at once.

    Relative paths in the file are resolved against the file's directory.
    """
    environ = os.environ if environ is None else environ
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigValidationError([f"cannot read config {path}: {exc.strerror}"]) from None
    raw = parse_text(text)
    for key in _FIELDS:
        env = environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            raw[key] = env

    violations = [f"unknown key {k!r}" for k in raw if k not in _FIELDS]
    violations += [f"missing required key {k!r}" for k in _REQUIRED if not raw.get(k)]
    values = {}
    for key, value in raw.items():
        if key not in _FIELDS:
            continue
        cast = _CASTS[_FIELDS[key].type]  # annotations are strings here
        try:
            values[key] = cast(value)
        except ValueError:
            violations.append(f"{key}: cannot parse {value!r} as {cast.__name__}")
    for key in ("input_path", "output_dir"):
        if values.get(key):
            p = Path(values[key])
            values[key] = str(p if p.is_absolute() else (path.parent / p).resolve())
    if violations:
        raise ConfigValidationError(violations)
    cfg = PipelineConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig) -> None:
    v = []
    if cfg.k_min < 2:
        v.append("k_min must be >= 2")
    if cfg.k_max < cfg.k_min:
        v.append("k_max must be >= k_min")
    if not 0 < cfg.elbow_threshold < 1:
        v.append("elbow_threshold must be in (0, 1)")
    if cfg.min_clicks < 1:
        v.append("min_clicks must be >= 1")
    if cfg.n_restarts < 1:
        v.append("n_restarts must be >= 1")
    if cfg.max_iters < 1:
        v.append("max_iters must be >= 1")
    if cfg.tol <= 0:
        v.append("tol must be > 0")
    if not 0 <= cfg.min_profitable_hours <= 24:
        v.append("min_profitable_hours must be in 0..24")
    if cfg.ma_window < 1:
        v.append("ma_window must be >= 1")
    if cfg.input_format not in FORMATS:
        v.append(f"input_format must be one of {FORMATS}")
    try:
        ZoneInfo(cfg.timezone)
    except (ZoneInfoNotFoundError, ValueError):
        v.append(f"unknown timezone {cfg.timezone!r}")
    else:
        try:
            cfg.split_instant
        except ValueError:
            v.append(f"split {cfg.split!r} is neither a date nor an RFC 3339 instant")
    if v:
        raise ConfigValidationError(v)
