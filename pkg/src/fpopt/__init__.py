"""Traffic-fingerprint clustering and hour-of-day blocking rules for ad campaigns."""

from .assign import AssignmentSnapshot, NoModel, assign_domain, daily_snapshot
from .clustering import ClusterModel, InsufficientPoints, SilhouetteUndefined, kmeans, select_k, silhouette_score
from .fingerprint import TrafficFingerprint, UndefinedFingerprint, compute_fingerprint, eligible_domains, update_fingerprints
from .ingest import ClickEvent, EventStore, RecordError, hourly_counts, parse_events, read_events, split_train_test
from .rules import BlockingRule, HourlyProfitProfile, RuleKind, RuleSet, build_ruleset, is_blocked, profile_cluster, synthesize_rule
from .simulate import EmptyPeriod, SimulationReport, metric_suite, moving_average, replay

__version__ = "0.1.0"
