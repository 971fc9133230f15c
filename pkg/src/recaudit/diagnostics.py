"""Dataset health checks that probe whether an evaluation setup makes sense.

Four independent statistics, each a pure reduction over immutable data:

* timestamp collisions: do many events share an (entity, timestamp) slot?
  When they do at day resolution, within-day order is an artifact of data
  export, not behaviour, and next-item evaluation on it measures noise.
* new-transition rate: how many adjacent item pairs appear for the first
  time on each day?  Sustained high rates mean test-period transitions were
  largely never trainable.
* train/test transition overlap: what share of evaluated transitions also
  occurs in training data?  High overlap under a leave-one-out split is the
  signature of answers leaking backward in time.
* sequentiality probe: does a model that uses event order actually beat an
  order-agnostic one on this dataset?
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DiagnosticsError
from .evaluation import EvalConfig, MetricReport, enumerate_cases, evaluate
from .events import RESOLUTION_DAYS, SECONDS_PER_DAY, EventLog
from .models import build_model
from .preprocess import Dataset
from .splitting import DatasetSplit

# day-resolution data above this colliding-event share is flagged as hazardous
COLLISION_EVENT_FRACTION_THRESHOLD = 0.10

DENOMINATOR_ACTIVE_SEQUENCES = "active_sequences"
DENOMINATOR_STARTING_SEQUENCES = "starting_sequences"
DENOMINATOR_DAY_TRANSITIONS = "day_transitions"
RATE_DENOMINATORS = (
    DENOMINATOR_ACTIVE_SEQUENCES,
    DENOMINATOR_STARTING_SEQUENCES,
    DENOMINATOR_DAY_TRANSITIONS,
)

VERDICT_WEAK = "weak_sequential_signal"
VERDICT_PRESENT = "sequential_signal"

SEQUENTIAL_BASELINES = ("markov", "session_knn")


@dataclass(frozen=True)
class CollisionReport:
    """How much of the log shares (entity, timestamp) slots."""

    colliding_pair_fraction: float  # slots with >= 2 events / all slots
    colliding_event_fraction: float  # events inside such slots / all events
    collision_size_histogram: dict[int, int]  # slot size -> number of slots
    total_events: int
    total_pairs: int

    def to_dict(self) -> dict:
        return {
            "colliding_pair_fraction": self.colliding_pair_fraction,
            "colliding_event_fraction": self.colliding_event_fraction,
            "collision_size_histogram": {
                str(size): self.collision_size_histogram[size]
                for size in sorted(self.collision_size_histogram)
            },
            "total_events": self.total_events,
            "total_pairs": self.total_pairs,
        }


def collision_stats(log: EventLog) -> CollisionReport:
    """Count events sharing an (entity, timestamp) slot.

    Collisions are per entity: two different entities acting at the same
    second collide with nobody.
    """
    total_events = 0
    total_pairs = 0
    colliding_pairs = 0
    colliding_events = 0
    histogram: Counter[int] = Counter()
    for group in log.groups.values():
        times = np.fromiter((e.timestamp for e in group), np.int64, count=len(group))
        _, counts = np.unique(times, return_counts=True)
        total_events += len(group)
        total_pairs += len(counts)
        big = counts[counts >= 2]
        colliding_pairs += len(big)
        colliding_events += int(big.sum())
        for size in big:
            histogram[int(size)] += 1
    return CollisionReport(
        colliding_pair_fraction=colliding_pairs / total_pairs if total_pairs else 0.0,
        colliding_event_fraction=(
            colliding_events / total_events if total_events else 0.0
        ),
        collision_size_histogram=dict(histogram),
        total_events=total_events,
        total_pairs=total_pairs,
    )


def collision_hazard(
    report: CollisionReport,
    timestamp_resolution: str,
    threshold: float = COLLISION_EVENT_FRACTION_THRESHOLD,
) -> bool:
    """True when day-resolution data collides enough to poison within-day order."""
    return (
        timestamp_resolution == RESOLUTION_DAYS
        and report.colliding_event_fraction > threshold
    )


@dataclass(frozen=True)
class TransitionSet:
    """Distinct adjacent item pairs with the day each was first completed.

    A transition (i, j) happens when j directly follows i inside one
    sequence; its day is the day of the second event.  Days are absolute
    (timestamp // 86400).
    """

    first_seen_day: dict[tuple[int, int], int]

    @property
    def pairs(self) -> set[tuple[int, int]]:
        return set(self.first_seen_day)

    def __len__(self) -> int:
        return len(self.first_seen_day)


def transition_set(data: Dataset) -> TransitionSet:
    first: dict[tuple[int, int], int] = {}
    for seq in data.sequences:
        if len(seq) < 2:
            continue
        days = seq.timestamps[1:] // SECONDS_PER_DAY
        for left, right, day in zip(seq.items[:-1], seq.items[1:], days):
            pair = (int(left), int(right))
            day = int(day)
            if pair not in first or day < first[pair]:
                first[pair] = day
    return TransitionSet(first_seen_day=first)


@dataclass(frozen=True)
class TransitionRatePoint:
    """One day of the first-seen-transition series; day 0 is the first data day."""

    day: int
    new_transitions: int
    denominator: int
    rate: float | None  # None when the denominator is empty

    def to_dict(self) -> dict:
        return {
            "day": self.day,
            "new_transitions": self.new_transitions,
            "denominator": self.denominator,
            "rate": self.rate,
        }


def new_transition_rate(
    data: Dataset, denominator: str = DENOMINATOR_ACTIVE_SEQUENCES
) -> list[TransitionRatePoint]:
    """Per-day share of transitions never observed before that day.

    The default denominator is the number of distinct sequences with at
    least one event that day; alternatives normalise by sequences starting
    that day or by distinct transitions occurring that day.  Every day with
    at least one event gets a point; day numbers are offsets from the first
    day in the data.  Summed over all points, ``new_transitions`` equals the
    number of distinct transitions in the dataset.
    """
    if denominator not in RATE_DENOMINATORS:
        raise DiagnosticsError(
            f"unknown denominator {denominator!r}, expected one of {RATE_DENOMINATORS}"
        )
    active: Counter[int] = Counter()
    starting: Counter[int] = Counter()
    occurring: dict[int, set[tuple[int, int]]] = {}
    event_days: set[int] = set()
    for seq in data.sequences:
        days = seq.timestamps // SECONDS_PER_DAY
        distinct_days = np.unique(days)
        event_days.update(int(d) for d in distinct_days)
        for d in distinct_days:
            active[int(d)] += 1
        starting[int(days[0])] += 1
        for left, right, day in zip(seq.items[:-1], seq.items[1:], days[1:]):
            occurring.setdefault(int(day), set()).add((int(left), int(right)))
    if not event_days:
        raise DiagnosticsError("cannot compute transition rates without events")
    first_day = min(event_days)
    if max(event_days) == first_day:
        raise DiagnosticsError(
            "transition rates need data spanning at least two days"
        )
    new_per_day = Counter(transition_set(data).first_seen_day.values())
    series = []
    for abs_day in sorted(event_days):
        if denominator == DENOMINATOR_ACTIVE_SEQUENCES:
            denom = active[abs_day]
        elif denominator == DENOMINATOR_STARTING_SEQUENCES:
            denom = starting[abs_day]
        else:
            denom = len(occurring.get(abs_day, ()))
        new = new_per_day.get(abs_day, 0)
        series.append(
            TransitionRatePoint(
                day=abs_day - first_day,
                new_transitions=new,
                denominator=denom,
                rate=new / denom if denom else None,
            )
        )
    return series


def plot_points(series: list[TransitionRatePoint]) -> list[TransitionRatePoint]:
    """Series as plotted: the first day is dropped (everything is new on it)."""
    return [point for point in series if point.day != 0]


@dataclass(frozen=True)
class OverlapReport:
    """Share of evaluated test transitions already present in training data."""

    occurrence_overlap: float  # over transition occurrences
    distinct_overlap: float  # over distinct pairs
    test_transition_count: int
    distinct_test_transitions: int
    distinct_train_transitions: int

    def to_dict(self) -> dict:
        return {
            "occurrence_overlap": self.occurrence_overlap,
            "distinct_overlap": self.distinct_overlap,
            "test_transition_count": self.test_transition_count,
            "distinct_test_transitions": self.distinct_test_transitions,
            "distinct_train_transitions": self.distinct_train_transitions,
        }


def transition_overlap(split: DatasetSplit) -> OverlapReport:
    """Compare the split's evaluated transitions against training transitions.

    Test transitions are the (last prefix item, target) pairs of the split's
    evaluation cases, which for prefix-growing splits is exactly the set of
    adjacent pairs inside test sequences.  Both an occurrence-weighted and a
    distinct-pair fraction are reported; they answer different questions and
    neither dominates the other.
    """
    train_pairs = transition_set(split.train).pairs
    occurrences = [
        (int(case.prefix[-1]), case.target) for case in enumerate_cases(split)
    ]
    if not occurrences:
        raise DiagnosticsError("the test side contains no transitions to compare")
    shared = sum(1 for pair in occurrences if pair in train_pairs)
    distinct_test = set(occurrences)
    return OverlapReport(
        occurrence_overlap=shared / len(occurrences),
        distinct_overlap=len(distinct_test & train_pairs) / len(distinct_test),
        test_transition_count=len(occurrences),
        distinct_test_transitions=len(distinct_test),
        distinct_train_transitions=len(train_pairs),
    )


@dataclass(frozen=True)
class SequentialityReport:
    """Order-aware vs order-agnostic baseline on identical data.

    ``relative_change_*`` maps each cutoff to (agnostic - aware) / aware;
    negative values mean discarding order hurt.  The verdict threshold is a
    knob, not a constant of nature.
    """

    cutoffs: tuple[int, ...]
    sequential: MetricReport
    order_agnostic: MetricReport
    relative_change_recall: dict[int, float | None]
    relative_change_mrr: dict[int, float | None]
    verdict: str
    verdict_cutoff: int
    verdict_threshold: float

    def to_dict(self) -> dict:
        return {
            "cutoffs": list(self.cutoffs),
            "sequential": self.sequential.to_dict(),
            "order_agnostic": self.order_agnostic.to_dict(),
            "relative_change_recall": {
                str(n): self.relative_change_recall[n] for n in self.cutoffs
            },
            "relative_change_mrr": {
                str(n): self.relative_change_mrr[n] for n in self.cutoffs
            },
            "verdict": self.verdict,
            "verdict_cutoff": self.verdict_cutoff,
            "verdict_threshold": self.verdict_threshold,
        }


def sequentiality_probe(
    split: DatasetSplit,
    cutoffs: tuple[int, ...] = (1, 5, 10, 20),
    sequential_model: str = "markov",
    tie_policy: str = "optimistic",
    master_seed: int = 0,
    verdict_cutoff: int | None = None,
    verdict_threshold: float = 0.05,
    workers: int = 1,
    model_params: dict | None = None,
) -> SequentialityReport:
    """Fit an order-aware and an order-agnostic baseline, compare full-ranking metrics.

    If shuffling away the order would cost nothing, next-item evaluation on
    this dataset is measuring popularity and co-occurrence, not sequence
    behaviour.  Both models train on the same data and rank the full catalog.
    """
    if sequential_model not in SEQUENTIAL_BASELINES:
        raise DiagnosticsError(
            f"sequential baseline must be one of {SEQUENTIAL_BASELINES}"
        )
    cfg = EvalConfig(
        cutoffs=tuple(cutoffs), tie_policy=tie_policy, master_seed=master_seed
    )
    params = model_params or {}
    aware = build_model(sequential_model, **params).fit(split.train)
    agnostic = build_model("cooccurrence").fit(split.train)
    aware_report = evaluate(
        aware, split, cfg, workers=workers, model_name=sequential_model
    )
    agnostic_report = evaluate(
        agnostic, split, cfg, workers=workers, model_name="cooccurrence"
    )

    def relative(a: dict[int, float], b: dict[int, float]) -> dict[int, float | None]:
        return {n: ((b[n] - a[n]) / a[n]) if a[n] else None for n in cfg.cutoffs}

    rel_recall = relative(aware_report.recall, agnostic_report.recall)
    rel_mrr = relative(aware_report.mrr, agnostic_report.mrr)
    chosen = verdict_cutoff if verdict_cutoff is not None else cfg.cutoffs[-1]
    if chosen not in cfg.cutoffs:
        raise DiagnosticsError(f"verdict cutoff {chosen} is not in {cfg.cutoffs}")
    probe = rel_recall[chosen]
    verdict = (
        VERDICT_WEAK
        if probe is None or abs(probe) < verdict_threshold
        else VERDICT_PRESENT
    )
    return SequentialityReport(
        cutoffs=cfg.cutoffs,
        sequential=aware_report,
        order_agnostic=agnostic_report,
        relative_change_recall=rel_recall,
        relative_change_mrr=rel_mrr,
        verdict=verdict,
        verdict_cutoff=chosen,
        verdict_threshold=verdict_threshold,
    )
