"""Train/test splitting strategies and training-window truncation.

The time-based split is the reference protocol: the model may only see events
up to a boundary, and is tested on sequences that start after it.  The other
two strategies (leave-one-out, random) are implemented faithfully as the
comparison points whose leakage the diagnostics quantify, not because they are
recommended.

All strategies share one item index across sides; test events whose item never
occurs in train are counted so reports can say how many cases the evaluator
will skip.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import SplitError
from .events import SECONDS_PER_DAY
from .preprocess import Dataset, Sequence

STRATEGY_TIME = "time"
STRATEGY_LOO = "leave_one_out"
STRATEGY_RANDOM = "random"

SELECT_ALL = "all"
SELECT_MOST_RECENT = "most_recent"
SELECT_RANDOM = "random"


@dataclass(frozen=True)
class LeaveOneOutSelection:
    """Which sequences donate their final event as a test case."""

    kind: str = SELECT_ALL
    k: int | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in (SELECT_ALL, SELECT_MOST_RECENT, SELECT_RANDOM):
            raise ValueError(f"unknown selection kind {self.kind!r}")
        if self.kind != SELECT_ALL:
            if self.k is None or self.k < 1:
                raise ValueError(f"selection {self.kind!r} needs k >= 1")
        if self.kind == SELECT_RANDOM and self.seed is None:
            raise ValueError("random selection needs an explicit seed")


@dataclass(frozen=True)
class SplitSpec:
    """Declarative description of a split strategy and its parameters."""

    strategy: str
    split_time: int | None = None
    test_days: int | None = None
    selection: LeaveOneOutSelection | None = None
    fraction: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.strategy == STRATEGY_TIME:
            if self.split_time is None and self.test_days is None:
                raise ValueError("time strategy needs split_time or test_days")
            if self.test_days is not None and self.test_days < 1:
                raise ValueError("test_days must be at least 1")
        elif self.strategy == STRATEGY_LOO:
            if self.selection is None:
                object.__setattr__(self, "selection", LeaveOneOutSelection())
        elif self.strategy == STRATEGY_RANDOM:
            if self.fraction is None or not 0 < self.fraction < 1:
                raise ValueError("random strategy needs 0 < fraction < 1")
            if self.seed is None:
                raise ValueError("random strategy needs an explicit seed")
        else:
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass(frozen=True)
class SideStats:
    events: int
    sequences: int
    days: int

    def to_dict(self) -> dict:
        return {"events": self.events, "sequences": self.sequences, "days": self.days}


@dataclass(frozen=True)
class SplitStats:
    train: SideStats
    test: SideStats
    unseen_item_events: int
    unseen_items: int

    def to_dict(self) -> dict:
        out = {"train": self.train.to_dict(), "test": self.test.to_dict()}
        out["test"]["unseen_item_events"] = self.unseen_item_events
        out["test"]["unseen_items"] = self.unseen_items
        return out


@dataclass(frozen=True)
class DatasetSplit:
    train: Dataset
    test: Dataset
    spec: SplitSpec
    stats: SplitStats
    split_time: int | None = None
    window_days: int | None = None


def _subset(data: Dataset, sequences: list[Sequence]) -> Dataset:
    support = np.zeros(len(data.item_index), dtype=np.int64)
    for seq in sequences:
        np.add.at(support, seq.items, 1)
    return Dataset(
        sequences=sequences,
        item_index=data.item_index,
        item_support=support,
        provenance=list(data.provenance),
    )


def _side_stats(sequences: list[Sequence]) -> SideStats:
    events = sum(len(s) for s in sequences)
    if not sequences:
        return SideStats(events=0, sequences=0, days=0)
    first = min(s.start_time for s in sequences)
    last = max(s.end_time for s in sequences)
    days = last // SECONDS_PER_DAY - first // SECONDS_PER_DAY + 1
    return SideStats(events=events, sequences=len(sequences), days=days)


def _make_split(
    data: Dataset,
    train_seqs: list[Sequence],
    test_seqs: list[Sequence],
    spec: SplitSpec,
    split_time: int | None = None,
    window_days: int | None = None,
) -> DatasetSplit:
    train = _subset(data, train_seqs)
    test = _subset(data, test_seqs)
    seen = train.item_support > 0
    unseen_events = 0
    unseen_items: set[int] = set()
    for seq in test_seqs:
        misses = ~seen[seq.items]
        unseen_events += int(misses.sum())
        unseen_items.update(seq.items[misses].tolist())
    stats = SplitStats(
        train=_side_stats(train_seqs),
        test=_side_stats(test_seqs),
        unseen_item_events=unseen_events,
        unseen_items=len(unseen_items),
    )
    return DatasetSplit(
        train=train,
        test=test,
        spec=spec,
        stats=stats,
        split_time=split_time,
        window_days=window_days,
    )


def _time_range(data: Dataset) -> tuple[int, int]:
    if not data.sequences:
        raise SplitError("cannot split an empty dataset")
    return (
        min(s.start_time for s in data.sequences),
        max(s.end_time for s in data.sequences),
    )


def choose_split_time(data: Dataset, target_test_days: int) -> int:
    """Day boundary leaving the final ``target_test_days`` days as test.

    Days are UTC.  The boundary is ``(D + 1 - target_test_days)`` days in epoch
    seconds, where D is the last event's day index, so a target of one keeps
    every sequence starting on the last (possibly partial) day for testing.
    """
    if target_test_days < 1:
        raise SplitError("target_test_days must be at least 1")
    first, last = _time_range(data)
    boundary = (last // SECONDS_PER_DAY + 1 - target_test_days) * SECONDS_PER_DAY
    if boundary <= first:
        raise SplitError(
            f"data spans days {first // SECONDS_PER_DAY}..{last // SECONDS_PER_DAY}; "
            f"a {target_test_days}-day test window leaves no training data"
        )
    return boundary


def time_split(data: Dataset, split_time: int, min_seq_len: int = 2) -> DatasetSplit:
    """Split at a timestamp: model sees the past, is tested on the future.

    Test takes every sequence whose first event is after ``split_time``, whole.
    Train takes all events at or before it; sequences straddling the boundary
    are cut there, and cut stumps shorter than ``min_seq_len`` are dropped
    (their count shows up in the stats as missing sequences).

    A boundary outside the data's range surfaces as one of the empty-side
    errors below; :func:`choose_split_time` always returns a usable one.
    """
    if not data.sequences:
        raise SplitError("cannot split an empty dataset")
    train_seqs: list[Sequence] = []
    test_seqs: list[Sequence] = []
    for seq in data.sequences:
        if seq.start_time > split_time:
            test_seqs.append(seq)
            continue
        cut = int(np.searchsorted(seq.timestamps, split_time, side="right"))
        if cut == len(seq):
            train_seqs.append(seq)
        elif cut >= min_seq_len:
            train_seqs.append(seq.replace_events(seq.items[:cut], seq.timestamps[:cut]))
        # else: stump too short, dropped entirely
    if not train_seqs:
        raise SplitError(f"split_time {split_time} leaves an empty training side")
    if not test_seqs:
        raise SplitError(f"split_time {split_time} leaves an empty test side")
    spec = SplitSpec(strategy=STRATEGY_TIME, split_time=split_time)
    return _make_split(data, train_seqs, test_seqs, spec, split_time=split_time)


def leave_one_out_split(data: Dataset, selection: LeaveOneOutSelection) -> DatasetSplit:
    """Move each selected sequence's final event into test, prefix stays in train.

    The prefix keeps its sequence id, so a test case can be matched back to its
    training prefix.  Note what this protocol does NOT guarantee: test targets
    may predate other training events, which is exactly the leakage the
    transition-overlap audit measures.

    Only sequences of length >= 2 are eligible (a shorter one has no prefix to
    leave behind); ineligible ones go to train whole.
    """
    if not data.sequences:
        raise SplitError("cannot split an empty dataset")
    eligible = [i for i, s in enumerate(data.sequences) if len(s) >= 2]
    if selection.kind == SELECT_ALL:
        chosen = eligible
    elif selection.k is not None and selection.k > len(eligible):
        raise SplitError(
            f"selection k={selection.k} exceeds {len(eligible)} eligible sequences"
        )
    elif selection.kind == SELECT_MOST_RECENT:
        order = sorted(eligible, key=lambda i: (data.sequences[i].start_time, i))
        chosen = order[len(eligible) - selection.k :]
    else:
        rng = np.random.default_rng(selection.seed)
        chosen = sorted(
            np.asarray(eligible)[rng.choice(len(eligible), size=selection.k, replace=False)]
            .tolist()
        )
    if not chosen:
        raise SplitError("no sequence is long enough to donate a test event")
    chosen_set = set(chosen)
    train_seqs: list[Sequence] = []
    test_seqs: list[Sequence] = []
    for i, seq in enumerate(data.sequences):
        if i in chosen_set:
            train_seqs.append(seq.replace_events(seq.items[:-1], seq.timestamps[:-1]))
            test_seqs.append(seq.replace_events(seq.items[-1:], seq.timestamps[-1:]))
        else:
            train_seqs.append(seq)
    spec = SplitSpec(strategy=STRATEGY_LOO, selection=selection)
    return _make_split(data, train_seqs, test_seqs, spec)


def random_split(data: Dataset, fraction: float, seed: int) -> DatasetSplit:
    """Assign whole sequences to test independently with the given probability."""
    spec = SplitSpec(strategy=STRATEGY_RANDOM, fraction=fraction, seed=seed)
    rng = np.random.default_rng(seed)
    draws = rng.random(len(data.sequences))
    train_seqs = [s for s, d in zip(data.sequences, draws) if d >= fraction]
    test_seqs = [s for s, d in zip(data.sequences, draws) if d < fraction]
    if not train_seqs or not test_seqs:
        raise SplitError(
            f"random split with fraction {fraction} left a side empty "
            f"({len(train_seqs)} train / {len(test_seqs)} test sequences)"
        )
    return _make_split(data, train_seqs, test_seqs, spec)


def truncate_training_window(
    split: DatasetSplit, window_days: int, min_seq_len: int = 2
) -> DatasetSplit:
    """Shrink train to its last ``window_days`` days before the split boundary.

    Sequences straddling the window start are cut there; stumps shorter than
    ``min_seq_len`` are dropped.  Test is untouched, so metric changes across
    windows isolate how much the model leans on older history.
    """
    if window_days < 1:
        raise SplitError("window_days must be at least 1")
    if split.split_time is None:
        raise SplitError("window truncation needs a time split (no split boundary present)")
    window_start = split.split_time - window_days * SECONDS_PER_DAY
    train_seqs: list[Sequence] = []
    for seq in split.train.sequences:
        lo = int(np.searchsorted(seq.timestamps, window_start, side="left"))
        if lo == 0:
            train_seqs.append(seq)
        elif len(seq) - lo >= min_seq_len:
            train_seqs.append(seq.replace_events(seq.items[lo:], seq.timestamps[lo:]))
    if not train_seqs:
        raise SplitError(f"a {window_days}-day window leaves an empty training side")
    merged = Dataset(
        sequences=train_seqs + split.test.sequences,
        item_index=split.train.item_index,
        item_support=np.zeros(len(split.train.item_index), dtype=np.int64),
        provenance=list(split.train.provenance),
    )
    return _make_split(
        merged,
        train_seqs,
        split.test.sequences,
        split.spec,
        split_time=split.split_time,
        window_days=window_days,
    )


def apply_split(data: Dataset, spec: SplitSpec) -> DatasetSplit:
    """Run the strategy a spec describes."""
    if spec.strategy == STRATEGY_TIME:
        split_time = spec.split_time
        if split_time is None:
            split_time = choose_split_time(data, spec.test_days)
        result = time_split(data, split_time)
        return replace(result, spec=spec)
    if spec.strategy == STRATEGY_LOO:
        return leave_one_out_split(data, spec.selection)
    return random_split(data, spec.fraction, spec.seed)


def make_validation(train: Dataset, spec: SplitSpec) -> DatasetSplit:
    """Carve a validation split out of train with the same strategy.

    A time spec must carry ``test_days`` so the boundary can be re-derived
    inside the training range; reusing the outer ``split_time`` verbatim would
    leave an empty validation test side by construction.
    """
    if spec.strategy == STRATEGY_TIME:
        if spec.test_days is None:
            raise SplitError(
                "validation from a time split needs test_days to re-derive the boundary"
            )
        return apply_split(train, replace(spec, split_time=None))
    return apply_split(train, spec)


def matched_loo_k(split: DatasetSplit, prefix_start: int = 1) -> int:
    """Test-case count of a split under prefix enumeration.

    A sequence of length L yields one case per prefix length in
    [``prefix_start``, L-1].  Use this to pick a leave-one-out k that matches a
    time split's case count, so strategy comparisons are size-controlled.
    """
    return sum(max(0, len(s) - prefix_start) for s in split.test.sequences)
