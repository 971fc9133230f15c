"""Pipeline turning raw event logs into filtered, densely indexed datasets.

Four steps, applied in order: keep one event type, cut entity histories into
sequences, merge adjacent repeats, and iteratively drop short sequences and
rare items until both constraints hold at once.  Every step appends a ledger
record with before/after counts, because aggressive preprocessing quietly
reshapes a dataset and the numbers are the only honest way to show how much.

Items are dense integer codes throughout; the mapping back to raw ids travels
in an :class:`~recaudit.events.ItemIndex` and is rebuilt (compacted) by the
support filter once the catalog has settled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence as TypingSequence

import numpy as np

from .errors import PreprocessError
from .events import SECONDS_PER_DAY, EventLog, ItemIndex, RESOLUTION_DAYS

logger = logging.getLogger(__name__)

SESSION_BY_ENTITY = "by_entity"
SESSION_BY_COLUMN = "by_session_column"
SESSION_GAP = "gap"
_SESSION_MODES = (SESSION_BY_ENTITY, SESSION_BY_COLUMN, SESSION_GAP)


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for the preprocessing pipeline."""

    keep_event_type: str | None = None
    session_mode: str = SESSION_BY_ENTITY
    gap_seconds: int = 3600
    min_seq_len: int = 2
    min_item_support: int = 5

    def __post_init__(self) -> None:
        if self.session_mode not in _SESSION_MODES:
            raise ValueError(f"session_mode must be one of {_SESSION_MODES}")
        if self.gap_seconds <= 0:
            raise ValueError("gap_seconds must be positive")
        if self.min_seq_len < 2:
            raise ValueError("min_seq_len must be at least 2")
        if self.min_item_support < 1:
            raise ValueError("min_item_support must be at least 1")


@dataclass(frozen=True, eq=False)
class Sequence:
    """One ordered interaction sequence with dense item codes."""

    seq_id: int
    entity_id: str
    items: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", np.asarray(self.items, dtype=np.int64))
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=np.int64))
        if self.items.shape != self.timestamps.shape or self.items.ndim != 1:
            raise ValueError("items and timestamps must be 1-d arrays of equal length")
        if len(self.items) == 0:
            raise ValueError("a sequence must hold at least one event")
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def start_time(self) -> int:
        return int(self.timestamps[0])

    @property
    def end_time(self) -> int:
        return int(self.timestamps[-1])

    def replace_events(self, items: np.ndarray, timestamps: np.ndarray) -> "Sequence":
        return Sequence(self.seq_id, self.entity_id, items, timestamps)


@dataclass(frozen=True)
class StepRecord:
    """Before/after counts for one applied pipeline step."""

    step: str
    params: dict
    events_before: int
    events_after: int
    sequences_before: int
    sequences_after: int
    items_before: int
    items_after: int

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "params": dict(self.params),
            "events_before": self.events_before,
            "events_after": self.events_after,
            "sequences_before": self.sequences_before,
            "sequences_after": self.sequences_after,
            "items_before": self.items_before,
            "items_after": self.items_after,
        }


@dataclass
class Dataset:
    """Preprocessed sequences plus the item index and the step ledger."""

    sequences: list[Sequence]
    item_index: ItemIndex
    item_support: np.ndarray
    provenance: list[StepRecord] = field(default_factory=list)

    @property
    def num_events(self) -> int:
        return sum(len(s) for s in self.sequences)

    @property
    def num_sequences(self) -> int:
        return len(self.sequences)

    @property
    def num_items(self) -> int:
        return len(self.item_index)

    def recount_support(self) -> np.ndarray:
        support = np.zeros(len(self.item_index), dtype=np.int64)
        for seq in self.sequences:
            np.add.at(support, seq.items, 1)
        return support

    def verify(self, cfg: PipelineConfig | None = None) -> None:
        """Check structural invariants; raises on violation."""
        for seq in self.sequences:
            if len(seq) and int(seq.items.max()) >= len(self.item_index):
                raise AssertionError("item code out of catalog range")
        if not np.array_equal(self.recount_support(), self.item_support):
            raise AssertionError("item_support out of sync with sequences")
        if cfg is not None:
            if any(len(s) < cfg.min_seq_len for s in self.sequences):
                raise AssertionError("sequence below minimum length survived")
            present = self.item_support > 0
            if np.any(self.item_support[present] < cfg.min_item_support):
                raise AssertionError("item below minimum support survived")

    def canonical_text(self) -> str:
        """Deterministic dump used to compare pipeline outputs byte for byte."""
        lines = ["seq_id\tentity\titem\ttimestamp"]
        for seq in self.sequences:
            for code, ts in zip(seq.items.tolist(), seq.timestamps.tolist()):
                lines.append(f"{seq.seq_id}\t{seq.entity_id}\t{self.item_index.reverse[code]}\t{ts}")
        return "\n".join(lines) + "\n"

    def provenance_report(self) -> list[dict]:
        return [record.to_dict() for record in self.provenance]


def _distinct_items(sequences: Iterable[Sequence]) -> int:
    seen: set[int] = set()
    for seq in sequences:
        seen.update(seq.items.tolist())
    return len(seen)


def _log_counts(log: EventLog) -> tuple[int, int, int]:
    return log.num_events, log.num_entities, len({e.item_id for e in log.iter_events()})


def filter_event_type(log: EventLog, keep: str) -> EventLog:
    """Keep only events whose type equals ``keep``, preserving order.

    A log with no typed events at all is returned unchanged (there is nothing
    to filter on); a type that matches nothing yields an empty log.  Both edge
    paths emit a warning instead of failing.
    """
    if all(e.event_type is None for e in log.iter_events()):
        logger.warning("event-type filter skipped: log carries no event types")
        return log
    kept = [e for e in log.iter_events() if e.event_type == keep]
    if not kept:
        logger.warning("event-type filter matched nothing: keep=%r", keep)
    return EventLog.from_events(kept)


def sessionize(
    log: EventLog,
    cfg: PipelineConfig,
    index: ItemIndex | None = None,
) -> list[Sequence]:
    """Cut each entity's history into sequences with dense item codes.

    Modes: ``by_entity`` and ``by_session_column`` map every entity group to
    one sequence (in the latter the entity column already holds session keys);
    ``gap`` starts a new sequence whenever the pause since the previous event
    of the same entity exceeds ``cfg.gap_seconds``.

    ``index`` defaults to a lexicographic index over the log's items, so two
    calls on the same log agree on codes.
    """
    if cfg.session_mode == SESSION_GAP and cfg.gap_seconds < SECONDS_PER_DAY:
        if log.num_events and log.timestamp_resolution == RESOLUTION_DAYS:
            raise PreprocessError(
                f"gap sessionization with gap_seconds={cfg.gap_seconds} is undetectable "
                "on day-resolution timestamps: every within-day pause is recorded as 0. "
                "Run the timestamp-collision audit (diagnostics.collision_stats) and "
                "use by_entity sessions or a gap of at least 86400."
            )
    if index is None:
        index = ItemIndex.from_items(e.item_id for e in log.iter_events())

    sequences: list[Sequence] = []
    seq_id = 0
    for entity in sorted(log.groups):
        group = log.groups[entity]
        codes = np.fromiter((index.forward[e.item_id] for e in group), np.int64, len(group))
        times = np.fromiter((e.timestamp for e in group), np.int64, len(group))
        if cfg.session_mode == SESSION_GAP and len(group) > 1:
            breaks = np.flatnonzero(np.diff(times) > cfg.gap_seconds) + 1
            bounds = [0, *breaks.tolist(), len(group)]
        else:
            bounds = [0, len(group)]
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sequences.append(Sequence(seq_id, entity, codes[lo:hi], times[lo:hi]))
            seq_id += 1
    return sequences


def collapse_repeats(seq: Sequence) -> Sequence:
    """Merge runs of the same item into one event keeping the first timestamp.

    Non-adjacent repeats stay: (i,j,i) is untouched, (i,i,j) becomes (i,j).
    """
    if len(seq) < 2:
        return seq
    keep = np.empty(len(seq), dtype=bool)
    keep[0] = True
    np.not_equal(seq.items[1:], seq.items[:-1], out=keep[1:])
    if keep.all():
        return seq
    return seq.replace_events(seq.items[keep], seq.timestamps[keep])


def _sequence_counts(sequences: TypingSequence[Sequence]) -> tuple[int, int, int]:
    return sum(len(s) for s in sequences), len(sequences), _distinct_items(sequences)


def iterative_support_filter(
    sequences: list[Sequence],
    cfg: PipelineConfig,
    index: ItemIndex,
    provenance: list[StepRecord] | None = None,
) -> Dataset:
    """Drop short sequences and rare items until both constraints hold.

    Each pass first drops sequences shorter than ``min_seq_len``, then recounts
    item support over the survivors and removes every item below
    ``min_item_support`` at once, re-collapsing any adjacent repeats the
    removals exposed.  Passes repeat until one changes nothing.  One ledger
    record is appended per pass, so cascades are visible pass by pass.

    Raises:
        PreprocessError: the filter emptied the dataset; the message replays
            the per-pass shrinkage so the cascade can be audited.
    """
    records: list[StepRecord] = provenance if provenance is not None else []
    current = list(sequences)
    shrink_rows: list[str] = []
    iteration = 0
    while True:
        iteration += 1
        events_before, seqs_before, items_before = _sequence_counts(current)
        kept = [s for s in current if len(s) >= cfg.min_seq_len]
        support = np.zeros(len(index), dtype=np.int64)
        for seq in kept:
            np.add.at(support, seq.items, 1)
        weak = (support > 0) & (support < cfg.min_item_support)
        removed_items = int(np.count_nonzero(weak))
        if removed_items:
            pruned: list[Sequence] = []
            for seq in kept:
                mask = ~weak[seq.items]
                if mask.all():
                    pruned.append(seq)
                elif mask.any():
                    pruned.append(
                        collapse_repeats(seq.replace_events(seq.items[mask], seq.timestamps[mask]))
                    )
                # fully emptied sequences vanish here
            next_sequences = pruned
        else:
            next_sequences = kept
        events_after, seqs_after, items_after = _sequence_counts(next_sequences)
        changed = removed_items > 0 or len(kept) != len(current) or len(next_sequences) != len(kept)
        records.append(
            StepRecord(
                step="support_filter",
                params={
                    "iteration": iteration,
                    "min_seq_len": cfg.min_seq_len,
                    "min_item_support": cfg.min_item_support,
                    "dropped_short_sequences": len(current) - len(kept),
                    "removed_items": removed_items,
                },
                events_before=events_before,
                events_after=events_after,
                sequences_before=seqs_before,
                sequences_after=seqs_after,
                items_before=items_before,
                items_after=items_after,
            )
        )
        shrink_rows.append(
            f"pass {iteration}: events {events_before}->{events_after}, "
            f"sequences {seqs_before}->{seqs_after}, items {items_before}->{items_after}"
        )
        current = next_sequences
        if not changed or not current:
            break
    if not current:
        raise PreprocessError(
            "support filtering removed everything; loosen min_seq_len/min_item_support. "
            "Shrinkage per pass: " + "; ".join(shrink_rows)
        )

    survivors = sorted({code for seq in current for code in seq.items.tolist()})
    compact = ItemIndex.from_items(index.reverse[code] for code in survivors)
    remap = np.full(len(index), -1, dtype=np.int64)
    for code in survivors:
        remap[code] = compact.forward[index.reverse[code]]
    remapped = [seq.replace_events(remap[seq.items], seq.timestamps) for seq in current]
    support = np.zeros(len(compact), dtype=np.int64)
    for seq in remapped:
        np.add.at(support, seq.items, 1)
    return Dataset(sequences=remapped, item_index=compact, item_support=support, provenance=records)


def preprocess(log: EventLog, cfg: PipelineConfig) -> Dataset:
    """Run the full pipeline and return the dataset with its step ledger."""
    provenance: list[StepRecord] = []

    if cfg.keep_event_type is not None:
        before = _log_counts(log)
        log = filter_event_type(log, cfg.keep_event_type)
        after = _log_counts(log)
        provenance.append(
            StepRecord(
                step="filter_event_type",
                params={"keep": cfg.keep_event_type},
                events_before=before[0],
                events_after=after[0],
                sequences_before=before[1],
                sequences_after=after[1],
                items_before=before[2],
                items_after=after[2],
            )
        )

    index = ItemIndex.from_items(e.item_id for e in log.iter_events())
    log_counts = _log_counts(log)
    sequences = sessionize(log, cfg, index)
    params: dict = {"mode": cfg.session_mode}
    if cfg.session_mode == SESSION_GAP:
        params["gap_seconds"] = cfg.gap_seconds
    events, seqs, items = _sequence_counts(sequences)
    provenance.append(
        StepRecord(
            step="sessionize",
            params=params,
            events_before=log_counts[0],
            events_after=events,
            sequences_before=log_counts[1],
            sequences_after=seqs,
            items_before=log_counts[2],
            items_after=items,
        )
    )

    collapsed = [collapse_repeats(s) for s in sequences]
    events_c, seqs_c, items_c = _sequence_counts(collapsed)
    provenance.append(
        StepRecord(
            step="collapse_repeats",
            params={},
            events_before=events,
            events_after=events_c,
            sequences_before=seqs,
            sequences_after=seqs_c,
            items_before=items,
            items_after=items_c,
        )
    )

    return iterative_support_filter(collapsed, cfg, index, provenance)
