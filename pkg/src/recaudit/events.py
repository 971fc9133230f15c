"""Ingestion of raw interaction logs into validated in-memory event collections.

Events are grouped per entity (user or precomputed session key) and sorted by
timestamp with ties kept in input-file order.  Tie order matters: re-sorting
equal-timestamp events by item id is exactly the kind of silent mangling that
manufactures artificial sequential patterns, so ordering provenance is made
explicit here and checked by fixtures.

Item ids stay as raw strings at this stage; the dense item index is built only
after preprocessing, once support filters have settled the catalog.
"""

from __future__ import annotations

import csv
import gzip
import io
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, TextIO

from .errors import IngestError

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400

RESOLUTION_DAYS = "days"
RESOLUTION_SECONDS = "seconds"


@dataclass(frozen=True)
class RawEvent:
    """A single interaction: entity did something with an item at a time."""

    entity_id: str
    item_id: str
    timestamp: int
    event_type: str | None = None

    def __post_init__(self) -> None:
        if not self.entity_id:
            raise ValueError("entity_id must be non-empty")
        if not self.item_id:
            raise ValueError("item_id must be non-empty")
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")


@dataclass(frozen=True)
class ColumnMapping:
    """Names of the input columns holding each event field."""

    entity: str
    item: str
    time: str
    type: str | None = None


@dataclass(frozen=True)
class ItemIndex:
    """Bijection between raw item ids and dense indices in [0, catalog size)."""

    forward: dict[str, int]
    reverse: tuple[str, ...]

    @classmethod
    def from_items(cls, items: Iterable[str]) -> "ItemIndex":
        """Build an index over the given items, sorted for reproducibility."""
        ordered = sorted(set(items))
        return cls(forward={item: i for i, item in enumerate(ordered)}, reverse=tuple(ordered))

    def __len__(self) -> int:
        return len(self.reverse)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.forward


@dataclass
class EventLog:
    """Per-entity event groups, each sorted by (timestamp, input order).

    Treated as immutable once constructed; all pipeline steps return new logs.
    """

    groups: dict[str, list[RawEvent]]
    timestamp_resolution: str = RESOLUTION_SECONDS
    rejected_count: int = 0
    rejected_preview: tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def from_events(
        cls,
        events: Iterable[RawEvent],
        rejected_count: int = 0,
        rejected_preview: tuple[str, ...] = (),
    ) -> "EventLog":
        """Group and stable-sort events; equal timestamps keep input order."""
        groups: dict[str, list[RawEvent]] = {}
        for event in events:
            groups.setdefault(event.entity_id, []).append(event)
        for group in groups.values():
            group.sort(key=lambda e: e.timestamp)  # stable: ties keep input order
        log = cls(groups=groups, rejected_count=rejected_count, rejected_preview=rejected_preview)
        if log.num_events:
            log.timestamp_resolution = detect_timestamp_resolution(log)
        return log

    @property
    def num_events(self) -> int:
        return sum(len(g) for g in self.groups.values())

    @property
    def num_entities(self) -> int:
        return len(self.groups)

    def iter_events(self) -> Iterator[RawEvent]:
        for group in self.groups.values():
            yield from group

    def event_types(self) -> set[str]:
        return {e.event_type for e in self.iter_events() if e.event_type is not None}


def detect_timestamp_resolution(log: EventLog) -> str:
    """Return ``days`` iff every timestamp sits on a day boundary, else ``seconds``."""
    if not log.num_events:
        raise IngestError("cannot detect timestamp resolution of an empty log")
    for event in log.iter_events():
        if event.timestamp % SECONDS_PER_DAY:
            return RESOLUTION_SECONDS
    return RESOLUTION_DAYS


def _parse_timestamp(raw: str) -> int:
    raw = raw.strip()
    try:
        value = int(raw)
    except ValueError:
        pass
    else:
        if value < 0:
            raise ValueError(f"negative timestamp {value}")
        return value
    # ISO-8601; date-only values land on midnight UTC.
    try:
        parsed = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise ValueError(f"timestamp {raw!r} is neither epoch seconds nor ISO-8601")
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    value = int(parsed.timestamp())
    if value < 0:
        raise ValueError(f"timestamp {raw!r} is before the epoch")
    return value


def _open_source(source) -> TextIO:
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            if path.suffix == ".gz":
                return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
            return open(path, "r", encoding="utf-8")
        except OSError as exc:
            raise IngestError(f"cannot read {path}: {exc}") from exc
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"))
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            return io.StringIO(data.decode("utf-8"))
        return io.StringIO(data)
    raise IngestError(f"unsupported input source: {type(source).__name__}")


def _detect_delimiter(header_line: str) -> str:
    return "\t" if "\t" in header_line else ","


def ingest_csv(
    source,
    schema: ColumnMapping,
    delimiter: str | None = None,
    max_reject_fraction: float = 0.01,
) -> EventLog:
    """Parse delimited text into an :class:`EventLog`.

    Args:
        source: File path (plain or ``.gz``), byte string, or open stream.
            A header row is required.
        schema: Column names for entity, item, time and (optionally) type.
        delimiter: Force ``","`` or ``"\\t"``; auto-detected from the header
            when omitted.
        max_reject_fraction: Hard-failure threshold on the fraction of
            malformed rows.  Rejections below it are counted, never silent.

    Raises:
        IngestError: unreadable source, missing mapped column, or too many
            malformed rows (the message lists the first ten offenders).
    """
    stream = _open_source(source)
    with stream:
        first_line = stream.readline()
        if not first_line:
            raise IngestError("input is empty: a header row is required")
        sep = delimiter if delimiter is not None else _detect_delimiter(first_line)
        header = next(csv.reader([first_line], delimiter=sep))
        positions = {name.strip(): i for i, name in enumerate(header)}
        required = [schema.entity, schema.item, schema.time]
        for column in required:
            if column not in positions:
                raise IngestError(
                    f"mapped column {column!r} not found in header {sorted(positions)}"
                )
        type_pos = positions.get(schema.type) if schema.type else None
        entity_pos = positions[schema.entity]
        item_pos = positions[schema.item]
        time_pos = positions[schema.time]

        events: list[RawEvent] = []
        rejects: list[str] = []
        total = 0
        for line_no, row in enumerate(csv.reader(stream, delimiter=sep), start=2):
            if not row:
                continue
            total += 1
            try:
                entity = row[entity_pos].strip()
                item = row[item_pos].strip()
                timestamp = _parse_timestamp(row[time_pos])
                if not entity or not item:
                    raise ValueError("empty entity or item id")
                event_type = None
                if type_pos is not None and type_pos < len(row):
                    event_type = row[type_pos].strip() or None
                events.append(RawEvent(entity, item, timestamp, event_type))
            except (IndexError, ValueError) as exc:
                rejects.append(f"line {line_no}: {exc}")

    if total and len(rejects) > max_reject_fraction * total:
        preview = "; ".join(rejects[:10])
        raise IngestError(
            f"{len(rejects)}/{total} rows malformed, above the allowed fraction "
            f"{max_reject_fraction}: {preview}"
        )
    if rejects:
        logger.warning("ingest rejected %d/%d rows; first: %s", len(rejects), total, rejects[0])
    return EventLog.from_events(
        events, rejected_count=len(rejects), rejected_preview=tuple(rejects[:10])
    )


def dump_canonical(log: EventLog, destination) -> None:
    """Write the canonical tab-separated dump used for reproducible fixtures.

    Rows are ordered by (entity, timestamp, input order); re-ingesting the dump
    reproduces the log byte-for-byte.
    """
    own = isinstance(destination, (str, Path))
    stream = open(destination, "w", encoding="utf-8", newline="") if own else destination
    try:
        writer = csv.writer(stream, delimiter="\t", lineterminator="\n")
        writer.writerow(["entity", "item", "timestamp", "type"])
        for entity in sorted(log.groups):
            for event in log.groups[entity]:
                writer.writerow(
                    [event.entity_id, event.item_id, event.timestamp, event.event_type or ""]
                )
    finally:
        if own:
            stream.close()


def canonical_dump_text(log: EventLog) -> str:
    """The canonical dump as a string (handy for determinism checks)."""
    buffer = io.StringIO()
    dump_canonical(log, buffer)
    return buffer.getvalue()


CANONICAL_MAPPING = ColumnMapping(entity="entity", item="item", time="timestamp", type="type")
