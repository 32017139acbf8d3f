"""Process event logs: parsing, grouping into traces, validation, summary stats.

The on-disk format is a UTF-8 CSV with header
``case_id,activity,timestamp,d_<name1>,d_<name2>,...`` where timestamps are
ISO-8601 UTC at second precision (``YYYY-MM-DDThh:mm:ssZ``). Dynamic attribute
columns are typed per column: a column is numeric iff every non-empty cell
parses as a finite real; empty cells are an explicit absent marker.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Union

from .errors import DataError, EmptyLogError, ParseError

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

AttrValue = Union[str, float, None]


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 UTC second-precision timestamp; raises ValueError otherwise."""
    return datetime.strptime(text, TIMESTAMP_FORMAT).replace(tzinfo=timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT)


def epoch_seconds(ts: datetime) -> int:
    """Whole seconds since the Unix epoch; exact for second-precision instants."""
    return int((ts - _EPOCH).total_seconds())


@dataclass(frozen=True)
class Event:
    """One recorded process step: who (case), what (activity), when, plus extra attributes."""

    case_id: str
    activity: str
    timestamp: datetime
    dyn_attrs: dict[str, AttrValue] = field(default_factory=dict)

    def __post_init__(self):
        if not self.case_id:
            raise DataError("event with empty case_id")
        if not self.activity:
            raise DataError(f"event in case {self.case_id!r} with empty activity")
        if self.timestamp.tzinfo is None:
            raise DataError(f"event in case {self.case_id!r} with naive timestamp")

    def identity_key(self):
        """Structural identity within a trace: (activity, timestamp, dyn_attrs)."""
        return (self.activity, self.timestamp, tuple(sorted(self.dyn_attrs.items(), key=lambda kv: kv[0])))


@dataclass(frozen=True)
class Trace:
    """The ordered event history of one case."""

    case_id: str
    events: tuple[Event, ...]

    def __post_init__(self):
        if not self.events:
            raise DataError(f"trace {self.case_id!r} has no events")
        for ev in self.events:
            if ev.case_id != self.case_id:
                raise DataError(f"trace {self.case_id!r} contains event of case {ev.case_id!r}")

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


@dataclass(frozen=True)
class EventLog:
    """A collection of traces. Case-id uniqueness is checked by validate_log, not construction."""

    traces: tuple[Trace, ...]

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    def case_ids(self) -> list[str]:
        return [t.case_id for t in self.traces]

    def trace(self, case_id: str) -> Trace:
        for t in self.traces:
            if t.case_id == case_id:
                return t
        raise KeyError(case_id)


@dataclass(frozen=True)
class LogStats:
    n_traces: int
    n_events: int
    trace_len_min: int
    trace_len_max: int
    activity_vocab_size: int
    dyn_attr_names: tuple[str, ...]


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by validate_log."""

    case_id: str
    rule: str
    detail: str = ""


@dataclass(frozen=True)
class LogSchema:
    """Maps CSV columns onto the core event fields; all remaining columns are dynamic attrs."""

    case_col: str = "case_id"
    activity_col: str = "activity"
    timestamp_col: str = "timestamp"
    dyn_prefix: str = "d_"


def parse_real(text: str) -> float | None:
    """Return the finite float value of ``text`` or None if it is not a plain real."""
    try:
        value = float(text)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None  # 'nan'/'inf' tokens stay strings; all stored values must be finite
    return value


def as_text_stream(source) -> io.TextIOBase:
    """Coerce bytes / str / binary file objects into a text stream."""
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8")


def parse_log(source, schema: LogSchema = LogSchema()) -> EventLog:
    """Parse event-log CSV into traces grouped by case and stably sorted by timestamp.

    Ties within a case keep original file order. Raises ParseError with the
    offending line number for malformed rows, EmptyLogError for a file with
    no data rows.
    """
    reader = csv.reader(as_text_stream(source))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyLogError("event-log file has no header row")

    for col in (schema.case_col, schema.activity_col, schema.timestamp_col):
        if col not in header:
            raise ParseError(f"missing required column {col!r}", line=1)
    idx_case = header.index(schema.case_col)
    idx_act = header.index(schema.activity_col)
    idx_ts = header.index(schema.timestamp_col)
    dyn_cols = [(i, name) for i, name in enumerate(header) if i not in (idx_case, idx_act, idx_ts)]
    dyn_names = [name[len(schema.dyn_prefix):] if name.startswith(schema.dyn_prefix) else name
                 for _, name in dyn_cols]

    rows: list[tuple[int, str, str, datetime, list[str]]] = []
    for row in reader:
        if not row:
            continue
        line = reader.line_num
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line)
        try:
            ts = parse_timestamp(row[idx_ts])
        except ValueError:
            raise ParseError(f"unparseable timestamp {row[idx_ts]!r}", line=line)
        rows.append((line, row[idx_case], row[idx_act], ts, [row[i] for i, _ in dyn_cols]))

    if not rows:
        raise EmptyLogError("event-log file contains no events")

    # Column-level type inference: numeric iff every non-empty cell parses as a finite real.
    numeric_col = []
    for j in range(len(dyn_cols)):
        cells = [r[4][j] for r in rows if r[4][j] != ""]
        numeric_col.append(bool(cells) and all(parse_real(c) is not None for c in cells))

    grouped: dict[str, list[Event]] = {}
    for line, case_id, activity, ts, dyn_raw in rows:
        attrs: dict[str, AttrValue] = {}
        for j, name in enumerate(dyn_names):
            cell = dyn_raw[j]
            if cell == "":
                attrs[name] = None
            elif numeric_col[j]:
                attrs[name] = parse_real(cell)
            else:
                attrs[name] = cell
        try:
            event = Event(case_id=case_id, activity=activity, timestamp=ts, dyn_attrs=attrs)
        except DataError as exc:
            raise ParseError(str(exc), line=line)
        grouped.setdefault(case_id, []).append(event)

    traces = []
    for case_id, events in grouped.items():
        events.sort(key=lambda e: e.timestamp)  # stable: file order breaks ties
        traces.append(Trace(case_id=case_id, events=tuple(events)))
    return EventLog(traces=tuple(traces))


def serialize_log(log: EventLog, schema: LogSchema = LogSchema()) -> str:
    """Write a log back to the CSV format; parse_log of the result restores all field values."""
    dyn_names: list[str] = []
    for trace in log:
        for ev in trace:
            for name in ev.dyn_attrs:
                if name not in dyn_names:
                    dyn_names.append(name)

    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([schema.case_col, schema.activity_col, schema.timestamp_col]
                    + [schema.dyn_prefix + n for n in dyn_names])
    for trace in log:
        for ev in trace:
            cells = [ev.case_id, ev.activity, format_timestamp(ev.timestamp)]
            for name in dyn_names:
                value = ev.dyn_attrs.get(name)
                if value is None:
                    cells.append("")
                elif isinstance(value, float):
                    cells.append(repr(value))
                else:
                    cells.append(value)
            writer.writerow(cells)
    return out.getvalue()


def validate_log(log: EventLog) -> list[Violation]:
    """Check trace/log invariants; violations are data, not exceptions."""
    violations: list[Violation] = []
    seen_cases: set[str] = set()
    for trace in log:
        if trace.case_id in seen_cases:
            violations.append(Violation(trace.case_id, "duplicate case id",
                                        "case appears under more than one trace"))
        seen_cases.add(trace.case_id)

        prev = None
        for i, ev in enumerate(trace):
            if prev is not None and ev.timestamp < prev:
                violations.append(Violation(trace.case_id, "unsorted events",
                                            f"event {i} precedes event {i - 1}"))
                break
            prev = ev.timestamp

        keys = [ev.identity_key() for ev in trace]
        if len(set(keys)) != len(keys):
            violations.append(Violation(trace.case_id, "duplicate event",
                                        "identical (activity, timestamp, attrs) appears twice"))
    return violations


def log_stats(log: EventLog) -> LogStats:
    if len(log) == 0:
        raise EmptyLogError("cannot compute stats of an empty log")
    lengths = [len(t) for t in log]
    activities = {ev.activity for t in log for ev in t}
    dyn_names: list[str] = []
    for t in log:
        for ev in t:
            for name in ev.dyn_attrs:
                if name not in dyn_names:
                    dyn_names.append(name)
    return LogStats(
        n_traces=len(log),
        n_events=sum(lengths),
        trace_len_min=min(lengths),
        trace_len_max=max(lengths),
        activity_vocab_size=len(activities),
        dyn_attr_names=tuple(dyn_names),
    )


def merge_traces(traces: Iterable[Trace]) -> EventLog:
    """Convenience constructor used by the generator and tests."""
    return EventLog(traces=tuple(traces))
