"""Temporal feature extraction and numeric encoding of traces and static records.

Every fitted statistic (vocabularies, means, stds) comes from the training
partition only; the encoder is immutable after fitting and encoding is a pure
function of (input, encoder).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ParseError, StateError
from .eventlog import AttrValue, Event, Trace, as_text_stream, epoch_seconds, parse_real

SECONDS_PER_DAY = 86_400
TASKS = ("production", "postprocessing", "procurement")

STD_FLOOR = 1e-8
TARGET_ADDITIVITY_TOL = 1e-9


@dataclass(frozen=True)
class TemporalFeatures:
    """Per-event time context: days since trace start, days since previous event, weekday."""

    elapsed: float
    lagged: float
    dow: int  # Monday == 0


def temporal_features(trace: Trace) -> list[TemporalFeatures]:
    """Elapsed/lagged times in fractional days plus day-of-week for each event.

    The first event has elapsed == lagged == 0 by definition. Differences are
    taken on whole epoch seconds, so values are exact multiples of 1/86400.
    """
    secs = [epoch_seconds(ev.timestamp) for ev in trace]
    feats = []
    for i, ev in enumerate(trace):
        if i == 0:
            elapsed = 0.0
            lagged = 0.0
        else:
            elapsed = (secs[i] - secs[0]) / SECONDS_PER_DAY
            lagged = (secs[i] - secs[i - 1]) / SECONDS_PER_DAY
        feats.append(TemporalFeatures(elapsed=elapsed, lagged=lagged, dow=ev.timestamp.weekday()))
    return feats


@dataclass(frozen=True)
class StaticRecord:
    """Static attributes and the three lead-time targets (days) of one case."""

    case_id: str
    attrs: dict[str, AttrValue]
    targets: dict[str, float]

    def __post_init__(self):
        for task in TASKS:
            if task not in self.targets:
                raise DataError(f"case {self.case_id!r}: missing target {task!r}")
            y = self.targets[task]
            if not math.isfinite(y):
                raise DataError(f"case {self.case_id!r}: non-finite target {task!r}")
            if y < 0:
                raise DataError(f"case {self.case_id!r}: negative {task!r} target (lead times are durations)")
        gap = self.targets["procurement"] - (self.targets["production"] + self.targets["postprocessing"])
        if abs(gap) > TARGET_ADDITIVITY_TOL:
            raise DataError(f"case {self.case_id!r}: procurement != production + postprocessing (gap {gap:g} days)")


def _canon(value: AttrValue) -> str:
    return value if isinstance(value, str) else repr(float(value))


@dataclass(frozen=True)
class AttrCodec:
    """Fitted encoder for one attribute column: one-hot (+OOV) or z-score."""

    name: str
    kind: str  # "categorical" | "numeric"
    vocab: tuple[str, ...] = ()
    mean: float = 0.0
    std: float = 1.0

    @property
    def width(self) -> int:
        return len(self.vocab) + 1 if self.kind == "categorical" else 1

    def encode_into(self, out: np.ndarray, offset: int, value: AttrValue) -> None:
        if self.kind == "categorical":
            if value is None:
                return  # absent marker: all-zero block
            key = _canon(value)
            try:
                out[offset + self.vocab.index(key)] = 1.0
            except ValueError:
                out[offset + len(self.vocab)] = 1.0  # OOV slot
        else:
            if value is None:
                out[offset] = 0.0  # absent numeric sits at the training mean
            else:
                out[offset] = (float(value) - self.mean) / self.std


def _fit_codec(name: str, values: list[AttrValue], fit_warnings: list[str]) -> AttrCodec:
    present = [v for v in values if v is not None]
    numeric = bool(present) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in present)
    if numeric:
        arr = np.asarray(present, dtype=np.float64)
        mean = float(arr.mean())
        std = float(arr.std())
        if std < STD_FLOOR:
            msg = f"constant numeric column {name!r}: std floored at {STD_FLOOR:g}"
            fit_warnings.append(msg)
            warnings.warn(msg)
            std = STD_FLOOR
        return AttrCodec(name=name, kind="numeric", mean=mean, std=std)
    vocab = tuple(sorted({_canon(v) for v in present}))
    return AttrCodec(name=name, kind="categorical", vocab=vocab)


@dataclass(frozen=True)
class Encoder:
    """Vocabularies and normalization statistics fitted on the training split.

    Sequence row layout (full width):
    ``[activity one-hot+OOV | dow one-hot(7) | z(elapsed) | z(lagged) | dyn attr blocks]``.
    The temporal block (dow + elapsed + lagged) can be dropped as a contiguous
    column range, which is how the time-feature ablation is realized.
    """

    task: str
    activity_vocab: tuple[str, ...]
    elapsed_mean: float
    elapsed_std: float
    lagged_mean: float
    lagged_std: float
    dyn_codecs: tuple[AttrCodec, ...]
    static_codecs: tuple[AttrCodec, ...]
    target_stats: dict[str, tuple[float, float]]
    fit_warnings: tuple[str, ...] = ()

    DOW_WIDTH = 7

    @property
    def activity_width(self) -> int:
        return len(self.activity_vocab) + 1

    @property
    def temporal_columns(self) -> range:
        start = self.activity_width
        return range(start, start + self.DOW_WIDTH + 2)

    def seq_dim(self, include_temporal: bool = True) -> int:
        dyn = sum(c.width for c in self.dyn_codecs)
        base = self.activity_width + dyn
        return base + self.DOW_WIDTH + 2 if include_temporal else base

    @property
    def static_dim(self) -> int:
        return sum(c.width for c in self.static_codecs)


def fit_encoder(train_traces: Sequence[Trace], train_statics: Sequence[StaticRecord], task: str) -> Encoder:
    """Learn vocabularies and z-score statistics from the training partition only."""
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}; expected one of {TASKS}")
    if not train_traces or not train_statics:
        raise DataError("fit_encoder requires non-empty training traces and records")

    fit_warnings: list[str] = []
    activities = sorted({ev.activity for t in train_traces for ev in t})

    elapsed_vals: list[float] = []
    lagged_vals: list[float] = []
    for trace in train_traces:
        for tf in temporal_features(trace):
            elapsed_vals.append(tf.elapsed)
            lagged_vals.append(tf.lagged)
    e_arr = np.asarray(elapsed_vals)
    l_arr = np.asarray(lagged_vals)

    def _stats(arr: np.ndarray, what: str) -> tuple[float, float]:
        mean = float(arr.mean())
        std = float(arr.std())
        if std < STD_FLOOR:
            msg = f"constant {what}: std floored at {STD_FLOOR:g}"
            fit_warnings.append(msg)
            warnings.warn(msg)
            std = STD_FLOOR
        return mean, std

    elapsed_mean, elapsed_std = _stats(e_arr, "elapsed time")
    lagged_mean, lagged_std = _stats(l_arr, "lagged time")

    dyn_names: list[str] = []
    for trace in train_traces:
        for ev in trace:
            for name in ev.dyn_attrs:
                if name not in dyn_names:
                    dyn_names.append(name)
    dyn_codecs = tuple(
        _fit_codec(name, [ev.dyn_attrs.get(name) for t in train_traces for ev in t], fit_warnings)
        for name in dyn_names
    )

    static_names: list[str] = []
    for rec in train_statics:
        for name in rec.attrs:
            if name not in static_names:
                static_names.append(name)
    static_codecs = tuple(
        _fit_codec(name, [rec.attrs.get(name) for rec in train_statics], fit_warnings)
        for name in static_names
    )

    target_stats: dict[str, tuple[float, float]] = {}
    for t in TASKS:
        ys = np.asarray([rec.targets[t] for rec in train_statics])
        target_stats[t] = _stats(ys, f"{t} target")

    return Encoder(
        task=task,
        activity_vocab=tuple(activities),
        elapsed_mean=elapsed_mean,
        elapsed_std=elapsed_std,
        lagged_mean=lagged_mean,
        lagged_std=lagged_std,
        dyn_codecs=dyn_codecs,
        static_codecs=static_codecs,
        target_stats=target_stats,
        fit_warnings=tuple(fit_warnings),
    )


def encode_trace(trace: Trace, encoder: Encoder, include_temporal: bool = True) -> np.ndarray:
    """Numeric step matrix (n_events x seq_dim) for one trace."""
    feats = temporal_features(trace)
    width = encoder.seq_dim(include_temporal=True)
    out = np.zeros((len(trace), width))
    act_w = encoder.activity_width
    dyn_offset = act_w + Encoder.DOW_WIDTH + 2
    for i, ev in enumerate(trace):
        row = out[i]
        try:
            row[encoder.activity_vocab.index(ev.activity)] = 1.0
        except ValueError:
            row[act_w - 1] = 1.0  # OOV activity
        row[act_w + feats[i].dow] = 1.0
        row[act_w + 7] = (feats[i].elapsed - encoder.elapsed_mean) / encoder.elapsed_std
        row[act_w + 8] = (feats[i].lagged - encoder.lagged_mean) / encoder.lagged_std
        offset = dyn_offset
        for codec in encoder.dyn_codecs:
            codec.encode_into(row, offset, ev.dyn_attrs.get(codec.name))
            offset += codec.width
    if not include_temporal:
        out = np.delete(out, encoder.temporal_columns, axis=1)
    return out


def encode_static(record: StaticRecord, encoder: Encoder) -> np.ndarray:
    out = np.zeros(encoder.static_dim)
    offset = 0
    for codec in encoder.static_codecs:
        codec.encode_into(out, offset, record.attrs.get(codec.name))
        offset += codec.width
    return out


def extract_target(record: StaticRecord, task: str) -> float:
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}")
    return record.targets[task]


def normalize_target(value: float, encoder: Encoder, task: str) -> float:
    mean, std = encoder.target_stats[task]
    return (value - mean) / std


def denormalize_target(value: float, encoder: Encoder, task: str) -> float:
    mean, std = encoder.target_stats[task]
    return value * std + mean


# ---------------------------------------------------------------------------
# Static CSV format


def parse_static_csv(source) -> list[StaticRecord]:
    """Parse `case_id,s_<name>,...,y_production,y_postprocessing,y_procurement`."""
    reader = csv.reader(as_text_stream(source))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("static file has no header row", line=1)

    target_cols = {f"y_{t}": t for t in TASKS}
    if header[0] != "case_id":
        raise ParseError("first column must be case_id", line=1)
    for col in target_cols:
        if col not in header:
            raise ParseError(f"missing target column {col!r}", line=1)
    attr_cols = [(i, name[2:] if name.startswith("s_") else name)
                 for i, name in enumerate(header)
                 if i != 0 and name not in target_cols]
    tgt_idx = {target_cols[name]: header.index(name) for name in target_cols}

    rows = []
    for row in reader:
        if not row:
            continue
        line = reader.line_num
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line)
        rows.append((line, row))
    if not rows:
        raise ParseError("static file contains no records")

    numeric_col = {}
    for i, _name in attr_cols:
        cells = [row[i] for _, row in rows if row[i] != ""]
        numeric_col[i] = bool(cells) and all(parse_real(c) is not None for c in cells)

    records = []
    for line, row in rows:
        attrs: dict[str, AttrValue] = {}
        for i, name in attr_cols:
            cell = row[i]
            if cell == "":
                attrs[name] = None
            elif numeric_col[i]:
                attrs[name] = parse_real(cell)
            else:
                attrs[name] = cell
        targets = {}
        for task, i in tgt_idx.items():
            y = parse_real(row[i])
            if y is None:
                raise ParseError(f"unparseable {task} target {row[i]!r}", line=line)
            targets[task] = y
        try:
            records.append(StaticRecord(case_id=row[0], attrs=attrs, targets=targets))
        except DataError as exc:
            raise ParseError(str(exc), line=line)
    return records


def serialize_static_csv(records: Sequence[StaticRecord]) -> str:
    attr_names: list[str] = []
    for rec in records:
        for name in rec.attrs:
            if name not in attr_names:
                attr_names.append(name)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["case_id"] + [f"s_{n}" for n in attr_names] + [f"y_{t}" for t in TASKS])
    for rec in records:
        cells = [rec.case_id]
        for name in attr_names:
            value = rec.attrs.get(name)
            if value is None:
                cells.append("")
            elif isinstance(value, float):
                cells.append(repr(value))
            else:
                cells.append(value)
        cells += [repr(float(rec.targets[t])) for t in TASKS]
        writer.writerow(cells)
    return out.getvalue()


# ---------------------------------------------------------------------------
# Encoder serialization (versioned JSON, stats as full-precision decimal strings)

ENCODER_SCHEMA_VERSION = 1


def _codec_to_json(codec: AttrCodec) -> dict:
    doc = {"name": codec.name, "kind": codec.kind}
    if codec.kind == "categorical":
        doc["vocab"] = list(codec.vocab)
    else:
        doc["mean"] = repr(codec.mean)
        doc["std"] = repr(codec.std)
    return doc


def _codec_from_json(doc: dict) -> AttrCodec:
    if doc["kind"] == "categorical":
        return AttrCodec(name=doc["name"], kind="categorical", vocab=tuple(doc["vocab"]))
    return AttrCodec(name=doc["name"], kind="numeric", mean=float(doc["mean"]), std=float(doc["std"]))


def encoder_to_json(encoder: Encoder) -> str:
    doc = {
        "schema_version": ENCODER_SCHEMA_VERSION,
        "task": encoder.task,
        "activity_vocab": list(encoder.activity_vocab),
        "elapsed": {"mean": repr(encoder.elapsed_mean), "std": repr(encoder.elapsed_std)},
        "lagged": {"mean": repr(encoder.lagged_mean), "std": repr(encoder.lagged_std)},
        "dyn_attrs": [_codec_to_json(c) for c in encoder.dyn_codecs],
        "static_attrs": [_codec_to_json(c) for c in encoder.static_codecs],
        "target_stats": {t: {"mean": repr(m), "std": repr(s)} for t, (m, s) in encoder.target_stats.items()},
        "fit_warnings": list(encoder.fit_warnings),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def encoder_from_json(text: str) -> Encoder:
    doc = json.loads(text)
    if doc.get("schema_version") != ENCODER_SCHEMA_VERSION:
        raise DataError(f"unsupported encoder schema version {doc.get('schema_version')!r}")
    return Encoder(
        task=doc["task"],
        activity_vocab=tuple(doc["activity_vocab"]),
        elapsed_mean=float(doc["elapsed"]["mean"]),
        elapsed_std=float(doc["elapsed"]["std"]),
        lagged_mean=float(doc["lagged"]["mean"]),
        lagged_std=float(doc["lagged"]["std"]),
        dyn_codecs=tuple(_codec_from_json(c) for c in doc["dyn_attrs"]),
        static_codecs=tuple(_codec_from_json(c) for c in doc["static_attrs"]),
        target_stats={t: (float(v["mean"]), float(v["std"])) for t, v in doc["target_stats"].items()},
        fit_warnings=tuple(doc.get("fit_warnings", ())),
    )


def encoder_fingerprint(encoder: Encoder) -> str:
    return hashlib.sha256(encoder_to_json(encoder).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Encoded datasets


@dataclass
class EncodedDataset:
    """Encoded step matrices, static vectors, and normalized targets for one task.

    Step matrices are kept at full width; model variants that drop feature
    blocks slice columns through the encoder layout. ``targets_days`` keeps all
    three task targets so the same encoding can be re-pointed cheaply.
    """

    encoder: Encoder
    task: str
    case_ids: list[str]
    steps: list[np.ndarray]
    statics: np.ndarray
    y_norm: np.ndarray
    y_days: np.ndarray
    targets_days: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.case_ids)

    def with_task(self, task: str) -> "EncodedDataset":
        if task == self.task:
            return self
        if task not in self.targets_days:
            raise StateError(f"dataset does not carry targets for task {task!r}")
        y_days = self.targets_days[task]
        mean, std = self.encoder.target_stats[task]
        return EncodedDataset(
            encoder=self.encoder,
            task=task,
            case_ids=self.case_ids,
            steps=self.steps,
            statics=self.statics,
            y_norm=(y_days - mean) / std,
            y_days=y_days,
            targets_days=self.targets_days,
        )

    def subset(self, indices: Sequence[int]) -> "EncodedDataset":
        idx = list(indices)
        return EncodedDataset(
            encoder=self.encoder,
            task=self.task,
            case_ids=[self.case_ids[i] for i in idx],
            steps=[self.steps[i] for i in idx],
            statics=self.statics[idx],
            y_norm=self.y_norm[idx],
            y_days=self.y_days[idx],
            targets_days={t: v[idx] for t, v in self.targets_days.items()},
        )


CACHE_ENCODER_FILE = "encoder.json"
CACHE_ARRAY_DIR = "arrays"
_CACHE_SPLITS = ("train", "valid", "test")


def save_split_cache(dirpath, splits: dict[str, EncodedDataset]) -> None:
    """Persist encoded train/valid/test sets as .npy files plus the encoder JSON.

    Plain .npy files (not .npz) keep the artifact byte-identical across runs;
    zip containers embed timestamps.
    """
    from pathlib import Path

    root = Path(dirpath)
    arrays = root / CACHE_ARRAY_DIR
    arrays.mkdir(parents=True, exist_ok=True)
    encoder = next(iter(splits.values())).encoder
    (root / CACHE_ENCODER_FILE).write_text(encoder_to_json(encoder), encoding="utf-8")
    for name, ds in splits.items():
        np.save(arrays / f"{name}_case_ids.npy", np.array(ds.case_ids))
        np.save(arrays / f"{name}_steps.npy", np.concatenate(ds.steps, axis=0))
        np.save(arrays / f"{name}_lengths.npy", np.array([s.shape[0] for s in ds.steps], dtype=np.int64))
        np.save(arrays / f"{name}_statics.npy", ds.statics)
        for task in TASKS:
            np.save(arrays / f"{name}_y_{task}.npy", ds.targets_days[task])


def load_split_cache(dirpath, task: str) -> dict[str, EncodedDataset]:
    from pathlib import Path

    root = Path(dirpath)
    encoder = encoder_from_json((root / CACHE_ENCODER_FILE).read_text(encoding="utf-8"))
    arrays = root / CACHE_ARRAY_DIR
    splits = {}
    for name in _CACHE_SPLITS:
        if not (arrays / f"{name}_case_ids.npy").exists():
            continue
        case_ids = [str(c) for c in np.load(arrays / f"{name}_case_ids.npy")]
        flat = np.load(arrays / f"{name}_steps.npy")
        lengths = np.load(arrays / f"{name}_lengths.npy")
        offsets = np.cumsum(lengths)[:-1]
        steps = np.split(flat, offsets, axis=0)
        targets_days = {t: np.load(arrays / f"{name}_y_{t}.npy") for t in TASKS}
        y_days = targets_days[task]
        mean, std = encoder.target_stats[task]
        splits[name] = EncodedDataset(
            encoder=encoder, task=task, case_ids=case_ids, steps=steps,
            statics=np.load(arrays / f"{name}_statics.npy"),
            y_norm=(y_days - mean) / std, y_days=y_days, targets_days=targets_days)
    if not splits:
        raise StateError(f"no dataset cache found under {root}")
    return splits


def encode_dataset(traces: Sequence[Trace], records: Sequence[StaticRecord],
                   encoder: Encoder, task: str) -> EncodedDataset:
    by_case = {rec.case_id: rec for rec in records}
    case_ids, steps, statics, targets = [], [], [], {t: [] for t in TASKS}
    for trace in traces:
        rec = by_case.get(trace.case_id)
        if rec is None:
            raise DataError(f"no static record for case {trace.case_id!r}")
        case_ids.append(trace.case_id)
        steps.append(encode_trace(trace, encoder))
        statics.append(encode_static(rec, encoder))
        for t in TASKS:
            targets[t].append(rec.targets[t])
    targets_days = {t: np.asarray(v) for t, v in targets.items()}
    y_days = targets_days[task]
    mean, std = encoder.target_stats[task]
    return EncodedDataset(
        encoder=encoder,
        task=task,
        case_ids=case_ids,
        steps=steps,
        statics=np.asarray(statics),
        y_norm=(y_days - mean) / std,
        y_days=y_days,
        targets_days=targets_days,
    )
