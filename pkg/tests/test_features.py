import math
import warnings
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leadtime.errors import DataError, ParseError
from leadtime.eventlog import Event, Trace
from leadtime.features import (Encoder, StaticRecord, TASKS, denormalize_target, encode_dataset,
                               encode_static, encode_trace, encoder_from_json, encoder_to_json,
                               extract_target, fit_encoder, load_split_cache, normalize_target,
                               parse_static_csv, save_split_cache, serialize_static_csv,
                               temporal_features)
from leadtime.synthgen import GenConfig, generate

from conftest import ev, record_of, trace_of


# ---------------------------------------------------------------------------
# Temporal features


def test_single_event_base_case():
    t = trace_of("A", ev("A", "x", "2024-01-01T10:00:00Z"))
    feats = temporal_features(t)
    assert len(feats) == 1
    assert feats[0].elapsed == 0.0 and feats[0].lagged == 0.0


def test_hand_computed_elapsed_lagged():
    t = trace_of("A",
                 ev("A", "a", "2024-01-01T00:00:00Z"),
                 ev("A", "b", "2024-01-02T12:00:00Z"),
                 ev("A", "c", "2024-01-03T00:00:00Z"))
    feats = temporal_features(t)
    assert [f.elapsed for f in feats] == [0.0, 1.5, 2.0]
    assert [f.lagged for f in feats] == [0.0, 1.5, 0.5]


def test_dow_monday_is_zero():
    feats = temporal_features(trace_of("A", ev("A", "x", "2024-01-01T00:00:00Z")))
    assert feats[0].dow == 0  # 2024-01-01 was a Monday


# Independent calendar oracle: civil-date day numbering, no datetime arithmetic.

def _days_from_civil(y: int, m: int, d: int) -> int:
    y -= m <= 2
    era = (y if y >= 0 else y - 399) // 400
    yoe = y - era * 400
    doy = (153 * (m + (-3 if m > 2 else 9)) + 2) // 5 + d - 1
    doe = yoe * 365 + yoe // 4 - yoe // 100 + doy
    return era * 146097 + doe - 719468


def _oracle_epoch_seconds(ts: datetime) -> int:
    days = _days_from_civil(ts.year, ts.month, ts.day)
    return days * 86400 + ts.hour * 3600 + ts.minute * 60 + ts.second


def _oracle_dow(ts: datetime) -> int:
    return (_days_from_civil(ts.year, ts.month, ts.day) + 3) % 7  # 1970-01-01 was a Thursday


def random_trace(rng, case="A", max_len=8):
    n = int(rng.integers(1, max_len + 1))
    secs = np.sort(rng.integers(0, 4_000_000_000, size=n))
    events = tuple(Event(case_id=case, activity=f"a{i}",
                         timestamp=datetime.fromtimestamp(int(s), tz=timezone.utc))
                   for i, s in enumerate(secs))
    return Trace(case_id=case, events=events)


def test_temporal_against_calendar_oracle(rng):
    for _ in range(300):
        trace = random_trace(rng)
        feats = temporal_features(trace)
        secs = [_oracle_epoch_seconds(e.timestamp) for e in trace]
        for i, f in enumerate(feats):
            exp_elapsed = 0.0 if i == 0 else (secs[i] - secs[0]) / 86400.0
            exp_lagged = 0.0 if i == 0 else (secs[i] - secs[i - 1]) / 86400.0
            assert abs(f.elapsed - exp_elapsed) <= 1e-12
            assert abs(f.lagged - exp_lagged) <= 1e-12
            assert f.dow == _oracle_dow(trace.events[i].timestamp)


def test_prefix_sum_identity_exact(rng):
    for _ in range(100):
        trace = random_trace(rng)
        feats = temporal_features(trace)
        secs = [_oracle_epoch_seconds(e.timestamp) for e in trace]
        running = 0
        for i in range(1, len(feats)):
            running += secs[i] - secs[i - 1]  # integer accumulation
            assert feats[i].elapsed == running / 86400.0  # bitwise


@given(st.integers(min_value=-520, max_value=520))
def test_whole_week_shift_invariance(weeks):
    base = trace_of("A",
                    ev("A", "a", "2024-03-01T06:30:00Z"),
                    ev("A", "b", "2024-03-02T18:00:00Z"),
                    ev("A", "c", "2024-03-05T00:15:00Z"))
    shift = weeks * 7 * 86400
    shifted = Trace(case_id="A", events=tuple(
        Event(case_id="A", activity=e.activity,
              timestamp=datetime.fromtimestamp(_oracle_epoch_seconds(e.timestamp) + shift,
                                               tz=timezone.utc))
        for e in base))
    assert temporal_features(base) == temporal_features(shifted)


# ---------------------------------------------------------------------------
# Encoder fitting


def _two_activity_traces():
    t1 = trace_of("A", ev("A", "alpha", "2024-01-01T00:00:00Z", m="x", q=1.0),
                  ev("A", "beta", "2024-01-02T00:00:00Z", m="y", q=2.0))
    t2 = trace_of("B", ev("B", "alpha", "2024-01-03T00:00:00Z", m="x", q=3.0))
    return [t1, t2]


def _two_records():
    return [record_of("A", {"size": 1.0, "grade": "g1"}, 10.0, 4.0),
            record_of("B", {"size": 2.0, "grade": "g2"}, 8.0, 2.0)]


def test_vocab_includes_oov_slot():
    enc = fit_encoder(_two_activity_traces(), _two_records(), task="procurement")
    assert enc.activity_vocab == ("alpha", "beta")
    assert enc.activity_width == 3  # two labels + OOV


def test_population_std_of_1_2_3():
    enc = fit_encoder(_two_activity_traces(), _two_records(), task="procurement")
    codec = next(c for c in enc.dyn_codecs if c.name == "q")
    assert codec.mean == 2.0
    assert abs(codec.std - math.sqrt(2.0 / 3.0)) < 1e-15


def test_refit_is_bitwise_identical():
    a = fit_encoder(_two_activity_traces(), _two_records(), task="procurement")
    b = fit_encoder(_two_activity_traces(), _two_records(), task="procurement")
    assert encoder_to_json(a) == encoder_to_json(b)


def test_constant_column_floors_std_and_warns():
    records = [record_of("A", {"k": 5.0}, 1.0, 1.0), record_of("B", {"k": 5.0}, 2.0, 2.0)]
    traces = _two_activity_traces()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        enc = fit_encoder(traces, records, task="procurement")
    codec = next(c for c in enc.static_codecs if c.name == "k")
    assert codec.std == 1e-8
    assert any("std floored" in str(w.message) for w in caught)
    assert enc.fit_warnings


def test_fit_encoder_rejects_unknown_task():
    with pytest.raises(DataError):
        fit_encoder(_two_activity_traces(), _two_records(), task="shipping")


# ---------------------------------------------------------------------------
# Trace encoding


def test_single_event_row_layout():
    traces = _two_activity_traces()
    enc = fit_encoder(traces, _two_records(), task="procurement")
    t = trace_of("C", ev("C", "alpha", "2024-01-01T00:00:00Z", m="x", q=2.0))
    row = encode_trace(t, enc)[0]
    assert row[0] == 1.0 and row[1] == 0.0 and row[2] == 0.0  # alpha hot, no OOV
    assert row[3 + 0] == 1.0  # Monday slot
    assert row[3 + 7] == (0.0 - enc.elapsed_mean) / enc.elapsed_std
    assert row[3 + 8] == (0.0 - enc.lagged_mean) / enc.lagged_std


def test_unseen_activity_maps_to_oov():
    enc = fit_encoder(_two_activity_traces(), _two_records(), task="procurement")
    t = trace_of("C", ev("C", "zeta", "2024-01-01T00:00:00Z", m="x", q=2.0))
    row = encode_trace(t, enc)[0]
    assert row[2] == 1.0 and row[0] == row[1] == 0.0


def test_one_hot_blocks_sum_to_one_over_generated_events():
    log, statics, _ = generate(GenConfig(n_spools=600, seed=3))
    enc = fit_encoder(list(log), statics, task="procurement")
    act_w = enc.activity_width
    n_checked = 0
    for trace in log:
        rows = encode_trace(trace, enc)
        assert np.all(rows[:, :act_w].sum(axis=1) == 1.0)
        assert np.all(rows[:, act_w:act_w + 7].sum(axis=1) == 1.0)
        offset = act_w + 9
        for codec, event_vals in zip(enc.dyn_codecs, range(len(enc.dyn_codecs))):
            if codec.kind == "categorical":
                block = rows[:, offset:offset + codec.width].sum(axis=1)
                present = np.array([trace.events[i].dyn_attrs.get(codec.name) is not None
                                    for i in range(len(trace))])
                assert np.all(block == present.astype(float))
            offset += codec.width
        n_checked += len(trace)
    assert n_checked >= 10_000


def test_no_trf_encoding_equals_column_slice():
    log, statics, _ = generate(GenConfig(n_spools=20, seed=5))
    enc = fit_encoder(list(log), statics, task="procurement")
    trace = log.traces[0]
    full = encode_trace(trace, enc)
    bare = encode_trace(trace, enc, include_temporal=False)
    assert np.array_equal(bare, np.delete(full, enc.temporal_columns, axis=1))
    assert bare.shape[1] == enc.seq_dim(include_temporal=False)


def test_encoding_is_pure():
    log, statics, _ = generate(GenConfig(n_spools=15, seed=5))
    enc = fit_encoder(list(log), statics, task="procurement")
    a = encode_trace(log.traces[0], enc)
    b = encode_trace(log.traces[0], enc)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Static encoding and targets


def test_mean_record_encodes_to_zero_numerics():
    records = _two_records()
    enc = fit_encoder(_two_activity_traces(), records, task="procurement")
    mean_rec = record_of("C", {"size": 1.5, "grade": "g1"}, 1.0, 1.0)
    vec = encode_static(mean_rec, enc)
    size_codec_offset = 0
    for codec in enc.static_codecs:
        if codec.name == "size":
            assert vec[size_codec_offset] == 0.0
            break
        size_codec_offset += codec.width


def test_categorical_change_touches_only_its_block():
    records = _two_records()
    enc = fit_encoder(_two_activity_traces(), records, task="procurement")
    a = encode_static(record_of("C", {"size": 1.0, "grade": "g1"}, 1.0, 1.0), enc)
    b = encode_static(record_of("C", {"size": 1.0, "grade": "g2"}, 1.0, 1.0), enc)
    diff = np.nonzero(a != b)[0]
    offset = 0
    for codec in enc.static_codecs:
        if codec.name == "grade":
            block = set(range(offset, offset + codec.width))
            break
        offset += codec.width
    assert set(diff.tolist()) <= block


def test_static_dim_matches_on_many_records():
    log, statics, _ = generate(GenConfig(n_spools=1000, seed=9))
    enc = fit_encoder(list(log)[:100], statics[:100], task="procurement")
    for rec in statics:
        assert encode_static(rec, enc).shape == (enc.static_dim,)


def test_target_additivity_and_extract():
    rec = record_of("A", {"k": 1.0}, 10.0, 4.0)
    assert extract_target(rec, "procurement") == 14.0
    with pytest.raises(DataError):
        StaticRecord(case_id="B", attrs={}, targets={
            "production": 1.0, "postprocessing": 1.0, "procurement": 3.0})
    with pytest.raises(DataError):
        StaticRecord(case_id="B", attrs={}, targets={
            "production": -1.0, "postprocessing": 1.0, "procurement": 0.0})


def test_normalize_mean_is_zero_and_round_trip(rng):
    enc = fit_encoder(_two_activity_traces(), _two_records(), task="procurement")
    mean, _std = enc.target_stats["procurement"]
    assert normalize_target(mean, enc, "procurement") == 0.0
    for y in rng.uniform(0.0, 100.0, size=1000):
        y = float(y)
        assert abs(denormalize_target(normalize_target(y, enc, "procurement"), enc, "procurement")
                   - y) <= 1e-9


# ---------------------------------------------------------------------------
# Static CSV and encoder serialization


def test_static_csv_round_trip(small_dataset):
    _, statics, _ = small_dataset
    text = serialize_static_csv(statics)
    assert parse_static_csv(text) == statics


def test_static_csv_rejects_bad_target():
    text = ("case_id,s_k,y_production,y_postprocessing,y_procurement\n"
            "A,1.0,5.0,1.0,99.0\n")
    with pytest.raises(ParseError):
        parse_static_csv(text)


def test_encoder_json_round_trip(small_dataset):
    log, statics, _ = small_dataset
    enc = fit_encoder(list(log), statics, task="production")
    restored = encoder_from_json(encoder_to_json(enc))
    assert restored == enc


def test_split_cache_round_trip(tmp_path, small_dataset):
    log, statics, _ = small_dataset
    traces = list(log)
    enc = fit_encoder(traces[:100], statics[:100], task="procurement")
    splits = {
        "train": encode_dataset(traces[:100], statics[:100], enc, "procurement"),
        "valid": encode_dataset(traces[100:130], statics[100:130], enc, "procurement"),
        "test": encode_dataset(traces[130:], statics[130:], enc, "procurement"),
    }
    save_split_cache(tmp_path, splits)
    loaded = load_split_cache(tmp_path, "procurement")
    for name, ds in splits.items():
        got = loaded[name]
        assert got.case_ids == ds.case_ids
        assert np.array_equal(got.statics, ds.statics)
        assert np.array_equal(got.y_norm, ds.y_norm)
        assert all(np.array_equal(a, b) for a, b in zip(got.steps, ds.steps))
        for t in TASKS:
            assert np.array_equal(got.targets_days[t], ds.targets_days[t])


def test_with_task_renormalizes(small_dataset):
    log, statics, _ = small_dataset
    traces = list(log)
    enc = fit_encoder(traces, statics, task="procurement")
    ds = encode_dataset(traces, statics, enc, "procurement")
    prod = ds.with_task("production")
    mean, std = enc.target_stats["production"]
    assert np.allclose(prod.y_norm * std + mean, prod.y_days)
    assert prod.steps is ds.steps  # shares the expensive arrays
