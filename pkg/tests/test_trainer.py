import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leadtime.errors import (ConfigError, DataError, DivergenceError, MetricError,
                             TooSmallDatasetError)
from leadtime.features import encode_dataset, fit_encoder
from leadtime.model import build, model_config, save
from leadtime.trainer import (MAPE_EPS, SplitSpec, TrainConfig, encode_splits, evaluate,
                              history_to_csv, mae, mape, rmse, run_cell_benchmark, split, train)

from conftest import ev, record_of, trace_of

# the single-event linear fixtures legitimately trigger the std-floor warning
pytestmark = pytest.mark.filterwarnings("ignore:constant")


# ---------------------------------------------------------------------------
# Split protocol


def test_split_10_is_7_1_2():
    tr, va, te = split([f"c{i}" for i in range(10)], SplitSpec(seed=0))
    assert (len(tr), len(va), len(te)) == (7, 1, 2)


def test_split_deterministic_and_disjoint():
    ids = [f"c{i}" for i in range(57)]
    a = split(ids, SplitSpec(seed=4))
    b = split(ids, SplitSpec(seed=4))
    assert a == b
    tr, va, te = a
    assert len(set(tr) | set(va) | set(te)) == 57
    assert not (set(tr) & set(va)) and not (set(tr) & set(te)) and not (set(va) & set(te))


def test_split_input_order_invariant():
    ids = [f"c{i}" for i in range(33)]
    a = split(ids, SplitSpec(seed=1))
    b = split(list(reversed(ids)), SplitSpec(seed=1))
    assert a == b


def test_split_paper_scale_sizes():
    # floor(0.7 * 106403), floor(0.1 * 106403), remainder
    ids = [f"c{i}" for i in range(106_403)]
    tr, va, te = split(ids, SplitSpec(seed=0))
    assert (len(tr), len(va), len(te)) == (74_482, 10_640, 21_281)


def test_split_too_small():
    with pytest.raises(TooSmallDatasetError):
        split([f"c{i}" for i in range(9)], SplitSpec(seed=0))


def test_split_rejects_duplicates():
    with pytest.raises(DataError):
        split(["a"] * 12, SplitSpec(seed=0))


def test_split_bad_fractions():
    with pytest.raises(ConfigError):
        split([f"c{i}" for i in range(20)], SplitSpec(fractions=(0.5, 0.2, 0.2), seed=0))


# ---------------------------------------------------------------------------
# Metrics


def test_metrics_hand_example():
    pred, truth = [2.0, 4.0], [3.0, 3.0]
    assert mae(pred, truth) == 1.0
    assert rmse(pred, truth) == 1.0
    assert abs(mape(pred, truth) - (1.0 / 3.0 + 1.0 / 3.0) / 2.0) <= 1e-15


def test_metrics_perfect_prediction():
    y = [1.0, 2.0, 3.0]
    assert mae(y, y) == 0.0 and rmse(y, y) == 0.0 and mape(y, y) == 0.0


def test_metrics_against_spreadsheet_oracle(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        pred = rng.uniform(-50, 50, size=n).tolist()
        truth = rng.uniform(0.5, 50, size=n).tolist()
        exp_mae = sum(abs(p - t) for p, t in zip(pred, truth)) / n
        exp_rmse = math.sqrt(sum((p - t) ** 2 for p, t in zip(pred, truth)) / n)
        exp_mape = sum(abs(p - t) / t for p, t in zip(pred, truth)) / n
        assert abs(mae(pred, truth) - exp_mae) <= 1e-12
        assert abs(rmse(pred, truth) - exp_rmse) <= 1e-12
        assert abs(mape(pred, truth) - exp_mape) <= 1e-12


# milli-unit grid keeps hypothesis away from denormals, where squaring underflows
_errs = st.integers(min_value=-10 ** 9, max_value=10 ** 9).map(lambda v: v / 1000.0)


@given(st.lists(st.tuples(_errs, _errs), min_size=1, max_size=40))
def test_rmse_dominates_mae(pairs):
    pred = [p for p, _ in pairs]
    truth = [t for _, t in pairs]
    m = mae(pred, truth)
    assert rmse(pred, truth) >= m * (1.0 - 1e-12)


@given(st.permutations(list(range(8))))
def test_metric_permutation_invariance(perm):
    rng = np.random.default_rng(3)
    pred = rng.uniform(0, 10, size=8)
    truth = rng.uniform(1, 10, size=8)
    assert mae(pred[perm], truth[perm]) == pytest.approx(mae(pred, truth), abs=1e-12)
    assert rmse(pred[perm], truth[perm]) == pytest.approx(rmse(pred, truth), abs=1e-12)
    assert mape(pred[perm], truth[perm]) == pytest.approx(mape(pred, truth), abs=1e-12)


def test_mape_undefined_below_eps():
    with pytest.raises(MetricError):
        mape([1.0], [MAPE_EPS / 2])


def test_metrics_empty_error():
    with pytest.raises(MetricError):
        mae([], [])


# ---------------------------------------------------------------------------
# Training loop


def _linear_dataset(n=200, seed=0):
    """y = 3x (plus a constant postprocessing leg), a closed-form fit target."""
    rng = np.random.default_rng(seed)
    traces, records = [], []
    for i in range(n):
        x = float(rng.uniform(1.0, 2.0))
        case = f"c{i:04d}"
        traces.append(trace_of(case, ev(case, "start", "2024-01-01T00:00:00Z")))
        records.append(record_of(case, {"x": x}, production=3.0 * x, postprocessing=1.0))
    return traces, records


def _encode_linear(task="production"):
    traces, records = _linear_dataset()
    encoder = fit_encoder(traces[:140], records[:140], task=task)
    train_set = encode_dataset(traces[:140], records[:140], encoder, task)
    valid_set = encode_dataset(traces[140:170], records[140:170], encoder, task)
    test_set = encode_dataset(traces[170:], records[170:], encoder, task)
    return encoder, train_set, valid_set, test_set


def test_zero_learning_rate_changes_nothing():
    encoder, train_set, valid_set, _ = _encode_linear()
    cfg = model_config(variant="no_el", mlp_dims=(4,), fc_hidden=(), seed=0)
    predictor = build(cfg, encoder, "production")
    before = predictor.store.copy_values()
    train(predictor, train_set, valid_set,
          TrainConfig(learning_rate=0.0, max_epochs=5, patience=5, seed=0))
    for name, arr in before.items():
        assert np.array_equal(predictor.store.value(name), arr)


def test_linear_model_recovers_slope_three():
    encoder, train_set, valid_set, test_set = _encode_linear()
    cfg = model_config(variant="no_el", mlp_dims=(1,), fc_hidden=(), seed=1)
    predictor = build(cfg, encoder, "production")
    predictor, history = train(
        predictor, train_set, valid_set,
        TrainConfig(learning_rate=0.05, max_epochs=500, patience=500, batch_size=140, seed=0))
    assert len(history) <= 500
    xs = np.array([rec["x"] for rec in
                   ({"x": r.attrs["x"]} for r in _linear_dataset()[1][170:])])
    from leadtime.trainer import predict_days
    preds = predict_days(predictor, test_set)
    # closed-form least squares on noise-free y = 3x gives slope exactly 3
    slope = float(np.cov(xs, preds, bias=True)[0, 1] / np.var(xs))
    assert abs(slope - 3.0) <= 1e-3


def test_training_is_bitwise_deterministic(tmp_path, small_dataset):
    log, statics, _ = small_dataset
    splits = encode_splits(log, statics, SplitSpec(seed=0))
    cfg = model_config(hidden_dim=6, mlp_dims=(8, 4), fc_hidden=(4,), seed=0)
    tcfg = TrainConfig(max_epochs=4, patience=4, seed=0)

    outputs = []
    for run in range(2):
        predictor = build(cfg, splits["train"].encoder, "procurement")
        predictor, history = train(predictor, splits["train"], splits["valid"], tcfg)
        path = tmp_path / f"run{run}.json"
        save(predictor, path)
        outputs.append((path.read_bytes(), history_to_csv(history)))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]


def test_early_stopping_returns_best_parameters(small_dataset):
    log, statics, _ = small_dataset
    splits = encode_splits(log, statics, SplitSpec(seed=1))
    cfg = model_config(hidden_dim=6, mlp_dims=(8, 4), fc_hidden=(4,), seed=1)
    predictor = build(cfg, splits["train"].encoder, "procurement")
    predictor, history = train(predictor, splits["train"], splits["valid"],
                               TrainConfig(max_epochs=12, patience=3, seed=1))
    best = min(h.valid_mae_days for h in history)
    from leadtime.trainer import predict_days
    restored = mae(predict_days(predictor, splits["valid"]), splits["valid"].y_days)
    assert restored == pytest.approx(best, abs=1e-12)


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_divergence_raises_with_epoch():
    encoder, train_set, valid_set, _ = _encode_linear()
    cfg = model_config(variant="no_el", mlp_dims=(4,), fc_hidden=(4,), seed=0)
    predictor = build(cfg, encoder, "production")
    with pytest.raises(DivergenceError) as err:
        train(predictor, train_set, valid_set,
              TrainConfig(learning_rate=1e12, optimizer="sgd", max_epochs=50, patience=50, seed=0))
    assert err.value.epoch >= 1


def test_empty_partition_is_data_error():
    encoder, train_set, valid_set, _ = _encode_linear()
    cfg = model_config(variant="no_el", mlp_dims=(4,), fc_hidden=(), seed=0)
    predictor = build(cfg, encoder, "production")
    with pytest.raises(DataError):
        train(predictor, train_set.subset([]), valid_set, TrainConfig(seed=0))


def test_history_csv_shape(small_dataset):
    log, statics, _ = small_dataset
    splits = encode_splits(log, statics, SplitSpec(seed=0))
    cfg = model_config(hidden_dim=4, mlp_dims=(4,), fc_hidden=(), seed=0)
    predictor = build(cfg, splits["train"].encoder, "procurement")
    _, history = train(predictor, splits["train"], splits["valid"],
                       TrainConfig(max_epochs=3, patience=3, seed=0))
    text = history_to_csv(history)
    lines = text.strip().splitlines()
    assert lines[0] == "epoch,train_loss,valid_mae_days,wall_s"
    assert len(lines) == len(history) + 1
    assert all(ln.endswith(",0.0") for ln in lines[1:])  # deterministic mode zeroes wall_s


def test_benchmark_rows_complete(small_dataset):
    log, statics, _ = small_dataset
    base = model_config(hidden_dim=5, mlp_dims=(6,), fc_hidden=(4,), seed=0)
    rows = run_cell_benchmark(log, statics, base,
                              TrainConfig(max_epochs=2, patience=2, seed=0),
                              tasks=("procurement",), seed=0)
    assert [r.label for r in rows] == ["RNN", "LSTM", "GRU", "Bi-LSTM", "Bi-GRU"]
    for row in rows:
        assert math.isfinite(row.mae_days) and math.isfinite(row.rmse_days)
        assert row.rmse_days >= row.mae_days


def test_no_el_metrics_ignore_trace_inputs(small_dataset):
    log, statics, _ = small_dataset
    splits = encode_splits(log, statics, SplitSpec(seed=0))
    cfg = model_config(variant="no_el", mlp_dims=(8,), fc_hidden=(4,), seed=0)
    predictor = build(cfg, splits["train"].encoder, "procurement")
    predictor, _ = train(predictor, splits["train"], splits["valid"],
                         TrainConfig(max_epochs=2, patience=2, seed=0))
    test_set = splits["test"]
    base = evaluate(predictor, test_set)
    shuffled = test_set.subset(range(len(test_set)))
    shuffled.steps = list(reversed(shuffled.steps))  # scramble trace inputs only
    assert evaluate(predictor, shuffled) == base


def test_evaluate_report_invariants(small_dataset):
    log, statics, _ = small_dataset
    splits = encode_splits(log, statics, SplitSpec(seed=0))
    cfg = model_config(hidden_dim=4, mlp_dims=(4,), fc_hidden=(), seed=0)
    predictor = build(cfg, splits["train"].encoder, "procurement")
    predictor, _ = train(predictor, splits["train"], splits["valid"],
                         TrainConfig(max_epochs=2, patience=2, seed=0))
    report = evaluate(predictor, splits["test"])
    assert report.rmse_days >= report.mae_days >= 0.0
    assert report.mape >= 0.0
    assert report.n_test == len(splits["test"])
    assert report.wall_s == 0.0
