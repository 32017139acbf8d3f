"""Dataset splitting, training loop, evaluation metrics, and experiment runners."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, DivergenceError, MetricError, TooSmallDatasetError
from .eventlog import EventLog
from .features import EncodedDataset, StaticRecord, TASKS, encode_dataset, fit_encoder
from .model import ModelConfig, Predictor, build
from .neural import ParameterStore, mse_loss

MAPE_EPS = 1e-6  # days; targets at or below this are excluded from MAPE


@dataclass(frozen=True)
class SplitSpec:
    """Train/valid/test fractions plus the shuffle seed."""

    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0

    def validate(self) -> None:
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ConfigError("split needs three positive fractions")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


def split(case_ids: Sequence[str], spec: SplitSpec = SplitSpec()) -> tuple[list[str], list[str], list[str]]:
    """Partition case ids into train/valid/test with sizes floor(f0 n) / floor(f1 n) / rest.

    Ids are sorted before shuffling, so the partition does not depend on input order.
    """
    spec.validate()
    ids = sorted(case_ids)
    if len(set(ids)) != len(ids):
        raise DataError("case ids must be unique")
    n = len(ids)
    if n < 10:
        raise TooSmallDatasetError(f"need at least 10 cases to split, got {n}")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    n_train = int(math.floor(spec.fractions[0] * n))
    n_valid = int(math.floor(spec.fractions[1] * n))
    shuffled = [ids[i] for i in perm]
    return (shuffled[:n_train], shuffled[n_train:n_train + n_valid], shuffled[n_train + n_valid:])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    optimizer: str = "adam"  # "sgd" available for debugging
    deterministic: bool = True

    def validate(self) -> None:
        if self.learning_rate < 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ConfigError("learning rate, batch size, and max epochs must be positive")
        if not (0 <= self.patience <= self.max_epochs):
            raise ConfigError("patience must lie in [0, max_epochs]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    valid_mae_days: float
    wall_s: float


@dataclass(frozen=True)
class MetricsReport:
    task: str
    mae_days: float
    rmse_days: float
    mape: float
    n_test: int
    wall_s: float


def history_to_csv(history: Sequence[EpochRecord]) -> str:
    lines = ["epoch,train_loss,valid_mae_days,wall_s"]
    for rec in history:
        lines.append(f"{rec.epoch},{rec.train_loss!r},{rec.valid_mae_days!r},{rec.wall_s!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Metrics


def _check_pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.size == 0 or pred.shape != truth.shape:
        raise MetricError(f"metrics need matching non-empty arrays, got {pred.shape} vs {truth.shape}")
    return pred, truth


def mae(pred, truth) -> float:
    pred, truth = _check_pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def rmse(pred, truth) -> float:
    pred, truth = _check_pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mape(pred, truth, eps: float = MAPE_EPS) -> float:
    """Mean |relative error| over targets above eps, reported as a fraction."""
    pred, truth = _check_pair(pred, truth)
    mask = truth > eps
    if not mask.any():
        raise MetricError(f"MAPE undefined: no targets above {eps:g} days")
    return float(np.mean(np.abs(pred[mask] - truth[mask]) / truth[mask]))


# ---------------------------------------------------------------------------
# Optimizers


class _Adam:
    def __init__(self, store: ParameterStore, cfg: TrainConfig):
        self.store = store
        self.cfg = cfg
        self.t = 0
        self.m = {n: np.zeros_like(store.value(n)) for n in store.names()}
        self.v = {n: np.zeros_like(store.value(n)) for n in store.names()}

    def step(self) -> None:
        cfg = self.cfg
        self.t += 1
        b1t = 1.0 - cfg.beta1 ** self.t
        b2t = 1.0 - cfg.beta2 ** self.t
        for name in self.store.names():
            g = self.store.grad(name)
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / b1t) / (np.sqrt(v / b2t) + cfg.adam_eps)
            self.store.value(name)[...] -= cfg.learning_rate * update


class _SGD:
    def __init__(self, store: ParameterStore, cfg: TrainConfig):
        self.store = store
        self.cfg = cfg

    def step(self) -> None:
        for name in self.store.names():
            self.store.value(name)[...] -= self.cfg.learning_rate * self.store.grad(name)


# ---------------------------------------------------------------------------
# Batched prediction and training


def _prepared_steps(predictor: Predictor, dataset: EncodedDataset) -> list[np.ndarray] | None:
    if predictor.config.variant == "no_el":
        return None
    return [predictor.prepare_steps(s) for s in dataset.steps]


def _length_batches(lengths: Sequence[int], batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffled mini-batches whose members share a sequence length (no padding)."""
    order = rng.permutation(len(lengths))
    groups: dict[int, list[int]] = {}
    for idx in order:
        groups.setdefault(int(lengths[int(idx)]), []).append(int(idx))
    batches = []
    for length in sorted(groups):
        members = groups[length]
        for k in range(0, len(members), batch_size):
            batches.append(members[k:k + batch_size])
    return [batches[i] for i in rng.permutation(len(batches))]


def predict_norm(predictor: Predictor, dataset: EncodedDataset,
                 prepared: list[np.ndarray] | None = None) -> np.ndarray:
    """Normalized-scale predictions for every case, grouped by trace length."""
    if len(dataset) == 0:
        raise DataError("empty dataset")
    out = np.empty(len(dataset))
    if predictor.config.variant == "no_el":
        pred, _ = predictor.forward_batch(None, dataset.statics)
        return pred
    if prepared is None:
        prepared = _prepared_steps(predictor, dataset)
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(prepared):
        groups.setdefault(s.shape[0], []).append(i)
    for length in sorted(groups):
        idx = groups[length]
        steps = np.stack([prepared[i] for i in idx])
        pred, _ = predictor.forward_batch(steps, dataset.statics[idx])
        out[idx] = pred
    return out


def predict_days(predictor: Predictor, dataset: EncodedDataset,
                 prepared: list[np.ndarray] | None = None) -> np.ndarray:
    mean, std = dataset.encoder.target_stats[dataset.task]
    return predict_norm(predictor, dataset, prepared) * std + mean


def train(predictor: Predictor, train_set: EncodedDataset, valid_set: EncodedDataset,
          config: TrainConfig = TrainConfig()) -> tuple[Predictor, list[EpochRecord]]:
    """Mini-batch gradient descent on MSE over normalized targets with early stopping.

    Validation MAE (days) is recorded each epoch; the returned predictor
    carries the parameters of the best validation epoch. In deterministic mode
    the recorded wall_s is 0.0 so repeated runs produce identical history.
    """
    config.validate()
    if len(train_set) == 0 or len(valid_set) == 0:
        raise DataError("train and validation partitions must be non-empty")
    if predictor.task is not None and predictor.task != train_set.task:
        raise DataError(f"predictor task {predictor.task!r} != dataset task {train_set.task!r}")

    optimizer = _Adam(predictor.store, config) if config.optimizer == "adam" else _SGD(predictor.store, config)
    prepared_train = _prepared_steps(predictor, train_set)
    prepared_valid = _prepared_steps(predictor, valid_set)
    lengths = [0] * len(train_set) if prepared_train is None else [s.shape[0] for s in prepared_train]
    mean, std = train_set.encoder.target_stats[train_set.task]

    history: list[EpochRecord] = []
    best_mae = math.inf
    best_values = predictor.store.copy_values()
    epochs_since_best = 0
    t_start = time.perf_counter()

    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        loss_sum = 0.0
        for batch in _length_batches(lengths, config.batch_size, rng):
            steps = None if prepared_train is None else np.stack([prepared_train[i] for i in batch])
            pred, tape = predictor.forward_batch(steps, train_set.statics[batch])
            loss, d_pred = mse_loss(pred, train_set.y_norm[batch])
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            predictor.store.zero_grads()
            tape.backward(d_pred)
            optimizer.step()
            loss_sum += loss * len(batch)
        train_loss = loss_sum / len(train_set)

        valid_pred_days = predict_norm(predictor, valid_set, prepared_valid) * std + mean
        valid_mae = mae(valid_pred_days, valid_set.y_days)
        wall = 0.0 if config.deterministic else time.perf_counter() - t_start
        history.append(EpochRecord(epoch=epoch, train_loss=train_loss,
                                   valid_mae_days=valid_mae, wall_s=wall))

        if valid_mae < best_mae:
            best_mae = valid_mae
            best_values = predictor.store.copy_values()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if config.patience and epochs_since_best >= config.patience:
                break

    predictor.store.load_values(best_values)
    return predictor, history


def evaluate(predictor: Predictor, dataset: EncodedDataset, deterministic: bool = True) -> MetricsReport:
    t0 = time.perf_counter()
    pred = predict_days(predictor, dataset)
    wall = 0.0 if deterministic else time.perf_counter() - t0
    return MetricsReport(
        task=dataset.task,
        mae_days=mae(pred, dataset.y_days),
        rmse_days=rmse(pred, dataset.y_days),
        mape=mape(pred, dataset.y_days),
        n_test=len(dataset),
        wall_s=wall,
    )


# ---------------------------------------------------------------------------
# Experiment runners


@dataclass(frozen=True)
class ExperimentRow:
    """One trained-and-evaluated configuration in a sweep or ablation."""

    label: str  # variant name or architecture name
    task: str
    seed: int
    mae_days: float
    rmse_days: float
    mape: float
    cost_s: float
    n_test: int


def _partition(log: EventLog, statics: Sequence[StaticRecord], spec: SplitSpec):
    by_case = {t.case_id: t for t in log}
    rec_by_case = {r.case_id: r for r in statics}
    missing = [cid for cid in by_case if cid not in rec_by_case]
    if missing:
        raise DataError(f"{len(missing)} cases lack static records (first: {missing[0]!r})")
    train_ids, valid_ids, test_ids = split(list(by_case), spec)

    def pick(ids):
        return [by_case[i] for i in ids], [rec_by_case[i] for i in ids]

    return pick(train_ids), pick(valid_ids), pick(test_ids)


def encode_splits(log: EventLog, statics: Sequence[StaticRecord], spec: SplitSpec,
                  task: str = "procurement") -> dict[str, EncodedDataset]:
    """Split, fit the encoder on the training partition only, and encode all three."""
    (tr_t, tr_r), (va_t, va_r), (te_t, te_r) = _partition(log, statics, spec)
    encoder = fit_encoder(tr_t, tr_r, task=task)
    return {
        "train": encode_dataset(tr_t, tr_r, encoder, task),
        "valid": encode_dataset(va_t, va_r, encoder, task),
        "test": encode_dataset(te_t, te_r, encoder, task),
    }


def run_ablation(log: EventLog, statics: Sequence[StaticRecord],
                 base_config: ModelConfig, train_config: TrainConfig,
                 tasks: Sequence[str] = TASKS, seeds: Sequence[int] = (0, 1, 2),
                 fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
                 variants: Sequence[str] = ("full", "no_trf", "no_el")) -> list[ExperimentRow]:
    """Train every (seed, task, variant) cell under identical per-seed splits."""
    rows: list[ExperimentRow] = []
    for seed in seeds:
        splits = encode_splits(log, statics, SplitSpec(fractions=fractions, seed=seed))
        for task in tasks:
            task_sets = {k: v.with_task(task) for k, v in splits.items()}
            for variant in variants:
                cfg = replace(base_config.with_variant(variant), seed=seed)
                rows.append(_train_eval(cfg, variant, task, seed, task_sets, train_config))
    return rows


ARCHITECTURES = (
    ("RNN", "rnn", False),
    ("LSTM", "lstm", False),
    ("GRU", "gru", False),
    ("Bi-LSTM", "lstm", True),
    ("Bi-GRU", "gru", True),
)


def run_cell_benchmark(log: EventLog, statics: Sequence[StaticRecord],
                       base_config: ModelConfig, train_config: TrainConfig,
                       tasks: Sequence[str] = TASKS, seed: int = 0,
                       fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> list[ExperimentRow]:
    """The recurrent-architecture sweep: one row per architecture per task."""
    rows: list[ExperimentRow] = []
    splits = encode_splits(log, statics, SplitSpec(fractions=fractions, seed=seed))
    for task in tasks:
        task_sets = {k: v.with_task(task) for k, v in splits.items()}
        for label, cell_type, bidirectional in ARCHITECTURES:
            cfg = replace(base_config, cell_type=cell_type, bidirectional=bidirectional,
                          variant="full", seed=seed)
            cfg = cfg.with_variant("full")  # re-derive fc input width for the direction count
            rows.append(_train_eval(cfg, label, task, seed, task_sets, train_config))
    return rows


def _train_eval(cfg: ModelConfig, label: str, task: str, seed: int,
                task_sets: dict[str, EncodedDataset], train_config: TrainConfig) -> ExperimentRow:
    encoder = task_sets["train"].encoder
    predictor = build(cfg, encoder, task)
    t0 = time.perf_counter()
    predictor, _history = train(predictor, task_sets["train"], task_sets["valid"], train_config)
    cost = 0.0 if train_config.deterministic else time.perf_counter() - t0
    report = evaluate(predictor, task_sets["test"], deterministic=train_config.deterministic)
    return ExperimentRow(label=label, task=task, seed=seed, mae_days=report.mae_days,
                         rmse_days=report.rmse_days, mape=report.mape, cost_s=cost,
                         n_test=report.n_test)
