"""Procurement lead-time prediction from process event logs and static attributes."""

__version__ = "0.1.0"

from .eventlog import Event, EventLog, LogStats, Trace, log_stats, parse_log, serialize_log, validate_log
from .features import (EncodedDataset, Encoder, StaticRecord, TASKS, TemporalFeatures,
                       encode_dataset, encode_static, encode_trace, fit_encoder,
                       parse_static_csv, serialize_static_csv, temporal_features)
from .model import ModelConfig, Predictor, build, load, model_config, save
from .synthgen import GenConfig, GroundTruth, generate, signal_audit
from .trainer import (MetricsReport, SplitSpec, TrainConfig, evaluate, mae, mape, rmse,
                      run_ablation, run_cell_benchmark, split, train)

__all__ = [
    "Event", "EventLog", "LogStats", "Trace", "log_stats", "parse_log", "serialize_log",
    "validate_log", "EncodedDataset", "Encoder", "StaticRecord", "TASKS", "TemporalFeatures",
    "encode_dataset", "encode_static", "encode_trace", "fit_encoder", "parse_static_csv",
    "serialize_static_csv", "temporal_features", "ModelConfig", "Predictor", "build", "load",
    "model_config", "save", "GenConfig", "GroundTruth", "generate", "signal_audit",
    "MetricsReport", "SplitSpec", "TrainConfig", "evaluate", "mae", "mape", "rmse",
    "run_ablation", "run_cell_benchmark", "split", "train", "__version__",
]
