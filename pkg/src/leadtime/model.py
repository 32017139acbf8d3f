"""Configurable lead-time predictors: recurrent trace encoder + static MLP + fusion head.

Three variants cover the feature-group ablation: ``full`` uses everything,
``no_trf`` drops the time-derived feature columns from the step matrix, and
``no_el`` drops the whole sequence branch (static MLP + head only).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import neural
from .errors import (ArchitectureMismatchError, ConfigError, CorruptCheckpointError,
                     DataError, ShapeError, StateError)
from .eventlog import Trace
from .features import Encoder, StaticRecord, denormalize_target, encode_static, encode_trace, encoder_fingerprint
from .neural import BackwardGuard, ParameterStore

CELL_TYPES = ("rnn", "lstm", "gru")
VARIANTS = ("full", "no_trf", "no_el")

CHECKPOINT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    cell_type: str = "lstm"
    bidirectional: bool = True
    hidden_dim: int = 16
    mlp_dims: tuple[int, ...] = (32, 16)
    fc_dims: tuple[int, ...] = (48, 16, 1)  # fc_dims[0] declares the fusion input width
    variant: str = "full"
    seed: int = 0

    def expected_fc_input(self) -> int:
        if self.variant == "no_el":
            return self.mlp_dims[-1]
        directions = 2 if self.bidirectional else 1
        return self.mlp_dims[-1] + directions * self.hidden_dim

    def validate(self) -> None:
        if self.cell_type not in CELL_TYPES:
            raise ConfigError(f"unknown cell_type {self.cell_type!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.hidden_dim <= 0:
            raise ConfigError("hidden_dim must be positive")
        if not self.mlp_dims or any(d <= 0 for d in self.mlp_dims):
            raise ConfigError("mlp_dims must be a non-empty list of positive ints")
        if len(self.fc_dims) < 2 or any(d <= 0 for d in self.fc_dims):
            raise ConfigError("fc_dims must list input, hidden..., output widths")
        if self.fc_dims[-1] != 1:
            raise ConfigError("fusion head must end in a single output")
        if self.fc_dims[0] != self.expected_fc_input():
            raise ConfigError(
                f"fc input width {self.fc_dims[0]} inconsistent with "
                f"mlp output {self.mlp_dims[-1]} and variant {self.variant!r} "
                f"(expected {self.expected_fc_input()})")

    def with_variant(self, variant: str) -> "ModelConfig":
        """Same architecture re-pointed at another variant, fc input width re-derived."""
        cfg = replace(self, variant=variant)
        return replace(cfg, fc_dims=(cfg.expected_fc_input(),) + self.fc_dims[1:])


def model_config(cell_type: str = "lstm", bidirectional: bool = True, hidden_dim: int = 16,
                 mlp_dims: tuple[int, ...] = (32, 16), fc_hidden: tuple[int, ...] = (16,),
                 variant: str = "full", seed: int = 0) -> ModelConfig:
    """Build a consistent ModelConfig, deriving the fusion input width."""
    cfg = ModelConfig(cell_type=cell_type, bidirectional=bidirectional, hidden_dim=hidden_dim,
                      mlp_dims=tuple(mlp_dims), fc_dims=(1,) + tuple(fc_hidden) + (1,),
                      variant=variant, seed=seed)
    cfg = replace(cfg, fc_dims=(cfg.expected_fc_input(),) + tuple(fc_hidden) + (1,))
    cfg.validate()
    return cfg


class Tape:
    """Saved intermediates of one batched forward; runs backward exactly once per gradient pass."""

    def __init__(self, predictor: "Predictor", fc_caches, mlp_caches, seq_caches):
        self._p = predictor
        self._fc_caches = fc_caches
        self._mlp_caches = mlp_caches
        self._seq_caches = seq_caches  # list of (direction_name, caches) in concat order
        self._guard = BackwardGuard(predictor.store)

    def backward(self, d_pred: np.ndarray) -> None:
        self._guard.check_and_mark()
        p = self._p
        dz = neural.mlp_backward_batch(np.asarray(d_pred)[:, None], p.fc_layers,
                                       self._fc_caches, p.fc_grads)
        mlp_out = p.config.mlp_dims[-1]
        neural.mlp_backward_batch(dz[:, :mlp_out], p.mlp_layers, self._mlp_caches,
                                  p.mlp_grads, final_relu=True)
        offset = mlp_out
        hidden = p.config.hidden_dim
        for name, caches in self._seq_caches:
            W, U, _b = p.seq_pack(name)
            dW, dU, db = p.seq_grads(name)
            neural.run_sequence_backward_batch(p.config.cell_type, dz[:, offset:offset + hidden],
                                               caches, U, dW, dU, db)
            offset += hidden


class Predictor:
    """A built model: config + parameters (+ fitted encoder for end-to-end prediction)."""

    def __init__(self, config: ModelConfig, store: ParameterStore, d_seq: int | None, d_stat: int,
                 encoder: Encoder | None = None, task: str | None = None):
        self.config = config
        self.store = store
        self.d_seq = d_seq
        self.d_stat = d_stat
        self.encoder = encoder
        self.task = task
        self.mlp_layers = [(store.value(f"mlp.{i}.W"), store.value(f"mlp.{i}.b"))
                           for i in range(len(config.mlp_dims))]
        self.mlp_grads = [(store.grad(f"mlp.{i}.W"), store.grad(f"mlp.{i}.b"))
                          for i in range(len(config.mlp_dims))]
        self.fc_layers = [(store.value(f"fc.{i}.W"), store.value(f"fc.{i}.b"))
                          for i in range(len(config.fc_dims) - 1)]
        self.fc_grads = [(store.grad(f"fc.{i}.W"), store.grad(f"fc.{i}.b"))
                         for i in range(len(config.fc_dims) - 1)]
        self.directions = [] if config.variant == "no_el" else (
            ["fwd", "bwd"] if config.bidirectional else ["fwd"])

    def seq_pack(self, name: str):
        return (self.store.value(f"seq_{name}.W"), self.store.value(f"seq_{name}.U"),
                self.store.value(f"seq_{name}.b"))

    def seq_grads(self, name: str):
        return (self.store.grad(f"seq_{name}.W"), self.store.grad(f"seq_{name}.U"),
                self.store.grad(f"seq_{name}.b"))

    def prepare_steps(self, full_steps: np.ndarray) -> np.ndarray | None:
        """Adapt a full-width encoded step matrix to this variant's sequence input."""
        if self.config.variant == "no_el":
            return None
        if self.config.variant == "no_trf":
            if self.encoder is None:
                raise StateError("no_trf predictor needs its encoder to locate temporal columns")
            return np.delete(full_steps, self.encoder.temporal_columns, axis=1)
        return full_steps

    def forward_batch(self, steps: np.ndarray | None, statics: np.ndarray):
        """Normalized-scale predictions for a same-length batch.

        ``steps``: (B, n, d_seq) stacked step matrices, or None for the no_el
        variant. Returns (predictions (B,), tape).
        """
        h_s, mlp_caches = neural.mlp_forward_batch(statics, self.mlp_layers, final_relu=True)
        parts = [h_s]
        seq_caches = []
        if self.directions:
            if steps is None or steps.ndim != 3 or steps.shape[1] == 0:
                raise ShapeError("sequence branch requires a non-empty (B, n, d) step tensor")
            if steps.shape[2] != self.d_seq:
                raise ShapeError(f"step width {steps.shape[2]} != model sequence dim {self.d_seq}")
            for name in self.directions:
                W, U, b = self.seq_pack(name)
                h_final, _c, caches = neural.run_sequence_batch(
                    self.config.cell_type, steps, W, U, b, reverse=(name == "bwd"))
                parts.append(h_final)
                seq_caches.append((name, caches))
        z = np.concatenate(parts, axis=1)
        out, fc_caches = neural.mlp_forward_batch(z, self.fc_layers)
        return out[:, 0], Tape(self, fc_caches, mlp_caches, seq_caches)

    def predict(self, trace: Trace | None, record: StaticRecord) -> float:
        """End-to-end prediction in days for one case."""
        if self.encoder is None or self.task is None:
            raise StateError("predictor has no fitted encoder attached")
        statics = encode_static(record, self.encoder)[None, :]
        steps = None
        if self.config.variant != "no_el":
            if trace is None:
                raise DataError("this model variant requires the case's trace")
            steps = encode_trace(trace, self.encoder,
                                 include_temporal=(self.config.variant != "no_trf"))[None, :, :]
        pred_norm, _tape = self.forward_batch(steps, statics)
        if not np.isfinite(pred_norm[0]):
            raise DataError("non-finite prediction")
        return denormalize_target(float(pred_norm[0]), self.encoder, self.task)


def build_from_dims(config: ModelConfig, d_seq: int | None, d_stat: int,
                    encoder: Encoder | None = None, task: str | None = None) -> Predictor:
    """Allocate and seed parameters for the given input dims.

    All weights are uniform(-1/sqrt(hidden_dim), +1/sqrt(hidden_dim)), biases
    zero; the draw order is fixed, so equal (config, dims) give bitwise-equal
    parameters.
    """
    config.validate()
    if config.variant != "no_el" and (d_seq is None or d_seq <= 0):
        raise ConfigError("sequence input dim required for variants with an event-log branch")
    rng = np.random.default_rng(config.seed)
    scale = 1.0 / np.sqrt(config.hidden_dim)
    store = ParameterStore()

    def uniform(shape):
        return rng.uniform(-scale, scale, size=shape)

    if config.variant != "no_el":
        rows = neural.CELL_GATE_ROWS[config.cell_type] * config.hidden_dim
        for name in (["fwd", "bwd"] if config.bidirectional else ["fwd"]):
            store.add(f"seq_{name}.W", uniform((rows, d_seq)))
            store.add(f"seq_{name}.U", uniform((rows, config.hidden_dim)))
            store.add(f"seq_{name}.b", np.zeros(rows))

    dims = [d_stat] + list(config.mlp_dims)
    for i in range(len(config.mlp_dims)):
        store.add(f"mlp.{i}.W", uniform((dims[i + 1], dims[i])))
        store.add(f"mlp.{i}.b", np.zeros(dims[i + 1]))

    for i in range(len(config.fc_dims) - 1):
        store.add(f"fc.{i}.W", uniform((config.fc_dims[i + 1], config.fc_dims[i])))
        store.add(f"fc.{i}.b", np.zeros(config.fc_dims[i + 1]))

    return Predictor(config, store, d_seq if config.variant != "no_el" else None, d_stat,
                     encoder=encoder, task=task)


def build(config: ModelConfig, encoder: Encoder, task: str) -> Predictor:
    """Build a predictor whose input dims come from the fitted encoder."""
    d_seq = encoder.seq_dim(include_temporal=(config.variant != "no_trf"))
    return build_from_dims(config, d_seq, encoder.static_dim, encoder=encoder, task=task)


# ---------------------------------------------------------------------------
# Checkpoints


def _architecture(predictor: Predictor) -> dict:
    cfg = predictor.config
    return {
        "cell_type": cfg.cell_type,
        "bidirectional": cfg.bidirectional,
        "hidden_dim": cfg.hidden_dim,
        "mlp_dims": list(cfg.mlp_dims),
        "fc_dims": list(cfg.fc_dims),
        "variant": cfg.variant,
        "seed": cfg.seed,
        "d_seq": predictor.d_seq,
        "d_stat": predictor.d_stat,
        "task": predictor.task,
    }


def save(predictor: Predictor, path) -> None:
    doc = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "architecture": _architecture(predictor),
        "encoder_fingerprint": (encoder_fingerprint(predictor.encoder)
                                if predictor.encoder is not None else None),
        "params": {
            name: {"shape": list(predictor.store.value(name).shape),
                   "data": [repr(float(v)) for v in predictor.store.value(name).ravel()]}
            for name in predictor.store.names()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")


def load(path, encoder: Encoder | None = None, expected_config: ModelConfig | None = None) -> Predictor:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
            raise CorruptCheckpointError(f"unsupported checkpoint schema {doc.get('schema_version')!r}")
        arch = doc["architecture"]
        config = ModelConfig(
            cell_type=arch["cell_type"], bidirectional=arch["bidirectional"],
            hidden_dim=arch["hidden_dim"], mlp_dims=tuple(arch["mlp_dims"]),
            fc_dims=tuple(arch["fc_dims"]), variant=arch["variant"], seed=arch["seed"])
        params = doc["params"]
        d_seq, d_stat, task = arch["d_seq"], arch["d_stat"], arch["task"]
        fingerprint = doc.get("encoder_fingerprint")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"unreadable checkpoint {path}: {exc}")

    if expected_config is not None and config != expected_config:
        raise ArchitectureMismatchError(
            f"checkpoint architecture {config} != requested {expected_config}")
    if encoder is not None and fingerprint is not None and encoder_fingerprint(encoder) != fingerprint:
        raise ArchitectureMismatchError("checkpoint was trained with a different encoder")

    predictor = build_from_dims(config, d_seq, d_stat, encoder=encoder, task=task)
    try:
        values = {}
        for name, entry in params.items():
            arr = np.asarray([float(v) for v in entry["data"]]).reshape(entry["shape"])
            values[name] = arr
        predictor.store.load_values(values)
        if set(params) != set(predictor.store.names()):
            raise CorruptCheckpointError("checkpoint parameter set does not match architecture")
    except (KeyError, ValueError, ShapeError) as exc:
        raise CorruptCheckpointError(f"corrupt parameter payload in {path}: {exc}")
    return predictor
