"""Seeded generator of synthetic pipe-spool procurement datasets.

Each case walks a fixed stage graph: material_prep, then per joint
cutting/fitup/welding, inspection with a rework loop (back to fitup), then
transport, waiting, storage, release. Targets come straight from the generated
timestamps: production spans material_prep to the final inspection,
post-processing spans the final inspection to release, and procurement is
their sum.

Process-dependent signal is planted so that sequence models have something
static attributes cannot explain:
  * a per-case congestion factor stretches transport/waiting lags (its coarse
    quartile leaks into the queue_tag attribute, the exact value only into lags),
  * rework loops insert extra events and extra fabrication time,
  * per-lot and per-machine speed factors are visible only through dynamic
    attributes on the events,
  * waiting that starts on a weekend is inflated 1.5x (day-of-week signal).

All randomness derives from (seed, case index), so generation may fan out
across workers without changing output.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import ConfigError, DataError
from .eventlog import Event, EventLog, Trace
from .features import StaticRecord, encode_static, fit_encoder, temporal_features

ANCHOR_EPOCH_S = 1_704_067_200  # 2024-01-01T00:00:00Z
START_WINDOW_DAYS = 365

STATIC_SCHEMA = (
    "diameter_mm", "length_m", "wall_thickness_mm", "weight_kg", "flange_count",
    "design_pressure_bar", "material_grade", "vendor_id", "paint_spec",
    "insulation", "project_zone", "priority",
)
DYN_ATTR_NAMES = ("machine", "location", "inspector", "queue_tag", "vendor_lot")

LOT_POOL = 12
MACHINE_POOL = 6
INSPECTOR_POOL = 8
CONGESTION_SIGMA = 0.5
LOT_SIGMA = 0.18
MACHINE_SIGMA = 0.12
WEEKEND_WAIT_FACTOR = 1.5
REWORK_DURATION_FACTOR = 0.6
MIN_STAGE_SECONDS = 60

GRADES = ("CS", "SS316", "DUPLEX", "ALLOY")
GRADE_PROBS = (0.5, 0.25, 0.15, 0.1)
GRADE_WELD_ADD = {"CS": 0.0, "SS316": 0.12, "DUPLEX": 0.22, "ALLOY": 0.30}
ZONES = ("engine_room", "cargo", "deck", "accommodation")
ZONE_TRANSPORT_ADD = {"engine_room": 0.5, "cargo": 0.3, "deck": 0.2, "accommodation": 0.4}
PAINTS = ("epoxy", "zinc", "none")
PAINT_PROBS = (0.5, 0.3, 0.2)
PRIORITIES = ("normal", "high", "urgent")
PRIORITY_PROBS = (0.7, 0.2, 0.1)
PRIORITY_WAIT_ADD = {"normal": 0.9, "high": 0.4, "urgent": 0.0}
PRIORITY_RANK = {"normal": 2, "high": 1, "urgent": 0}

# log-space noise weight per stage; transport/waiting are kept tight so their
# realized durations track the congestion factor rather than drowning it
STAGE_NOISE_WEIGHT = {
    "cutting": 1.0, "fitup": 1.0, "welding": 1.0, "inspection": 0.8,
    "transport": 0.15, "waiting": 0.12, "storage": 0.6, "release": 0.6,
}


@dataclass(frozen=True)
class GenConfig:
    n_spools: int = 5000
    seed: int = 7
    trace_len_range: tuple[int, int] = (18, 36)
    rework_prob: float = 0.15
    n_vendors: int = 5
    noise_scale: float = 0.25  # log-space sigma of stage-duration noise
    latent_factors: bool = True  # False also disables rework and weekend inflation

    static_schema = STATIC_SCHEMA

    def joints(self) -> int:
        return (self.trace_len_range[0] - 6) // 3

    def base_length(self) -> int:
        return 6 + 3 * self.joints()

    def max_rework(self) -> int:
        return (self.trace_len_range[1] - self.base_length()) // 3

    def validate(self) -> None:
        lo, hi = self.trace_len_range
        if not (2 <= lo <= hi <= 64):
            raise ConfigError("trace length range must lie within [2, 64]")
        if lo < 9 or (lo - 6) % 3 != 0:
            raise ConfigError(
                "stage graph needs length_min = 6 + 3*joints with joints >= 1 (e.g. 9, 12, 18)")
        if self.n_spools < 1:
            raise ConfigError("n_spools must be positive")
        if not (0.0 <= self.rework_prob <= 1.0):
            raise ConfigError("rework_prob must lie in [0, 1]")
        if self.n_vendors < 1:
            raise ConfigError("n_vendors must be positive")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass(frozen=True)
class GroundTruth:
    """Latent factors and exact segment durations of one generated case."""

    case_id: str
    congestion_factor: float
    lot_factor: float
    machine_factor: float
    rework_count: int
    production_days: float
    postprocessing_days: float
    procurement_days: float
    production_end_index: int  # index of the final inspection event in the trace


def stage_mean_days(stage: str, attrs: dict, vendor_idx: int) -> float:
    """Deterministic per-event stage duration mean in days, before factors and noise."""
    if stage == "cutting":
        return 0.10 + 0.35 * (attrs["diameter_mm"] / 600.0) + 0.15 * (attrs["length_m"] / 12.0)
    if stage == "fitup":
        return 0.12 + 0.18 * (attrs["diameter_mm"] / 600.0) + 0.02 * attrs["flange_count"]
    if stage == "welding":
        return (0.18 + 0.85 * (attrs["weight_kg"] / 2000.0)
                + 0.30 * (attrs["wall_thickness_mm"] / 20.0)
                + GRADE_WELD_ADD[attrs["material_grade"]])
    if stage == "inspection":
        return (0.50 + 0.50 * (attrs["design_pressure_bar"] / 150.0)
                + (0.15 if attrs["material_grade"] != "CS" else 0.0))
    if stage == "transport":
        return 0.90 + ZONE_TRANSPORT_ADD[attrs["project_zone"]] + 0.05 * vendor_idx
    if stage == "waiting":
        return 2.80 + 0.40 * vendor_idx + PRIORITY_WAIT_ADD[attrs["priority"]]
    if stage == "storage":
        return (0.50 + (0.35 if attrs["insulation"] == "yes" else 0.0)
                + (0.25 if attrs["paint_spec"] != "none" else 0.0))
    if stage == "release":
        return 0.25 + 0.12 * PRIORITY_RANK[attrs["priority"]]
    raise ValueError(f"unknown stage {stage!r}")


def _latent_tables(config: GenConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([config.seed, 0])
    lot = np.exp(rng.normal(0.0, LOT_SIGMA, size=LOT_POOL))
    machine = np.exp(rng.normal(0.0, MACHINE_SIGMA, size=MACHINE_POOL))
    if not config.latent_factors:
        lot = np.ones(LOT_POOL)
        machine = np.ones(MACHINE_POOL)
    return lot, machine


def _weekday(epoch_s: int) -> int:
    return datetime.fromtimestamp(epoch_s, tz=timezone.utc).weekday()


def _queue_tag(congestion: float) -> str:
    z = math.log(congestion) / CONGESTION_SIGMA if congestion != 1.0 else 0.0
    if z < -0.6745:
        return "Q1"
    if z < 0.0:
        return "Q2"
    if z < 0.6745:
        return "Q3"
    return "Q4"


def _draw_statics(rng: np.random.Generator, config: GenConfig) -> tuple[dict, int]:
    diameter = round(float(rng.uniform(60.0, 600.0)), 1)
    length = round(float(rng.uniform(2.0, 12.0)), 2)
    wall = round(float(rng.uniform(4.0, 20.0)), 1)
    flange = float(rng.integers(2, 11))
    pressure = round(float(rng.uniform(5.0, 150.0)), 1)
    grade = GRADES[rng.choice(len(GRADES), p=GRADE_PROBS)]
    vendor_idx = int(rng.integers(config.n_vendors))
    paint = PAINTS[rng.choice(len(PAINTS), p=PAINT_PROBS)]
    insulation = "yes" if rng.random() < 0.3 else "no"
    zone = ZONES[int(rng.integers(len(ZONES)))]
    priority = PRIORITIES[rng.choice(len(PRIORITIES), p=PRIORITY_PROBS)]
    weight = round(0.0247 * diameter * wall * length * (1.0 + 0.03 * flange)
                   * float(rng.uniform(0.95, 1.05)), 1)
    attrs = {
        "diameter_mm": diameter, "length_m": length, "wall_thickness_mm": wall,
        "weight_kg": weight, "flange_count": flange, "design_pressure_bar": pressure,
        "material_grade": grade, "vendor_id": f"V{vendor_idx + 1:02d}", "paint_spec": paint,
        "insulation": insulation, "project_zone": zone, "priority": priority,
    }
    return attrs, vendor_idx


def _generate_case(config: GenConfig, lot_table: np.ndarray, machine_table: np.ndarray,
                   idx: int) -> tuple[Trace, StaticRecord, GroundTruth]:
    rng = np.random.default_rng([config.seed, 1, idx])
    case_id = f"SP{idx + 1:06d}"
    attrs, vendor_idx = _draw_statics(rng, config)

    lot_idx = int(rng.integers(LOT_POOL))
    machine_idx = int(rng.integers(MACHINE_POOL))
    lot_f = float(lot_table[lot_idx])
    machine_f = float(machine_table[machine_idx])
    congestion = float(np.exp(rng.normal(0.0, CONGESTION_SIGMA))) if config.latent_factors else 1.0

    rework = 0
    if config.latent_factors:
        while rework < config.max_rework() and rng.random() < config.rework_prob:
            rework += 1

    start_s = ANCHOR_EPOCH_S + int(rng.integers(0, START_WINDOW_DAYS * 86_400))
    sec = start_s

    def attr_row(**given) -> dict:
        return {name: given.get(name) for name in DYN_ATTR_NAMES}

    events = [Event(case_id=case_id, activity="material_prep",
                    timestamp=datetime.fromtimestamp(start_s, tz=timezone.utc),
                    dyn_attrs=attr_row(location="yard_store", vendor_lot=f"L{lot_idx + 1:02d}"))]

    def add(activity: str, mean_days: float, factor: float = 1.0, **attr_kw) -> None:
        nonlocal sec
        noise = math.exp(config.noise_scale * STAGE_NOISE_WEIGHT[activity.split("#")[0]]
                         * float(rng.normal()))
        stage = activity.split("#")[0]
        dur_s = max(MIN_STAGE_SECONDS, round(mean_days * factor * noise * 86_400))
        sec += dur_s
        events.append(Event(case_id=case_id, activity=stage,
                            timestamp=datetime.fromtimestamp(sec, tz=timezone.utc),
                            dyn_attrs=attr_row(**attr_kw)))

    fab_factor = machine_f * lot_f
    machine_id = f"M{machine_idx + 1:02d}"
    shop = f"shop_{attrs['vendor_id']}"
    for _ in range(config.joints()):
        add("cutting", stage_mean_days("cutting", attrs, vendor_idx), fab_factor,
            machine=machine_id, location=shop)
        add("fitup", stage_mean_days("fitup", attrs, vendor_idx), fab_factor,
            machine=machine_id, location=shop)
        add("welding", stage_mean_days("welding", attrs, vendor_idx), fab_factor,
            machine=machine_id, location=shop)

    def add_inspection() -> None:
        inspector = f"I{int(rng.integers(INSPECTOR_POOL)) + 1:02d}"
        add("inspection", stage_mean_days("inspection", attrs, vendor_idx), 1.0,
            inspector=inspector, location="qa_bay")

    add_inspection()
    for _ in range(rework):
        add("fitup", REWORK_DURATION_FACTOR * stage_mean_days("fitup", attrs, vendor_idx),
            fab_factor, machine=machine_id, location=shop)
        add("welding", REWORK_DURATION_FACTOR * stage_mean_days("welding", attrs, vendor_idx),
            fab_factor, machine=machine_id, location=shop)
        add_inspection()

    production_end_index = len(events) - 1
    production_end_s = sec

    tag = _queue_tag(congestion)
    add("transport", stage_mean_days("transport", attrs, vendor_idx), congestion,
        queue_tag=tag, location="in_transit")
    weekend = (config.latent_factors and _weekday(sec) >= 5)
    wait_factor = congestion * (WEEKEND_WAIT_FACTOR if weekend else 1.0)
    add("waiting", stage_mean_days("waiting", attrs, vendor_idx), wait_factor,
        queue_tag=tag, location="vendor_dock")
    add("storage", stage_mean_days("storage", attrs, vendor_idx), 1.0, location="yard_store")
    add("release", stage_mean_days("release", attrs, vendor_idx), 1.0, location="yard_gate")

    production_days = (production_end_s - start_s) / 86_400
    postprocessing_days = (sec - production_end_s) / 86_400
    procurement_days = production_days + postprocessing_days  # exact additivity by construction

    trace = Trace(case_id=case_id, events=tuple(events))
    record = StaticRecord(case_id=case_id, attrs=attrs, targets={
        "production": production_days,
        "postprocessing": postprocessing_days,
        "procurement": procurement_days,
    })
    truth = GroundTruth(case_id=case_id, congestion_factor=congestion, lot_factor=lot_f,
                        machine_factor=machine_f, rework_count=rework,
                        production_days=production_days, postprocessing_days=postprocessing_days,
                        procurement_days=procurement_days,
                        production_end_index=production_end_index)
    return trace, record, truth


def _gen_chunk(config: GenConfig, indices: list[int]):
    lot_table, machine_table = _latent_tables(config)
    return [_generate_case(config, lot_table, machine_table, i) for i in indices]


def generate(config: GenConfig, jobs: int = 1) -> tuple[EventLog, list[StaticRecord], list[GroundTruth]]:
    """Generate (event log, static records, ground truth), deterministic in config.seed."""
    config.validate()
    indices = list(range(config.n_spools))
    if jobs <= 1 or config.n_spools < 64:
        cases = _gen_chunk(config, indices)
    else:
        chunk = (len(indices) + jobs - 1) // jobs
        parts = [indices[k:k + chunk] for k in range(0, len(indices), chunk)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cases = [case for part in pool.map(_gen_chunk, [config] * len(parts), parts)
                     for case in part]
    traces = tuple(c[0] for c in cases)
    records = [c[1] for c in cases]
    truths = [c[2] for c in cases]
    return EventLog(traces=traces), records, truths


def ground_truth_to_csv(truths: list[GroundTruth]) -> str:
    lines = ["case_id,congestion_factor,lot_factor,machine_factor,rework_count,"
             "production_days,postprocessing_days,procurement_days,production_end_index"]
    for t in truths:
        lines.append(f"{t.case_id},{t.congestion_factor!r},{t.lot_factor!r},{t.machine_factor!r},"
                     f"{t.rework_count},{t.production_days!r},{t.postprocessing_days!r},"
                     f"{t.procurement_days!r},{t.production_end_index}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Signal audit: is there process signal beyond the statics?


@dataclass(frozen=True)
class SignalAudit:
    r2_static: float
    r2_process: float

    @property
    def gap(self) -> float:
        return self.r2_process - self.r2_static


def _r_squared(X: np.ndarray, y: np.ndarray) -> float:
    coeff, *_ = np.linalg.lstsq(X, y, rcond=None)
    residual = y - X @ coeff
    tss = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum(residual ** 2)) / tss


def signal_audit(log: EventLog, statics: list[StaticRecord], task: str = "procurement") -> SignalAudit:
    """R-squared of a static-only linear probe vs static + per-trace process aggregates.

    Process aggregates are the transport lag, the waiting lag, and the rework
    count (extra inspections) — the channels through which the latent factors
    surface. With latent factors disabled the two probes should nearly agree.
    """
    rec_by_case = {r.case_id: r for r in statics}
    encoder = fit_encoder(list(log), statics, task=task)

    rows_static, rows_process, ys = [], [], []
    for trace in log:
        rec = rec_by_case.get(trace.case_id)
        if rec is None:
            raise DataError(f"no static record for case {trace.case_id!r}")
        feats = temporal_features(trace)
        transport_lag = waiting_lag = 0.0
        inspections = 0
        for ev, tf in zip(trace, feats):
            if ev.activity == "transport":
                transport_lag = tf.lagged
            elif ev.activity == "waiting":
                waiting_lag = tf.lagged
            elif ev.activity == "inspection":
                inspections += 1
        static_vec = encode_static(rec, encoder)
        rows_static.append(static_vec)
        rows_process.append([transport_lag, waiting_lag, float(max(0, inspections - 1))])
        ys.append(rec.targets[task])

    y = np.asarray(ys)
    if float(np.var(y)) < 1e-12:
        raise DataError("signal audit needs non-degenerate targets (zero variance)")
    ones = np.ones((len(y), 1))
    X_static = np.hstack([ones, np.asarray(rows_static)])
    X_process = np.hstack([X_static, np.asarray(rows_process)])
    return SignalAudit(r2_static=_r_squared(X_static, y), r2_process=_r_squared(X_process, y))
