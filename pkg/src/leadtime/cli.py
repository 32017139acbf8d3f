"""Command-line pipeline: synth | validate | featurize | train | eval | ablate | bench | report.

Exit codes: 0 success, 1 data/runtime failure, 2 usage error. Every subcommand
accepts ``--config FILE`` (JSON whose keys are flag names with dashes as
underscores); explicit flags override config values, config overrides defaults.
Under ``--deterministic`` (the default) all emitted artifacts are byte-identical
across reruns with the same seed, so wall-clock fields are written as 0.0.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import reports, synthgen, trainer
from .errors import LeadtimeError
from .features import (TASKS, encode_dataset, fit_encoder, load_split_cache, parse_static_csv,
                       save_split_cache, serialize_static_csv)
from .eventlog import Violation, log_stats, parse_log, serialize_log, validate_log
from .model import CELL_TYPES, VARIANTS, build, load, model_config, save
from .synthgen import GenConfig, generate, ground_truth_to_csv, signal_audit
from .trainer import SplitSpec, TrainConfig, evaluate, history_to_csv, split, train


def _dims(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).split(",") if v != "")


def _fractions(value) -> tuple[float, float, float]:
    parts = value if isinstance(value, (list, tuple)) else str(value).split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def _len_range(value) -> tuple[int, int]:
    parts = value if isinstance(value, (list, tuple)) else str(value).split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected min,max")
    return int(parts[0]), int(parts[1])


def _tasks(value) -> tuple[str, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(value)
    if value == "all":
        return TASKS
    return tuple(str(value).split(","))


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cell", choices=CELL_TYPES, default="lstm", help="recurrent cell type")
    p.add_argument("--bi", action=argparse.BooleanOptionalAction, default=True,
                   help="bidirectional sequence encoder")
    p.add_argument("--hidden", type=int, default=16, help="recurrent hidden size")
    p.add_argument("--mlp", type=_dims, default=(32, 16), help="static MLP layer widths, e.g. 32,16")
    p.add_argument("--fc-hidden", type=_dims, default=(16,), help="fusion head hidden widths")
    p.add_argument("--variant", choices=VARIANTS, default="full",
                   help="full model, no_trf (drop time features), or no_el (static only)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=3e-3, help="learning rate")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--max-epochs", type=int, default=60)
    p.add_argument("--patience", type=int, default=10, help="early-stop patience in epochs")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                   help="single-threaded, zeroed wall clocks, byte-identical artifacts")


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                       max_epochs=args.max_epochs,
                       patience=min(args.patience, args.max_epochs),
                       optimizer=args.optimizer, deterministic=args.deterministic, seed=seed)


def _model_cfg(args, seed: int, variant: str | None = None):
    return model_config(cell_type=args.cell, bidirectional=args.bi, hidden_dim=args.hidden,
                        mlp_dims=_dims(args.mlp), fc_hidden=_dims(args.fc_hidden),
                        variant=variant or args.variant, seed=seed)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="leadtime",
                                     description="Procurement lead-time prediction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    subs: dict[str, argparse.ArgumentParser] = {}

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of flag defaults (flags override)")
        subs[name] = p
        return p

    p = add("synth", "generate a synthetic procurement dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=5000, help="number of pipe spools")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--len-range", type=_len_range, default=(18, 36), help="trace length range min,max")
    p.add_argument("--rework-prob", type=float, default=0.15)
    p.add_argument("--n-vendors", type=int, default=5)
    p.add_argument("--noise-scale", type=float, default=0.25)
    p.add_argument("--latent-factors", action=argparse.BooleanOptionalAction, default=True,
                   help="plant process-dependent signal (disable for the degenerate control)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--audit", action=argparse.BooleanOptionalAction, default=False,
                   help="print the static-vs-process signal audit after generating")

    p = add("validate", "check event-log (and optional static) invariants")
    p.add_argument("--log", required=True)
    p.add_argument("--static", default=None)

    p = add("featurize", "split, fit the encoder on train, and cache encoded datasets")
    p.add_argument("--log", required=True)
    p.add_argument("--static", required=True)
    p.add_argument("--out", required=True, help="cache directory")
    p.add_argument("--task", choices=TASKS, default="procurement")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--fractions", type=_fractions, default=(0.7, 0.1, 0.2))

    p = add("train", "train a predictor on a featurized cache")
    p.add_argument("--data", required=True, help="featurize output directory")
    p.add_argument("--out", required=True, help="checkpoint path (JSON)")
    p.add_argument("--history", default=None, help="history CSV path (default: alongside --out)")
    p.add_argument("--task", choices=TASKS, default="procurement")
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    _add_train_flags(p)

    p = add("eval", "evaluate a checkpoint on a cached split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--json", dest="json_out", default=None, help="also write the report as JSON")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)

    p = add("ablate", "train full / no_trf / no_el variants per task and seed")
    p.add_argument("--log", required=True)
    p.add_argument("--static", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", type=int, default=3, help="number of run seeds (0..n-1)")
    p.add_argument("--tasks", type=_tasks, default=TASKS, help="comma list or 'all'")
    p.add_argument("--fractions", type=_fractions, default=(0.7, 0.1, 0.2))
    _add_model_flags(p)
    _add_train_flags(p)

    p = add("bench", "sweep RNN/LSTM/GRU/Bi-LSTM/Bi-GRU on identical splits")
    p.add_argument("--log", required=True)
    p.add_argument("--static", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tasks", type=_tasks, default=TASKS)
    p.add_argument("--fractions", type=_fractions, default=(0.7, 0.1, 0.2))
    _add_model_flags(p)
    _add_train_flags(p)

    p = add("report", "merge prior outputs into summary.md plus plot-ready CSV series")
    p.add_argument("--inputs", required=True, help="directory holding prior outputs")
    p.add_argument("--out", required=True, help="output directory")

    return parser, subs


# ---------------------------------------------------------------------------
# Subcommand implementations


def _cmd_synth(args) -> int:
    cfg = GenConfig(n_spools=args.n, seed=args.seed, trace_len_range=tuple(args.len_range),
                    rework_prob=args.rework_prob, n_vendors=args.n_vendors,
                    noise_scale=args.noise_scale, latent_factors=args.latent_factors)
    log, statics, truths = generate(cfg, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "events.csv").write_text(serialize_log(log), encoding="utf-8")
    (out / "static.csv").write_text(serialize_static_csv(statics), encoding="utf-8")
    (out / "ground_truth.csv").write_text(ground_truth_to_csv(truths), encoding="utf-8")
    stats = log_stats(log)
    manifest = {
        "schema_version": 1,
        "config": dataclasses.asdict(cfg),
        "n_traces": stats.n_traces,
        "n_events": stats.n_events,
        "trace_len_min": stats.trace_len_min,
        "trace_len_max": stats.trace_len_max,
    }
    (out / "gen_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True),
                                           encoding="utf-8")
    print(f"wrote {stats.n_traces} traces / {stats.n_events} events to {out}")
    if args.audit:
        audit = signal_audit(log, statics)
        print(f"signal audit: static R2 {audit.r2_static:.3f}, "
              f"static+process R2 {audit.r2_process:.3f}, gap {audit.gap:.3f}")
    return 0


def _cmd_validate(args) -> int:
    with open(args.log, "rb") as fh:
        log = parse_log(fh)
    violations = list(validate_log(log))
    if args.static is not None:
        with open(args.static, "rb") as fh:
            records = parse_static_csv(fh)
        known = {r.case_id for r in records}
        for trace in log:
            if trace.case_id not in known:
                violations.append(Violation(trace.case_id, "missing static record",
                                            "trace has no static row"))
    for v in violations:
        print(f"case {v.case_id}: {v.rule}" + (f" ({v.detail})" if v.detail else ""))
    if violations:
        print(f"{len(violations)} violation(s)")
        return 1
    stats = log_stats(log)
    print(f"clean: {stats.n_traces} traces, {stats.n_events} events, "
          f"lengths {stats.trace_len_min}-{stats.trace_len_max}")
    return 0


def _cmd_featurize(args) -> int:
    with open(args.log, "rb") as fh:
        log = parse_log(fh)
    with open(args.static, "rb") as fh:
        records = parse_static_csv(fh)
    spec = SplitSpec(fractions=tuple(args.fractions), seed=args.split_seed)
    by_case = {t.case_id: t for t in log}
    rec_by_case = {r.case_id: r for r in records}
    train_ids, valid_ids, test_ids = split(list(by_case), spec)
    encoder = fit_encoder([by_case[i] for i in train_ids],
                          [rec_by_case[i] for i in train_ids], task=args.task)
    splits = {}
    for name, ids in (("train", train_ids), ("valid", valid_ids), ("test", test_ids)):
        splits[name] = encode_dataset([by_case[i] for i in ids], [rec_by_case[i] for i in ids],
                                      encoder, args.task)
    out = Path(args.out)
    save_split_cache(out, splits)
    manifest = {
        "schema_version": 1,
        "task": args.task,
        "split_seed": args.split_seed,
        "fractions": list(args.fractions),
        "sizes": {k: len(v) for k, v in splits.items()},
        "seq_dim": encoder.seq_dim(),
        "static_dim": encoder.static_dim,
    }
    (out / "featurize_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True),
                                                 encoding="utf-8")
    print(f"featurized {sum(len(v) for v in splits.values())} cases into {out} "
          f"(seq dim {encoder.seq_dim()}, static dim {encoder.static_dim})")
    return 0


def _cmd_train(args) -> int:
    splits = load_split_cache(args.data, args.task)
    encoder = splits["train"].encoder
    cfg = _model_cfg(args, args.seed)
    predictor = build(cfg, encoder, args.task)
    predictor, history = train(predictor, splits["train"], splits["valid"],
                               _train_config(args, args.seed))
    save(predictor, args.out)
    history_path = Path(args.history) if args.history else Path(args.out).with_suffix(".history.csv")
    history_path.write_text(history_to_csv(history), encoding="utf-8")
    best = min(h.valid_mae_days for h in history)
    print(f"trained {cfg.variant} {cfg.cell_type}{' bi' if cfg.bidirectional else ''} "
          f"for {len(history)} epochs; best valid MAE {best:.3f} days")
    print(f"checkpoint: {args.out}\nhistory: {history_path}")
    return 0


def _cmd_eval(args) -> int:
    splits = load_split_cache(args.data, task="procurement")
    encoder = splits["train"].encoder
    predictor = load(args.model, encoder=encoder)
    if predictor.task is None:
        raise LeadtimeError("checkpoint carries no task")
    dataset = splits[args.split].with_task(predictor.task)
    report = evaluate(predictor, dataset, deterministic=args.deterministic)
    print(reports.metrics_markdown(report), end="")
    if args.json_out:
        Path(args.json_out).write_text(reports.metrics_to_json(report) + "\n", encoding="utf-8")
    return 0


def _load_raw(args):
    with open(args.log, "rb") as fh:
        log = parse_log(fh)
    with open(args.static, "rb") as fh:
        records = parse_static_csv(fh)
    return log, records


def _cmd_ablate(args) -> int:
    log, records = _load_raw(args)
    base = _model_cfg(args, 0, variant="full")
    rows = trainer.run_ablation(log, records, base, _train_config(args, 0),
                                tasks=_tasks(args.tasks), seeds=range(args.seeds),
                                fractions=tuple(args.fractions))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    md = reports.results_markdown(rows, "Feature-group ablation", tasks=_tasks(args.tasks))
    (out / "ablation.csv").write_text(reports.rows_to_csv(rows), encoding="utf-8")
    (out / "ablation.md").write_text(md, encoding="utf-8")
    print(md, end="")
    return 0


def _cmd_bench(args) -> int:
    log, records = _load_raw(args)
    base = _model_cfg(args, 0, variant="full")
    rows = trainer.run_cell_benchmark(log, records, base, _train_config(args, 0),
                                      tasks=_tasks(args.tasks), seed=args.seed,
                                      fractions=tuple(args.fractions))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    md = reports.results_markdown(rows, "Sequential architecture sweep",
                                  metrics=("mae", "rmse", "cost"), tasks=_tasks(args.tasks))
    (out / "bench.csv").write_text(reports.rows_to_csv(rows), encoding="utf-8")
    (out / "bench.md").write_text(md, encoding="utf-8")
    print(md, end="")
    return 0


def _cmd_report(args) -> int:
    src = Path(args.inputs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sections = ["# Experiment summary", ""]

    histories = sorted(src.glob("**/*history*.csv"))
    if histories:
        sections.append("## Training curves")
        sections.append("")
        for path in histories:
            stem = path.stem.replace(".", "_")
            lines = path.read_text(encoding="utf-8").strip().splitlines()
            (out / f"series_epoch_{stem}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
            last = lines[-1].split(",")
            sections.append(f"- `{path.name}`: {len(lines) - 1} epochs, "
                            f"final valid MAE {float(last[2]):.3f} days "
                            f"(series: `series_epoch_{stem}.csv`)")
        sections.append("")

    for name, title, metrics in (("ablation.csv", "Feature-group ablation", ("mae", "rmse", "mape")),
                                 ("bench.csv", "Sequential architecture sweep", ("mae", "rmse", "cost"))):
        found = sorted(src.glob(f"**/{name}"))
        if found:
            rows = reports.rows_from_csv(found[0].read_text(encoding="utf-8"))
            sections.append(reports.results_markdown(rows, title, metrics=metrics))
            bars_name = f"series_bars_{name.removesuffix('.csv')}.csv"
            (out / bars_name).write_text(reports.bars_csv(rows), encoding="utf-8")
            sections.append(f"(bars: `{bars_name}`)")
            sections.append("")

    metric_files = sorted(src.glob("**/*metrics*.json"))
    if metric_files:
        sections.append("## Evaluation reports")
        sections.append("")
        sections.append("| file | task | MAE (days) | RMSE (days) | MAPE | n |")
        sections.append("|---|---|---|---|---|---|")
        for path in metric_files:
            doc = json.loads(path.read_text(encoding="utf-8"))
            sections.append(f"| {path.name} | {doc['task']} | {doc['mae_days']:.3f} "
                            f"| {doc['rmse_days']:.3f} | {doc['mape']:.4f} | {doc['n_test']} |")
        sections.append("")

    (out / "summary.md").write_text("\n".join(sections) + "\n", encoding="utf-8")
    print(f"wrote {out / 'summary.md'}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "validate": _cmd_validate,
    "featurize": _cmd_featurize,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "bench": _cmd_bench,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read --config {args.config}: {exc}")
        sub = subs[args.command]
        valid = {a.dest for a in sub._actions}
        unknown = sorted(set(config) - valid)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except LeadtimeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
