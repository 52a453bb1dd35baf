"""Command-line entry point: ``dagacfl run | eval | compare``.

Exit codes: 0 success, 2 input error, 3 invariant violation during a run.
Set DAGACFL_WORKERS to cap the evaluation thread pool.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from importlib import metadata, resources
from pathlib import Path

from .config import ConfigError, config_to_dict, load_config
from .datasets import IdxFormatError, dataset_manifest
from .evaluation import round_cluster_metrics
from .ledger import DagLedger, LedgerError, read_jsonl
from .outputs import (EVAL_COLUMNS, read_csv, read_trace, write_csv, write_json, write_records,
                      write_trace)
from .simulation import METRIC_COLUMNS, InvariantViolation, Simulation, run_fedavg_baseline

log = logging.getLogger("dagacfl")

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3


class InputError(Exception):
    pass


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def bundled_configs() -> dict[str, Path]:
    root = resources.files("dagacfl") / "configs"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".yaml")}


def resolve_config_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_configs()
    if name in bundled:
        return bundled[name]
    raise InputError(f"config {name!r} not found (bundled: {', '.join(sorted(bundled))})")


def cmd_run(config: str, out: str, overrides: list[str]) -> int:
    path = resolve_config_path(config)
    cfg = load_config(path, overrides)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_path": str(path),
        "overrides": list(overrides),
        "config": config_to_dict(cfg),
        "output_dir": str(out_dir),
        "tool_version": tool_version(),
        "status": "running",
        "runtime_seconds": None,
    }
    write_json(out_dir / "manifest.json", manifest)
    start = time.perf_counter()
    sim = Simulation(cfg)
    try:
        result = sim.run()
    except InvariantViolation as exc:
        if exc.event is not None:
            log.error("offending event: %s", exc.event.to_json())
        manifest.update(status="invariant-violation", error=str(exc),
                        runtime_seconds=time.perf_counter() - start)
        write_json(out_dir / "manifest.json", manifest)
        raise
    write_csv(out_dir / "metrics.csv", METRIC_COLUMNS, [m.row() for m in result.metrics])
    write_trace(out_dir / "trace.jsonl", result.trace)
    write_records(out_dir / "ledger.jsonl", result.ledgers[0].dump())
    write_json(out_dir / "truth.json", dataset_manifest(result.datasets))
    if cfg.baseline == "fedavg":
        base = run_fedavg_baseline(cfg, result.datasets)
        write_csv(out_dir / "baseline_metrics.csv", METRIC_COLUMNS, [m.row() for m in base])
    manifest.update(status="complete", runtime_seconds=time.perf_counter() - start)
    write_json(out_dir / "manifest.json", manifest)
    last = result.metrics[-1]
    print(f"{cfg.rounds} rounds, final accuracy {last.mean_accuracy:.4f}, "
          f"modularity {last.modularity:.4f}, {len(result.ledgers[0])} transactions -> {out_dir}")
    return EXIT_OK


def _load_truth(path) -> list[int]:
    try:
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
        by_id = {int(e["client_id"]): int(e["cluster_id"]) for e in entries}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed truth file ({exc})") from None
    if sorted(by_id) != list(range(len(by_id))):
        raise InputError(f"{path}: client ids must be 0..n-1")
    return [by_id[i] for i in range(len(by_id))]


def cmd_eval(trace_path: str, ledger_path: str, truth_path: str | None, out: str, louvain_seed: int = 0) -> int:
    events = read_trace(trace_path)
    if not events:
        raise InputError(f"{trace_path}: trace is empty")
    ledger = DagLedger.from_records(read_jsonl(ledger_path))
    published = {ev.new_hash for ev in events}
    in_ledger = {tx.hash for tx in ledger if not tx.is_genesis}
    if published != in_ledger:
        raise InputError(f"trace and ledger disagree: {len(in_ledger - published)} ledger transaction(s) "
                         f"missing from the trace, {len(published - in_ledger)} traced hash(es) not in the "
                         f"ledger (truncated input?)")

    truth = None
    if truth_path is not None and Path(truth_path).exists():
        truth = _load_truth(truth_path)
    else:
        log.warning("no truth file; mr and misclassification columns omitted")
    n_clients = len(truth) if truth is not None else 1 + max(ev.client for ev in events)
    columns = EVAL_COLUMNS if truth is not None else EVAL_COLUMNS[:3]

    rounds: dict[int, list] = {}
    for ev in events:
        rounds.setdefault(ev.round, []).append(ev)
    rows, so_far = [], []
    for rnd in sorted(rounds):
        so_far.extend(rounds[rnd])
        cm = round_cluster_metrics(so_far, rounds[rnd], n_clients, truth, louvain_seed)
        row = [rnd, cm.modularity, cm.community_count, cm.mr_mean, cm.mr_skipped, cm.misclassification]
        rows.append(row[:len(columns)])
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "eval.csv", columns, rows)
    print(f"{len(rows)} round(s) evaluated -> {out_dir / 'eval.csv'}")
    return EXIT_OK


def _series(rows, path, column) -> list[float]:
    try:
        return [float(r[column]) for r in rows]
    except (KeyError, TypeError, ValueError):
        raise InputError(f"{path}: bad or missing values in column {column!r}") from None


def cmd_compare(a: str, b: str) -> int:
    cols_a, rows_a = read_csv(a)
    cols_b, rows_b = read_csv(b)
    if cols_a != cols_b:
        raise InputError(f"schema mismatch: {cols_a} vs {cols_b}")
    for col in ("round", "mean-accuracy", "mean-loss"):
        if col not in cols_a:
            raise InputError(f"missing column {col!r}")
    if not rows_a or not rows_b:
        raise InputError("both metrics files need at least one row")
    print("metric         final-a    final-b    delta      best-a     best-b     delta")
    for col, best in (("mean-accuracy", max), ("mean-loss", min)):
        sa, sb = _series(rows_a, a, col), _series(rows_b, b, col)
        fa, fb = sa[-1], sb[-1]
        ba, bb = best(sa), best(sb)
        print(f"{col:<14} {fa:<10.4f} {fb:<10.4f} {fb - fa:<+10.4f} {ba:<10.4f} {bb:<10.4f} {bb - ba:+.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dagacfl", description="DAG-ledger clustered federated learning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation and write its artifacts")
    r.add_argument("--config", required=True, help="YAML config, run manifest, or bundled config name")
    r.add_argument("--out", required=True)
    r.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    e = sub.add_parser("eval", help="recompute cluster metrics from a trace and ledger")
    e.add_argument("--trace", required=True)
    e.add_argument("--ledger", required=True)
    e.add_argument("--truth")
    e.add_argument("--out", required=True)
    e.add_argument("--louvain-seed", type=int, default=0)

    c = sub.add_parser("compare", help="compare two metrics CSV files")
    c.add_argument("a")
    c.add_argument("b")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, args.overrides)
        if args.command == "eval":
            return cmd_eval(args.trace, args.ledger, args.truth, args.out, args.louvain_seed)
        return cmd_compare(args.a, args.b)
    except InvariantViolation as exc:
        log.error("invariant violation: %s", exc)
        return EXIT_INVARIANT
    except ConfigError as exc:
        log.error("config error at %s", exc)
        return EXIT_INPUT
    except (InputError, LedgerError, IdxFormatError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
