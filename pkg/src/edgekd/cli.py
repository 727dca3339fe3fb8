"""Command line runner: ``run``, ``gen-scenario`` and ``stats``.

Errors print one JSON line to stderr and exit with 2 (configuration),
3 (data) or 4 (internal invariant violation).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, dataio, metrics, nncore
from .config import PROFILES, profile
from .errors import ConfigError, EdgeKDError
from .experiment import METHODS, resolve_methods, run_experiment, summarize
from .federated import telemetry_jsonl

log = logging.getLogger("edgekd")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def load_scenario_spec(spec: dict, base: Path, seed: int, threads: int = 1) -> dataio.Scenario:
    """Scenario from a config block: ``synthetic``, ``csv`` or ``serialized`` source."""
    source = spec.get("source")
    if source == "synthetic":
        return dataio.generate_synthetic_scenario(spec.get("generator", {}), spec.get("seed", seed))
    if source == "csv":
        if "path" not in spec:
            raise ConfigError("csv scenario needs a 'path'")
        schema = spec.get("schema")
        if schema is None:
            if "schema_path" not in spec:
                raise ConfigError("csv scenario needs 'schema' or 'schema_path'")
            schema = _read_json(_resolve(base, spec["schema_path"]))
        return dataio.load_scenario(_resolve(base, spec["path"]), schema, threads)
    if source == "serialized":
        return dataio.read_scenario(_resolve(base, spec["path"]))
    raise ConfigError(f"scenario source must be synthetic, csv or serialized, got {source!r}")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _csv_with_run(rows, columns, run_cols):
    return metrics.rows_to_csv([{**r, **run_cols} for r in rows], [*columns, *run_cols])


def cmd_run(args) -> int:
    cfg_path = Path(args.config)
    cfg = _read_json(cfg_path)
    base = cfg_path.parent
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    threads = args.threads if args.threads is not None else cfg.get("threads", 1)
    methods = args.methods.split(",") if args.methods else cfg.get("methods", list(METHODS))
    prof = args.scenario_profile or cfg.get("profile", "synthetic")
    out_arg = args.out or cfg.get("output_dir")
    if not out_arg:
        raise ConfigError("no output directory (--out or output_dir)")
    out = Path(out_arg) if args.out else _resolve(base, out_arg)
    if "scenario" not in cfg:
        raise ConfigError("config has no 'scenario' block")

    hp = profile(prof, **cfg.get("hyperparams", {}))
    methods = resolve_methods(methods)
    grouping = cfg.get("grouping", "quartile")
    scenario = load_scenario_spec(cfg["scenario"], base, seed, threads)

    # the effective configuration; output location and worker count do not change results
    effective = {"profile": prof, "seed": seed, "methods": methods, "scenario": cfg["scenario"],
                 "hyperparams": hp.to_dict(), "grouping": grouping}
    config_hash = hashlib.sha256(json.dumps(effective, sort_keys=True).encode("utf-8")).hexdigest()
    run_cols = {"config_hash": config_hash[:16], "seed": seed}

    result = run_experiment(scenario, hp, methods, seed, threads)
    views = summarize(scenario, result, grouping)
    stats = dataio.dataset_stats(scenario)

    files = {}

    def emit(rel: str, text: str):
        _write(out / rel, text)
        files[rel] = hashlib.sha256(text.encode("utf-8")).hexdigest()

    for m in methods:
        doc = {"config_hash": config_hash, "seed": seed, **metrics.report_to_dict(result.reports[m])}
        emit(f"reports/{m}.json", metrics.dumps(doc))
    emit("report.json", metrics.emit_report(result.ordered_reports(), stats, "json"))
    emit("report.csv", metrics.emit_report(result.ordered_reports(), stats, "csv"))
    emit("summary.json", metrics.dumps({**run_cols, "summary": views["summary"]}))
    emit("summary.csv", _csv_with_run(views["summary"], ["method", "edge_accuracy", "frame_accuracy", "devices",
                                                         "fallback_devices"], run_cols))
    if "deltas" in views:
        emit("deltas.json", metrics.dumps({**run_cols, "convention": metrics.BOUNDARY_CONVENTION,
                                           "units": "percentage points vs local", "deltas": views["deltas"]}))
        rows = [{"method": d["method"], **d["buckets"]} for d in views["deltas"]]
        emit("deltas.csv", _csv_with_run(rows, ["method", *metrics.DELTA_LABELS], run_cols))
    emit("groups.json", metrics.dumps({**run_cols, "grouping": grouping, "groups": views["groups"]}))
    group_rows = [{"group": g["group"], "lower": g["lower"], "upper": g["upper"], "node_count": g["node_count"],
                   "method": m, "edge_accuracy": acc}
                  for g in views["groups"] for m, acc in g["edge_accuracy"].items()]
    emit("groups.csv", _csv_with_run(group_rows, ["group", "lower", "upper", "node_count", "method",
                                                  "edge_accuracy"], run_cols))
    emit("stats.json", metrics.dumps({**run_cols, **stats.to_dict()}))
    for m, records in result.telemetry.items():
        emit(f"telemetry/{m}.jsonl", telemetry_jsonl([{**r, **run_cols} for r in records]))
    if result.audit.records:
        emit("audit.json", metrics.dumps({**run_cols, "real_rows": result.audit.real_rows,
                                          "total_rows": result.audit.total_rows,
                                          "operations": result.audit.summary()}))
    for name, model in [*((f"teacher_{k}", t.model) for k, t in sorted(result.teachers.items())),
                        *((f"global_{k}", g) for k, g in sorted(result.global_models.items()))]:
        blob = nncore.weights_to_bytes(model)
        path = out / "models" / f"{name}.bin"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(blob)
        files[f"models/{name}.bin"] = hashlib.sha256(blob).hexdigest()

    manifest = {
        "config": effective,
        "config_hash": config_hash,
        "hyperparams_fingerprint": hp.fingerprint(),
        "seed": seed,
        "scenario": {"tag": scenario.tag, "devices": len(scenario.devices), "features": list(scenario.feature_names),
                     "notes": scenario.notes},
        "versions": {"edgekd": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "files": dict(sorted(files.items())),
    }
    _write(out / "manifest.json", metrics.dumps(manifest))
    for row in views["summary"]:
        print(f"{row['method']:9s} edge={row['edge_accuracy']:.4f} frame={row['frame_accuracy']:.4f}")
    return 0


def cmd_gen_scenario(args) -> int:
    gen = _read_json(Path(args.config)) if args.config else {}
    if "generator" in gen:
        gen = gen["generator"]
    if not args.out:
        raise ConfigError("gen-scenario needs --out")
    seed = args.seed if args.seed is not None else 0
    scenario = dataio.generate_synthetic_scenario(gen, seed)
    dataio.write_scenario(scenario, args.out)
    stats = dataio.dataset_stats(scenario)
    print(f"wrote {stats.device_count} devices, {stats.total_frames} frames, "
          f"error rate {stats.aggregate_frame_error_rate:.4f} to {args.out}")
    return 0


def cmd_stats(args) -> int:
    root = Path(args.path)
    if (root / dataio.INDEX_FILE).exists():
        scenario = dataio.read_scenario(root)
    else:
        if not args.schema:
            raise ConfigError("CSV directories need --schema")
        scenario = dataio.load_scenario(root, _read_json(Path(args.schema)), args.threads or 1)
    stats = dataio.dataset_stats(scenario)
    if args.json:
        print(metrics.dumps(stats.to_dict()), end="")
        return 0
    print(f"scenario: {stats.tag}")
    print(f"devices: {stats.device_count}")
    print(f"frames: {stats.total_frames}")
    print(f"error frames: {stats.error_frames}")
    print(f"frame error rate: {stats.aggregate_frame_error_rate:.4f}")
    if args.per_device:
        for d in stats.devices:
            print(f"  {d.device_id}: frames={d.frames} rate={d.frame_error_rate:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgekd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run methods on a scenario and write reports")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--methods", help=f"comma separated subset of {','.join(METHODS)}")
    run.add_argument("--threads", type=int)
    run.add_argument("--scenario-profile", choices=sorted(PROFILES))
    run.set_defaults(fn=cmd_run)

    gen = sub.add_parser("gen-scenario", help="generate and serialize a synthetic scenario")
    gen.add_argument("--config", help="JSON with generator settings")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out")
    gen.set_defaults(fn=cmd_gen_scenario)

    st = sub.add_parser("stats", help="device count, frames and error rates of a scenario")
    st.add_argument("path", help="serialized scenario or per-node CSV directory")
    st.add_argument("--schema", help="schema config for CSV directories")
    st.add_argument("--threads", type=int)
    st.add_argument("--json", action="store_true")
    st.add_argument("--per-device", action="store_true")
    st.set_defaults(fn=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except EdgeKDError as exc:
        err = {"error": exc.kind, "exit": exc.exit_code, "message": str(exc)}
    except Exception as exc:  # invariant violations and bugs
        err = {"error": "internal", "exit": 4, "message": f"{type(exc).__name__}: {exc}"}
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return err["exit"]


if __name__ == "__main__":
    sys.exit(main())
