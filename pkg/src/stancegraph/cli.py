"""Command-line entry point: synth, label, paths, train, eval, report.

Exit codes: 0 success, 1 runtime or I/O failure, 2 configuration error,
3 checkpoint/graph incompatibility.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

from . import nn
from .errors import CheckpointMismatch, ConfigInvalid, StanceGraphError
from .gnn import FeatureEncoder, ModelConfig, StanceGnnModel
from .graph import load_jsonl, save_jsonl, snapshot_before
from .paths import PATH_ORDER, PathOptions, materialize, save_paths_jsonl
from .stance import ExecProvider, LexiconProvider, label_graph_stances
from .synthgen import SynthConfig, generate, write_synth
from .training import (
    TrainConfig,
    Window,
    evaluate,
    temporal_split,
    train,
    write_metrics,
    write_trajectory,
)

log = logging.getLogger("stancegraph")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_COMPAT = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict, inputs, outputs, seed, started: float,
                   extra: dict | None = None) -> Path:
    doc = {
        "command": command,
        "config": config,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {str(p): file_digest(p) for p in outputs},
        "seed": seed,
        "wall_clock_secs": round(time.time() - started, 3),
    }
    doc.update(extra or {})
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_config(path) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigInvalid(f"config {path} must hold a JSON object")
    return raw


def _overrides(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


# --- synth -----------------------------------------------------------------

def cmd_synth(args) -> int:
    started = time.time()
    raw = read_config(args.config)
    if args.preset is not None:
        raw["size_preset"] = args.preset
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SynthConfig.from_dict(raw)
    result = generate(cfg)
    files = write_synth(result, args.out)
    write_manifest(
        args.out, "synth", asdict(cfg), [p for p in [args.config] if p], list(files.values()),
        cfg.seed, started, {"history_end": result.history_end},
    )
    log.info("wrote %d nodes, %d edges to %s", len(result.graph.nodes), len(result.graph.edges), args.out)
    return EXIT_OK


# --- label -----------------------------------------------------------------

def make_provider(spec: str):
    if spec == "lexicon":
        return LexiconProvider()
    if spec.startswith("exec:") and spec[5:].strip():
        return ExecProvider(spec[5:])
    raise ConfigInvalid(f"provider must be 'lexicon' or 'exec:<command>', got {spec!r}")


def cmd_label(args) -> int:
    started = time.time()
    provider = make_provider(args.provider)
    g = load_jsonl(args.nodes, args.edges, lenient=args.lenient)
    labeled = label_graph_stances(g, provider, args.bare_reshare_stance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    nodes_out, edges_out = out / "nodes.jsonl", out / "edges.jsonl"
    save_jsonl(labeled, nodes_out, edges_out)
    write_manifest(
        out, "label",
        {"provider": args.provider, "bare_reshare_stance": args.bare_reshare_stance, "lenient": args.lenient},
        [args.nodes, args.edges], [nodes_out, edges_out], None, started,
    )
    return EXIT_OK


# --- paths -----------------------------------------------------------------

def cmd_paths(args) -> int:
    started = time.time()
    opts = PathOptions(args.paths_all_posts, args.co_engage_window_secs)
    g = load_jsonl(args.nodes, args.edges, lenient=args.lenient)
    if args.at is not None:
        g = snapshot_before(g, args.at)
    pg = materialize(g, opts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "paths.jsonl"
    save_paths_jsonl(pg, target)
    counts = {k.value: len(pg.derived[k]) for k in PATH_ORDER[1:]}
    write_manifest(
        out, "paths",
        {"at": args.at, "paths_all_posts": opts.paths_all_posts,
         "co_engage_window_secs": opts.co_engage_window_secs},
        [args.nodes, args.edges], [target], None, started, {"counts": counts},
    )
    return EXIT_OK


# --- train -----------------------------------------------------------------

TRAIN_FLAGS = (
    "seed", "lr", "epochs", "patience", "neg_ratio", "batch_size", "d_emb", "n_layers",
    "hidden", "d_hash", "bare_reshare_stance", "co_engage_window_secs", "context_ts",
    "context_frac",
)
TRAIN_SWITCHES = ("stance_typed_relations", "count_mentions", "paths_all_posts")


def resolve_train_config(args) -> TrainConfig:
    raw = read_config(args.config)
    raw.update(_overrides(args, TRAIN_FLAGS))
    for name in TRAIN_SWITCHES:
        if getattr(args, name, False):
            raw[name] = True
    if args.enabled_paths is not None:
        raw["enabled_paths"] = [p.strip() for p in args.enabled_paths.split(",") if p.strip()]
    return TrainConfig.from_dict(raw)


def train_one(nodes, edges, config: TrainConfig, out_dir, lenient: bool = False,
              inputs=()) -> dict:
    """Train one run and write its four artifacts; returns the metrics dict."""
    started = time.time()
    g = load_jsonl(nodes, edges, lenient=lenient)
    model, report = train(g, config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, metrics, traj = out / "checkpoint.json", out / "metrics.json", out / "attention_trajectory.csv"
    nn.save_checkpoint(
        model.store, ckpt, config.config_hash(),
        {"train_config": config.to_dict(), "model": model.describe(), "model_hash": model.config_hash()},
    )
    write_metrics(report, metrics)
    write_trajectory(report, traj)
    write_manifest(
        out, "train", config.to_dict(), [nodes, edges, *inputs], [ckpt, metrics, traj],
        config.seed, started, {"config_hash": config.config_hash(), "enabled_paths": list(config.enabled_paths)},
    )
    return report.to_dict()


def _train_job(job):
    return train_one(*job)


def cmd_train(args) -> int:
    config = resolve_train_config(args)
    inputs = [args.config] if args.config else []
    if not args.seeds:
        train_one(args.nodes, args.edges, config, args.out, args.lenient, inputs)
        return EXIT_OK
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigInvalid("--seeds needs at least one integer")
    jobs = []
    for s in seeds:
        cfg = TrainConfig.from_dict({**config.to_dict(), "seed": s})
        jobs.append((args.nodes, args.edges, cfg, Path(args.out) / f"seed{s}", args.lenient, inputs))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(_train_job, jobs))
    else:
        for job in jobs:
            _train_job(job)
    return EXIT_OK


# --- eval ------------------------------------------------------------------

def load_model(doc: dict) -> tuple[StanceGnnModel, TrainConfig]:
    try:
        config = TrainConfig.from_dict(doc["train_config"])
        desc = doc["model"]
        encoder = FeatureEncoder(**desc["encoder"])
        model_cfg = ModelConfig(**{**desc["model"], "enabled_paths": tuple(desc["model"]["enabled_paths"])})
    except (KeyError, TypeError) as exc:
        raise CheckpointMismatch(f"checkpoint lacks model description: {exc}") from None
    if doc.get("config_hash") != config.config_hash():
        raise CheckpointMismatch("checkpoint config_hash does not match its stored training config")
    model = StanceGnnModel(encoder, model_cfg)
    values = nn.checkpoint_arrays(doc)
    current = model.store.values()
    if set(values) != set(current) or any(values[k].shape != current[k].shape for k in values):
        raise CheckpointMismatch("checkpoint parameters do not fit the described model")
    model.store.load_values(values)
    if doc.get("model_hash") not in (None, model.config_hash()):
        raise CheckpointMismatch("checkpoint model hash does not match its description")
    return model, config


def cmd_eval(args) -> int:
    doc = nn.read_checkpoint(args.checkpoint)
    model, config = load_model(doc)
    if args.config:
        expected = TrainConfig.from_dict(read_config(args.config)).config_hash()
        if expected != doc["config_hash"]:
            raise CheckpointMismatch(
                f"config hash {expected} differs from checkpoint {doc['config_hash']}"
            )
    g = load_jsonl(args.nodes, args.edges, lenient=args.lenient)
    fitted = FeatureEncoder.fit(g, model.encoder.d_hash)
    if fitted != model.encoder:
        raise CheckpointMismatch("graph features do not match the checkpoint's feature encoder")
    spec = temporal_split(g, context_ts=config.context_ts, context_frac=config.context_frac)
    auc = evaluate(model, g, spec, args.window, config)
    print(json.dumps({"window": Window(args.window).value, "auc": auc}))
    return EXIT_OK


# --- report ----------------------------------------------------------------

REPORT_HEADER = ["run", "enabled_paths", "seed", "val_auc", "test_auc"] + [
    f"w_{k.value}" for k in PATH_ORDER
]


def report_rows(run_dirs) -> list[list]:
    rows = []
    for d in run_dirs:
        path = Path(d) / "metrics.json"
        if not path.is_file():
            raise FileNotFoundError(f"missing metrics.json in {d}")
        m = json.loads(path.read_text(encoding="utf-8"))
        rows.append(
            [Path(d).name or str(d), "+".join(m["enabled_paths"]), m["seed"],
             m["auc"].get("val"), m["auc"].get("test"), *m["final_attention"]]
        )
    return rows


def cmd_report(args) -> int:
    rows = report_rows(args.runs)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def _graph_inputs(p) -> None:
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--lenient", action="store_true", help="ignore unknown JSON fields")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stancegraph")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic graph with ground truth")
    p.add_argument("--config")
    p.add_argument("--preset", choices=["small", "medium", "large"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="fill in missing edge stances")
    _graph_inputs(p)
    p.add_argument("--provider", default="lexicon")
    p.add_argument("--bare-reshare-stance", default="support", choices=["support", "neutral"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("paths", help="materialise derived stance paths")
    _graph_inputs(p)
    p.add_argument("--at", type=int, help="snapshot time; default uses every edge")
    p.add_argument("--paths-all-posts", action="store_true")
    p.add_argument("--co-engage-window-secs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_paths)

    p = sub.add_parser("train", help="train a model and write its artifacts")
    _graph_inputs(p)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="comma-separated seeds; one run per seed under OUT/seed<N>")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--neg-ratio", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--d-emb", type=int)
    p.add_argument("--n-layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--d-hash", type=int)
    p.add_argument("--enabled-paths", help="comma-separated, e.g. main,fop")
    p.add_argument("--bare-reshare-stance", choices=["support", "neutral"])
    p.add_argument("--co-engage-window-secs", type=int)
    p.add_argument("--context-ts", type=int)
    p.add_argument("--context-frac", type=float)
    for name in TRAIN_SWITCHES:
        p.add_argument("--" + name.replace("_", "-"), action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on one window")
    _graph_inputs(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--window", default="test", choices=[w.value for w in Window])
    p.add_argument("--config", help="training config the checkpoint must match")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="tabulate metrics across run directories")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", help="CSV path; standard output when omitted")
    p.set_defaults(func=cmd_report)
    return parser


def configure_logging() -> None:
    level = os.environ.get("STANCEGRAPH_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise ConfigInvalid(f"STANCEGRAPH_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    logging.getLogger("stancegraph").setLevel(LOG_LEVELS[level])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging()
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointMismatch as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (StanceGraphError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
