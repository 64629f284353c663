"""Command-line entry point: synth, encode, train, partition, eval, sweep-nt, report.

Every command works on one run directory (``--out``)::

    data/                  synthetic dataset (manifest.json, rgb/, seg/)
    encoded/               weighted one-hot seg tensors and their manifest
    checkpoints/*.svpc     stage1-rgb, stage1-seg, stage2
    partition.csv          query_id, positive_id, x, y, group, weight
    metrics.csv            per-epoch loss terms and learning rate
    reports/*.json|csv     recall, partition, sweep and summary tables
    figures/*.png

Logs go to stderr; stdout carries a single JSON summary line.  Exit codes:
0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import report, tensorio
from .partition import SamplePair, partition_gpd, ratio_sweep, read_partition_csv, write_partition_csv
from .slme import encode
from .synthdata import SynthConfig, generate, load_dataset, write_dataset
from .trainer import (
    RunConfig,
    evaluate,
    metrics_csv,
    rgb_model_from,
    run_partition,
    seg_model_from,
    student_model_from,
    train_stage1,
    train_stage2,
)

log = logging.getLogger("svpr")

CONFIG_KEYS = ("data", "run", "sweep_nt")
DEFAULT_SWEEP = (3, 5, 10, 15, 20)
STAGE_FILES = {"rgb": "stage1-rgb", "seg": "stage1-seg", "student": "stage2"}
METRIC_ORDER = ("stage1-rgb", "stage1-seg", "stage2")
SWEEP_FIELDS = ("n_t", "ratio_d1", "ratio_d2", "ratio_d3", "ratio_d4", "r@1", "r@5", "r@10")


class ConfigError(ValueError):
    """Bad command line or config file (exit code 2)."""


# --- config --------------------------------------------------------------


def load_config(path, seed: int | None):
    """Parse the JSON run config into (SynthConfig, RunConfig, sweep list)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    data, run = dict(doc.get("data", {})), dict(doc.get("run", {}))
    if seed is not None:
        data["seed"] = run["seed"] = seed
    try:
        synth = SynthConfig(**data)
        cfg = RunConfig.from_json(run)
        sweep = [_parse_nt(v) for v in doc.get("sweep_nt", DEFAULT_SWEEP)]
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return synth, cfg, sweep


def _parse_nt(v):
    if v in ("inf", math.inf):
        return math.inf
    n = int(v)
    if n < 1 or n != float(v):
        raise ValueError(f"N_t must be a positive integer or inf, got {v!r}")
    return n


def _fmt_nt(n_t) -> str:
    return "inf" if n_t == math.inf else str(n_t)


# --- run directory helpers -----------------------------------------------


def _ckpt_path(out: Path, name: str) -> Path:
    return out / "checkpoints" / f"{name}.svpc"


def _load_data(out: Path, cfg: RunConfig):
    root = out / "data"
    if not (root / "manifest.json").exists():
        raise FileNotFoundError(f"no dataset under {root}; run 'synth' first")
    ds = load_dataset(root)
    enc_manifest = out / "encoded" / "manifest.json"
    if enc_manifest.exists():
        doc = json.loads(enc_manifest.read_text())
        if tuple(doc["weights"]) != tuple(cfg.class_weights):
            raise ConfigError("class weights differ from those used by 'encode'; re-run encode")
        ds.encoded = {e["id"]: tensorio.read_tensor(out / "encoded" / e["file"]) for e in doc["entries"]}
    return ds


def _load_stage1(out: Path, branch: str) -> tensorio.Checkpoint:
    path = _ckpt_path(out, STAGE_FILES[branch])
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}; run 'train --stage 1 --branch {branch}'")
    return tensorio.load_checkpoint(path, expect_stage=1, expect_module=f"{branch}-branch")


def _write_metrics(out: Path, name: str, logs) -> None:
    mdir = out / "metrics"
    mdir.mkdir(parents=True, exist_ok=True)
    (mdir / f"{name}.csv").write_text(metrics_csv(logs))
    lines = ["stage,phase,epoch,triplet,kd,lr"]
    for part in METRIC_ORDER:
        p = mdir / f"{part}.csv"
        if p.exists():
            lines += p.read_text().splitlines()[1:]
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")


def _pairs_from_csv(out: Path) -> list[SamplePair]:
    path = out / "partition.csv"
    if not path.exists():
        raise FileNotFoundError(f"missing {path}; run 'partition' first")
    return read_partition_csv(path)


# --- commands ------------------------------------------------------------


def cmd_synth(args, synth: SynthConfig, cfg: RunConfig, sweep) -> dict:
    ds = generate(synth)
    write_dataset(ds, args.out / "data")
    regimes = {r: sum(1 for e in ds.entries if e["regime"] == r) for r in "NAB"}
    return {"images": len(ds.entries), "places": synth.n_places + synth.n_val_places, "regimes": regimes}


def cmd_encode(args, synth, cfg: RunConfig, sweep) -> dict:
    ds = load_dataset(args.out / "data")
    root = args.out / "encoded"
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    counts = np.zeros(6, dtype=np.int64)
    for e in ds.entries:
        lm = ds.labels[e["id"]]
        counts += np.bincount(lm.ravel(), minlength=6)
        name = f"{e['id']}.svpt"
        tensorio.write_tensor(encode(lm, cfg.class_weights).astype(np.float32), root / name)
        entries.append({"id": e["id"], "file": name})
    frac = (counts / counts.sum()).tolist()
    doc = {"weights": list(cfg.class_weights), "entries": entries, "class_fraction": frac}
    report.write_json(doc, root / "manifest.json")
    return {"encoded": len(entries), "dynamic_fraction": frac[5]}


def cmd_train(args, synth, cfg: RunConfig, sweep) -> dict:
    ds = _load_data(args.out, cfg)
    logs: list = []
    if args.stage == 1:
        if args.branch is None:
            raise ConfigError("train --stage 1 needs --branch {rgb,seg}")
        ckpt = train_stage1(args.branch, ds, cfg, logs)
        name = STAGE_FILES[args.branch]
    else:
        if args.branch == "seg":
            raise ConfigError("stage 2 trains the rgb student; the seg branch stays frozen")
        teacher = _load_stage1(args.out, "seg")
        ckpt = train_stage2(teacher, _pairs_from_csv(args.out), ds, cfg, logs)
        name = STAGE_FILES["student"]
    path = _ckpt_path(args.out, name)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensorio.save_checkpoint(ckpt, path)
    _write_metrics(args.out, name, logs)
    last = logs[-1] if logs else None
    return {"checkpoint": str(path.relative_to(args.out)), "epochs": len(logs),
            "final_triplet": last.triplet if last else None, "final_kd": last.kd if last else None}


def cmd_partition(args, synth, cfg: RunConfig, sweep) -> dict:
    ds = _load_data(args.out, cfg)
    seg, rgb = _load_stage1(args.out, "seg"), _load_stage1(args.out, "rgb")
    ranks = None
    if args.reuse_ranks:
        ranks = [(s.x, s.y) for s in _pairs_from_csv(args.out)]
    pairs, rep, _ = run_partition(seg, rgb, ds, cfg, ranks)
    write_partition_csv(pairs, args.out / "partition.csv")
    report.write_json(rep.to_json(), args.out / "reports" / "partition.json")
    return {"pairs": rep.total, "counts": rep.counts}


def _model_for(out: Path, which: str):
    if which == "student":
        path = _ckpt_path(out, "stage2")
        if not path.exists():
            raise FileNotFoundError(f"missing checkpoint {path}; run 'train --stage 2'")
        ckpt = tensorio.load_checkpoint(path, expect_stage=2, expect_module="label-aware-rgb")
        return student_model_from(ckpt), ckpt
    ckpt = _load_stage1(out, which)
    return (seg_model_from(ckpt) if which == "seg" else rgb_model_from(ckpt)), ckpt


def cmd_eval(args, synth, cfg: RunConfig, sweep) -> dict:
    ds = _load_data(args.out, cfg)
    model, ckpt = _model_for(args.out, args.model)
    rep = evaluate(model, ckpt.params, ds, cfg, split=args.split)
    report.write_json(rep.to_json(), args.out / "reports" / f"eval-{args.model}.json")
    return {"model": args.model, "split": args.split, "recall": {str(n): rep.recall[n] for n in rep.ns},
            "queries": rep.n_queries}


def sweep_csv(rows: list[dict]) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, SWEEP_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r.get(k, "") for k in SWEEP_FIELDS})
    return out.getvalue()


def cmd_sweep_nt(args, synth, cfg: RunConfig, sweep) -> dict:
    n_ts = [_parse_nt(v) for v in args.nts.split(",")] if args.nts else sweep
    seg, rgb = _load_stage1(args.out, "seg"), _load_stage1(args.out, "rgb")
    ds = _load_data(args.out, cfg)
    path = args.out / "partition.csv"
    if path.exists():
        ranks = [(s.x, s.y) for s in read_partition_csv(path)]
    else:
        _, _, ranks = run_partition(seg, rgb, ds, cfg)
    pairs, _, _ = run_partition(seg, rgb, ds, cfg, ranks)
    rows = []
    for n_t, ratios in zip(n_ts, ratio_sweep(pairs, n_ts)):
        row = {"n_t": _fmt_nt(n_t), **{f"ratio_d{i}": ratios[f"ratio_d{i}"] for i in (1, 2, 3, 4)}}
        # N_t = inf has no finite weighting scheme; its row reports ratios only
        if args.retrain and n_t != math.inf:
            doc = cfg.to_json()
            doc.update(n_t=n_t, scheme={**doc["scheme"], "n_t": n_t})
            c = RunConfig.from_json(doc)
            parted = partition_gpd(pairs, n_t, c.weight_scheme)
            ckpt = train_stage2(seg, parted, ds, c)
            rep = evaluate(student_model_from(ckpt), ckpt.params, ds, c)
            row.update({f"r@{n}": rep.recall[n] for n in (1, 5, 10) if n in rep.recall})
        rows.append(row)
    reports = args.out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    (reports / "sweep_nt.csv").write_text(sweep_csv(rows))
    report.write_json(rows, reports / "sweep_nt.json")
    s1 = [r["ratio_d1"] + r["ratio_d2"] + r["ratio_d3"] for r in rows]
    return {"n_t": [r["n_t"] for r in rows], "ratio_s1": s1, "retrained": bool(args.retrain)}


def cmd_report(args, synth, cfg, sweep) -> dict:
    summary = report.build_report(args.out)
    return {"figures": summary["figures"], "models": sorted(summary["recall"])}


COMMANDS = {
    "synth": cmd_synth,
    "encode": cmd_encode,
    "train": cmd_train,
    "partition": cmd_partition,
    "eval": cmd_eval,
    "sweep-nt": cmd_sweep_nt,
    "report": cmd_report,
}


# --- argument parsing ----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config with 'data', 'run', 'sweep_nt' sections")
    common.add_argument("--seed", type=int, help="override data and run seeds (unsigned 64-bit)")
    common.add_argument("--out", type=Path, required=True, help="run directory")
    common.add_argument("--quiet", action="store_true", help="only log warnings")

    parser = argparse.ArgumentParser(prog="svpr", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate the synthetic regime dataset")
    sub.add_parser("encode", parents=[common], help="write weighted one-hot seg encodings")
    p = sub.add_parser("train", parents=[common], help="train a stage-1 branch or the stage-2 student")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--branch", choices=("rgb", "seg"))
    p = sub.add_parser("partition", parents=[common], help="rank training pairs and assign D1-D4 groups")
    p.add_argument("--reuse-ranks", action="store_true", help="take ranks from the existing partition.csv")
    p = sub.add_parser("eval", parents=[common], help="recall@N of a trained model")
    p.add_argument("--model", choices=tuple(STAGE_FILES), default="student")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p = sub.add_parser("sweep-nt", parents=[common], help="group ratios (and optional recall) across N_t")
    p.add_argument("--nts", help="comma-separated N_t values, e.g. 3,5,10,inf")
    p.add_argument("--retrain", action="store_true", help="retrain and evaluate the student per N_t")
    sub.add_parser("report", parents=[common], help="render figures and summary tables")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("SVPR_THREADS")
    try:
        if threads is not None and not (threads.strip().isdigit() and int(threads) > 0):
            raise ConfigError(f"SVPR_THREADS must be a positive integer, got {threads!r}")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.config is None:
            raise ConfigError(f"{args.command} requires --config")
        synth, cfg, sweep = load_config(args.config, args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](args, synth, cfg, sweep)
    except ConfigError as e:
        log.error("%s", e)
        parser.print_usage(sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every other failure is a runtime error
        log.error("%s: %s", type(e).__name__, e)
        return 3
    print(json.dumps({"command": args.command, "status": "ok", **summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
