"""Command line entry point: ``hvae <subcommand> [flags]``.

Subcommands: gen-data, train, eval, sample, interpolate, verify, sweep.
Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .data import FormatError, SemiDataset, load_dataset, make_dataset, save_dataset
from .evaluation import interpolate, sample_joint, write_pgm
from .objectives import NoiseSource
from .sweep import parse_pairs, run_sweep, sweep_csv
from .trainer import (LEDGER_COLUMNS, TrainingDiverged, evaluate, load_checkpoint, model_dims, read_ledger,
                      save_checkpoint, train, write_ledger)

log = logging.getLogger("hvae")

DATASET_FILE = "dataset.hvds"
CHECKPOINT_FILE = "checkpoint.hvck"
LEDGER_FILE = "ledger.csv"
EVAL_FILE = "eval.csv"


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=args.seed, mode=getattr(args, "mode", None), out=args.out)


def _dataset(cfg: ExperimentConfig, path: str | None) -> SemiDataset:
    if path:
        return load_dataset(path)
    s = cfg.split
    return make_dataset(cfg.scene, s.n, s.m, s.t, s.seed)


def _out_dir(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def cmd_gen_data(args) -> int:
    cfg = _experiment(args)
    ds = _dataset(cfg, None)
    path = os.path.join(_out_dir(cfg), DATASET_FILE)
    save_dataset(ds, path)
    print(f"wrote {path} (n={ds.n}, m={ds.m}, t={ds.t})")
    return 0


def cmd_train(args) -> int:
    cfg = _experiment(args)
    ds = _dataset(cfg, args.data)
    out = _out_dir(cfg)
    resume, history = None, None
    if args.resume:
        resume = load_checkpoint(args.resume, model_dims(ds, cfg.train))
        # carry over the earlier run's ledger when it sits next to the checkpoint
        prior = os.path.join(os.path.dirname(args.resume) or ".", LEDGER_FILE)
        if os.path.exists(prior):
            history = [r for r in read_ledger(prior) if int(r["step"]) <= resume.step]
    ck, rows = train(ds, cfg.train, resume=resume, ledger=history)
    save_checkpoint(ck, os.path.join(out, CHECKPOINT_FILE))
    write_ledger(rows, os.path.join(out, LEDGER_FILE))
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(dump_config(cfg))
    if resume is not None and ck.step == resume.step:
        print(f"step {ck.step}: nothing to do, the step budget is already spent")
        return 0
    last = rows[-1]
    print(f"step {last['step']}: test_nll {float(last['test_nll']):.4f}"
          + (f", task_loss {float(last['task_loss']):.4f}" if last["task_loss"] else ""))
    return 0


def cmd_eval(args) -> int:
    cfg = _experiment(args)
    ds = _dataset(cfg, args.data)
    out = _out_dir(cfg)
    ck_path = args.checkpoint or os.path.join(out, CHECKPOINT_FILE)
    ck = load_checkpoint(ck_path, model_dims(ds, cfg.train))
    nll, task = evaluate(ck.params, ds, cfg.train)
    row = {
        "step": str(ck.step),
        "mode": cfg.train.mode,
        "n": str(ds.n),
        "m": str(ds.m if cfg.train.mode == "hybrid" else 0),
        "train_loss": "",
        "test_nll": repr(float(nll)),
        "task_loss": "" if task is None else repr(float(task)),
        "seconds": "",
    }
    path = os.path.join(out, EVAL_FILE)
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LEDGER_COLUMNS, lineterminator="\n")
        if new:
            writer.writeheader()
        writer.writerow(row)
    print(",".join(row[c] for c in LEDGER_COLUMNS))
    return 0


def _export(ds_like: tuple, cfg: ExperimentConfig, stem: str) -> None:
    images, labels = ds_like
    out = _out_dir(cfg)
    scene = replace(cfg.scene, depth_mode=False)
    empty_d = np.zeros((0, scene.d_dim))
    grid = SemiDataset(empty_d, np.zeros((0, scene.h_dim)), empty_d, images, labels, scene)
    save_dataset(grid, os.path.join(out, stem + ".hvds"))
    write_pgm(os.path.join(out, stem + ".pgm"), images, scene.image_side)
    print(f"wrote {os.path.join(out, stem)}.hvds and .pgm ({len(images)} images)")


def _trained_params(cfg: ExperimentConfig, args):
    out = cfg.output_dir
    path = args.checkpoint or os.path.join(out, CHECKPOINT_FILE)
    dims = model_dims(_dataset(cfg, args.data), cfg.train) if args.data else None
    return load_checkpoint(path, dims).params


def cmd_sample(args) -> int:
    cfg = _experiment(args)
    params = _trained_params(cfg, args)
    images, labels = sample_joint(params, args.count, NoiseSource(cfg.train.seed).child(3), sample=args.draw)
    _export((images, labels), cfg, "samples")
    return 0


def cmd_interpolate(args) -> int:
    cfg = _experiment(args)
    params = _trained_params(cfg, args)
    ds = _dataset(cfg, args.data)
    test_d, test_h = ds.test()
    for i in (args.src, args.dst):
        if not 0 <= i < ds.t:
            raise ValueError(f"test index {i} out of range (test set has {ds.t} records)")

    def record(i):
        d = test_d.rows(i) if ds.depth_mode else test_d[i]
        return d, test_h[i]

    images, labels, _ = interpolate(params, record(args.src), record(args.dst), args.steps)
    _export((images, labels), cfg, "interpolation")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(draws=args.draws)
    return 0 if all(r.passed for r in results) else 1


def cmd_sweep(args) -> int:
    cfg = _experiment(args)
    pairs = parse_pairs(args.pairs)
    n_max = max(n for n, _ in pairs)
    m_max = max(m for _, m in pairs)
    if args.data:
        ds = load_dataset(args.data)
    else:
        s = cfg.split
        ds = make_dataset(cfg.scene, n_max, m_max, s.t, s.seed)
    seeds = [int(v) for v in args.seeds.split(",")] if args.seeds else None
    results = run_sweep(ds, pairs, cfg.train, seeds, workers=args.workers)
    path = os.path.join(_out_dir(cfg), "sweep.csv")
    text = sweep_csv(results)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hvae", description="Hybrid VAE experiments on synthetic landmark images.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def common(p, mode=False, data=False, checkpoint=False):
        p.add_argument("--config", metavar="PATH", help="experiment JSON (defaults used when omitted)")
        p.add_argument("--seed", type=int, metavar="N", help="override the training seed")
        p.add_argument("--out", metavar="DIR", help="override output_dir")
        if mode:
            p.add_argument("--mode", choices=("full", "hybrid"), help="override the training mode")
        if data:
            p.add_argument("--data", metavar="PATH", help="HVDS dataset instead of generating one")
        if checkpoint:
            p.add_argument("--checkpoint", metavar="PATH", help="HVCK file (default: OUT/checkpoint.hvck)")

    p = sub.add_parser("gen-data", help="generate and write an HVDS dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model, write checkpoint and ledger")
    common(p, mode=True, data=True)
    p.add_argument("--resume", metavar="PATH", help="continue from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="append a metrics row for a checkpoint")
    common(p, mode=True, data=True, checkpoint=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="decode samples from the prior")
    common(p, data=True, checkpoint=True)
    p.add_argument("--count", type=int, default=16, help="number of samples (default 16)")
    p.add_argument("--draw", action="store_true", help="sample the decoder instead of emitting its means")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("interpolate", help="walk the latent segment between two test records")
    common(p, data=True, checkpoint=True)
    p.add_argument("--src", type=int, default=0, help="test index of the first endpoint")
    p.add_argument("--dst", type=int, default=1, help="test index of the second endpoint")
    p.add_argument("--steps", type=int, default=8, help="points on the segment, endpoints included")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("verify", help="run the built-in correctness checks")
    p.add_argument("--draws", type=int, default=20, help="random models per bound check (default 20)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="train a grid of (n, m) cells and tabulate the results")
    common(p, data=True)
    p.add_argument("--pairs", required=True, metavar="N:M,...", help='e.g. "200:0,200:2000,2000:0"')
    p.add_argument("--seeds", metavar="S1,S2", help="comma separated training seeds (default: config seed)")
    p.add_argument("--workers", type=int, default=1, help="cells trained in parallel (default 1)")
    p.set_defaults(func=cmd_sweep)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, TrainingDiverged, ValueError, OSError, RuntimeError) as exc:
        print(f"hvae {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
