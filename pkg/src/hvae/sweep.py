"""Grids of training runs over (n, m) pairs, summarized one row per run.

A pair with ``m == 0`` trains the full-only model, any other pair the hybrid
model on the first ``n`` labeled and ``m`` unlabeled records of a shared
dataset, so every cell is scored on the same test set.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .data import SemiDataset
from .evaluation import per_sample_nll, task_loss
from .trainer import TrainConfig, eval_noise, train

SWEEP_COLUMNS = ("step", "n", "m", "mode", "seed", "E_task", "NLL", "NLL_median", "seconds")


@dataclass(frozen=True)
class CellResult:
    step: int
    n: int
    m: int
    mode: str
    seed: int
    E_task: float | None
    NLL: float
    NLL_median: float
    seconds: float | None = None


def parse_pairs(text: str) -> list:
    """``"200:0,200:2000"`` -> ``[(200, 0), (200, 2000)]``."""
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            n, m = (int(v) for v in item.split(":"))
        except ValueError:
            raise ValueError(f"bad pair {item!r}; expected n:m") from None
        if n < 1 or m < 0:
            raise ValueError(f"pair {item!r} needs n >= 1 and m >= 0")
        pairs.append((n, m))
    if not pairs:
        raise ValueError("no (n, m) pairs given")
    return pairs


def run_cell(ds: SemiDataset, n: int, m: int, cfg: TrainConfig, record_time: bool = False) -> CellResult:
    sub = ds.subset(n, m)
    cfg = replace(cfg, mode="hybrid" if m > 0 else "full")
    started = time.perf_counter()
    ck, rows = train(sub, cfg)
    test_d, test_h = sub.test()
    nll = per_sample_nll(ck.params, test_d, test_h, cfg.estimator, eval_noise(cfg))
    task = None
    if cfg.mode == "hybrid":
        task = task_loss(ck.params, test_d, test_h, cfg.task_metric or ("l2" if sub.depth_mode else "interocular"))
    return CellResult(
        step=ck.step,
        n=n,
        m=m if cfg.mode == "hybrid" else 0,
        mode=cfg.mode,
        seed=cfg.seed,
        E_task=task,
        NLL=float(np.mean(nll)),
        NLL_median=float(np.median(nll)),
        seconds=time.perf_counter() - started if record_time else None,
    )


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(ds: SemiDataset, pairs: list, cfg: TrainConfig, seeds=None, workers: int = 1,
              record_time: bool = False) -> list:
    """Train every (pair, seed) cell; results come back in grid order."""
    seeds = [cfg.seed] if seeds is None else list(seeds)
    jobs = [(ds, n, m, replace(cfg, seed=s), record_time) for s in seeds for n, m in pairs]
    if workers <= 1:
        return [run_cell(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell_args, jobs))


def _cell(column: str, value) -> str:
    if value is None:
        return ""
    if column == "seconds":
        return f"{value:.1f}"
    return repr(float(value)) if isinstance(value, float) else str(value)


def sweep_csv(results: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in results:
        row = asdict(r)
        writer.writerow([_cell(c, row[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()
