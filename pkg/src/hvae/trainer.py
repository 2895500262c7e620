"""Minibatch SGD with momentum for the full-only and hybrid objectives.

Every source of randomness is keyed by ``(seed, step, ...)``: minibatch
indices, estimator noise, evaluation noise.  A run is therefore fully described
by its dataset, config and the step it starts from, and a checkpoint needs only
parameters, velocities, the step counter and the seed to resume exactly.

HVCK layout (little endian)::

    b"HVCK" | u32 version | u32 d_dim | u32 h_dim | u32 z_dim | u32 flags
    u64 step | i64 seed | u32 block count
    per block: u32 name length | name (utf-8) | u32 rank | u64 extents[rank]
               | f64 values (row-major)

Parameter blocks are named ``param/<name>``, velocities ``velocity/<name>``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .data import BadMagicError, FormatError, SemiDataset, TruncatedFileError, UnsupportedVersionError
from .evaluation import task_loss, test_nll
from .networks import Dims, ModelParams, init_params
from .objectives import EstimatorConfig, NoiseSource, batch_bounds, hybrid_objective

log = logging.getLogger(__name__)

CK_MAGIC = b"HVCK"
CK_VERSION = 1
_CK_HEADER = struct.Struct("<4sIIIIIQqI")

LEDGER_COLUMNS = ("step", "mode", "n", "m", "train_loss", "test_nll", "task_loss", "seconds")

# first-level keys under the run seed
_KEY_ESTIMATOR = 0
_KEY_MINIBATCH = 1
_KEY_EVAL = 2


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, term: str, value: float):
        super().__init__(f"non-finite loss at step {step}: {term} term is {value}")
        self.step = step
        self.term = term


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 1
    mode: str = "hybrid"
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    seed: int = 0
    eval_every: int = 100
    z_dim: int = 8
    hidden: int = 256
    task_metric: str | None = None
    record_time: bool = False
    clip_norm: float | None = None

    def __post_init__(self):
        if self.mode not in ("full", "hybrid"):
            raise ValueError(f"mode must be 'full' or 'hybrid', got {self.mode!r}")
        if self.batch_size < 1 or self.eval_every < 1 or self.epochs < 0:
            raise ValueError("batch_size and eval_every must be positive, epochs non-negative")
        if isinstance(self.estimator, dict):
            object.__setattr__(self, "estimator", EstimatorConfig(**self.estimator))


@dataclass
class Checkpoint:
    dims: Dims
    params: ModelParams
    velocity: dict
    step: int = 0
    seed: int = 0
    version: int = CK_VERSION


def sgd_step(params, grads: dict, velocity: dict, lr: float, momentum: float) -> None:
    """Heavy-ball update in place: v <- momentum * v + g, theta <- theta - lr * v."""
    blocks = params.blocks if isinstance(params, ModelParams) else params
    for name, t in blocks.items():
        g, v = grads[name], velocity[name]
        if not (g.shape == v.shape == t.data.shape):
            raise ValueError(f"{name}: parameter {t.data.shape}, gradient {g.shape}, velocity {v.shape} disagree")
    for name, t in blocks.items():
        v = velocity[name]
        v *= momentum
        v += grads[name]
        t.data -= lr * v


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Rescale all gradients in place so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def steps_per_epoch(ds: SemiDataset, cfg: TrainConfig) -> int:
    return math.ceil(ds.n / cfg.batch_size)


def _task_metric(ds: SemiDataset, cfg: TrainConfig) -> str:
    if cfg.task_metric is not None:
        return cfg.task_metric
    return "l2" if ds.depth_mode else "interocular"


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _check_dataset(ds: SemiDataset, cfg: TrainConfig):
    if ds.n < 1:
        raise ValueError("training needs at least one labeled record")
    if cfg.mode == "hybrid" and ds.m < 1:
        raise ValueError("hybrid mode needs at least one unlabeled record")
    if ds.t < 1:
        raise ValueError("training needs a non-empty test set for the ledger")


def model_dims(ds: SemiDataset, cfg: TrainConfig) -> Dims:
    return Dims(ds.d_dim, ds.h_dim, cfg.z_dim, ds.depth_mode)


def initial_checkpoint(ds: SemiDataset, cfg: TrainConfig) -> Checkpoint:
    dims = model_dims(ds, cfg)
    params = init_params(dims, seed=cfg.seed, hidden=cfg.hidden)
    velocity = {name: np.zeros_like(t.data) for name, t in params}
    return Checkpoint(dims, params, velocity, 0, cfg.seed)


def eval_noise(cfg: TrainConfig) -> NoiseSource:
    """Noise used for every test-set evaluation of a run."""
    return NoiseSource(cfg.seed).child(_KEY_EVAL)


def evaluate(params: ModelParams, ds: SemiDataset, cfg: TrainConfig) -> tuple:
    """(test NLL, task loss or None) with evaluation noise fixed per seed."""
    noise = eval_noise(cfg)
    test_d, test_h = ds.test()
    nll = test_nll(params, test_d, test_h, cfg.estimator, noise)
    task = task_loss(params, test_d, test_h, _task_metric(ds, cfg)) if cfg.mode == "hybrid" else None
    return nll, task


def _check_blocks(ck: Checkpoint, reference: ModelParams):
    want = {name: t.shape for name, t in reference}
    have = {name: t.shape for name, t in ck.params}
    if want != have:
        diff = sorted(set(want.items()) ^ set(have.items()))
        raise ValueError(f"checkpoint blocks do not match the configured model: {diff[:4]}")


def train(ds: SemiDataset, cfg: TrainConfig, resume: Checkpoint | None = None, stop_at: int | None = None,
          ledger: list | None = None) -> tuple:
    """Run training; returns ``(checkpoint, ledger rows)``.

    The step budget is ``epochs * ceil(n / batch_size)``.  ``stop_at`` halts
    early at that absolute step (the returned checkpoint resumes from there).
    Ledger rows are emitted at step 0 of a fresh run, every ``eval_every``
    steps and at the final step of the budget, so an interrupted run plus its
    resumption produces the same rows as an uninterrupted one.
    """
    _check_dataset(ds, cfg)
    if resume is None:
        ck = initial_checkpoint(ds, cfg)
    else:
        expected = model_dims(ds, cfg)
        if resume.dims != expected:
            raise ValueError(f"checkpoint dims {resume.dims} do not match dataset/config dims {expected}")
        if resume.seed != cfg.seed:
            raise ValueError(f"checkpoint seed {resume.seed} differs from config seed {cfg.seed}")
        _check_blocks(resume, init_params(expected, hidden=cfg.hidden))
        ck = resume
    rows = [] if ledger is None else ledger
    params, velocity = ck.params, ck.velocity
    total = cfg.epochs * steps_per_epoch(ds, cfg)
    end = total if stop_at is None else min(total, stop_at)
    hybrid = cfg.mode == "hybrid"
    m_col = ds.m if hybrid else 0
    noise = NoiseSource(cfg.seed).child(_KEY_ESTIMATOR)
    started = time.perf_counter()

    def emit(step, loss):
        nll, task = evaluate(params, ds, cfg)
        seconds = time.perf_counter() - started if cfg.record_time else None
        rows.append(
            {
                "step": str(step),
                "mode": cfg.mode,
                "n": str(ds.n),
                "m": str(m_col),
                "train_loss": _fmt(loss),
                "test_nll": _fmt(nll),
                "task_loss": _fmt(task),
                "seconds": "" if seconds is None else f"{seconds:.3f}",
            }
        )
        log.info("step %d train_loss %s test_nll %.4f", step, _fmt(loss), nll)

    if ck.step == 0:
        emit(0, None)
    step = ck.step
    while step < end:
        pick = np.random.default_rng([cfg.seed, _KEY_MINIBATCH, step])
        li = pick.integers(0, ds.n, size=cfg.batch_size)
        ui = pick.integers(0, ds.m, size=cfg.batch_size) if hybrid else None
        lf, lp = batch_bounds(
            params,
            ds.labeled(li),
            ds.unlabeled(ui) if hybrid else None,
            cfg.estimator,
            noise.child(step),
            cfg.mode,
        )
        for term, values in (("L_F", lf), ("L_P", lp)):
            if values is not None and not np.all(np.isfinite(values.data)):
                bad = values.data[~np.isfinite(values.data)][0]
                raise TrainingDiverged(step, term, float(bad))
        loss = hybrid_objective(lf, lp)
        params.zero_grad()
        loss.backward()
        grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in params}
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(step, f"gradient of {name}", float("nan"))
        if cfg.clip_norm is not None:
            clip_gradients(grads, cfg.clip_norm)
        sgd_step(params, grads, velocity, cfg.learning_rate, cfg.momentum)
        step += 1
        ck.step = step
        if step % cfg.eval_every == 0 or step == total:
            emit(step, loss.item())
    return ck, rows


def ledger_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LEDGER_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def write_ledger(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(ledger_csv(rows))


def read_ledger(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# HVCK


def _block_bytes(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack(f"<I{len(raw)}sI{arr.ndim}Q", len(raw), raw, arr.ndim, *arr.shape)
    return head + arr.tobytes()


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    blocks = [(f"param/{name}", t.data) for name, t in ck.params]
    blocks += [(f"velocity/{name}", v) for name, v in ck.velocity.items()]
    d = ck.dims
    head = _CK_HEADER.pack(
        CK_MAGIC, CK_VERSION, d.d_dim, d.h_dim, d.z_dim, int(d.depth_mode), ck.step, ck.seed, len(blocks)
    )
    return head + b"".join(_block_bytes(n, a) for n, a in blocks)


def save_checkpoint(ck: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ck))


def parse_checkpoint(buf: bytes, expected_dims: Dims | None = None) -> Checkpoint:
    if buf[:4] != CK_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {CK_MAGIC!r}")
    if len(buf) < _CK_HEADER.size:
        raise TruncatedFileError("checkpoint header truncated")
    _, version, dd, hd, zd, flags, step, seed, count = _CK_HEADER.unpack_from(buf)
    if version != CK_VERSION:
        raise UnsupportedVersionError(f"HVCK version {version} is not supported (reader is version {CK_VERSION})")
    dims = Dims(dd, hd, zd, bool(flags & 1))
    if expected_dims is not None and dims != expected_dims:
        raise ValueError(f"checkpoint dims {dims} do not match expected {expected_dims}")
    offset = _CK_HEADER.size
    params, velocity = {}, {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            name = buf[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}Q", buf, offset)
            offset += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if offset + 8 * size > len(buf):
                raise TruncatedFileError(f"block {name!r} truncated")
            arr = np.frombuffer(buf, dtype="<f8", count=size, offset=offset).astype(np.float64).reshape(shape)
            offset += 8 * size
            kind, _, key = name.partition("/")
            if kind == "param":
                params[key] = arr
            elif kind == "velocity":
                velocity[key] = arr
            else:
                raise FormatError(f"unknown block kind in {name!r}")
    except struct.error as exc:
        raise TruncatedFileError(f"checkpoint truncated: {exc}") from None
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes after last block")
    if set(params) != set(velocity):
        raise FormatError("parameter and velocity block names differ")
    for key in params:
        if params[key].shape != velocity[key].shape:
            raise FormatError(f"{key}: parameter {params[key].shape} vs velocity {velocity[key].shape}")
    model = ModelParams(dims, {k: Tensor(v, requires_grad=True) for k, v in params.items()})
    return Checkpoint(dims, model, velocity, step, seed, version)


def load_checkpoint(path, expected_dims: Dims | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read(), expected_dims)
