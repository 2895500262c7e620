"""Self-contained correctness checks on small models; no data files needed.

Each check returns a :class:`CheckResult`.  ``run_checks`` runs them all and
the command line ``verify`` exits nonzero if any fails.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import SceneConfig, make_dataset
from .depth import MaskedImage, ObservationMap, masked_log_likelihood
from .gaussian import DiagGaussian, entropy, kl_to_standard_normal, log_pdf
from .networks import Dims
from .objectives import NoiseSource, hybrid_loss, summed_loss
from .oracles import bound_check, grad_check, linear_gaussian_params, log_likelihood, random_tiny_params
from .trainer import TrainConfig, checkpoint_bytes, ledger_csv, parse_checkpoint, train


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28s} {self.detail}"


def _trapezoid(y: np.ndarray, dx: float) -> float:
    return float((y.sum() - 0.5 * (y[0] + y[-1])) * dx)


def check_closed_forms() -> CheckResult:
    g1 = DiagGaussian(np.zeros(1), np.zeros(1))
    got = {
        "log_pdf": log_pdf(g1, [0.0]).item(),
        "kl": kl_to_standard_normal(DiagGaussian(np.zeros(1), np.log([2.0]))).item(),
        "entropy": entropy(DiagGaussian(np.zeros(2), np.log([1.0, 2.0]))).item(),
    }
    # quadrature / sampling references computed here, independent of the closed forms
    x = np.linspace(-40.0, 40.0, 80001)
    logq = -0.5 * np.log(2 * np.pi) - np.log(2.0) - x**2 / 8.0
    logp = -0.5 * np.log(2 * np.pi) - x**2 / 2.0
    kl_ref = _trapezoid(np.exp(logq) * (logq - logp), x[1] - x[0])
    rng = np.random.default_rng(0)
    s = rng.standard_normal((200_000, 2)) * [1.0, 2.0]
    neg = np.log(2 * np.pi) + np.log(2.0) + 0.5 * (s[:, 0] ** 2 + s[:, 1] ** 2 / 4.0)
    se = neg.std() / math.sqrt(len(neg))
    ok = (
        abs(got["log_pdf"] + 0.5 * math.log(2 * math.pi)) < 1e-12
        and abs(got["kl"] - kl_ref) < 1e-6
        and abs(got["entropy"] - neg.mean()) < 4 * se
    )
    return CheckResult("closed forms", ok, f"kl={got['kl']:.6f} (quadrature {kl_ref:.6f}), entropy={got['entropy']:.5f}")


def check_linear_gaussian() -> CheckResult:
    p = linear_gaussian_params()
    joint = log_likelihood(p, [0.0], [0.0])
    marg = log_likelihood(p, [0.0])
    ej = -math.log(2 * math.pi) - 0.5 * math.log(3.0)
    em = -0.5 * math.log(4 * math.pi)
    ok = abs(joint - ej) < 1e-4 and abs(marg - em) < 1e-4
    return CheckResult("linear-Gaussian quadrature", ok, f"joint {joint:.6f} vs {ej:.6f}, marginal {marg:.6f} vs {em:.6f}")


def check_bounds(draws: int, partial: bool) -> CheckResult:
    failures, worst = 0, math.inf
    for seed in range(draws):
        p = random_tiny_params(seed)
        rng = np.random.default_rng([seed, 2])
        d, h = rng.normal(size=1), rng.normal(size=1)
        r = bound_check(p, d, None if partial else h, estimates=1000, noise=NoiseSource(seed))
        failures += not r.passed
        worst = min(worst, r.gap / r.std_error)
    name = "partial bound <= log p(d)" if partial else "full bound <= log p(d,h)"
    return CheckResult(name, failures == 0, f"{draws - failures}/{draws} draws, min gap {worst:.2f} SE")


def check_gradients() -> CheckResult:
    p = random_tiny_params(0, Dims(16, 4, 2), width=8)
    rng = np.random.default_rng(0)
    lab = (rng.normal(size=(2, 16)), rng.random((2, 4)))
    unl = rng.normal(size=(2, 16))
    report = grad_check(p, lambda: hybrid_loss(p, lab, unl, noise=NoiseSource(1)), rel_tol=1e-4)
    return CheckResult("hybrid loss gradients", report.passed, f"max relative error {report.max_error:.2e} over {len(report.errors)} blocks")


def check_depth_normalization(pixels: int = 200) -> CheckResult:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(pixels):
        b, mu, ls = rng.uniform(0, 1), rng.normal(), rng.uniform(-2, 1)
        sd = math.exp(ls)
        x = np.linspace(mu - 8 * sd, mu + 8 * sd, 4001)
        dens = DiagGaussian(np.full((len(x), 1), mu), np.full((len(x), 1), ls))
        seen = np.exp(masked_log_likelihood(MaskedImage(x[:, None], np.ones((len(x), 1), bool)), dens,
                                            ObservationMap(np.full((len(x), 1), b))).data)
        unseen = math.exp(masked_log_likelihood(MaskedImage([0.0], [False]), DiagGaussian([mu], [ls]),
                                                ObservationMap([b])).item())
        total = _trapezoid(seen, x[1] - x[0]) + unseen
        worst = max(worst, abs(total - 1.0))
    return CheckResult("depth pixel normalization", worst < 1e-6, f"max |mass - 1| = {worst:.1e} over {pixels} pixels")


def check_sum_vs_mean() -> CheckResult:
    p = random_tiny_params(3, Dims(4, 2, 2))
    rng = np.random.default_rng(3)
    b = 8
    lab = (rng.normal(size=(b, 4)), rng.normal(size=(b, 2)))
    unl = rng.normal(size=(b, 4))
    mean = hybrid_loss(p, lab, unl, noise=NoiseSource(0)).item()
    total = summed_loss(p, lab, unl, noise=NoiseSource(0)).item()
    rel = abs(total - b * mean) / abs(total)
    return CheckResult("summed = batch x hybrid", rel < 1e-12, f"relative difference {rel:.1e}")


def check_determinism() -> CheckResult:
    ds = make_dataset(SceneConfig(image_side=4, num_landmarks=2), 16, 16, 8)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=2, hidden=8, z_dim=2, eval_every=3)
    ck_a, rows_a = train(ds, cfg)
    _, rows_b = train(ds, cfg)
    half, rows_c = train(ds, cfg, stop_at=3)
    resumed, rows_c = train(ds, cfg, resume=parse_checkpoint(checkpoint_bytes(half)), ledger=rows_c)
    same = ledger_csv(rows_a) == ledger_csv(rows_b)
    resumed_ok = ledger_csv(rows_a) == ledger_csv(rows_c) and checkpoint_bytes(ck_a) == checkpoint_bytes(resumed)
    return CheckResult("determinism and resume", same and resumed_ok, f"repeat identical: {same}, resume identical: {resumed_ok}")


def run_checks(draws: int = 20, report=print) -> list:
    checks = [
        check_closed_forms,
        check_linear_gaussian,
        lambda: check_bounds(draws, partial=False),
        lambda: check_bounds(draws, partial=True),
        check_gradients,
        check_depth_normalization,
        check_sum_vs_mean,
        check_determinism,
    ]
    results = []
    for fn in checks:
        started = time.perf_counter()
        try:
            r = fn()
        except Exception as exc:  # a crashing check is a failed check
            r = CheckResult(getattr(fn, "__name__", "check"), False, f"raised {type(exc).__name__}: {exc}")
        r = replace(r, seconds=time.perf_counter() - started)
        results.append(r)
        if report is not None:
            report(r.line())
    if report is not None:
        report(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return results
