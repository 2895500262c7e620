"""Independent checks: grid quadrature of log-likelihoods and finite differences.

The quadrature routines integrate the model density numerically on a
tensor-product grid (trapezoidal rule, log-sum-exp with max shift).  They only
read decoder outputs, never the variational networks, so they are independent
of the bound estimators they are used to check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .depth import MaskedImage, masked_log_likelihood, observation_map_from_trunk
from .gaussian import log_pdf, standard_normal_log_pdf
from .networks import ModelParams, decode_heads, decode_trunk

# log-integrand on the domain boundary must sit this far below the peak;
# 32 nats is the density ratio of a Gaussian at 8 standard deviations
COVERAGE_NATS = 32.0


class CoverageError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    """Integration box ``bounds`` (one ``(lo, hi)`` per axis) and grid ``step``.

    ``step`` is either a single spacing or one per axis.
    """

    bounds: tuple
    step: object = 0.01

    def steps(self) -> tuple:
        if np.ndim(self.step) == 0:
            return (float(self.step),) * len(self.bounds)
        return tuple(float(s) for s in self.step)

    def halved(self) -> "QuadratureSpec":
        return QuadratureSpec(self.bounds, tuple(s / 2 for s in self.steps()))

    def axes(self) -> list:
        """Grid nodes and trapezoid log-weights per axis."""
        out = []
        for (lo, hi), step in zip(self.bounds, self.steps()):
            if not hi > lo or step <= 0:
                raise ValueError(f"bad quadrature axis [{lo}, {hi}] with step {step}")
            count = int(np.ceil((hi - lo) / step - 1e-9)) + 1
            nodes = np.linspace(lo, hi, count)
            w = np.full(count, (hi - lo) / (count - 1))
            w[[0, -1]] *= 0.5
            out.append((nodes, np.log(w)))
        return out


def _logsumexp(a: np.ndarray) -> float:
    peak = float(np.max(a))
    return peak + float(np.log(np.sum(np.exp(a - peak))))


def _check_coverage(logf: np.ndarray):
    edge = -np.inf
    for axis in range(logf.ndim):
        edge = max(edge, float(np.take(logf, 0, axis=axis).max()), float(np.take(logf, -1, axis=axis).max()))
    _check_gap(float(np.max(logf)), edge)


def _check_gap(peak: float, edge: float):
    if edge > peak - COVERAGE_NATS:
        raise CoverageError(
            f"integrand at the boundary is only {peak - edge:.2f} nats below its peak "
            f"(need {COVERAGE_NATS}); widen the bounds"
        )


def _grid(nodes: list) -> np.ndarray:
    mesh = np.meshgrid(*nodes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def _decoder_on_grid(p: ModelParams, d, z_grid: np.ndarray):
    """log p(d|z) per grid row plus the label head's mean/std arrays."""
    frozen = p.frozen()
    trunk = decode_trunk(frozen, z_grid)
    gd, gh = decode_heads(frozen, trunk)
    rows = len(z_grid)
    if isinstance(d, MaskedImage):
        tiled = MaskedImage(np.tile(d.values, (rows, 1)), np.tile(d.observed, (rows, 1)))
        ll_d = masked_log_likelihood(tiled, gd, observation_map_from_trunk(frozen, trunk)).data
    else:
        ll_d = log_pdf(gd, np.tile(np.asarray(d, dtype=np.float64), (rows, 1))).data
    return ll_d, gh.mean.data, gh.std.data


def _normal_logpdf(x, mu, sd):
    return -0.5 * np.log(2.0 * np.pi) - np.log(sd) - 0.5 * ((x - mu) / sd) ** 2


def _check_z_dim(p: ModelParams, spec: QuadratureSpec, extra: int):
    if p.dims.z_dim > 2:
        raise ValueError(f"quadrature supports z_dim <= 2, model has {p.dims.z_dim}")
    if len(spec.bounds) != p.dims.z_dim + extra:
        raise ValueError(f"spec has {len(spec.bounds)} axes, expected {p.dims.z_dim + extra}")


def quadrature_log_joint(p: ModelParams, d, h, spec: QuadratureSpec) -> float:
    """log of the integral over z of p(d, h | z) p(z)."""
    _check_z_dim(p, spec, 0)
    axes = spec.axes()
    z = _grid([a[0] for a in axes])
    logw = sum(np.meshgrid(*[a[1] for a in axes], indexing="ij")).reshape(-1)
    ll_d, mu_h, sd_h = _decoder_on_grid(p, d, z)
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    ll_h = _normal_logpdf(h[None, :], mu_h, sd_h).sum(axis=1)
    logf = ll_d + ll_h + standard_normal_log_pdf(z)
    _check_coverage(logf.reshape([len(a[0]) for a in axes]))
    return _logsumexp(logf + logw)


def quadrature_log_marginal(p: ModelParams, d, spec: QuadratureSpec, chunk: int = 256) -> float:
    """log of the double integral over (z, h) of p(d, h | z) p(z).

    The first ``z_dim`` axes of ``spec`` are latent, the remaining ``h_dim``
    are label axes.  The z grid is processed ``chunk`` rows at a time so the
    (z, h) table never has to be held in memory at once.
    """
    if p.dims.h_dim > 2:
        raise ValueError(f"quadrature supports h_dim <= 2, model has {p.dims.h_dim}")
    _check_z_dim(p, spec, p.dims.h_dim)
    axes = spec.axes()
    zd = p.dims.z_dim
    z_shape = [len(a[0]) for a in axes[:zd]]
    h_shape = [len(a[0]) for a in axes[zd:]]
    z = _grid([a[0] for a in axes[:zd]])
    h = _grid([a[0] for a in axes[zd:]])
    logw_z = sum(np.meshgrid(*[a[1] for a in axes[:zd]], indexing="ij")).reshape(-1)
    logw_h = sum(np.meshgrid(*[a[1] for a in axes[zd:]], indexing="ij")).reshape(-1)
    z_edge = _edge_rows(z_shape)
    h_edge = _edge_rows(h_shape)

    peak, edge, acc = -np.inf, -np.inf, []
    for start in range(0, len(z), chunk):
        rows = slice(start, min(len(z), start + chunk))
        ll_d, mu_h, sd_h = _decoder_on_grid(p, d, z[rows])
        # (z rows, h rows): label density evaluated on the label grid for every z
        ll_h = _normal_logpdf(h[None, :, :], mu_h[:, None, :], sd_h[:, None, :]).sum(axis=2)
        logf = (ll_d + standard_normal_log_pdf(z[rows]))[:, None] + ll_h
        peak = max(peak, float(logf.max()))
        edge = max(edge, float(logf[:, h_edge].max()))
        on_z_edge = z_edge[rows]
        if on_z_edge.any():
            edge = max(edge, float(logf[on_z_edge].max()))
        acc.append(_logsumexp(logf + logw_z[rows, None] + logw_h[None, :]))
    _check_gap(peak, edge)
    return _logsumexp(np.array(acc))


def _edge_rows(shape: list) -> np.ndarray:
    """Boolean mask over the flattened grid marking nodes on the boundary."""
    mask = np.zeros(shape, dtype=bool)
    for axis in range(len(shape)):
        idx = [slice(None)] * len(shape)
        idx[axis] = [0, -1]
        mask[tuple(idx)] = True
    return mask.reshape(-1)


def auto_spec(p: ModelParams, d=None, marginal: bool = False, z_half_width: float = 10.0, z_step: float = 0.01,
              h_points_per_std: float = 2.0) -> QuadratureSpec:
    """Bounds covering the prior on z and, for marginals, the label head's mass."""
    z_bounds = [(-z_half_width, z_half_width)] * p.dims.z_dim
    if not marginal:
        return QuadratureSpec(tuple(z_bounds), z_step)
    axes = QuadratureSpec(tuple(z_bounds), z_step).axes()
    z = _grid([a[0] for a in axes])
    gd, gh = decode_heads(p.frozen(), decode_trunk(p.frozen(), z))
    mu, sd = gh.mean.data, gh.std.data
    lo = (mu - 9.0 * sd).min(axis=0)
    hi = (mu + 9.0 * sd).max(axis=0)
    h_step = float(sd.min()) / h_points_per_std
    steps = (z_step,) * p.dims.z_dim + (h_step,) * p.dims.h_dim
    h_bounds = tuple((float(a), float(b)) for a, b in zip(lo, hi))
    return QuadratureSpec(tuple(z_bounds) + h_bounds, steps)


def refined(fn, spec: QuadratureSpec, tol: float = 1e-6, max_halvings: int = 4) -> tuple:
    """Halve the step until two successive results differ by less than ``tol``.

    Returns ``(value, spec used, last change)``.
    """
    prev = fn(spec)
    for _ in range(max_halvings):
        spec = spec.halved()
        cur = fn(spec)
        change = abs(cur - prev)
        if change < tol:
            return cur, spec, change
        prev = cur
    raise ValueError(f"quadrature did not converge to {tol} after {max_halvings} halvings (last change {change})")


def log_likelihood(p: ModelParams, d, h=None, tol: float = 1e-6, max_half_width: float = 80.0) -> float:
    """Converged quadrature log p(d, h), or log p(d) when ``h`` is None.

    The latent box starts at +-10 and doubles whenever the coverage check
    fails.
    """
    width = 10.0
    while True:
        try:
            if h is None:
                spec = auto_spec(p, d, marginal=True, z_half_width=width)
                return refined(lambda s: quadrature_log_marginal(p, d, s), spec, tol)[0]
            spec = auto_spec(p, z_half_width=width)
            return refined(lambda s: quadrature_log_joint(p, d, h, s), spec, tol)[0]
        except CoverageError:
            if width * 2 > max_half_width:
                raise
            width *= 2


@dataclass(frozen=True)
class BoundCheck:
    """Monte Carlo bound estimate against the quadrature log-likelihood."""

    quadrature: float
    estimate: float
    std_error: float
    sigmas: float = 3.0

    @property
    def passed(self) -> bool:
        return self.estimate <= self.quadrature + self.sigmas * self.std_error

    @property
    def gap(self) -> float:
        return self.quadrature - self.estimate


def bound_check(p: ModelParams, d, h=None, estimates: int = 1000, cfg=None, noise=None, tol: float = 1e-6) -> BoundCheck:
    """Mean of ``estimates`` independent bound values vs the quadrature answer.

    With ``h`` the full bound is checked against log p(d, h), without it the
    partial bound against log p(d).
    """
    from .objectives import EstimatorConfig, NoiseSource, elbo_full, elbo_partial

    cfg = EstimatorConfig() if cfg is None else cfg
    noise = NoiseSource(0) if noise is None else noise
    frozen = p.frozen()
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    d_rows = np.tile(d, (estimates, 1))
    if h is None:
        quad = log_likelihood(p, d, None, tol)
        values = elbo_partial(frozen, d_rows, cfg, noise).data
    else:
        h = np.atleast_1d(np.asarray(h, dtype=np.float64))
        quad = log_likelihood(p, d, h, tol)
        values = elbo_full(frozen, d_rows, np.tile(h, (estimates, 1)), cfg, noise).data
    se = float(values.std(ddof=1) / np.sqrt(estimates))
    return BoundCheck(quad, float(values.mean()), se)


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class GradCheckReport:
    rel_tol: float
    errors: dict = field(default_factory=dict)

    @property
    def failures(self) -> list:
        return [name for name, err in self.errors.items() if not err < self.rel_tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"{name:<24s} {err:.3e}{'  FAIL' if not err < self.rel_tol else ''}" for name, err in self.errors.items()]
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| over the block, scaled by the block's largest gradient.

    Blocks whose gradients are all below ``floor`` are compared absolutely.
    """
    diff = float(np.max(np.abs(analytic - numeric), initial=0.0))
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    return diff / scale if scale > floor else diff


def numeric_gradient(tensor, loss_thunk, step: float = 1e-5) -> np.ndarray:
    data = tensor.data
    flat = data.reshape(-1)
    grad = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_thunk().item()
        flat[i] = orig - step
        down = loss_thunk().item()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return grad.reshape(data.shape)


def grad_check(blocks, loss_thunk, rel_tol: float = 1e-4, step: float = 1e-5, analytic: dict | None = None) -> GradCheckReport:
    """Compare backprop gradients with central differences, block by block.

    ``blocks`` is a :class:`ModelParams` or a name -> Tensor mapping;
    ``loss_thunk`` must rebuild the scalar loss from the current block data
    with all randomness frozen.  ``analytic`` overrides the backprop
    gradients (used to test the checker itself).
    """
    if isinstance(blocks, ModelParams):
        blocks = blocks.blocks
    if analytic is None:
        for t in blocks.values():
            t.grad = None
        loss_thunk().backward()
        analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in blocks.items()}
    report = GradCheckReport(rel_tol)
    for name, t in blocks.items():
        report.errors[name] = relative_error(analytic[name], numeric_gradient(t, loss_thunk, step))
    return report


def tiny_specs(dims, width: int = 8) -> dict:
    """Layer widths of the small test models; every hidden layer has ``width`` units."""
    from .networks import default_specs

    return default_specs(dims, hidden=width)


def random_tiny_params(seed: int, dims=None, width: int = 8, scale: float = 0.3) -> ModelParams:
    """Small model with every block, biases included, drawn from N(0, scale^2)."""
    from .networks import Dims, init_params

    dims = Dims(1, 1, 1) if dims is None else dims
    p = init_params(dims, tiny_specs(dims, width), seed=seed)
    rng = np.random.default_rng([seed, 1])
    for t in p.blocks.values():
        t.data[...] = scale * rng.standard_normal(t.data.shape)
    return p


def linear_gaussian_params() -> ModelParams:
    """Scalar model with p(d|z) = N(z, 1), p(h|z) = N(z, 1).

    The identity on z is realized through the ReLU trunk as relu(z) - relu(-z).
    Encoder and predictor are zero maps (standard Normal outputs).
    """
    from .autodiff import Tensor
    from .networks import Dims, MlpSpec, init_params

    dims = Dims(1, 1, 1)
    specs = {
        "encoder.d": MlpSpec((1, 2)),
        "encoder.h": MlpSpec((1, 2, 2, 2)),
        "encoder.joint": MlpSpec((4, 2, 2)),
        "decoder.trunk": MlpSpec((1, 2, 2)),
        "decoder.d": MlpSpec((2, 2)),
        "decoder.h": MlpSpec((2, 2)),
        "predictor": MlpSpec((1, 2, 2)),
    }
    p = init_params(dims, specs, seed=0)
    for t in p.blocks.values():
        t.data[...] = 0.0
    fixed = {
        "decoder.trunk.0.W": [[1.0, -1.0]],
        "decoder.trunk.1.W": [[1.0, 0.0], [0.0, 1.0]],
        "decoder.d.0.W": [[1.0, 0.0], [-1.0, 0.0]],
        "decoder.h.0.W": [[1.0, 0.0], [-1.0, 0.0]],
    }
    for name, value in fixed.items():
        p.blocks[name] = Tensor(np.array(value), requires_grad=True)
    return p
