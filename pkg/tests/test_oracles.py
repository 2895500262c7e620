import math

import numpy as np
import pytest

from hvae import autodiff as ad
from hvae.autodiff import Tensor
from hvae.networks import Dims
from hvae.objectives import EstimatorConfig, NoiseSource, elbo_full, elbo_partial, hybrid_loss
from hvae.oracles import (CoverageError, QuadratureSpec, auto_spec, bound_check, grad_check, linear_gaussian_params,
                          log_likelihood, quadrature_log_joint, quadrature_log_marginal, refined)
from tests.conftest import random_tiny_params

# closed forms for d, h | z ~ N(z, 1), z ~ N(0, 1)
JOINT_AT_ORIGIN = -math.log(2 * math.pi) - 0.5 * math.log(3.0)
MARGINAL_AT_ORIGIN = -0.5 * math.log(2 * math.pi * 2.0)


def test_closed_form_references():
    assert JOINT_AT_ORIGIN == pytest.approx(-2.38718, abs=5e-6)
    assert MARGINAL_AT_ORIGIN == pytest.approx(-1.26551, abs=5e-6)


class TestLinearGaussian:
    p = linear_gaussian_params()

    def test_joint(self):
        value, _, change = refined(lambda s: quadrature_log_joint(self.p, [0.0], [0.0], s), auto_spec(self.p))
        assert abs(value - JOINT_AT_ORIGIN) < 1e-4
        assert change < 1e-6

    def test_marginal(self):
        spec = auto_spec(self.p, [0.0], marginal=True)
        value, _, change = refined(lambda s: quadrature_log_marginal(self.p, [0.0], s), spec)
        assert abs(value - MARGINAL_AT_ORIGIN) < 1e-4
        assert change < 1e-6

    @pytest.mark.parametrize("d,h", [(1.0, -0.5), (2.5, 2.0), (-1.2, 0.3)])
    def test_joint_off_origin(self, d, h):
        x = np.array([d, h])
        cov = np.array([[2.0, 1.0], [1.0, 2.0]])
        exact = -math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(cov)) - 0.5 * x @ np.linalg.solve(cov, x)
        assert abs(log_likelihood(self.p, [d], [h]) - exact) < 1e-4

    def test_elbo_below_truth(self):
        n = 20_000
        lf = elbo_full(self.p.frozen(), np.zeros((n, 1)), np.zeros((n, 1)), noise=NoiseSource(0)).data
        lp = elbo_partial(self.p.frozen(), np.zeros((n, 1)), noise=NoiseSource(1)).data
        assert lf.mean() < JOINT_AT_ORIGIN and lp.mean() < MARGINAL_AT_ORIGIN


class TestQuadratureSpec:
    def test_axes_weights_sum_to_length(self):
        (nodes, logw), = QuadratureSpec(((-1.0, 2.0),), 0.1).axes()
        assert nodes[0] == -1.0 and nodes[-1] == 2.0
        assert np.exp(logw).sum() == pytest.approx(3.0, rel=1e-12)

    def test_halved(self):
        s = QuadratureSpec(((0.0, 1.0), (0.0, 1.0)), (0.1, 0.2)).halved()
        assert s.steps() == (0.05, 0.1)

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            QuadratureSpec(((1.0, 0.0),), 0.1).axes()

    def test_coverage_rejected(self):
        p = linear_gaussian_params()
        with pytest.raises(CoverageError):
            quadrature_log_joint(p, [0.0], [0.0], QuadratureSpec(((-2.0, 2.0),), 0.01))
        with pytest.raises(CoverageError):
            quadrature_log_marginal(p, [0.0], QuadratureSpec(((-10.0, 10.0), (-1.0, 1.0)), 0.01))

    def test_dimension_limits(self):
        p = random_tiny_params(0, Dims(1, 1, 3))
        with pytest.raises(ValueError):
            quadrature_log_joint(p, [0.0], [0.0], QuadratureSpec(((-1, 1),) * 3, 0.1))

    def test_two_dimensional_latent(self):
        p = random_tiny_params(3, Dims(1, 1, 2), width=4)
        value = refined(lambda s: quadrature_log_joint(p, [0.1], [0.2], s), auto_spec(p, z_step=0.05), tol=1e-5)[0]
        r = bound_check(p, [0.1], [0.2], estimates=1000, noise=NoiseSource(0), tol=1e-5)
        assert r.passed and math.isfinite(value)

    def test_marginal_chunking_invariant(self):
        p = random_tiny_params(5)
        spec = auto_spec(p, [0.3], marginal=True)
        a = quadrature_log_marginal(p, [0.3], spec, chunk=100)
        b = quadrature_log_marginal(p, [0.3], spec, chunk=5000)
        assert a == pytest.approx(b, abs=1e-12)


class TestGradCheck:
    def test_quadratic_exact(self):
        x = Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
        report = grad_check({"x": x}, lambda: ad.sum(ad.square(x)) * 3.0)
        assert report.max_error < 1e-8 and report.passed

    def test_small_network_hybrid_loss(self):
        p = random_tiny_params(1, Dims(4, 2, 2), width=6)
        rng = np.random.default_rng(0)
        lab = (rng.normal(size=(3, 4)), rng.normal(size=(3, 2)))
        unl = rng.normal(size=(3, 4))
        report = grad_check(p, lambda: hybrid_loss(p, lab, unl, EstimatorConfig(2, 2), NoiseSource(8)))
        assert report.passed, str(report)
        assert set(report.errors) == set(p.names())

    def test_detects_corrupted_gradient(self):
        p = random_tiny_params(2, Dims(2, 1, 1), width=3)
        d, h = np.ones((2, 2)), np.ones((2, 1))

        def loss():
            return -ad.sum(elbo_full(p, d, h, noise=NoiseSource(0)))

        p.zero_grad()
        loss().backward()
        grads = {k: np.zeros_like(t.data) if t.grad is None else t.grad.copy() for k, t in p}
        victim = "decoder.d.0.W"
        idx = np.unravel_index(np.argmax(np.abs(grads[victim])), grads[victim].shape)
        grads[victim][idx] *= 2.0
        report = grad_check(p, loss, analytic=grads)
        assert report.failures == [victim]
        assert victim in str(report) and "FAIL" in str(report)
