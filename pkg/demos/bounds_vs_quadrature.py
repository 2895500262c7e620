"""How tight are the two variational bounds on a model small enough to integrate?

With one-dimensional image, label and latent the exact log-likelihoods can
be computed on a grid, so the gap left by each bound is directly visible.
Run with ``python demos/bounds_vs_quadrature.py``.
"""

# %%
# A random tiny model.  Every block is drawn from N(0, 0.3^2); the networks
# are 8 units wide.
import numpy as np

from hvae.objectives import EstimatorConfig, NoiseSource, elbo_full, elbo_partial
from hvae.oracles import linear_gaussian_params, log_likelihood, random_tiny_params

p = random_tiny_params(seed=4)
d, h = np.array([0.7]), np.array([-0.2])

# %%
# Exact answers by quadrature.  The grid is refined until two successive
# halvings agree to 1e-6, and the latent box widens if the integrand is
# still large at its edge.
log_joint = log_likelihood(p, d, h)
log_marginal = log_likelihood(p, d)
print(f"log p(d,h) = {log_joint:.5f}")
print(f"log p(d)   = {log_marginal:.5f}")

# %%
# Bound estimates.  Each call averages s_z (and s_h) reparameterized draws;
# repeating over 1000 rows shows the mean and its standard error.
rows = 1000
lf = elbo_full(p, np.tile(d, (rows, 1)), np.tile(h, (rows, 1)), noise=NoiseSource(0)).data
lp = elbo_partial(p, np.tile(d, (rows, 1)), noise=NoiseSource(1)).data
for name, est, exact in (("full", lf, log_joint), ("partial", lp, log_marginal)):
    se = est.std(ddof=1) / np.sqrt(rows)
    print(f"{name:8s} bound {est.mean():.5f} +- {se:.5f}  gap {exact - est.mean():.4f} nats")

# %%
# More label samples per latent sample are averaged, not log-mean-exp'd, so
# the expected bound stays put and only the spread of a single estimate
# shrinks.
for s_h in (1, 3, 10):
    est = elbo_partial(p, np.tile(d, (rows, 1)), EstimatorConfig(s_z=3, s_h=s_h), noise=NoiseSource(2)).data
    print(f"s_h={s_h:2d}: partial bound {est.mean():.5f}, per-estimate std {est.std(ddof=1):.4f}")

# %%
# Sanity anchor: the linear-Gaussian model, p(d|z) = p(h|z) = N(z, 1), has
# log p(0, 0) = -log(2 pi) - log(3)/2 and log p(0) = -log(4 pi)/2.
lg = linear_gaussian_params()
print(f"linear-Gaussian: {log_likelihood(lg, [0.0], [0.0]):.5f} "
      f"(exact {-np.log(2 * np.pi) - 0.5 * np.log(3):.5f}), "
      f"{log_likelihood(lg, [0.0]):.5f} (exact {-0.5 * np.log(4 * np.pi):.5f})")
