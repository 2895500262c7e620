"""Depth images with missing pixels.

Each depth pixel is either a value or missing.  The decoder predicts, per
pixel, a Gaussian over the depth and a probability that the depth is
observed, so missing pixels contribute log(1 - b) instead of being
ignored.  This demo checks that the per-pixel model is a proper
distribution and then trains on masked synthetic depth maps.
"""

# %%
import numpy as np

from hvae.data import SceneConfig, make_dataset
from hvae.depth import MaskedImage, ObservationMap, masked_log_likelihood
from hvae.gaussian import DiagGaussian
from hvae.trainer import TrainConfig, train

# %%
# Mass of the observed branch (integrated over depth) plus the mass of the
# missing symbol should be exactly one.
b, mu, ls = 0.8, 0.3, np.log(0.5)
x = np.linspace(mu - 5, mu + 5, 20001)
seen = masked_log_likelihood(MaskedImage(x[:, None], np.ones((len(x), 1), bool)),
                             DiagGaussian(np.full((len(x), 1), mu), np.full((len(x), 1), ls)),
                             ObservationMap(np.full((len(x), 1), b)))
observed_mass = np.trapezoid(np.exp(seen.data), x)
missing = np.exp(masked_log_likelihood(MaskedImage([0.0], [False]), DiagGaussian([mu], [ls]), ObservationMap([b])).item())
print(f"observed {observed_mass:.6f} + missing {missing:.6f} = {observed_mass + missing:.6f}")

# %%
scene = SceneConfig(depth_mode=True)
ds = make_dataset(scene, n=200, m=2000, t=200, split_seed=0)
mask = ds.test()[0].observed
print(f"{1 - mask.mean():.1%} of test depth pixels are missing")

# %%
# Five epochs of hybrid training.  Test NLL drops by hundreds of nats as the
# observation probabilities and the depth surface are learned.
cfg = TrainConfig(learning_rate=3e-4, batch_size=32, epochs=5, hidden=256, z_dim=8, eval_every=7)
_, rows = train(ds, cfg)
for r in rows:
    print(f"step {r['step']:>3s}: test NLL {float(r['test_nll']):8.2f}, label L2 error {float(r['task_loss']):.4f}")
