"""
Learning-rate decay, momentum ramp and max-norm
===============================================

The learning rate decays geometrically each epoch while momentum ramps
linearly from 0.5 to 0.99 over the first 500 epochs. Each update is followed by
rescaling any hidden unit whose incoming weight vector got longer than
sqrt(l).
"""
import numpy as np

from dropnet import Network, OptimizerConfig, OptimizerState, RandomSource, lr_at, momentum_at, sgd_update
from dropnet.numeric import row_sq_norms

cfg = OptimizerConfig()
for t in (0, 1, 100, 250, 500, 1000, 2999):
    print(f"epoch {t:>4}: lr {lr_at(cfg, t):8.4f}   momentum {momentum_at(cfg, t):.5f}")

# %%
# Huge random gradients cannot push the squared incoming norm past l = 15.
net = Network.dense([50, 30, 10], RandomSource(0), sd=1.0)
state = OptimizerState.zeros(net)
gen = np.random.default_rng(0)
for step in range(200):
    grads = [{k: gen.normal(size=v.shape) * 100 for k, v in p.items()} for p in net.params()]
    sgd_update(net, state, grads, cfg, step)
norms = row_sq_norms(net.layers[0].incoming())
print(f"hidden squared norms: max {norms.max():.6f}, {np.sum(np.isclose(norms, 15))} of {len(norms)} at the bound")
