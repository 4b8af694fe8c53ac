"""
Convolution, pooling and response normalisation
===============================================

The convolutional building blocks on a toy 12x12 image: a bank of 3x3
filters, a 3x3 max-pool with stride 2 (overlapping windows), normalisation
across neighbouring banks, and a finite-difference check of the whole stack.
"""
import numpy as np

from dropnet import ConvLayer, DenseLayer, LrnLayer, LrnSpec, Network, PoolLayer, PoolSpec, RandomSource
from dropnet.convnet import init_positive
from dropnet.oracles import gradient_check

rng = RandomSource(3)
img = np.zeros((1, 1, 12, 12))
img[0, 0, 3:9, 5:7] = 1.0  # a vertical bar

# %%
# A vertical-edge filter responds on both sides of the bar.
edge = ConvLayer([[[[1, 0, -1]] * 3]], [0.0], activation="relu")
print(edge.forward(img)[1][0, 0].round(1))

# %%
# Weights are drawn with a standard deviation large enough that at least
# half of the units get positive input on a noisy probe batch.
conv = ConvLayer.init(rng, 1, 8, 3, bias=0.0)
noisy = img + np.random.default_rng(0).normal(scale=0.1, size=(4, 1, 12, 12))
sd = init_positive(conv, noisy, rng)
print(f"accepted initial sd {sd}")

pool = PoolLayer(PoolSpec("max", 3, 2))
lrn = LrnLayer(LrnSpec(width_N=5, alpha=0.001, beta=0.75))
probe = Network([conv, lrn, pool], (1, 12, 12))
print("shapes through the stack:", probe.shapes)

# %%
# Backpropagation through conv -> LRN -> max-pool -> softmax agrees with
# central differences.
head = DenseLayer.init(rng, int(np.prod(probe.shapes[-1])), 4, "softmax", sd=0.3)
net = Network([conv, lrn, pool, head], (1, 12, 12))
X = np.random.default_rng(3).normal(size=(2, 144))
print(f"worst relative gradient error {gradient_check(net, X, np.array([0, 3])):.1e}")
