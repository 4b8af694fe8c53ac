"""
Averaging 2**N dropout networks with one forward pass
=====================================================

A net with one hidden layer of N units, trained with half of the hidden units
dropped, implicitly trains 2**N weight-sharing subnetworks. Here we enumerate
every one of them for a small random net and compare their renormalised
geometric mean with the output of the "mean network", the full net with its
hidden-to-output weights halved.
"""
import numpy as np

from dropnet import DropoutSpec, Network, RandomSource, enumerate_subnet_distributions, geometric_mean_distribution
from dropnet.dropout import subnet_log_distributions, to_mean_network

rng = RandomSource(0)
net = Network.dense([5, 10, 4], rng, sd=1.0, hidden_bias=0.1)
x = np.random.default_rng(0).normal(size=5)

# %%
# Every subset of the 10 hidden units gives its own softmax distribution.
dists = enumerate_subnet_distributions(net, x)
print(f"{len(dists)} subnetworks, first three:\n{np.round(dists[:3], 4)}")

# %%
# Their geometric mean matches the mean network to rounding error.
geo = geometric_mean_distribution(dists)
mean_net = to_mean_network(net, DropoutSpec(input_retain=1.0, hidden_retain=0.5))
out = mean_net.predict(x[None])[0]
print("geometric mean:", np.round(geo, 6))
print("mean network:  ", np.round(out, 6))
print(f"max difference {np.abs(geo - out).max():.1e}")

# %%
# The mean network gives the correct class a higher log probability than
# the subnetworks do on average.
label = 2
logs = subnet_log_distributions(net, x)
print(f"log p_mean = {np.log(out[label]):.4f}  >  mean_S log p_S = {logs[:, label].mean():.4f}")

# %%
# An arithmetic average of the 1024 outputs is a different, less sharp ensemble.
print("arithmetic mean:", np.round(dists.mean(axis=0), 6))
