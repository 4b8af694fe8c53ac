"""Dropout training for feedforward and convolutional networks, in numpy.

Per-case unit omission during training, max-norm constrained momentum SGD,
mean-network inference, and exhaustive subnetwork enumeration to check the
model-averaging identities on small networks.
"""
from .config import NetworkSpec, TrainConfig, build_network, load_config
from .convnet import ConvLayer, LocalLayer, LrnLayer, LrnSpec, PoolLayer, PoolSpec
from .data import BowVocab, LabeledDataset, bow_vectorize, load_idx, load_mnist, minibatch_iter, split, standardize
from .dropout import (DropoutSpec, enumerate_subnet_distributions, geometric_mean_distribution,
                      sample_case_masks, to_mean_network)
from .layers import DenseLayer, Network, network_backward, network_forward, softmax_xent
from .numeric import RandomSource, bernoulli_mask, gauss_sample, matmul, row_sq_norms
from .optim import OptimizerConfig, OptimizerState, lr_at, maxnorm_project, momentum_at, sgd_update
from .trainer import checkpoint_load, checkpoint_save, evaluate, export_features, train

__version__ = "0.1.0"
