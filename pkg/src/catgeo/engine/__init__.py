"""Minimal feed-forward network engine.

Dense/conv layer stacks, reverse-mode gradients, Adam, and multiplicative
noise layers (Bernoulli and Gaussian dropout), all in 64-bit numpy. Built for
verifiability at desk scale rather than throughput: forward passes expose
every layer's activations, and eval mode is a deterministic function of the
parameters.
"""

from catgeo.engine.layers import (
    LayerSpec,
    conv2d,
    dense,
    flatten,
    gaussian_dropout_sigma,
    global_avg_pool,
    max_pool2d,
    upsample2d,
)
from catgeo.engine.network import Network, build_network
from catgeo.engine.train import Adam, History, TrainConfig, train
from catgeo.engine.checkpoint import load_network, save_network

__all__ = [
    "Adam",
    "History",
    "LayerSpec",
    "Network",
    "TrainConfig",
    "build_network",
    "conv2d",
    "dense",
    "flatten",
    "gaussian_dropout_sigma",
    "global_avg_pool",
    "load_network",
    "max_pool2d",
    "save_network",
    "train",
    "upsample2d",
]
