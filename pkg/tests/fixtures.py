"""Shared calibration fixtures."""

import numpy as np

from desvq.calibrate import Block, LinearLayer, TrainConfig


def gaussian_layer_fixture(seed=7):
    """64x64 Gaussian layer fed activations with a few large channels."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((64, 64))
    b = rng.standard_normal(64)
    x = rng.standard_normal((256, 64)) * np.exp(rng.normal(0.0, 1.0, 64))
    block = Block([LinearLayer("fc", w, b)])
    cfg = TrainConfig(bits_w=3, granularity="per-channel", seed=seed, steps=200)
    return block, x, cfg


def toy_mlp(seed=0, dims=(16, 24, 16), blocks=2, act="gelu"):
    rng = np.random.default_rng(seed)
    model = []
    for k in range(blocks):
        layers = [LinearLayer(f"b{k}.l{j}", rng.standard_normal((i, o)) / np.sqrt(i),
                              0.1 * rng.standard_normal(o))
                  for j, (i, o) in enumerate(zip(dims[:-1], dims[1:]))]
        model.append(Block(layers, act))
    return model
