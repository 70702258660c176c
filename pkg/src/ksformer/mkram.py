"""Fused attention block over spatial and spectral views.

Runs routed attention on the raw features and on their low/high frequency
bands in parallel, concatenates the three results along channels, and fuses
them back with a 1x1 convolution plus a residual connection. The bands
enter their branches unweighted; learnable band gains belong to standalone
frequency layers so the two mechanisms stay separable in ablations.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .lfpm import DEFAULT_CUTOFF, spectrum_split
from .mkra import MkraWeights, mkra_forward
from .tensor import Tensor, concat, conv2d


@dataclass
class MkramWeights:
    spatial: MkraWeights
    low: MkraWeights
    high: MkraWeights
    fusion: Tensor  # 1x1 conv, 3C -> C
    cutoff_ratio: float = DEFAULT_CUTOFF

    @staticmethod
    def create(cfg, rng, cutoff_ratio=DEFAULT_CUTOFF):
        c = cfg.channels
        fusion = Tensor(
            rng.normal(0.0, 1.0 / math.sqrt(3 * c), size=(1, 1, 3 * c, c)).astype(np.float32)
        )
        return MkramWeights(
            spatial=MkraWeights.create(cfg, rng),
            low=MkraWeights.create(cfg, rng),
            high=MkraWeights.create(cfg, rng),
            fusion=fusion,
            cutoff_ratio=cutoff_ratio,
        )

    def named(self, prefix):
        yield from self.spatial.named(f"{prefix}spatial.")
        yield from self.low.named(f"{prefix}low.")
        yield from self.high.named(f"{prefix}high.")
        yield f"{prefix}fusion.w", self.fusion


def mkram_forward(x, weights, cfg):
    """Spatial/low/high routed attention in parallel, 1x1 fusion, residual."""
    c = x.shape[-1]
    if weights.fusion.shape != (1, 1, 3 * c, c):
        raise ConfigError(
            f"fusion kernel {weights.fusion.shape} does not map {3 * c} -> {c} channels"
        )
    low, high = spectrum_split(x, weights.cutoff_ratio)
    y_spatial = mkra_forward(x, cfg, weights.spatial)
    y_low = mkra_forward(low, cfg, weights.low)
    y_high = mkra_forward(high, cfg, weights.high)
    fused = conv2d(concat([y_spatial, y_low, y_high], axis=-1), weights.fusion)
    return fused + x
