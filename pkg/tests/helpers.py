"""Small builders shared by the test modules."""

import numpy as np

from widthscale.arch import ArchSpec, Family, LayerSpec
from widthscale.prune import PruneTrajectory, TrajectoryRecord


def tiny_mlp(input_dim=4, hidden=(3, 2), num_classes=2, norm=False):
    layers = tuple(LayerSpec("dense", norm=norm) for _ in hidden)
    return ArchSpec("tiny", Family.DENSE, layers, (input_dim,), num_classes, hidden)


def tiny_conv(channels=2, size=4, widths=(2, 3), num_classes=2):
    layers = (LayerSpec("conv", kernel=(3, 3)), LayerSpec("conv", kernel=(3, 3), stride=2))
    return ArchSpec("tinyconv", Family.FEEDFORWARD, layers, (channels, size, size), num_classes, widths)


def tiny_residual(widths=(3, 3, 4, 4)):
    layers = (LayerSpec("conv", kernel=(3, 3)),
              LayerSpec("conv", kernel=(3, 3), block_id=0),
              LayerSpec("conv", kernel=(3, 3), block_id=0, relu=False),
              LayerSpec("conv", kernel=(3, 3), stride=2, block_id=1),
              LayerSpec("conv", kernel=(3, 3), block_id=1, relu=False))
    return ArchSpec("tinyres", Family.RESIDUAL, layers, (2, 4, 4), 3, (widths[0],) + tuple(widths))


def tiny_bottleneck():
    layers = (LayerSpec("conv", kernel=(3, 3)),
              LayerSpec("pointwise-conv", kernel=(1, 1), block_id=0, prunable=False, expand=2),
              LayerSpec("depthwise-conv", kernel=(3, 3), block_id=0, prunable=False),
              LayerSpec("pointwise-conv", kernel=(1, 1), block_id=0, relu=False),
              LayerSpec("pointwise-conv", kernel=(1, 1)))
    return ArchSpec("tinybottle", Family.BOTTLENECK, layers, (2, 4, 4), 2, (3, 3, 4), expansion_factor=2)


def powerlaw_trajectory(alpha, beta, taus, arch_name="synthetic", noise=0.0, rng=None):
    """Trajectory with real-valued widths alpha * tau ** beta (optionally noisy)."""
    taus = np.asarray(taus, dtype=np.float64)
    phis = np.asarray(alpha)[None, :] * taus[:, None] ** np.asarray(beta)[None, :]
    if noise:
        phis = phis * np.exp(rng.normal(scale=noise, size=phis.shape))
    return taus, phis


def int_trajectory(records, num_layers, arch_name="synthetic"):
    return PruneTrajectory(arch_name, num_layers,
                           [TrajectoryRecord(i, t, tuple(p)) for i, (t, p) in enumerate(records)])
