"""Width scaling of neural networks from pruning trajectories.

A small network is trained and iteratively pruned with a first-order gate
importance criterion. The widths it passes through are fitted with per-layer
power laws in the total parameter count, which then generate width
configurations for any parameter budget.
"""

__version__ = "0.1.0"

from .arch import ArchSpec, LayerSpec, count_params, get_preset, uniform_widths
from .powerlaw import ScalingParams, build_design, predict_width, solve_theta
from .prune import PruneConfig, PruneTrajectory, iterative_prune
from .scaler import ScaledConfig, TauDescentOpts, generate_widths, tau_descent

__all__ = [
    "ArchSpec", "LayerSpec", "PruneConfig", "PruneTrajectory", "ScaledConfig", "ScalingParams",
    "TauDescentOpts", "build_design", "count_params", "generate_widths", "get_preset", "iterative_prune",
    "predict_width", "solve_theta", "tau_descent", "uniform_widths",
]
