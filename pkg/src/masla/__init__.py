"""Metropolis-adjusted subdifferential Langevin sampling and its baselines."""

__version__ = "0.1.0"

from .ensemble import InitSpec, RunSpec, run_chain, run_ensemble  # noqa: E402
from .kernel import ChainState, KernelConfig, Variant, step  # noqa: E402
from .metrics import GridSpec, build_histogram, tv_distance, w2_discrete, w2_one_dim  # noqa: E402
from .potential import SelectionRule, make_target, reference_density  # noqa: E402

__all__ = [
    "ChainState",
    "GridSpec",
    "InitSpec",
    "KernelConfig",
    "RunSpec",
    "SelectionRule",
    "Variant",
    "build_histogram",
    "make_target",
    "reference_density",
    "run_chain",
    "run_ensemble",
    "step",
    "tv_distance",
    "w2_discrete",
    "w2_one_dim",
]
