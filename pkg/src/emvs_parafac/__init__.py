"""Nested PARAFAC estimation for bistatic EMVS-MIMO radar."""

__version__ = "0.1.0"

from .cp_als import CPALS, AlsOptions, cp_als
from .nested import BaselineParafac, NestedParafac, estimate_baseline_parafac, estimate_nested
from .radar_model import Scene, TargetParams, reference_scene, synthesize

__all__ = [
    "__version__",
    "CPALS",
    "AlsOptions",
    "cp_als",
    "NestedParafac",
    "BaselineParafac",
    "estimate_nested",
    "estimate_baseline_parafac",
    "Scene",
    "TargetParams",
    "reference_scene",
    "synthesize",
]
