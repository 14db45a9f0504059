"""Adaptive wavelet collocation networks for PDEs with localized sources.

The library trains wavelet expansions against PDE residuals in two stages:
a fixed multiresolution basis whose coefficients are pre-trained, followed
by an adaptive refinement in which the surviving wavelet units carry
continuous scale and shift parameters.  All derivatives entering the loss
are closed-form; no automatic differentiation is used anywhere.
"""

__version__ = "0.1.0"

from .errors import (
    DegenerateLossError,
    DivergenceError,
    EmptySelectionError,
    InstabilityError,
    NumericalError,
    ValidationError,
)
from .wavelet import MotherWavelet, eval_psi, eval_scaled
from .family import AxisSpec, FamilyIndex, FamilySet, build_family, translation_range

__all__ = [
    "AxisSpec",
    "DegenerateLossError",
    "DivergenceError",
    "EmptySelectionError",
    "FamilyIndex",
    "FamilySet",
    "InstabilityError",
    "MotherWavelet",
    "NumericalError",
    "ValidationError",
    "build_family",
    "eval_psi",
    "eval_scaled",
    "translation_range",
]
