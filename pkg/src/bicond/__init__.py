"""Simulation and exact-oracle toolkit for biconditioned walks, trees and maps."""
from .errors import BicondError, ValidationError
from .genfun import (
    BernoulliStep,
    Geometric,
    MapInduced,
    Regime,
    RegimeKind,
    Shifted,
    StableExample,
    Tabulated,
    TiltedLaw,
    UniformMapStep,
    WeightSequence,
    classify_regime,
    eval_derivatives,
    from_descriptor,
    leaf_fraction_A,
    psi,
    solve_tilt,
    tilted_law,
)

__version__ = "0.1.0"
