"""Backbone-curve computation and tailoring of nonlinear mechanical systems
via two-dimensional spectral-submanifold reduction, with direct and adjoint
sensitivities of the frequency-amplitude relation."""

from .mechmodel import (
    MechModel,
    ParamDerivatives,
    SymTensor2,
    SymTensor3,
    check_light_damping,
    model_from_json,
    model_to_json,
)
from .spectral import MasterPair, mac, solve_master, track_mode
from .ssm import (
    SsmExpansion,
    adapt_order,
    compute_ssm,
    invariance_residual,
    leading_order,
)
from .backbone import (
    BackboneCurve,
    omega_of_rho,
    rho_of_x,
    sample_backbone,
    x_rms,
)

__all__ = [
    "MechModel",
    "ParamDerivatives",
    "SymTensor2",
    "SymTensor3",
    "check_light_damping",
    "model_from_json",
    "model_to_json",
    "MasterPair",
    "mac",
    "solve_master",
    "track_mode",
    "SsmExpansion",
    "adapt_order",
    "compute_ssm",
    "invariance_residual",
    "leading_order",
    "BackboneCurve",
    "omega_of_rho",
    "rho_of_x",
    "sample_backbone",
    "x_rms",
]

__version__ = "0.1.0"
