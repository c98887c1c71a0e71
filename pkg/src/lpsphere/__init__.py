"""Neural networks with per-neuron weights on the unit L_p-sphere.

Constrained SGD (plain and momentum), closed-form Hoyer sparsity under a
gamma input model, and adaptive drop/grow sparse training.
"""

from lpsphere.errors import (
    ConfigError,
    DataFormatError,
    DegenerateInputError,
    DomainError,
    LpsphereError,
    NumericsError,
)
from lpsphere.geometry import (
    LpConstraint,
    dual_exponent,
    lp_norm,
    most_activated_weight,
    normalize_lp,
    normalized_gradient,
    signed_power,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataFormatError",
    "DegenerateInputError",
    "DomainError",
    "LpConstraint",
    "LpsphereError",
    "NumericsError",
    "dual_exponent",
    "lp_norm",
    "most_activated_weight",
    "normalize_lp",
    "normalized_gradient",
    "signed_power",
]
