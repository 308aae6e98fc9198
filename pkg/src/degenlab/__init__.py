"""Weighted dyadic harmonic analysis and DB-method boundary value problems."""
from .dyadic import DyadicCube, TGrid, UpperHalfField, make_tgrid
from .weights import (WeightModel, WeightProfile, a2_constant, ainfty_profile, constant_weight,
                      evaluate_and_mass, power_weight, product_weight, random_dyadic_weight,
                      weight_from_spec)

__version__ = "0.1.0"
