"""Fractional Brownian motion from parity functionals of Poisson point fields."""

from .errors import CapacityError, InvalidArgument, InvalidGrid, ToleranceNotMet
from .field import FieldConfig, Orientation, PointField, parity_at, parity_batch, sample_field
from .kernels import KernelParams, KernelVariant, fbm_covariance, kernel_inner_product, phi_kernel
from .quadrature import QuadratureConfig

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "FieldConfig",
    "InvalidArgument",
    "InvalidGrid",
    "KernelParams",
    "KernelVariant",
    "Orientation",
    "PointField",
    "QuadratureConfig",
    "ToleranceNotMet",
    "fbm_covariance",
    "kernel_inner_product",
    "parity_at",
    "parity_batch",
    "phi_kernel",
    "sample_field",
]
