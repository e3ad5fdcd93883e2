"""Band-limited reconstruction of saturated samples, with an OFDM test bench."""
from .errors import (
    DenseSaturationError,
    DistinctLocationsError,
    IllConditionedError,
    IllConditionedWindowWarning,
)
from .kernel import BandSpec, cross_matrix, gram_matrix, kernel_value
from .reconstruct import KernelFit, SampleSet, fit_norm, interpolate, regress
from .declip import (
    DeclipReport,
    Flag,
    InverseTable,
    SaturatedStream,
    WindowConfig,
    declip_stream,
    precompute_inverse_tables,
)

__version__ = "0.1.0"

__all__ = [
    "BandSpec", "DeclipReport", "DenseSaturationError", "DistinctLocationsError", "Flag",
    "IllConditionedError", "IllConditionedWindowWarning", "InverseTable", "KernelFit",
    "SampleSet", "SaturatedStream", "WindowConfig", "cross_matrix", "declip_stream",
    "fit_norm", "gram_matrix", "interpolate", "kernel_value", "precompute_inverse_tables",
    "regress",
]
