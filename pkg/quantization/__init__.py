"""Affine quantization, B-spline LUTs and per-connection spline tables."""
from .quantizer import (
    PASSTHROUGH_BW,
    VALID_BITWIDTHS,
    QuantParams,
    QuantConfig,
    LatticeQuantizer,
    FakeQuantBasis,
    round_half_away,
    compute_quant_params,
    quantize_value,
    dequantize_value,
    fake_quant_tensor,
    calibrate_range,
    build_fake_quant,
)
from .tabulation import (
    BsplineLut,
    LutBasis,
    SplineTableSet,
    build_bspline_lut,
    lut_basis_lookup,
    lut_basis_levels,
    tabulated_kan_forward,
    build_spline_tables,
    spline_table_forward,
    tabulate_model,
    spline_table_model_forward,
    spline_table_error_bound,
)

__all__ = [
    "PASSTHROUGH_BW",
    "VALID_BITWIDTHS",
    "QuantParams",
    "QuantConfig",
    "LatticeQuantizer",
    "FakeQuantBasis",
    "round_half_away",
    "compute_quant_params",
    "quantize_value",
    "dequantize_value",
    "fake_quant_tensor",
    "calibrate_range",
    "build_fake_quant",
    "BsplineLut",
    "LutBasis",
    "SplineTableSet",
    "build_bspline_lut",
    "lut_basis_lookup",
    "lut_basis_levels",
    "tabulated_kan_forward",
    "build_spline_tables",
    "spline_table_forward",
    "tabulate_model",
    "spline_table_model_forward",
    "spline_table_error_bound",
]
