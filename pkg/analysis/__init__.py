"""Analytic cost model and Pareto analysis."""
from .cost_model import (
    LayerSpec,
    ArchDescriptor,
    LayerCost,
    CostReport,
    mul_counts,
    bitops_kan,
    bitops_mlp,
    param_count,
    mlp_param_count,
    lut_memory_bits,
    spline_table_bits,
    fp32_coeff_bits,
    table_memory,
    fpga_lut_estimate,
    exceeds_device,
    cost_report,
    describe_model,
    load_arch,
    builtin_archs,
)
from .pareto import pareto_front, pareto_mask, brute_force_front

__all__ = [
    "LayerSpec",
    "ArchDescriptor",
    "LayerCost",
    "CostReport",
    "mul_counts",
    "bitops_kan",
    "bitops_mlp",
    "param_count",
    "mlp_param_count",
    "lut_memory_bits",
    "spline_table_bits",
    "fp32_coeff_bits",
    "table_memory",
    "fpga_lut_estimate",
    "exceeds_device",
    "cost_report",
    "describe_model",
    "load_arch",
    "builtin_archs",
    "pareto_front",
    "pareto_mask",
    "brute_force_front",
]
