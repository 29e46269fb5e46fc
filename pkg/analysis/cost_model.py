"""
Analytic cost model for KAN architectures.

Multiplication counts per KAN layer (batch M):
    matmul  = M * N_out * N_in * (G + P)
    bspline = 4 * M * N_in * (P * (G + 2P) - P * (P - 1) / 2)
Conv layers substitute N_out -> C_out and N_in -> K^2 * C_in * H_out * W_out.

BitOps weight each multiplication by the product of its operand
bit-widths: bw_B * bw_W for the matmul and bw_A**2 for the recursion.
Only multiplications are counted.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, Field, NonNegativeInt, PositiveInt, ValidationError, model_validator

from utils import FormatError, InvalidArgumentError, setup_logger
from config import config

logger = setup_logger(__name__, config.app.log_level)

ARCH_DIR = Path(__file__).resolve().parent.parent / "archs"

FPGA_LUTS_PER_CONNECTION = 9
# CLB LUTs of a Virtex UltraScale+ VU13P
DEFAULT_DEVICE_LUTS = 1_728_000


class LayerSpec(BaseModel):
    """One KAN layer of an architecture descriptor."""
    kind: Literal["linear", "conv"]
    n_in: Optional[PositiveInt] = None
    n_out: Optional[PositiveInt] = None
    c_in: Optional[PositiveInt] = None
    c_out: Optional[PositiveInt] = None
    kernel: Optional[PositiveInt] = None
    h_out: Optional[PositiveInt] = None
    w_out: Optional[PositiveInt] = None
    label: str = ""

    @model_validator(mode="after")
    def _check_fields(self):
        if self.kind == "linear":
            missing = [f for f in ("n_in", "n_out") if getattr(self, f) is None]
        else:
            missing = [f for f in ("c_in", "c_out", "kernel", "h_out", "w_out") if getattr(self, f) is None]
        if missing:
            raise ValueError(f"{self.kind} layer missing {', '.join(missing)}")
        return self

    @property
    def fan_in(self) -> int:
        """N_in of the cost formulas (K^2 * C_in * H_out * W_out for conv)."""
        if self.kind == "linear":
            return self.n_in
        return self.kernel * self.kernel * self.c_in * self.h_out * self.w_out

    @property
    def fan_out(self) -> int:
        return self.n_out if self.kind == "linear" else self.c_out

    @property
    def connections(self) -> int:
        """Learned splines: N_in * N_out or K^2 * C_in * C_out."""
        if self.kind == "linear":
            return self.n_in * self.n_out
        return self.kernel * self.kernel * self.c_in * self.c_out


class ArchDescriptor(BaseModel):
    """Weight-free architecture description for cost accounting."""
    name: str = "arch"
    G: PositiveInt = 3
    P: NonNegativeInt = 3
    batch: NonNegativeInt = 1
    layers: List[LayerSpec] = Field(default_factory=list)

    @property
    def n_basis(self) -> int:
        return self.G + self.P


@dataclass
class LayerCost:
    """Cost of one layer (or the total)."""
    label: str
    muls_matmul: int
    muls_bspline: int
    bitops: int
    connections: int
    param_count: int
    spline_table_bits: int
    fp32_coeff_bits: int


@dataclass
class CostReport:
    """Aggregate costs of an architecture under one bit-width configuration."""
    arch: str
    muls_matmul: int
    muls_bspline: int
    bitops: int
    lut_memory_bits: int
    spline_table_bits: int
    fp32_coeff_bits: int
    param_count: int
    fpga_lut_estimate: int
    layers: List[LayerCost] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _batch(arch: ArchDescriptor, M: Optional[int]) -> int:
    M = arch.batch if M is None else M
    if M < 0:
        raise InvalidArgumentError(f"batch must be non-negative, got {M}")
    return M


def _recursion_nodes(G: int, P: int) -> int:
    # Sum over degrees d = 1..P of the G + 2P - d + 1 functions raised
    return P * (G + 2 * P) - P * (P - 1) // 2


def layer_mul_counts(layer: LayerSpec, G: int, P: int, M: int) -> tuple:
    matmul = M * layer.fan_out * layer.fan_in * (G + P)
    bspline = 4 * M * layer.fan_in * _recursion_nodes(G, P)
    return matmul, bspline


def mul_counts(arch: ArchDescriptor, M: Optional[int] = None) -> dict:
    """
    Multiplications per layer and in total.

    Returns:
        {"layers": [(matmul, bspline), ...], "muls_matmul": int, "muls_bspline": int}
    """
    M = _batch(arch, M)
    per_layer = [layer_mul_counts(layer, arch.G, arch.P, M) for layer in arch.layers]
    return {
        "layers": per_layer,
        "muls_matmul": sum(m for m, _ in per_layer),
        "muls_bspline": sum(b for _, b in per_layer),
    }


def _check_bw(*bitwidths: int) -> None:
    for bw in bitwidths:
        if int(bw) != bw or bw < 1:
            raise InvalidArgumentError(f"bit-width must be a positive integer, got {bw}")


def bitops_kan(
    arch: ArchDescriptor,
    bw_W: int,
    bw_A: int,
    bw_B: int,
    M: Optional[int] = None,
    tabulated: bool = False,
) -> int:
    """KAN BitOps; tabulated mode drops the recursion term."""
    _check_bw(bw_W, bw_A, bw_B)
    counts = mul_counts(arch, M)
    total = counts["muls_matmul"] * bw_B * bw_W
    if not tabulated:
        total += counts["muls_bspline"] * bw_A * bw_A
    return total


def bitops_mlp(arch: ArchDescriptor, bw_W: int, bw_A: int, M: Optional[int] = None) -> int:
    """BitOps of the equally-shaped MLP: M * N_out * N_in * bw_A * bw_W per layer."""
    _check_bw(bw_W, bw_A)
    M = _batch(arch, M)
    return sum(M * layer.fan_out * layer.fan_in * bw_A * bw_W for layer in arch.layers)


def param_count(arch: ArchDescriptor) -> int:
    return sum(layer.connections for layer in arch.layers) * arch.n_basis


def mlp_param_count(arch: ArchDescriptor) -> int:
    return sum(layer.connections for layer in arch.layers)


def lut_memory_bits(k: int, h: int, spline_order: int) -> int:
    """Accounted memory of the shared B-spline LUT, 2**k * ceil((P + 1) / 2) * h."""
    return (2 ** k) * (-(-(spline_order + 1) // 2)) * h


def spline_table_bits(arch: ArchDescriptor, bw_A: int, h: int) -> int:
    """sum_l connections_l * 2**bw_A * h."""
    return sum(layer.connections for layer in arch.layers) * (2 ** bw_A) * h


def fp32_coeff_bits(arch: ArchDescriptor) -> int:
    return param_count(arch) * 32


def table_memory(
    arch: Optional[ArchDescriptor] = None,
    k: Optional[int] = None,
    h: Optional[int] = None,
    bw_A: Optional[int] = None,
    spline_order: Optional[int] = None,
) -> dict:
    """
    Closed-form table memory.

    Returns:
        {"lut_memory_bits", "spline_table_bits", "fp32_coeff_bits"}; entries
        whose inputs were not supplied are 0
    """
    P = spline_order if spline_order is not None else (arch.P if arch is not None else None)
    lut_bits = lut_memory_bits(k, h, P) if k is not None and h is not None and P is not None else 0
    table_bits = spline_table_bits(arch, bw_A, h) if arch is not None and bw_A is not None and h is not None else 0
    coeff_bits = fp32_coeff_bits(arch) if arch is not None else 0
    return {
        "lut_memory_bits": lut_bits,
        "spline_table_bits": table_bits,
        "fp32_coeff_bits": coeff_bits,
    }


def fpga_lut_estimate(arch: ArchDescriptor) -> int:
    """About 9 FPGA LUTs per tabulated connection."""
    return FPGA_LUTS_PER_CONNECTION * sum(layer.connections for layer in arch.layers)


def exceeds_device(arch: ArchDescriptor, device_luts: int = DEFAULT_DEVICE_LUTS) -> bool:
    return fpga_lut_estimate(arch) > device_luts


def cost_report(
    arch: ArchDescriptor,
    bw_W: int = 32,
    bw_A: int = 32,
    bw_B: int = 32,
    M: Optional[int] = None,
    tabulated: bool = False,
    k: Optional[int] = None,
    h: Optional[int] = None,
    table_bw_A: Optional[int] = None,
) -> CostReport:
    """
    Full cost report for one configuration.

    Args:
        arch: Architecture
        bw_W, bw_A, bw_B: Bit-widths of weights, activations and basis values
        M: Batch size (descriptor default when None)
        tabulated: Whether B-spline evaluation is replaced by the LUT
        k, h: LUT addressing and value bits (for lut_memory_bits)
        table_bw_A: Spline-table input bits (for spline_table_bits, with h)
    """
    M = _batch(arch, M)
    layers = []
    for index, layer in enumerate(arch.layers):
        matmul, bspline = layer_mul_counts(layer, arch.G, arch.P, M)
        bitops = matmul * bw_B * bw_W + (0 if tabulated else bspline * bw_A * bw_A)
        layers.append(LayerCost(
            label=layer.label or f"{layer.kind}{index}",
            muls_matmul=matmul,
            muls_bspline=bspline,
            bitops=bitops,
            connections=layer.connections,
            param_count=layer.connections * arch.n_basis,
            spline_table_bits=(layer.connections * 2 ** table_bw_A * h) if table_bw_A and h else 0,
            fp32_coeff_bits=layer.connections * arch.n_basis * 32,
        ))
    memory = table_memory(arch, k=k, h=h, bw_A=table_bw_A)
    return CostReport(
        arch=arch.name,
        muls_matmul=sum(l.muls_matmul for l in layers),
        muls_bspline=sum(l.muls_bspline for l in layers),
        bitops=sum(l.bitops for l in layers),
        lut_memory_bits=memory["lut_memory_bits"],
        spline_table_bits=memory["spline_table_bits"],
        fp32_coeff_bits=memory["fp32_coeff_bits"],
        param_count=param_count(arch),
        fpga_lut_estimate=fpga_lut_estimate(arch),
        layers=layers,
    )


# =============================================================================
# DESCRIPTORS
# =============================================================================

def describe_model(model, M: int = 1) -> ArchDescriptor:
    """Descriptor of an instantiated Model (pooling and flatten carry no cost)."""
    from kan.layers import ConvKanLayer, KanLinearLayer

    specs = []
    for layer, out_shape in zip(model.layers, model.shapes[1:]):
        if isinstance(layer, KanLinearLayer):
            specs.append(LayerSpec(kind="linear", n_in=layer.n_in, n_out=layer.n_out))
        elif isinstance(layer, ConvKanLayer):
            specs.append(LayerSpec(
                kind="conv", c_in=layer.c_in, c_out=layer.c_out, kernel=layer.kernel,
                h_out=out_shape[1], w_out=out_shape[2],
            ))
    return ArchDescriptor(
        name=model.name,
        G=model.grid.grid_size,
        P=model.grid.spline_order,
        batch=M,
        layers=specs,
    )


def load_arch(source: Union[str, Path]) -> ArchDescriptor:
    """
    Load a descriptor from a JSON file, or a bundled one by name.

    Raises:
        FormatError: If the JSON does not describe a valid architecture
        OSError: If the file cannot be read
    """
    path = Path(source)
    if not path.exists() and (ARCH_DIR / f"{source}.json").exists():
        path = ARCH_DIR / f"{source}.json"
    try:
        return ArchDescriptor.model_validate(json.loads(path.read_text()))
    except (json.JSONDecodeError, ValidationError) as e:
        raise FormatError(f"invalid architecture descriptor {path}: {e}") from e


def builtin_archs() -> List[str]:
    return sorted(p.stem for p in ARCH_DIR.glob("*.json"))
