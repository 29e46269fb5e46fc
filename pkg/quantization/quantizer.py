"""
Uniform affine integer quantization of the KAN tensors W, A and B.

    s = (beta - alpha) / (q_hi - q_lo)
    z = round((beta * q_lo - alpha * q_hi) / (beta - alpha))
    x_q = clip(round(x / s + z), q_lo, q_hi)
    x = s * (x_q - z)

Rounding is half-away-from-zero. Pre-round values are first snapped to a
2**-36 lattice so that exact half-level ties (a cubic basis value of 1/6
at 8 bits lands on 42.5) resolve the same way regardless of last-bit
floating-point noise in how the value was produced.
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from kan.bspline import GridSpec, MulCounter, basis_matrix, clamp_to_domain
from kan.model import Model, is_kan_layer
from utils import (
    DegenerateRangeError,
    EmptyStreamError,
    InvalidArgumentError,
    setup_logger,
)
from config import config

logger = setup_logger(__name__, config.app.log_level)

PASSTHROUGH_BW = 32
VALID_BITWIDTHS = (2, 3, 4, 5, 6, 7, 8, PASSTHROUGH_BW)
RANGE_POLICIES = ("grid-bounds", "calibrated-minmax")

_TIE_SNAP = float(2 ** 36)

ArrayLike = Union[float, np.ndarray]


def round_half_away(r: ArrayLike) -> np.ndarray:
    """Round to nearest, ties away from zero, after snapping to 2**-36."""
    r = np.round(np.asarray(r, dtype=np.float64) * _TIE_SNAP) / _TIE_SNAP
    return np.sign(r) * np.floor(np.abs(r) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    """Scale / zero-point mapping of a real range onto [q_lo, q_hi]."""
    scale: float
    zero_point: int
    bw: int
    q_lo: int
    q_hi: int

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidArgumentError(f"scale must be positive, got {self.scale}")
        if not self.q_lo < self.q_hi:
            raise InvalidArgumentError(f"empty integer range [{self.q_lo}, {self.q_hi}]")
        if not self.q_lo <= self.zero_point <= self.q_hi:
            raise InvalidArgumentError(
                f"zero point {self.zero_point} outside [{self.q_lo}, {self.q_hi}]"
            )

    @property
    def is_passthrough(self) -> bool:
        return self.bw == PASSTHROUGH_BW

    @classmethod
    def passthrough(cls) -> "QuantParams":
        return cls(scale=1.0, zero_point=0, bw=PASSTHROUGH_BW, q_lo=0, q_hi=2 ** 32 - 1)

    @classmethod
    def for_grid(cls, grid: GridSpec, bw: int) -> "QuantParams":
        """Calibration-free activation params spanning the interior grid domain."""
        if bw == PASSTHROUGH_BW:
            return cls.passthrough()
        return compute_quant_params(grid.domain_lo, grid.domain_hi, bw)

    @classmethod
    def unit_interval(cls, bw: int) -> "QuantParams":
        """Params for B-spline outputs, which are bounded in [0, 1]."""
        if bw == PASSTHROUGH_BW:
            return cls.passthrough()
        return compute_quant_params(0.0, 1.0, bw)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "zero_point": self.zero_point,
            "bw": self.bw,
            "q_lo": self.q_lo,
            "q_hi": self.q_hi,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuantParams":
        return cls(
            scale=float(data["scale"]),
            zero_point=int(data["zero_point"]),
            bw=int(data["bw"]),
            q_lo=int(data["q_lo"]),
            q_hi=int(data["q_hi"]),
        )


def compute_quant_params(alpha: float, beta: float, bw: int) -> QuantParams:
    """
    Unsigned affine params mapping [alpha, beta] onto [0, 2**bw - 1].

    Args:
        alpha: Range minimum
        beta: Range maximum (> alpha)
        bw: Bit-width, 1..16 (1 is only meaningful for spline-table inputs)

    Raises:
        InvalidArgumentError: On a degenerate range or unsupported bit-width
    """
    if int(bw) != bw or not 1 <= bw <= 16:
        raise InvalidArgumentError(f"bit-width must be an integer in [1, 16], got {bw}")
    if not (np.isfinite(alpha) and np.isfinite(beta)) or not beta > alpha:
        raise InvalidArgumentError(f"degenerate quantization range [{alpha}, {beta}]")
    bw = int(bw)
    q_lo, q_hi = 0, 2 ** bw - 1
    scale = (beta - alpha) / (q_hi - q_lo)
    zero_point = int(round_half_away((beta * q_lo - alpha * q_hi) / (beta - alpha)))
    zero_point = min(max(zero_point, q_lo), q_hi)
    return QuantParams(scale=scale, zero_point=zero_point, bw=bw, q_lo=q_lo, q_hi=q_hi)


def quantize_value(x: ArrayLike, qp: QuantParams) -> np.ndarray:
    """Integer levels clip(round(x / s + z), q_lo, q_hi); works on scalars and arrays."""
    q = round_half_away(np.asarray(x, dtype=np.float64) / qp.scale + qp.zero_point)
    return np.clip(q, qp.q_lo, qp.q_hi).astype(np.int64)


def dequantize_value(x_q: ArrayLike, qp: QuantParams) -> np.ndarray:
    """Real values s * (x_q - z)."""
    return qp.scale * (np.asarray(x_q, dtype=np.float64) - qp.zero_point)


def fake_quant_tensor(T: ArrayLike, qp: QuantParams) -> np.ndarray:
    """Quantize-then-dequantize; the 32-bit sentinel is the identity."""
    T = np.asarray(T, dtype=np.float64)
    if qp.is_passthrough:
        return T
    return dequantize_value(quantize_value(T, qp), qp)


def calibrate_range(tensor_stream: Iterable[ArrayLike], allow_widen: bool = False) -> Tuple[float, float]:
    """
    Running min/max over every element of every tensor in a stream.

    Args:
        tensor_stream: Iterable of arrays
        allow_widen: Widen a collapsed range by one machine epsilon instead of failing

    Returns:
        (alpha, beta)

    Raises:
        EmptyStreamError: If the stream holds no elements
        DegenerateRangeError: If alpha == beta and widening is not allowed
    """
    alpha, beta = np.inf, -np.inf
    seen = False
    for tensor in tensor_stream:
        tensor = np.asarray(tensor, dtype=np.float64)
        if tensor.size == 0:
            continue
        seen = True
        alpha = min(alpha, float(tensor.min()))
        beta = max(beta, float(tensor.max()))
    if not seen:
        raise EmptyStreamError("cannot calibrate a range from an empty stream")
    if alpha == beta:
        if not allow_widen:
            raise DegenerateRangeError(
                f"calibrated range collapsed to {alpha}; pass allow_widen to widen it"
            )
        eps = np.finfo(np.float64).eps * max(1.0, abs(alpha))
        logger.warning(f"Degenerate range at {alpha} widened by {eps:.3g}")
        alpha, beta = alpha - eps, beta + eps
    return alpha, beta


# =============================================================================
# KNOT-ALIGNED ACTIVATION LATTICE
# =============================================================================

class LatticeQuantizer:
    """
    Activation quantizer onto the delta / 2**k lattice anchored at domain_lo.

    Level 0 is domain_lo and level G * 2**k is domain_hi, so every knot is
    a lattice point and 2**k levels fall in each knot interval.
    """

    def __init__(self, grid: GridSpec, k: int):
        if int(k) != k or not 1 <= k <= 8:
            raise InvalidArgumentError(f"lattice bits k must be in [1, 8], got {k}")
        self.grid = grid
        self.k = int(k)
        self.per_interval = 2 ** self.k
        self.n_levels = grid.grid_size * self.per_interval + 1
        self.step = grid.delta / self.per_interval

    def quantize(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        r = (x - self.grid.domain_lo) / self.grid.delta * self.per_interval
        return np.clip(round_half_away(r), 0, self.n_levels - 1).astype(np.int64)

    def dequantize(self, level: ArrayLike) -> np.ndarray:
        return self.grid.domain_lo + np.asarray(level, dtype=np.float64) * self.step

    def fake_quant(self, x: ArrayLike) -> np.ndarray:
        return self.dequantize(self.quantize(x))


# =============================================================================
# CONFIGURATION AND FAKE-QUANT FORWARD
# =============================================================================

@dataclass(frozen=True)
class QuantConfig:
    """Model-wide bit-widths applied per tensor to every KAN layer."""
    bw_W: int = PASSTHROUGH_BW
    bw_A: int = PASSTHROUGH_BW
    bw_B: int = PASSTHROUGH_BW
    range_policy_A: str = "grid-bounds"
    a_lattice_bits: Optional[int] = None
    allow_widen: bool = False

    def __post_init__(self):
        for name in ("bw_W", "bw_A", "bw_B"):
            value = getattr(self, name)
            if value not in VALID_BITWIDTHS:
                raise InvalidArgumentError(f"{name}={value} not in {VALID_BITWIDTHS}")
        if self.range_policy_A not in RANGE_POLICIES:
            raise InvalidArgumentError(
                f"unknown activation range policy {self.range_policy_A!r}; choose from {RANGE_POLICIES}"
            )
        if self.a_lattice_bits is not None and not 1 <= self.a_lattice_bits <= 8:
            raise InvalidArgumentError(f"a_lattice_bits must be in [1, 8], got {self.a_lattice_bits}")

    @property
    def is_passthrough(self) -> bool:
        return (
            self.bw_W == PASSTHROUGH_BW
            and self.bw_A == PASSTHROUGH_BW
            and self.bw_B == PASSTHROUGH_BW
            and self.a_lattice_bits is None
        )


class FakeQuantBasis:
    """Basis evaluator that fake-quantizes A, evaluates the recursion, then fake-quantizes B."""

    def __init__(
        self,
        a_params: Optional[QuantParams] = None,
        b_params: Optional[QuantParams] = None,
        lattice: Optional[LatticeQuantizer] = None,
    ):
        self.a_params = a_params or QuantParams.passthrough()
        self.b_params = b_params or QuantParams.passthrough()
        self.lattice = lattice

    def quantize_activations(self, A: np.ndarray) -> np.ndarray:
        if self.lattice is not None:
            return self.lattice.fake_quant(A)
        return fake_quant_tensor(A, self.a_params)

    def __call__(self, A: np.ndarray, grid: GridSpec, counter: Optional[MulCounter] = None) -> np.ndarray:
        B = basis_matrix(self.quantize_activations(A), grid, counter)
        return fake_quant_tensor(B, self.b_params)


def weight_quant_params(coeffs: np.ndarray, bw: int) -> QuantParams:
    """Per-layer weight params from the layer's own min/max."""
    if bw == PASSTHROUGH_BW:
        return QuantParams.passthrough()
    alpha, beta = calibrate_range([coeffs], allow_widen=True)
    return compute_quant_params(alpha, beta, bw)


def quantize_model_weights(model: Model, bw_W: int) -> Model:
    """New model whose KAN coefficients are fake-quantized per layer."""
    if bw_W == PASSTHROUGH_BW:
        return model
    return model.map_kan_layers(
        lambda layer: layer.with_coeffs(fake_quant_tensor(layer.coeffs, weight_quant_params(layer.coeffs, bw_W)))
    )


def calibrate_activation_ranges(model: Model, X: np.ndarray, allow_widen: bool = False) -> List[Tuple[float, float]]:
    """Min/max of the (clamped) input of every KAN layer over a calibration batch."""
    x = model._reshape_input(X)
    ranges = []
    for layer in model.layers:
        if is_kan_layer(layer):
            ranges.append(calibrate_range([clamp_to_domain(x, model.grid)], allow_widen))
        x = layer.forward(x)
    return ranges


def build_fake_quant(
    model: Model,
    qcfg: QuantConfig,
    calibration: Optional[np.ndarray] = None,
) -> Tuple[Model, List[FakeQuantBasis]]:
    """
    Prepare a fake-quantized forward pass.

    Returns:
        (model with fake-quantized weights, one basis evaluator per KAN layer)
    """
    n_kan = len(model.kan_layers())
    b_params = QuantParams.unit_interval(qcfg.bw_B)
    if qcfg.a_lattice_bits is not None:
        lattice = LatticeQuantizer(model.grid, qcfg.a_lattice_bits)
        evaluators = [FakeQuantBasis(b_params=b_params, lattice=lattice) for _ in range(n_kan)]
    elif qcfg.bw_A == PASSTHROUGH_BW or qcfg.range_policy_A == "grid-bounds":
        a_params = QuantParams.for_grid(model.grid, qcfg.bw_A)
        evaluators = [FakeQuantBasis(a_params, b_params) for _ in range(n_kan)]
    else:
        if calibration is None:
            raise InvalidArgumentError("calibrated-minmax activation policy needs calibration data")
        ranges = calibrate_activation_ranges(model, calibration, qcfg.allow_widen)
        evaluators = [
            FakeQuantBasis(compute_quant_params(alpha, beta, qcfg.bw_A), b_params)
            for alpha, beta in ranges
        ]
    return quantize_model_weights(model, qcfg.bw_W), evaluators
