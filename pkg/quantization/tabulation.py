"""
Quantized lookup tables replacing B-spline recursion and whole splines.

Two table kinds live here:

* BsplineLut: half of the canonical degree-P B-spline sampled at 2**k
  points per knot interval and stored as h-bit integers. One instance
  serves every layer of a model by translation (knot-aligned lattice
  addressing) and symmetry (folding around the peak).
* SplineTableSet: one 2**bw_A-entry table per connection of a layer,
  holding the learned spline phi_ij itself, so a layer reduces to table
  lookups and integer additions.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from analysis.cost_model import lut_memory_bits
from kan.bspline import GridSpec, MulCounter, canonical_basis, basis_values, clamp_to_domain
from kan.container import Blob
from kan.layers import ConvKanLayer, KanLinearLayer, im2col_batch, kan_linear_forward
from kan.model import Model, is_kan_layer
from quantization.quantizer import (
    LatticeQuantizer,
    QuantConfig,
    QuantParams,
    compute_quant_params,
    dequantize_value,
    fake_quant_tensor,
    quantize_value,
    weight_quant_params,
)
from utils import FormatError, InvalidArgumentError, ShapeMismatchError, setup_logger
from config import config

logger = setup_logger(__name__, config.app.log_level)


# =============================================================================
# CANONICAL B-SPLINE LUT
# =============================================================================

@dataclass(frozen=True, eq=False)
class BsplineLut:
    """Half-support table of the canonical degree-P B-spline."""
    spline_order: int
    k: int
    h: int
    value_qp: QuantParams
    entries: np.ndarray = field(repr=False)

    @property
    def per_interval(self) -> int:
        return 2 ** self.k

    @property
    def fold_point(self) -> int:
        """Lattice index of the peak, (P + 1) * 2**(k - 1)."""
        return (self.spline_order + 1) * self.per_interval // 2

    @property
    def accounted_bits(self) -> int:
        """2**k * ceil((P + 1) / 2) * h; the extra stored peak entry is not counted."""
        return lut_memory_bits(self.k, self.h, self.spline_order)

    def values(self) -> np.ndarray:
        """Dequantized entries."""
        return dequantize_value(self.entries, self.value_qp)

    def to_blob(self) -> Blob:
        return Blob(
            "bspline_lut",
            self.entries.astype(np.uint8),
            {"P": self.spline_order, "k": self.k, "h": self.h, "value_qp": self.value_qp.to_dict()},
        )

    @classmethod
    def from_blob(cls, blob: Blob) -> "BsplineLut":
        meta = blob.meta
        return cls(
            spline_order=int(meta["P"]),
            k=int(meta["k"]),
            h=int(meta["h"]),
            value_qp=QuantParams.from_dict(meta["value_qp"]),
            entries=np.asarray(blob.data, dtype=np.int64),
        )


def build_bspline_lut(spline_order: int, k: int, h: int) -> BsplineLut:
    """
    Sample the canonical B-spline at m / 2**k, m = 0 .. ceil((P+1)/2) * 2**k.

    Args:
        spline_order: Degree P (>= 1)
        k: Addressing bits per knot interval (1..8)
        h: Stored value bits (2..8)

    Raises:
        InvalidArgumentError: On out-of-range P, k or h
    """
    if int(spline_order) != spline_order or spline_order < 1:
        raise InvalidArgumentError(f"B-spline LUT needs spline_order >= 1, got {spline_order}")
    if int(k) != k or not 1 <= k <= 8:
        raise InvalidArgumentError(f"k must be in [1, 8], got {k}")
    if int(h) != h or not 2 <= h <= 8:
        raise InvalidArgumentError(f"h must be in [2, 8], got {h}")

    per_interval = 2 ** k
    n_entries = math.ceil((spline_order + 1) / 2) * per_interval + 1
    positions = np.arange(n_entries, dtype=np.float64) / per_interval
    value_qp = QuantParams.unit_interval(h)
    entries = quantize_value(canonical_basis(positions, spline_order), value_qp)
    entries[0] = 0
    entries.setflags(write=False)
    logger.debug(f"Built B-spline LUT P={spline_order} k={k} h={h} ({n_entries} stored entries)")
    return BsplineLut(spline_order, int(k), int(h), value_qp, entries)


@dataclass(frozen=True)
class QuantizedBasis:
    """h-bit basis levels at one lattice point."""
    values: np.ndarray
    support_start: int


def _lut_levels(levels: np.ndarray, grid: GridSpec, lut: BsplineLut):
    """
    Basis indices and table addresses for every locally supported function.

    Returns:
        (basis index [..., P + 1], folded address [..., P + 1], valid mask [..., P + 1])
    """
    P = grid.spline_order
    per = lut.per_interval
    r = np.arange(P + 1)
    interval = levels // per
    offset = levels % per
    index = interval[..., None] + r
    m = (P - r) * per + offset[..., None]
    folded = np.where(m > lut.fold_point, (P + 1) * per - m, m)
    valid = index < grid.n_basis
    return index, folded, valid


def _check_lut(grid: GridSpec, lut: BsplineLut) -> None:
    if lut.spline_order != grid.spline_order:
        raise InvalidArgumentError(
            f"LUT degree {lut.spline_order} does not match grid degree {grid.spline_order}"
        )


def lut_basis_lookup(a_level: int, grid: GridSpec, lut: BsplineLut) -> QuantizedBasis:
    """
    Quantized basis at a lattice activation by translation and symmetry.

    Args:
        a_level: Activation index on the delta / 2**k lattice, 0 .. G * 2**k
        grid: Layer grid
        lut: Canonical table

    Returns:
        QuantizedBasis with G + P integer levels

    Raises:
        InvalidArgumentError: If a_level is outside the lattice
    """
    _check_lut(grid, lut)
    n_levels = grid.grid_size * lut.per_interval
    if int(a_level) != a_level or not 0 <= a_level <= n_levels:
        raise InvalidArgumentError(f"a_level {a_level} outside [0, {n_levels}]")
    index, folded, valid = _lut_levels(np.asarray(int(a_level)), grid, lut)
    values = np.zeros(grid.n_basis, dtype=np.int64)
    values[index[valid]] = lut.entries[folded[valid]]
    return QuantizedBasis(values=values, support_start=int(index[0]))


def lut_basis_levels(levels: np.ndarray, grid: GridSpec, lut: BsplineLut) -> np.ndarray:
    """Vectorised lookup: lattice levels [M, n] -> integer basis [M, n, G + P]."""
    _check_lut(grid, lut)
    levels = np.asarray(levels, dtype=np.int64)
    index, folded, valid = _lut_levels(levels, grid, lut)
    out = np.zeros(levels.shape + (grid.n_basis + 1,), dtype=np.int64)
    # Out-of-range indices land in a spill column that is dropped
    np.put_along_axis(out, np.where(valid, index, grid.n_basis), lut.entries[folded], axis=-1)
    return out[..., :grid.n_basis]


class LutBasis:
    """Basis evaluator backed by a BsplineLut; performs no multiplications."""

    def __init__(self, lut: BsplineLut, grid: GridSpec):
        _check_lut(grid, lut)
        self.lut = lut
        self.lattice = LatticeQuantizer(grid, lut.k)

    def __call__(self, A: np.ndarray, grid: GridSpec, counter: Optional[MulCounter] = None) -> np.ndarray:
        A = np.asarray(A, dtype=np.float64)
        levels = self.lattice.quantize(A)
        q = lut_basis_levels(levels, grid, self.lut)
        return dequantize_value(q, self.lut.value_qp).reshape(A.shape[0], A.shape[1] * grid.n_basis)


def tabulated_kan_forward(
    A: np.ndarray,
    layer: KanLinearLayer,
    lut: BsplineLut,
    qcfg: Optional[QuantConfig] = None,
    counter: Optional[MulCounter] = None,
) -> np.ndarray:
    """
    KAN linear forward with LUT basis evaluation and fake-quantized weights.

    Activations are quantized to the knot lattice, looked up, scattered into
    the dense B matrix and multiplied by W.
    """
    qcfg = qcfg or QuantConfig()
    coeffs = fake_quant_tensor(layer.coeffs, weight_quant_params(layer.coeffs, qcfg.bw_W))
    return kan_linear_forward(A, layer.with_coeffs(coeffs), LutBasis(lut, layer.grid), counter)


# =============================================================================
# PER-CONNECTION SPLINE TABLES
# =============================================================================

@dataclass(eq=False)
class SplineTableSet:
    """Tables phi_ij(deq_A(m)) for one KAN layer, sharing one output scale."""
    n_in: int
    n_out: int
    bw_A: int
    h: int
    input_qp: QuantParams
    output_qp: QuantParams
    tables: np.ndarray = field(repr=False)   # [n_in, n_out, 2**bw_A]
    layer_meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        expected = (self.n_in, self.n_out, 2 ** self.bw_A)
        if self.tables.shape != expected:
            raise ShapeMismatchError(f"spline tables must have shape {expected}, got {self.tables.shape}")

    @property
    def n_tables(self) -> int:
        return self.n_in * self.n_out

    @property
    def stored_bits(self) -> int:
        return self.n_in * self.n_out * (2 ** self.bw_A) * self.h

    def values(self) -> np.ndarray:
        return dequantize_value(self.tables, self.output_qp)

    def to_blob(self, index: int) -> Blob:
        meta = {
            "n_in": self.n_in,
            "n_out": self.n_out,
            "bw_A": self.bw_A,
            "h": self.h,
            "input_qp": self.input_qp.to_dict(),
            "output_qp": self.output_qp.to_dict(),
            "layer": self.layer_meta,
        }
        return Blob(f"spline_tables.{index}", self.tables.astype(np.uint8), meta)

    @classmethod
    def from_blob(cls, blob: Blob) -> "SplineTableSet":
        meta = blob.meta
        try:
            return cls(
                n_in=int(meta["n_in"]),
                n_out=int(meta["n_out"]),
                bw_A=int(meta["bw_A"]),
                h=int(meta["h"]),
                input_qp=QuantParams.from_dict(meta["input_qp"]),
                output_qp=QuantParams.from_dict(meta["output_qp"]),
                tables=np.asarray(blob.data, dtype=np.int64),
                layer_meta=dict(meta.get("layer", {})),
            )
        except KeyError as e:
            raise FormatError(f"spline table blob {blob.name} missing field {e}") from e


def _check_table_bits(bw_A: int, h: int) -> None:
    if int(bw_A) != bw_A or not 1 <= bw_A <= 8:
        raise InvalidArgumentError(f"bw_A must be in [1, 8], got {bw_A}")
    if int(h) != h or not 2 <= h <= 8:
        raise InvalidArgumentError(f"h must be in [2, 8], got {h}")


def build_spline_tables(layer, bw_A: int, h: int) -> SplineTableSet:
    """
    Tabulate every connection of a KAN linear or conv layer.

    Inputs are quantized over the grid bounds (no calibration data); the
    output scale is shared by the whole layer and spans the min/max of all
    sampled spline values (always including 0).

    Args:
        layer: KanLinearLayer or ConvKanLayer
        bw_A: Input bits, 2**bw_A entries per table (1..8)
        h: Stored value bits (2..8)
    """
    _check_table_bits(bw_A, h)
    if isinstance(layer, ConvKanLayer):
        layer_meta = {
            "kind": layer.kind,
            "kernel": layer.kernel,
            "stride": layer.stride,
            "padding": layer.padding,
            "c_in": layer.c_in,
        }
        linear = layer.as_linear()
    elif isinstance(layer, KanLinearLayer):
        layer_meta = {"kind": layer.kind}
        linear = layer
    else:
        raise InvalidArgumentError(f"cannot tabulate layer of type {type(layer).__name__}")

    grid = linear.grid
    input_qp = compute_quant_params(grid.domain_lo, grid.domain_hi, bw_A)
    samples = clamp_to_domain(dequantize_value(np.arange(2 ** bw_A), input_qp), grid)
    basis = basis_values(samples, grid)                       # [L, G + P]
    phi = np.einsum("lk,ikj->ijl", basis, linear.connection_coeffs())

    alpha = min(float(phi.min()), 0.0) if phi.size else 0.0
    beta = max(float(phi.max()), 0.0) if phi.size else 0.0
    if beta == alpha:
        beta = alpha + 1.0
    output_qp = compute_quant_params(alpha, beta, h)
    tables = quantize_value(phi, output_qp)
    return SplineTableSet(linear.n_in, linear.n_out, int(bw_A), int(h), input_qp, output_qp, tables, layer_meta)


def _table_rows_forward(A: np.ndarray, tables: SplineTableSet, chunk: int = 64) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[1] != tables.n_in:
        raise ShapeMismatchError(f"spline tables expect input [M, {tables.n_in}], got {list(A.shape)}")
    levels = quantize_value(A, tables.input_qp)
    acc = np.zeros((A.shape[0], tables.n_out), dtype=np.int64)
    for start in range(0, tables.n_in, chunk):
        block = tables.tables[start:start + chunk]                 # [c, n_out, L]
        lv = levels[:, start:start + chunk]                        # [M, c]
        picked = block[np.arange(block.shape[0])[None, :], :, lv]  # [M, c, n_out]
        acc += picked.sum(axis=1)
    # One dequantization per output: s * (sum q - n_in * z)
    return tables.output_qp.scale * (acc - tables.n_in * tables.output_qp.zero_point).astype(np.float64)


def spline_table_forward(A: np.ndarray, tables: SplineTableSet) -> np.ndarray:
    """
    Lookup-and-add forward of one tabulated layer.

    Linear layers take [M, n_in]; conv layers take [N, C, H, W] and are
    unfolded through im2col first.
    """
    meta = tables.layer_meta
    if meta.get("kind") == ConvKanLayer.kind:
        x = np.asarray(A, dtype=np.float64)
        if x.ndim != 4:
            raise ShapeMismatchError(f"conv spline tables expect [N, C, H, W], got {list(x.shape)}")
        cols = im2col_batch(x, meta["kernel"], meta["stride"], meta["padding"])
        out = _table_rows_forward(cols, tables)
        N = x.shape[0]
        H_out = (x.shape[2] + 2 * meta["padding"] - meta["kernel"]) // meta["stride"] + 1
        W_out = (x.shape[3] + 2 * meta["padding"] - meta["kernel"]) // meta["stride"] + 1
        return out.reshape(N, H_out, W_out, tables.n_out).transpose(0, 3, 1, 2)
    return _table_rows_forward(A, tables)


def tabulate_model(model: Model, bw_A: int, h: int) -> List[SplineTableSet]:
    """Spline tables for every KAN layer of a model, in layer order."""
    tables = [build_spline_tables(layer, bw_A, h) for layer in model.kan_layers()]
    logger.info(
        f"Tabulated {model.name}: {sum(t.n_tables for t in tables)} tables, "
        f"{sum(t.stored_bits for t in tables)} stored bits (bw_A={bw_A}, h={h})"
    )
    return tables


def spline_table_model_forward(model: Model, tables: Sequence[SplineTableSet], X: np.ndarray) -> np.ndarray:
    """Model forward where every KAN layer is replaced by its spline tables."""
    kan_layers = model.kan_layers()
    if len(tables) != len(kan_layers):
        raise ShapeMismatchError(f"model has {len(kan_layers)} KAN layers, got {len(tables)} table sets")
    x = model._reshape_input(X)
    it = iter(tables)
    for layer in model.layers:
        x = spline_table_forward(x, next(it)) if is_kan_layer(layer) else layer.forward(x)
    return x.reshape(x.shape[0], -1)


def spline_table_error_bound(tables: SplineTableSet, layer) -> np.ndarray:
    """
    Per-output bound on |table forward - FP32 forward| for in-domain inputs.

    n_in * s_out / 2 for output rounding plus, per connection, the spline's
    Lipschitz constant times half an input step.
    """
    linear = layer.as_linear() if isinstance(layer, ConvKanLayer) else layer
    grid = linear.grid
    w = linear.connection_coeffs()                              # [n_in, G + P, n_out]
    if grid.spline_order >= 1 and w.shape[1] > 1:
        lipschitz = np.abs(np.diff(w, axis=1)).max(axis=1) / grid.delta
    else:
        lipschitz = np.zeros((linear.n_in, linear.n_out))
    sampling = (lipschitz * tables.input_qp.scale / 2).sum(axis=0)
    return tables.n_in * tables.output_qp.scale / 2 + sampling + 1e-9


def tables_to_blobs(tables: Sequence[SplineTableSet]) -> List[Blob]:
    return [t.to_blob(index) for index, t in enumerate(tables)]


def tables_from_blobs(blobs: Dict[str, Blob]) -> List[SplineTableSet]:
    names = sorted(
        (name for name in blobs if name.startswith("spline_tables.")),
        key=lambda name: int(name.split(".")[1]),
    )
    return [SplineTableSet.from_blob(blobs[name]) for name in names]
