"""
Uniform B-spline grids and Cox-de Boor basis evaluation.

All evaluation runs in knot units: a position x is mapped to
t = (x - knots[0]) / delta, so knot i sits at the integer i and every
knot difference of span d equals d. Reciprocals 1/d are precomputed on
the grid. Because t is snapped to a fine dyadic lattice, evaluating a
translated basis function performs the exact same floating-point
operations as evaluating the canonical one, which is what lets a single
canonical table reproduce every basis value bit-for-bit.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from utils import InvalidArgumentError, setup_logger
from config import config

logger = setup_logger(__name__, config.app.log_level)

# Knot coordinates are rounded to multiples of 2**-40.
KNOT_SNAP = float(2 ** 40)

# Upper bound on elements per evaluation chunk in basis_matrix.
_CHUNK_ELEMENTS = 1 << 18


@dataclass
class MulCounter:
    """Counts scalar multiplications performed by a forward pass."""
    bspline: int = 0
    matmul: int = 0


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Uniform knot vector extended by `spline_order` knots on both sides."""
    grid_size: int
    spline_order: int
    domain_lo: float
    domain_hi: float
    knots: np.ndarray = field(repr=False)
    delta: float
    inv_spans: Tuple[float, ...] = field(repr=False)

    @property
    def n_basis(self) -> int:
        """Number of degree-P basis functions (G + P)."""
        return self.grid_size + self.spline_order

    @property
    def n_intervals(self) -> int:
        """Number of degree-0 functions on the extended grid (G + 2P)."""
        return self.grid_size + 2 * self.spline_order

    def same_as(self, other: "GridSpec") -> bool:
        return (
            self.grid_size == other.grid_size
            and self.spline_order == other.spline_order
            and self.domain_lo == other.domain_lo
            and self.domain_hi == other.domain_hi
        )

    def to_dict(self) -> dict:
        return {
            "G": self.grid_size,
            "P": self.spline_order,
            "domain": [self.domain_lo, self.domain_hi],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        lo, hi = data["domain"]
        return build_grid(int(data["G"]), int(data["P"]), float(lo), float(hi))


@dataclass(frozen=True)
class BasisVector:
    """Degree-P basis values at one point."""
    values: np.ndarray
    support_start: int


def build_grid(
    grid_size: int,
    spline_order: int,
    domain_lo: float = -1.0,
    domain_hi: float = 1.0,
) -> GridSpec:
    """
    Build a uniform grid of G intervals on [domain_lo, domain_hi].

    Args:
        grid_size: Number of interior intervals G (>= 1)
        spline_order: Spline degree P (>= 0)
        domain_lo: Left interior bound
        domain_hi: Right interior bound

    Returns:
        GridSpec with G + 2P + 1 knots, knots[i] = domain_lo + (i - P) * delta

    Raises:
        InvalidArgumentError: On G < 1, P < 0 or an empty domain
    """
    if int(grid_size) != grid_size or grid_size < 1:
        raise InvalidArgumentError(f"grid_size must be a positive integer, got {grid_size}")
    if int(spline_order) != spline_order or spline_order < 0:
        raise InvalidArgumentError(f"spline_order must be a non-negative integer, got {spline_order}")
    if not (np.isfinite(domain_lo) and np.isfinite(domain_hi)) or not domain_hi > domain_lo:
        raise InvalidArgumentError(
            f"degenerate domain [{domain_lo}, {domain_hi}]: domain_hi must exceed domain_lo"
        )

    grid_size = int(grid_size)
    spline_order = int(spline_order)
    delta = (domain_hi - domain_lo) / grid_size
    offsets = np.arange(grid_size + 2 * spline_order + 1, dtype=np.float64) - spline_order
    knots = domain_lo + offsets * delta
    # Interior bounds are pinned exactly
    knots[spline_order] = domain_lo
    knots[spline_order + grid_size] = domain_hi
    knots.setflags(write=False)

    inv_spans = tuple(1.0 / d for d in range(1, spline_order + 1))
    return GridSpec(
        grid_size=grid_size,
        spline_order=spline_order,
        domain_lo=float(domain_lo),
        domain_hi=float(domain_hi),
        knots=knots,
        delta=float(delta),
        inv_spans=inv_spans,
    )


def default_grid() -> GridSpec:
    """Grid from the active configuration."""
    g = config.grid
    return build_grid(g.grid_size, g.spline_order, g.domain_lo, g.domain_hi)


def canonical_grid(spline_order: int) -> GridSpec:
    """Grid whose basis index P is the canonical B-spline on [0, P + 1]."""
    return build_grid(spline_order + 1, spline_order, 0.0, float(spline_order + 1))


def knot_coordinate(x, grid: GridSpec) -> np.ndarray:
    """Position of x in knot units (0 at knots[0]), snapped to 2**-40."""
    x = np.asarray(x, dtype=np.float64)
    t = (x - grid.domain_lo) / grid.delta + grid.spline_order
    with np.errstate(invalid="ignore"):
        return np.round(t * KNOT_SNAP) / KNOT_SNAP


def _degree0(t: np.ndarray, n_intervals: int) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        inside = (t >= 0.0) & (t < n_intervals)
        j = np.where(inside, np.floor(np.where(inside, t, 0.0)), -1).astype(np.int64)
    return (j[..., None] == np.arange(n_intervals)).astype(np.float64)


def _raise_degree(
    b: np.ndarray,
    t: np.ndarray,
    d: int,
    inv_span: float,
    counter: Optional[MulCounter],
) -> np.ndarray:
    # Each degree-(d-1) function contributes (t - i)/d to b_{i,d} and
    # (i + d - t)/d to b_{i-1,d}; four multiplications per function.
    i = np.arange(b.shape[-1], dtype=np.float64)
    tt = t[..., None]
    left = (tt - i) * inv_span
    right = (i + d - tt) * inv_span
    up = left * b
    down = right * b
    if counter is not None:
        counter.bspline += 4 * b.size
    return up[..., :-1] + down[..., 1:]


def _triangle(t: np.ndarray, grid: GridSpec, degree: int, counter: Optional[MulCounter] = None) -> np.ndarray:
    b = _degree0(t, grid.n_intervals)
    for d in range(1, degree + 1):
        b = _raise_degree(b, t, d, grid.inv_spans[d - 1], counter)
    return b


def basis_degree0(x: float, grid: GridSpec) -> np.ndarray:
    """
    Degree-0 indicators over the G + 2P knot intervals.

    Intervals are half-open [t_i, t_{i+1}); the right end of the extended
    grid and anything beyond it evaluates to all zeros.
    """
    return _degree0(knot_coordinate(x, grid), grid.n_intervals)


def basis_values(x, grid: GridSpec, counter: Optional[MulCounter] = None) -> np.ndarray:
    """
    Vectorised Cox-de Boor evaluation.

    Args:
        x: Array of any shape
        grid: Grid to evaluate on
        counter: Optional multiplication counter

    Returns:
        Array of shape x.shape + (G + P,)
    """
    t = knot_coordinate(x, grid)
    return _triangle(t, grid, grid.spline_order, counter)


def cox_de_boor(x: float, grid: GridSpec) -> BasisVector:
    """Degree-P basis values at a single point."""
    t = knot_coordinate(x, grid)
    values = _triangle(t, grid, grid.spline_order)
    if 0.0 <= t < grid.n_intervals:
        start = max(0, int(np.floor(t)) - grid.spline_order)
    else:
        start = 0
    return BasisVector(values=values, support_start=min(start, grid.n_basis - 1))


def basis_values_and_derivatives(x, grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Basis values and their derivatives with respect to x.

    Uses d/dx b_{i,P} = (b_{i,P-1} - b_{i+1,P-1}) / delta on a uniform grid.
    """
    P = grid.spline_order
    if P < 1:
        raise InvalidArgumentError("basis derivative requires spline_order >= 1")
    t = knot_coordinate(x, grid)
    lower = _triangle(t, grid, P - 1)
    values = _raise_degree(lower, t, P, grid.inv_spans[P - 1], None)
    derivs = (lower[..., :-1] - lower[..., 1:]) / grid.delta
    return values, derivs


def basis_derivative(x: float, grid: GridSpec) -> np.ndarray:
    """Analytic derivative of each degree-P basis function at x."""
    return basis_values_and_derivatives(x, grid)[1]


def canonical_basis(u, spline_order: int) -> np.ndarray:
    """
    The canonical degree-P B-spline on knots 0..P+1, in knot units.

    canonical_basis(1, 3) == 1/6 and canonical_basis(2, 3) == 2/3.
    """
    grid = canonical_grid(spline_order)
    return basis_values(u, grid)[..., spline_order]


def basis_matrix(
    A: np.ndarray,
    grid: GridSpec,
    counter: Optional[MulCounter] = None,
) -> np.ndarray:
    """
    Dense B matrix for a batch of activations.

    Args:
        A: Activations of shape [M, n_in]
        grid: Grid shared by the layer
        counter: Optional multiplication counter

    Returns:
        [M, n_in * (G + P)] matrix, input-major then basis index
    """
    A = np.asarray(A, dtype=np.float64)
    M, n_in = A.shape
    out = np.empty((M, n_in, grid.n_basis), dtype=np.float64)
    rows = max(1, _CHUNK_ELEMENTS // max(1, n_in))
    for start in range(0, M, rows):
        out[start:start + rows] = basis_values(A[start:start + rows], grid, counter)
    return out.reshape(M, n_in * grid.n_basis)


def basis_and_derivative_matrix(A: np.ndarray, grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Chunked basis_values_and_derivatives for a batch of activations.

    Returns:
        (B [M, n_in * (G + P)], dB/dA [M, n_in, G + P])
    """
    A = np.asarray(A, dtype=np.float64)
    M, n_in = A.shape
    values = np.empty((M, n_in, grid.n_basis), dtype=np.float64)
    derivs = np.empty_like(values)
    rows = max(1, _CHUNK_ELEMENTS // max(1, n_in))
    for start in range(0, M, rows):
        values[start:start + rows], derivs[start:start + rows] = basis_values_and_derivatives(
            A[start:start + rows], grid
        )
    return values.reshape(M, n_in * grid.n_basis), derivs


def evaluate_spline(x, coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """phi(x) = sum_k w_k b_k(x) for one connection's coefficient vector."""
    return basis_values(x, grid) @ np.asarray(coeffs, dtype=np.float64)


def clamp_to_domain(A: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Clamp activations to [domain_lo, domain_hi - ulp]."""
    hi = np.nextafter(grid.domain_hi, -np.inf)
    return np.clip(A, grid.domain_lo, hi)
