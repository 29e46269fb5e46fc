"""
KAN layers: spline linear, spline convolution (via im2col), pooling, flatten.

Coefficient matrices are laid out input-major then basis index, so row
i * (G + P) + k of W multiplies basis k evaluated at input i. This is the
contiguous B-matrix layout of the layer-as-matmul formulation and the
order the model container freezes on disk.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from kan.bspline import (
    GridSpec,
    MulCounter,
    basis_and_derivative_matrix,
    basis_matrix,
    clamp_to_domain,
)
from utils import InvalidArgumentError, ShapeMismatchError

# (A [M, n_in], grid, counter) -> B [M, n_in * (G + P)]
BasisEvaluator = Callable[[np.ndarray, GridSpec, Optional[MulCounter]], np.ndarray]


def recursive_basis(A: np.ndarray, grid: GridSpec, counter: Optional[MulCounter] = None) -> np.ndarray:
    """Full-precision Cox-de Boor basis evaluator."""
    return basis_matrix(A, grid, counter)


def matmul(B: np.ndarray, W: np.ndarray, counter: Optional[MulCounter] = None) -> np.ndarray:
    """B @ W with optional multiplication accounting."""
    if counter is not None:
        counter.matmul += B.shape[0] * B.shape[1] * W.shape[1]
    return B @ W


# =============================================================================
# SPLINE LINEAR
# =============================================================================

@dataclass(eq=False)
class KanLinearLayer:
    """KAN layer computing out[m, j] = sum_i phi_ij(A[m, i])."""
    n_in: int
    n_out: int
    grid: GridSpec
    coeffs: np.ndarray = field(repr=False)

    kind = "kan_linear"

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        expected = (self.n_in * self.grid.n_basis, self.n_out)
        if self.coeffs.shape != expected:
            raise ShapeMismatchError(
                f"KanLinearLayer coeffs must have shape {expected}, got {self.coeffs.shape}"
            )

    @property
    def n_connections(self) -> int:
        return self.n_in * self.n_out

    @property
    def param_count(self) -> int:
        return self.n_in * self.n_out * self.grid.n_basis

    def connection_coeffs(self) -> np.ndarray:
        """Coefficients as [n_in, G + P, n_out]."""
        return self.coeffs.reshape(self.n_in, self.grid.n_basis, self.n_out)

    def with_coeffs(self, coeffs: np.ndarray) -> "KanLinearLayer":
        return KanLinearLayer(self.n_in, self.n_out, self.grid, coeffs)

    def output_shape(self, in_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        if in_shape != (self.n_in,):
            raise ShapeMismatchError(f"KanLinearLayer expects input ({self.n_in},), got {in_shape}")
        return (self.n_out,)

    def forward(
        self,
        A: np.ndarray,
        basis_eval: Optional[BasisEvaluator] = None,
        counter: Optional[MulCounter] = None,
    ) -> np.ndarray:
        return kan_linear_forward(A, self, basis_eval, counter)

    def forward_train(self, A: np.ndarray):
        A = _check_2d(A, self.n_in, "KanLinearLayer")
        B, derivs = basis_and_derivative_matrix(clamp_to_domain(A, self.grid), self.grid)
        out = B @ self.coeffs
        inside = (A >= self.grid.domain_lo) & (A <= self.grid.domain_hi)
        return out, (B, derivs, inside)

    def backward(self, cache, grad_out: np.ndarray):
        """Return (grad wrt input, grad wrt coeffs)."""
        B, derivs, inside = cache
        grad_coeffs = B.T @ grad_out
        grad_B = (grad_out @ self.coeffs.T).reshape(derivs.shape)
        grad_in = np.einsum("mik,mik->mi", grad_B, derivs) * inside
        return grad_in, grad_coeffs


def _check_2d(A: np.ndarray, n_in: int, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[1] != n_in:
        raise ShapeMismatchError(f"{name} expects input [M, {n_in}], got {list(A.shape)}")
    return A


def kan_linear_forward(
    A: np.ndarray,
    layer: KanLinearLayer,
    basis_eval: Optional[BasisEvaluator] = None,
    counter: Optional[MulCounter] = None,
) -> np.ndarray:
    """
    Forward pass of a KAN linear layer as dense B construction plus matmul.

    Args:
        A: Activations [M, n_in]
        layer: Layer to apply
        basis_eval: Basis evaluator (recursive by default)
        counter: Optional multiplication counter

    Returns:
        Output [M, n_out]

    Raises:
        ShapeMismatchError: If A does not have n_in columns
    """
    A = _check_2d(A, layer.n_in, "KanLinearLayer")
    basis_eval = basis_eval or recursive_basis
    B = basis_eval(clamp_to_domain(A, layer.grid), layer.grid, counter)
    return matmul(B, layer.coeffs, counter)


# =============================================================================
# IM2COL
# =============================================================================

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if kernel < 1 or stride < 1 or padding < 0:
        raise InvalidArgumentError(
            f"invalid convolution geometry kernel={kernel} stride={stride} padding={padding}"
        )
    if span < 0 or span % stride:
        raise InvalidArgumentError(
            f"input size {size} with kernel {kernel}, stride {stride}, padding {padding} "
            f"does not give a positive integral output size"
        )
    return span // stride + 1


def im2col_batch(x: np.ndarray, kernel: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """
    Unfold [N, C, H, W] into patch rows [N * H_out * W_out, C * K * K].

    Columns are channel-major, then kernel row, then kernel column.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeMismatchError(f"im2col expects [N, C, H, W], got {list(x.shape)}")
    N, C, H, W = x.shape
    H_out = conv_output_size(H, kernel, stride, padding)
    W_out = conv_output_size(W, kernel, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :H_out, :W_out]
    # [N, C, H_out, W_out, K, K] -> [N, H_out, W_out, C, K, K]
    patches = windows.transpose(0, 2, 3, 1, 4, 5)
    return patches.reshape(N * H_out * W_out, C * kernel * kernel)


def im2col(feature_map: np.ndarray, kernel: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Unfold one [C, H, W] feature map into [H_out * W_out, K * K * C] patch rows."""
    feature_map = np.asarray(feature_map, dtype=np.float64)
    if feature_map.ndim != 3:
        raise ShapeMismatchError(f"im2col expects [C, H, W], got {list(feature_map.shape)}")
    return im2col_batch(feature_map[None], kernel, stride, padding)


def col2im_batch(
    cols: np.ndarray,
    x_shape: Tuple[int, int, int, int],
    kernel: int,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Scatter-add patch-row gradients back onto [N, C, H, W]."""
    N, C, H, W = x_shape
    H_out = conv_output_size(H, kernel, stride, padding)
    W_out = conv_output_size(W, kernel, stride, padding)
    patches = cols.reshape(N, H_out, W_out, C, kernel, kernel)
    out = np.zeros((N, C, H + 2 * padding, W + 2 * padding), dtype=np.float64)
    for ky in range(kernel):
        for kx in range(kernel):
            out[:, :, ky:ky + stride * H_out:stride, kx:kx + stride * W_out:stride] += (
                patches[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
            )
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


# =============================================================================
# SPLINE CONVOLUTION
# =============================================================================

@dataclass(eq=False)
class ConvKanLayer:
    """KAN convolution: the spline linear layer applied to every im2col patch."""
    c_in: int
    c_out: int
    kernel: int
    stride: int
    padding: int
    grid: GridSpec
    coeffs: np.ndarray = field(repr=False)

    kind = "conv_kan"

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        expected = (self.kernel * self.kernel * self.c_in * self.grid.n_basis, self.c_out)
        if self.coeffs.shape != expected:
            raise ShapeMismatchError(
                f"ConvKanLayer coeffs must have shape {expected}, got {self.coeffs.shape}"
            )

    @property
    def patch_size(self) -> int:
        return self.kernel * self.kernel * self.c_in

    @property
    def n_connections(self) -> int:
        return self.patch_size * self.c_out

    @property
    def param_count(self) -> int:
        return self.n_connections * self.grid.n_basis

    def as_linear(self) -> KanLinearLayer:
        return KanLinearLayer(self.patch_size, self.c_out, self.grid, self.coeffs)

    def with_coeffs(self, coeffs: np.ndarray) -> "ConvKanLayer":
        return ConvKanLayer(
            self.c_in, self.c_out, self.kernel, self.stride, self.padding, self.grid, coeffs
        )

    def output_shape(self, in_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(in_shape) != 3 or in_shape[0] != self.c_in:
            raise ShapeMismatchError(
                f"ConvKanLayer expects input ({self.c_in}, H, W), got {in_shape}"
            )
        _, H, W = in_shape
        return (
            self.c_out,
            conv_output_size(H, self.kernel, self.stride, self.padding),
            conv_output_size(W, self.kernel, self.stride, self.padding),
        )

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeMismatchError(
                f"ConvKanLayer expects [N, {self.c_in}, H, W], got {list(x.shape)}"
            )
        return x

    def forward(
        self,
        x: np.ndarray,
        basis_eval: Optional[BasisEvaluator] = None,
        counter: Optional[MulCounter] = None,
    ) -> np.ndarray:
        x = self._check(x)
        N = x.shape[0]
        _, H_out, W_out = self.output_shape(x.shape[1:])
        cols = im2col_batch(x, self.kernel, self.stride, self.padding)
        out = kan_linear_forward(cols, self.as_linear(), basis_eval, counter)
        return out.reshape(N, H_out, W_out, self.c_out).transpose(0, 3, 1, 2)

    def forward_train(self, x: np.ndarray):
        x = self._check(x)
        N = x.shape[0]
        _, H_out, W_out = self.output_shape(x.shape[1:])
        cols = im2col_batch(x, self.kernel, self.stride, self.padding)
        out, cache = self.as_linear().forward_train(cols)
        out = out.reshape(N, H_out, W_out, self.c_out).transpose(0, 3, 1, 2)
        return out, (cache, x.shape, H_out, W_out)

    def backward(self, cache, grad_out: np.ndarray):
        linear_cache, x_shape, H_out, W_out = cache
        grad_rows = grad_out.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        grad_cols, grad_coeffs = self.as_linear().backward(linear_cache, grad_rows)
        grad_in = col2im_batch(grad_cols, x_shape, self.kernel, self.stride, self.padding)
        return grad_in, grad_coeffs


def convkan_forward(
    feature_map: np.ndarray,
    layer: ConvKanLayer,
    basis_eval: Optional[BasisEvaluator] = None,
    counter: Optional[MulCounter] = None,
) -> np.ndarray:
    """Apply a ConvKAN layer to one [C, H, W] feature map; returns [c_out, H_out, W_out]."""
    feature_map = np.asarray(feature_map, dtype=np.float64)
    if feature_map.ndim != 3:
        raise ShapeMismatchError(f"convkan_forward expects [C, H, W], got {list(feature_map.shape)}")
    return layer.forward(feature_map[None], basis_eval, counter)[0]


# =============================================================================
# POOLING / FLATTEN
# =============================================================================

def maxpool2x2(x: np.ndarray) -> np.ndarray:
    """2x2 stride-2 max pooling over the last two axes (odd edges dropped)."""
    x = np.asarray(x)
    if x.ndim < 2 or x.shape[-1] < 2 or x.shape[-2] < 2:
        raise ShapeMismatchError(f"maxpool2x2 needs spatial dims >= 2, got {list(x.shape)}")
    H, W = x.shape[-2] // 2, x.shape[-1] // 2
    x = x[..., :2 * H, :2 * W]
    return x.reshape(*x.shape[:-2], H, 2, W, 2).max(axis=(-3, -1))


def flatten(x: np.ndarray) -> np.ndarray:
    """Channel-major flatten of one tensor."""
    return np.asarray(x).reshape(-1)


@dataclass(eq=False)
class MaxPool2d:
    window: int = 2

    kind = "maxpool"

    def __post_init__(self):
        if self.window != 2:
            raise InvalidArgumentError("only 2x2 max pooling is supported")

    def output_shape(self, in_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(in_shape) != 3 or in_shape[1] < 2 or in_shape[2] < 2:
            raise ShapeMismatchError(f"MaxPool2d expects (C, H>=2, W>=2), got {in_shape}")
        C, H, W = in_shape
        return (C, H // 2, W // 2)

    def forward(self, x: np.ndarray, basis_eval=None, counter=None) -> np.ndarray:
        return maxpool2x2(x)

    def forward_train(self, x: np.ndarray):
        out = maxpool2x2(x)
        N, C, H, W = x.shape
        Ho, Wo = H // 2, W // 2
        blocks = x[:, :, :2 * Ho, :2 * Wo].reshape(N, C, Ho, 2, Wo, 2)
        blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho, Wo, 4)
        winner = blocks.argmax(axis=-1)
        return out, (x.shape, winner)

    def backward(self, cache, grad_out: np.ndarray):
        x_shape, winner = cache
        N, C, H, W = x_shape
        Ho, Wo = H // 2, W // 2
        routed = np.zeros((N, C, Ho, Wo, 4), dtype=np.float64)
        np.put_along_axis(routed, winner[..., None], grad_out[..., None], axis=-1)
        routed = routed.reshape(N, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        grad_in = np.zeros(x_shape, dtype=np.float64)
        grad_in[:, :, :2 * Ho, :2 * Wo] = routed.reshape(N, C, 2 * Ho, 2 * Wo)
        return grad_in, None


@dataclass(eq=False)
class Flatten:
    kind = "flatten"

    def output_shape(self, in_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return (int(np.prod(in_shape)),)

    def forward(self, x: np.ndarray, basis_eval=None, counter=None) -> np.ndarray:
        return np.asarray(x).reshape(x.shape[0], -1)

    def forward_train(self, x: np.ndarray):
        return self.forward(x), x.shape

    def backward(self, cache, grad_out: np.ndarray):
        return grad_out.reshape(cache), None
