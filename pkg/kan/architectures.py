"""
Builders for the desk-scale MNIST models: KANMLP1, KANMLP2 and LeKAN.
"""
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from kan.bspline import GridSpec, default_grid
from kan.layers import ConvKanLayer, Flatten, KanLinearLayer, MaxPool2d
from kan.model import Model
from utils import InvalidArgumentError


def init_coeffs(rng: np.random.Generator, fan_in: int, n_out: int, grid: GridSpec) -> np.ndarray:
    """N(0, 1/fan_in) coefficients rounded to float32 values."""
    sigma = 1.0 / np.sqrt(fan_in)
    shape = (fan_in * grid.n_basis, n_out)
    return (rng.standard_normal(shape) * sigma).astype(np.float32).astype(np.float64)


def kan_mlp(widths: Sequence[int], grid: GridSpec, seed: int = 0, name: str = "kanmlp") -> Model:
    """Stack of KAN linear layers with the given widths."""
    if len(widths) < 2:
        raise InvalidArgumentError("kan_mlp needs at least input and output widths")
    rng = np.random.default_rng(seed)
    layers = [
        KanLinearLayer(n_in, n_out, grid, init_coeffs(rng, n_in, n_out, grid))
        for n_in, n_out in zip(widths[:-1], widths[1:])
    ]
    return Model(layers, (widths[0],), grid, name)


def kanmlp1(grid: Optional[GridSpec] = None, seed: int = 0) -> Model:
    return kan_mlp([784, 10], grid or default_grid(), seed, "kanmlp1")


def kanmlp2(grid: Optional[GridSpec] = None, seed: int = 0) -> Model:
    return kan_mlp([784, 64, 10], grid or default_grid(), seed, "kanmlp2")


def lekan(grid: Optional[GridSpec] = None, seed: int = 0) -> Model:
    """
    Two 5x5 ConvKAN layers [1, 6, 16] with 2x2 max pooling, then KAN 400 -> 10.

    The first convolution is padded by 2 as in LeNet-5, so it yields 6x28x28
    rather than the unpadded 6x24x24 and the head sees 16x5x5 = 400 features.
    """
    grid = grid or default_grid()
    rng = np.random.default_rng(seed)
    conv1 = ConvKanLayer(1, 6, 5, 1, 2, grid, init_coeffs(rng, 25, 6, grid))
    conv2 = ConvKanLayer(6, 16, 5, 1, 0, grid, init_coeffs(rng, 150, 16, grid))
    head = KanLinearLayer(400, 10, grid, init_coeffs(rng, 400, 10, grid))
    layers = [conv1, MaxPool2d(), conv2, MaxPool2d(), Flatten(), head]
    return Model(layers, (1, 28, 28), grid, "lekan")


ARCHITECTURES: Dict[str, Callable[..., Model]] = {
    "kanmlp1": kanmlp1,
    "kanmlp2": kanmlp2,
    "lekan": lekan,
}


def build_model(name: str, grid: Optional[GridSpec] = None, seed: int = 0) -> Model:
    """Instantiate one of the trainable architectures by name."""
    try:
        builder = ARCHITECTURES[name.lower()]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}"
        ) from None
    return builder(grid, seed)
