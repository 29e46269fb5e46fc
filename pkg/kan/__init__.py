"""KAN layers, models and model containers."""
from .bspline import (
    GridSpec,
    BasisVector,
    MulCounter,
    build_grid,
    default_grid,
    canonical_basis,
    basis_degree0,
    basis_values,
    basis_matrix,
    cox_de_boor,
    basis_derivative,
    evaluate_spline,
)
from .layers import (
    KanLinearLayer,
    ConvKanLayer,
    MaxPool2d,
    Flatten,
    kan_linear_forward,
    convkan_forward,
    im2col,
    maxpool2x2,
    flatten,
)
from .model import Model
from .architectures import build_model, ARCHITECTURES
from .container import save_model, load_model, read_container, Blob

__all__ = [
    "GridSpec",
    "BasisVector",
    "MulCounter",
    "build_grid",
    "default_grid",
    "canonical_basis",
    "basis_degree0",
    "basis_values",
    "basis_matrix",
    "cox_de_boor",
    "basis_derivative",
    "evaluate_spline",
    "KanLinearLayer",
    "ConvKanLayer",
    "MaxPool2d",
    "Flatten",
    "kan_linear_forward",
    "convkan_forward",
    "im2col",
    "maxpool2x2",
    "flatten",
    "Model",
    "build_model",
    "ARCHITECTURES",
    "save_model",
    "load_model",
    "read_container",
    "Blob",
]
