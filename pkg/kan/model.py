"""
Composition of KAN layers into a model.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from kan.bspline import GridSpec, MulCounter
from kan.layers import (
    BasisEvaluator,
    ConvKanLayer,
    Flatten,
    KanLinearLayer,
    MaxPool2d,
)
from utils import ShapeMismatchError, setup_logger
from config import config

logger = setup_logger(__name__, config.app.log_level)

Layer = Union[KanLinearLayer, ConvKanLayer, MaxPool2d, Flatten]
KanLayer = Union[KanLinearLayer, ConvKanLayer]


def is_kan_layer(layer) -> bool:
    return isinstance(layer, (KanLinearLayer, ConvKanLayer))


@dataclass(eq=False)
class Model:
    """Ordered stack of KAN, pooling and flatten layers sharing one grid."""
    layers: List[Layer]
    input_shape: Tuple[int, ...]
    grid: GridSpec
    name: str = "model"
    shapes: List[Tuple[int, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        shape = self.input_shape
        self.shapes = [shape]
        for index, layer in enumerate(self.layers):
            if is_kan_layer(layer) and not layer.grid.same_as(self.grid):
                raise ShapeMismatchError(
                    f"layer {index} grid {layer.grid.to_dict()} differs from model grid "
                    f"{self.grid.to_dict()}"
                )
            try:
                shape = layer.output_shape(shape)
            except ShapeMismatchError as e:
                raise ShapeMismatchError(f"layer {index} ({layer.kind}): {e}") from e
            self.shapes.append(shape)

    @property
    def output_shape(self) -> Tuple[int, ...]:
        return self.shapes[-1]

    @property
    def n_classes(self) -> int:
        return int(np.prod(self.output_shape))

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.kan_layers())

    def kan_layers(self) -> List[KanLayer]:
        return [layer for layer in self.layers if is_kan_layer(layer)]

    def map_kan_layers(self, fn: Callable[[KanLayer], KanLayer]) -> "Model":
        """New model with every KAN layer replaced by fn(layer)."""
        layers = [fn(layer) if is_kan_layer(layer) else layer for layer in self.layers]
        return Model(layers, self.input_shape, self.grid, self.name)

    def _reshape_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2 and X.shape[1] == self.input_size:
            return X.reshape((X.shape[0],) + self.input_shape)
        if X.shape[1:] == self.input_shape:
            return X
        raise ShapeMismatchError(
            f"model {self.name} expects inputs of shape [N, {self.input_size}] or "
            f"[N, {', '.join(map(str, self.input_shape))}], got {list(X.shape)}"
        )

    def _evaluators(self, basis_eval) -> List[Optional[BasisEvaluator]]:
        n_kan = len(self.kan_layers())
        if isinstance(basis_eval, (list, tuple)):
            if len(basis_eval) != n_kan:
                raise ShapeMismatchError(
                    f"model {self.name} has {n_kan} KAN layers, got {len(basis_eval)} basis evaluators"
                )
            return list(basis_eval)
        return [basis_eval] * n_kan

    def forward(
        self,
        X: np.ndarray,
        basis_eval: Union[None, BasisEvaluator, Sequence[BasisEvaluator]] = None,
        counter: Optional[MulCounter] = None,
    ) -> np.ndarray:
        """
        Logits [N, n_classes] for a batch of inputs.

        Args:
            X: Inputs [N, input_size] or [N, *input_shape]
            basis_eval: One evaluator for every KAN layer, or one per KAN layer
            counter: Optional multiplication counter
        """
        x = self._reshape_input(X)
        evaluators = iter(self._evaluators(basis_eval))
        for layer in self.layers:
            if is_kan_layer(layer):
                x = layer.forward(x, next(evaluators), counter)
            else:
                x = layer.forward(x)
        return x.reshape(x.shape[0], -1)

    def predict(
        self,
        X: np.ndarray,
        basis_eval: Union[None, BasisEvaluator, Sequence[BasisEvaluator]] = None,
        batch: int = 256,
    ) -> np.ndarray:
        """Argmax class predictions, evaluated in fixed-size batches."""
        X = np.asarray(X, dtype=np.float64)
        preds = [
            self.forward(X[start:start + batch], basis_eval).argmax(axis=1)
            for start in range(0, X.shape[0], batch)
        ]
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)

    def forward_train(self, X: np.ndarray):
        x = self._reshape_input(X)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward_train(x)
            caches.append(cache)
        return x.reshape(x.shape[0], -1), caches

    def backward(self, caches, grad_logits: np.ndarray):
        """
        Back-propagate a logits gradient.

        Returns:
            (grad wrt input, list of coefficient gradients aligned with kan_layers())
        """
        grad = grad_logits.reshape((grad_logits.shape[0],) + self.output_shape)
        coeff_grads = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad, grad_coeffs = layer.backward(cache, grad)
            if grad_coeffs is not None:
                coeff_grads.append(grad_coeffs)
        coeff_grads.reverse()
        return grad, coeff_grads

    def describe(self, M: int = 1):
        """Weight-free ArchDescriptor for cost accounting."""
        from analysis.cost_model import describe_model
        return describe_model(self, M)

    def summary(self) -> str:
        lines = [f"Model {self.name}: input {self.input_shape}, grid {self.grid.to_dict()}"]
        for index, (layer, shape) in enumerate(zip(self.layers, self.shapes[1:])):
            params = getattr(layer, "param_count", 0)
            lines.append(f"  [{index}] {layer.kind:<10} -> {shape} params={params}")
        lines.append(f"  total params={self.param_count}")
        return "\n".join(lines)
