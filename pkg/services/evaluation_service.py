"""
Evaluation service for kantize.
Top-1 accuracy of a model under the fp32, fake-quant, B-spline LUT and
spline-table forward paths.
"""
from typing import Optional, Sequence

import numpy as np

from kan.model import Model
from quantization.quantizer import QuantConfig, build_fake_quant, quantize_model_weights
from quantization.tabulation import (
    BsplineLut,
    LutBasis,
    SplineTableSet,
    spline_table_model_forward,
)
from services.dataset_service import Dataset
from utils import InvalidArgumentError, ShapeMismatchError, setup_logger
from config import config


logger = setup_logger(__name__, config.app.log_level)

EVAL_MODES = ("fp32", "fake-quant", "bspline-lut", "spline-table")


def _check_compatible(model: Model, dataset: Dataset) -> None:
    if dataset.n_features != model.input_size:
        raise ShapeMismatchError(
            f"model {model.name} takes {model.input_size} features, dataset has {dataset.n_features}"
        )


def predict(
    model: Model,
    dataset: Dataset,
    mode: str = "fp32",
    qcfg: Optional[QuantConfig] = None,
    lut: Optional[BsplineLut] = None,
    tables: Optional[Sequence[SplineTableSet]] = None,
    calibration: Optional[np.ndarray] = None,
    batch: int = 256,
) -> np.ndarray:
    """
    Argmax predictions under one forward path.

    Args:
        model: Trained model
        dataset: Inputs to classify
        mode: One of EVAL_MODES
        qcfg: Bit-widths for fake-quant (and bw_W for bspline-lut)
        lut: Canonical table for bspline-lut
        tables: Per-layer spline tables for spline-table
        calibration: Inputs for the calibrated-minmax activation policy
        batch: Evaluation batch size

    Raises:
        InvalidArgumentError: On an unknown mode or missing tables
        ShapeMismatchError: If model and dataset do not compose
    """
    if mode not in EVAL_MODES:
        raise InvalidArgumentError(f"unknown evaluation mode {mode!r}; choose from {EVAL_MODES}")
    _check_compatible(model, dataset)
    X = dataset.inputs
    qcfg = qcfg or QuantConfig()

    if mode == "fp32":
        return model.predict(X, batch=batch)
    if mode == "fake-quant":
        qmodel, evaluators = build_fake_quant(model, qcfg, calibration)
        return qmodel.predict(X, evaluators, batch=batch)
    if mode == "bspline-lut":
        if lut is None:
            raise InvalidArgumentError("bspline-lut evaluation needs a BsplineLut")
        qmodel = quantize_model_weights(model, qcfg.bw_W)
        return qmodel.predict(X, LutBasis(lut, model.grid), batch=batch)

    if tables is None:
        raise InvalidArgumentError("spline-table evaluation needs spline tables")
    preds = [
        spline_table_model_forward(model, tables, X[start:start + batch]).argmax(axis=1)
        for start in range(0, X.shape[0], batch)
    ]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate_accuracy(model: Model, dataset: Dataset, mode: str = "fp32", **kwargs) -> float:
    """Top-1 accuracy in [0, 1]; see predict for the mode arguments."""
    if len(dataset) == 0:
        raise InvalidArgumentError("cannot evaluate on an empty dataset")
    preds = predict(model, dataset, mode, **kwargs)
    accuracy = float((preds == dataset.labels).mean())
    logger.debug(f"{model.name} [{mode}] accuracy {accuracy:.4f} on {len(dataset)} samples")
    return accuracy
