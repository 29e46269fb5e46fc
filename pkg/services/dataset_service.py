"""
Dataset service for kantize.
Parses MNIST IDX files and generates seeded synthetic datasets, always
scaled into the B-spline grid domain.
"""
import gzip
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from utils import FormatError, InvalidArgumentError, setup_logger
from config import config


logger = setup_logger(__name__, config.app.log_level)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SYNTHETIC_KINDS = ("blobs", "moons")

PathLike = Union[str, Path]


def default_domain() -> Tuple[float, float]:
    return config.grid.domain_lo, config.grid.domain_hi


@dataclass
class Dataset:
    """Inputs [N, D] inside the grid domain with integer labels [N]."""
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "test"
    domain: Tuple[float, float] = field(default_factory=default_domain)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise InvalidArgumentError(
                f"dataset needs inputs [N, D] and labels [N], got {list(self.inputs.shape)} "
                f"and {list(self.labels.shape)}"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InvalidArgumentError(f"labels must lie in [0, {self.n_classes})")
        lo, hi = self.domain
        if self.inputs.size and (self.inputs.min() < lo or self.inputs.max() > hi):
            raise InvalidArgumentError(f"inputs must lie in the domain [{lo}, {hi}]")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    def subset(self, n: Optional[int], seed: int = 0) -> "Dataset":
        """
        Fixed-seed random subset of n samples in original order.

        None, or n >= len(self), returns the dataset itself.
        """
        if n is None or n >= len(self):
            return self
        if n < 0:
            raise InvalidArgumentError(f"subset size must be non-negative, got {n}")
        rng = np.random.default_rng(seed)
        index = np.sort(rng.choice(len(self), size=n, replace=False))
        return Dataset(self.inputs[index], self.labels[index], self.n_classes, self.split, self.domain)

    def batches(self, batch: int):
        for start in range(0, len(self), batch):
            yield self.inputs[start:start + batch], self.labels[start:start + batch]


# =============================================================================
# IDX
# =============================================================================

def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _idx_header(raw: bytes, magic: int, n_dims: int, path: PathLike) -> Tuple[int, ...]:
    header_len = 4 * (1 + n_dims)
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated IDX header")
    header = np.frombuffer(raw[:header_len], dtype=">u4")
    if int(header[0]) != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{int(header[0]):08x}, expected 0x{magic:08x}")
    return tuple(int(d) for d in header[1:])


def load_idx(
    images_path: PathLike,
    labels_path: PathLike,
    domain: Optional[Tuple[float, float]] = None,
    split: str = "test",
) -> Dataset:
    """
    Parse an MNIST-style IDX image/label pair.

    Pixels are scaled linearly from [0, 255] onto [domain_lo, domain_hi].

    Args:
        images_path: IDX3 image file (optionally .gz)
        labels_path: IDX1 label file (optionally .gz)
        domain: Target input range, defaults to the configured grid domain
        split: Split name recorded on the dataset

    Raises:
        FormatError: On bad magic, truncated payloads or an image/label count mismatch
        OSError: If a file cannot be read
    """
    lo, hi = domain or default_domain()
    raw_images = _read_bytes(images_path)
    raw_labels = _read_bytes(labels_path)

    n_images, rows, cols = _idx_header(raw_images, IDX_IMAGES_MAGIC, 3, images_path)
    (n_labels,) = _idx_header(raw_labels, IDX_LABELS_MAGIC, 1, labels_path)
    if n_images != n_labels:
        raise FormatError(f"image count {n_images} does not match label count {n_labels}")

    pixels = np.frombuffer(raw_images, dtype=np.uint8, offset=16)
    labels = np.frombuffer(raw_labels, dtype=np.uint8, offset=8)
    if pixels.size < n_images * rows * cols or labels.size < n_labels:
        raise FormatError(f"{images_path}: payload shorter than its header declares")

    pixels = pixels[:n_images * rows * cols].reshape(n_images, rows * cols)
    inputs = np.clip(lo + (pixels.astype(np.float64) / 255.0) * (hi - lo), lo, hi)
    labels = labels[:n_labels].astype(np.int64)
    n_classes = max(10, int(labels.max()) + 1) if labels.size else 10
    logger.info(f"Loaded {n_images} {rows}x{cols} samples from {Path(images_path).name}")
    return Dataset(inputs, labels, n_classes, split, (lo, hi))


def _existing(path: Path) -> Path:
    gz = path.with_name(path.name + ".gz")
    return gz if not path.exists() and gz.exists() else path


def load_mnist(split: str = "test", data_dir: Optional[PathLike] = None) -> Dataset:
    """MNIST split from KANTIZE_DATA_DIR (or data_dir)."""
    images, labels = config.data.mnist_paths(split)
    if data_dir is not None:
        images, labels = Path(data_dir) / images.name, Path(data_dir) / labels.name
    return load_idx(_existing(images), _existing(labels), split=split)


def mnist_available(data_dir: Optional[PathLike] = None, split: str = "test") -> bool:
    paths = config.data.mnist_paths(split)
    if data_dir is not None:
        paths = [Path(data_dir) / p.name for p in paths]
    return all(_existing(p).exists() for p in paths)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: PathLike, labels_path: PathLike) -> None:
    """Write uint8 images [N, rows, cols] and labels [N] as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise InvalidArgumentError(f"IDX images must be [N, rows, cols], got {list(images.shape)}")
    header = np.array([IDX_IMAGES_MAGIC, *images.shape], dtype=">u4").tobytes()
    Path(images_path).write_bytes(header + images.tobytes())
    header = np.array([IDX_LABELS_MAGIC, labels.shape[0]], dtype=">u4").tobytes()
    Path(labels_path).write_bytes(header + labels.tobytes())


# =============================================================================
# SYNTHETIC
# =============================================================================

def _to_domain(points: np.ndarray, lo: float, hi: float, margin: float = 0.9) -> np.ndarray:
    """Affinely map each column's bounding box into the central part of [lo, hi]."""
    if points.shape[0] == 0:
        return points
    p_lo, p_hi = points.min(axis=0), points.max(axis=0)
    span = np.where(p_hi > p_lo, p_hi - p_lo, 1.0)
    unit = (points - p_lo) / span
    centre, half = (lo + hi) / 2, (hi - lo) / 2 * margin
    return np.clip(centre + (2 * unit - 1) * half, lo, hi)


def synthetic_dataset(
    kind: str = "blobs",
    n: int = 512,
    seed: int = 0,
    n_features: int = 2,
    n_classes: int = 2,
    domain: Optional[Tuple[float, float]] = None,
) -> Dataset:
    """
    Seeded synthetic classification data inside the grid domain.

    kinds:
        blobs: n_classes Gaussian clusters spaced along the first feature,
            linearly separable with high probability
        moons: two interleaving half circles (2 features, 2 classes)

    Raises:
        InvalidArgumentError: On an unknown kind or invalid sizes
    """
    if kind not in SYNTHETIC_KINDS:
        raise InvalidArgumentError(f"unknown synthetic dataset {kind!r}; choose from {SYNTHETIC_KINDS}")
    if n < 0 or n_features < 1 or n_classes < 2:
        raise InvalidArgumentError("synthetic dataset needs n >= 0, n_features >= 1 and n_classes >= 2")
    lo, hi = domain or default_domain()
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=n) if n else np.zeros(0, dtype=np.int64)

    if kind == "blobs":
        width = (hi - lo) / n_classes
        inputs = rng.normal(0.0, 0.12 * width, size=(n, n_features))
        inputs[:, 0] += lo + (labels + 0.5) * width
        inputs = np.clip(inputs, lo, hi)
    else:
        if n_features != 2 or n_classes != 2:
            raise InvalidArgumentError("moons are two-dimensional with two classes")
        t = rng.uniform(0.0, np.pi, size=n)
        outer = np.stack([np.cos(t), np.sin(t)], axis=1)
        inner = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
        inputs = np.where(labels[:, None] == 0, outer, inner)
        inputs = inputs + rng.normal(0.0, 0.05, size=inputs.shape)
        inputs = _to_domain(inputs, lo, hi)

    logger.debug(f"Generated {n} synthetic '{kind}' samples (seed={seed})")
    return Dataset(inputs, labels.astype(np.int64), n_classes, f"synthetic-{kind}", (lo, hi))
