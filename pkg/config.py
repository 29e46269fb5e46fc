"""
Configuration management for kantize.
Handles all environment variables and default settings.
"""
import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass


@dataclass
class GridConfig:
    """Default B-spline grid shared by every layer of a model."""
    grid_size: int = 3
    spline_order: int = 3
    domain_lo: float = -1.0
    domain_hi: float = 1.0

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.grid_size < 1:
            raise ValueError("KANTIZE_GRID_SIZE must be at least 1.")
        if self.spline_order < 0:
            raise ValueError("KANTIZE_SPLINE_ORDER must be non-negative.")
        if not self.domain_hi > self.domain_lo:
            raise ValueError(
                "KANTIZE_DOMAIN_HI must be greater than KANTIZE_DOMAIN_LO."
            )


@dataclass
class DataConfig:
    """Dataset locations."""
    data_dir: Path = Path("data")
    train_images: str = "train-images-idx3-ubyte"
    train_labels: str = "train-labels-idx1-ubyte"
    test_images: str = "t10k-images-idx3-ubyte"
    test_labels: str = "t10k-labels-idx1-ubyte"

    def mnist_paths(self, split: str = "test") -> tuple:
        """Return (images, labels) paths for an MNIST split."""
        if split == "train":
            return self.data_dir / self.train_images, self.data_dir / self.train_labels
        if split == "test":
            return self.data_dir / self.test_images, self.data_dir / self.test_labels
        raise ValueError(f"Unknown MNIST split: {split!r}")


@dataclass
class TrainConfig:
    """Default training recipe."""
    lr: float = 1e-3
    epochs: int = 10
    batch: int = 64
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("KANTIZE_LR must be non-negative.")
        if self.epochs < 0 or self.batch < 1:
            raise ValueError("KANTIZE_EPOCHS must be >= 0 and KANTIZE_BATCH >= 1.")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("KANTIZE_MOMENTUM must lie in [0, 1).")


@dataclass
class SweepConfig:
    """Design-space exploration defaults."""
    subset: int = 2000
    workers: int = 1
    lut_bits: int = 8
    table_bits: int = 8

    def __post_init__(self):
        if self.subset < 1:
            raise ValueError("KANTIZE_SUBSET must be positive.")
        if self.workers < 1:
            raise ValueError("KANTIZE_WORKERS must be positive.")


@dataclass
class AppConfig:
    """Application-wide configuration."""
    log_level: str = "INFO"
    no_color: bool = False
    plot_format: str = field(default="svg")


class Config:
    """Main configuration class."""

    def __init__(self):
        self.grid = GridConfig(
            grid_size=int(os.getenv("KANTIZE_GRID_SIZE", "3")),
            spline_order=int(os.getenv("KANTIZE_SPLINE_ORDER", "3")),
            domain_lo=float(os.getenv("KANTIZE_DOMAIN_LO", "-1.0")),
            domain_hi=float(os.getenv("KANTIZE_DOMAIN_HI", "1.0")),
        )

        self.data = DataConfig(
            data_dir=Path(os.getenv("KANTIZE_DATA_DIR", "data")),
        )

        self.train = TrainConfig(
            lr=float(os.getenv("KANTIZE_LR", "1e-3")),
            epochs=int(os.getenv("KANTIZE_EPOCHS", "10")),
            batch=int(os.getenv("KANTIZE_BATCH", "64")),
            momentum=float(os.getenv("KANTIZE_MOMENTUM", "0.9")),
            seed=int(os.getenv("KANTIZE_SEED", "0")),
        )

        self.sweep = SweepConfig(
            subset=int(os.getenv("KANTIZE_SUBSET", "2000")),
            workers=int(os.getenv("KANTIZE_WORKERS", "1")),
            lut_bits=int(os.getenv("KANTIZE_LUT_BITS", "8")),
            table_bits=int(os.getenv("KANTIZE_TABLE_BITS", "8")),
        )

        self.app = AppConfig(
            log_level=os.getenv("LOG_LEVEL", "INFO"),
            no_color=bool(os.getenv("KANTIZE_NO_COLOR")),
        )


# Global configuration instance
config = Config()
