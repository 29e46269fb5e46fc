"""
Shared pytest fixtures: small grids, seeded generators, tiny models and IDX files.
"""
import numpy as np
import pytest

from kan.architectures import init_coeffs, kan_mlp
from kan.bspline import build_grid
from kan.layers import ConvKanLayer, Flatten, KanLinearLayer, MaxPool2d
from kan.model import Model
from services.dataset_service import load_mnist, mnist_available, write_idx


def pytest_configure(config):
    config.addinivalue_line("markers", "mnist: needs the MNIST IDX files under KANTIZE_DATA_DIR")
    config.addinivalue_line("markers", "slow: long-running acceptance test")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid():
    return build_grid(3, 3, -1.0, 1.0)


@pytest.fixture
def tiny_mlp(grid):
    return kan_mlp([4, 5, 3], grid, seed=0, name="tiny_mlp")


@pytest.fixture
def tiny_conv(grid):
    """ConvKAN 1->2 (3x3) on 6x6, pool, flatten, KAN 8->3."""
    rng = np.random.default_rng(7)
    conv = ConvKanLayer(1, 2, 3, 1, 0, grid, init_coeffs(rng, 9, 2, grid))
    head = KanLinearLayer(8, 3, grid, init_coeffs(rng, 8, 3, grid))
    return Model([conv, MaxPool2d(), Flatten(), head], (1, 6, 6), grid, "tiny_conv")


@pytest.fixture
def idx_pair(tmp_path):
    """Five 2x3 images with pixels 0..255 and labels 0..4."""
    images = np.zeros((5, 2, 3), dtype=np.uint8)
    images[:, 0, 0] = 0
    images[:, 1, 2] = 255
    images[:, 0, 1] = np.arange(5) * 50
    labels = np.arange(5, dtype=np.uint8)
    images_path = tmp_path / "images-idx3-ubyte"
    labels_path = tmp_path / "labels-idx1-ubyte"
    write_idx(images, labels, images_path, labels_path)
    return images_path, labels_path


@pytest.fixture(scope="session")
def mnist_test():
    if not mnist_available():
        pytest.skip("MNIST IDX files not found under KANTIZE_DATA_DIR")
    return load_mnist("test")


@pytest.fixture(scope="session")
def mnist_train():
    if not mnist_available(split="train"):
        pytest.skip("MNIST IDX files not found under KANTIZE_DATA_DIR")
    return load_mnist("train")
