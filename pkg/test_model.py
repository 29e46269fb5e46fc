"""
Tests for KAN layers, model composition, gradients and the KANT container.
"""
import json
import struct

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from kan.architectures import build_model, init_coeffs, kan_mlp, kanmlp1, kanmlp2, lekan
from kan.bspline import build_grid, evaluate_spline
from kan.container import MAGIC, Blob, load_model, read_container, save_model
from kan.layers import (
    ConvKanLayer,
    KanLinearLayer,
    conv_output_size,
    convkan_forward,
    im2col,
    kan_linear_forward,
    maxpool2x2,
)
from kan.model import Model
from utils import ChecksumMismatchError, FormatError, InvalidArgumentError, ShapeMismatchError


def _naive_linear(A, layer):
    """Sum of per-connection splines, one connection at a time."""
    W = layer.connection_coeffs()
    out = np.zeros((A.shape[0], layer.n_out))
    for i in range(layer.n_in):
        for j in range(layer.n_out):
            out[:, j] += evaluate_spline(A[:, i], W[i, :, j], layer.grid)
    return out


class TestKanLinear:
    def test_matches_per_connection_sum(self, grid, rng):
        layer = KanLinearLayer(4, 3, grid, init_coeffs(rng, 4, 3, grid))
        A = rng.uniform(-1, 1, size=(10, 4))
        assert_allclose(kan_linear_forward(A, layer), _naive_linear(A, layer), atol=1e-12)

    def test_rejects_wrong_width(self, grid, rng):
        layer = KanLinearLayer(4, 3, grid, init_coeffs(rng, 4, 3, grid))
        with pytest.raises(ShapeMismatchError, match="expects input"):
            layer.forward(np.zeros((2, 5)))

    def test_rejects_wrong_coefficient_shape(self, grid):
        with pytest.raises(ShapeMismatchError, match="coeffs must have shape"):
            KanLinearLayer(4, 3, grid, np.zeros((4, 3)))

    def test_out_of_domain_inputs_are_clamped(self, grid, rng):
        layer = KanLinearLayer(2, 2, grid, init_coeffs(rng, 2, 2, grid))
        out = layer.forward(np.array([[-5.0, 5.0]]))
        edge = layer.forward(np.array([[-1.0, np.nextafter(1.0, 0.0)]]))
        assert_array_equal(out, edge)


class TestConv:
    def test_im2col_is_channel_major(self):
        x = np.arange(2 * 3 * 3, dtype=float).reshape(2, 3, 3)
        cols = im2col(x, 2)
        assert cols.shape == (4, 8)
        assert_array_equal(cols[0], [0, 1, 3, 4, 9, 10, 12, 13])
        assert_array_equal(cols[3], [4, 5, 7, 8, 13, 14, 16, 17])

    def test_output_geometry(self, grid, rng):
        layer = ConvKanLayer(1, 6, 5, 1, 0, grid, init_coeffs(rng, 25, 6, grid))
        x = rng.uniform(-1, 1, size=(1, 28, 28))
        assert convkan_forward(x, layer).shape == (6, 24, 24)
        assert conv_output_size(28, 5, 1, 2) == 28

    def test_invalid_geometry(self):
        with pytest.raises(InvalidArgumentError):
            conv_output_size(4, 5, 1, 0)
        with pytest.raises(InvalidArgumentError):
            conv_output_size(6, 3, 2, 0)

    def test_matches_patch_by_patch_evaluation(self, grid, rng):
        layer = ConvKanLayer(2, 3, 3, 1, 1, grid, init_coeffs(rng, 18, 3, grid))
        x = rng.uniform(-1, 1, size=(2, 5, 5))
        out = convkan_forward(x, layer)
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        linear = layer.as_linear()
        for r in range(5):
            for c in range(5):
                patch = padded[:, r:r + 3, c:c + 3].reshape(1, -1)
                assert_allclose(out[:, r, c], _naive_linear(patch, linear)[0], atol=1e-12)

    def test_maxpool_drops_odd_edges(self):
        x = np.arange(25, dtype=float).reshape(1, 5, 5)
        assert_array_equal(maxpool2x2(x), [[[6, 8], [16, 18]]])


class TestModel:
    def test_builtin_parameter_counts(self):
        assert lekan().param_count == 39_300
        assert kanmlp1().param_count == 47_040
        assert kanmlp2().param_count == 304_896

    def test_lekan_shapes(self):
        model = lekan()
        assert model.shapes[1] == (6, 28, 28)
        assert model.shapes[3] == (16, 10, 10)
        assert model.output_shape == (10,)

    def test_unknown_architecture(self):
        with pytest.raises(InvalidArgumentError, match="unknown architecture"):
            build_model("resnet")

    def test_layers_must_compose(self, grid, rng):
        first = KanLinearLayer(4, 5, grid, init_coeffs(rng, 4, 5, grid))
        second = KanLinearLayer(6, 3, grid, init_coeffs(rng, 6, 3, grid))
        with pytest.raises(ShapeMismatchError, match="layer 1"):
            Model([first, second], (4,), grid)

    def test_layers_must_share_the_grid(self, grid, rng):
        other = build_grid(5, 3)
        layer = KanLinearLayer(4, 3, other, init_coeffs(rng, 4, 3, other))
        with pytest.raises(ShapeMismatchError, match="grid"):
            Model([layer], (4,), grid)

    def test_forward_accepts_flat_or_shaped_inputs(self, tiny_conv, rng):
        x = rng.uniform(-1, 1, size=(3, 1, 6, 6))
        assert_array_equal(tiny_conv.forward(x), tiny_conv.forward(x.reshape(3, 36)))
        with pytest.raises(ShapeMismatchError):
            tiny_conv.forward(np.zeros((3, 35)))

    def test_predict_batches_match_single_pass(self, tiny_mlp, rng):
        X = rng.uniform(-1, 1, size=(37, 4))
        assert_array_equal(tiny_mlp.predict(X, batch=5), tiny_mlp.forward(X).argmax(axis=1))


def _loss(model, X, target):
    return 0.5 * np.sum((model.forward(X) - target) ** 2)


@pytest.mark.parametrize("fixture", ["tiny_mlp", "tiny_conv"])
def test_coefficient_gradients_match_finite_differences(fixture, request, rng):
    model = request.getfixturevalue(fixture)
    X = rng.uniform(-0.9, 0.9, size=(4, model.input_size))
    target = rng.standard_normal((4, model.n_classes))
    logits, caches = model.forward_train(X)
    _, grads = model.backward(caches, logits - target)

    eps = 1e-6
    for layer, grad in zip(model.kan_layers(), grads):
        flat = layer.coeffs.reshape(-1)
        for index in rng.choice(flat.size, size=10, replace=False):
            saved = flat[index]
            flat[index] = saved + eps
            up = _loss(model, X, target)
            flat[index] = saved - eps
            down = _loss(model, X, target)
            flat[index] = saved
            assert grad.reshape(-1)[index] == pytest.approx((up - down) / (2 * eps), abs=1e-4)


def test_input_gradients_match_finite_differences(grid, rng):
    model = kan_mlp([3, 2], grid, seed=3)
    X = rng.uniform(-0.9, 0.9, size=(2, 3))
    target = rng.standard_normal((2, 2))
    logits, caches = model.forward_train(X)
    grad_in, _ = model.backward(caches, logits - target)

    eps = 1e-6
    for m in range(2):
        for i in range(3):
            up, down = X.copy(), X.copy()
            up[m, i] += eps
            down[m, i] -= eps
            numeric = (_loss(model, up, target) - _loss(model, down, target)) / (2 * eps)
            assert grad_in.reshape(2, 3)[m, i] == pytest.approx(numeric, abs=1e-4)


class TestContainer:
    def test_round_trip_is_bit_exact(self, tiny_conv, tmp_path, rng):
        path = save_model(tiny_conv, tmp_path / "tiny.kant")
        loaded = load_model(path)
        X = rng.uniform(-1, 1, size=(5, 36))
        assert loaded.name == "tiny_conv"
        assert loaded.input_shape == (1, 6, 6)
        assert_array_equal(loaded.forward(X), tiny_conv.forward(X))

    def test_extra_blobs_survive(self, tiny_mlp, tmp_path):
        table = np.arange(12, dtype=np.uint8).reshape(3, 4)
        path = save_model(tiny_mlp, tmp_path / "m.kant", [Blob("tables.0", table, {"h": 4})])
        _, blobs = read_container(path)
        assert_array_equal(blobs["tables.0"].data, table)
        assert blobs["tables.0"].meta == {"h": 4}

    def test_corrupted_payload_fails_checksum(self, tiny_mlp, tmp_path):
        path = save_model(tiny_mlp, tmp_path / "m.kant")
        data = bytearray(path.read_bytes())
        data[-10] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(ChecksumMismatchError):
            load_model(path)

    def test_bad_magic(self, tiny_mlp, tmp_path):
        path = save_model(tiny_mlp, tmp_path / "m.kant")
        path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(FormatError, match="bad magic"):
            load_model(path)

    def test_unsupported_version_names_the_version(self, tiny_mlp, tmp_path):
        path = save_model(tiny_mlp, tmp_path / "m.kant")
        data = bytearray(path.read_bytes())
        struct.pack_into("<I", data, len(MAGIC), 2)
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version 2"):
            load_model(path)

    @pytest.mark.parametrize("keep", [3, 40, -5])
    def test_truncated_file(self, tiny_mlp, tmp_path, keep):
        path = save_model(tiny_mlp, tmp_path / "m.kant")
        path.write_bytes(path.read_bytes()[:keep])
        with pytest.raises(FormatError):
            load_model(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_model(tmp_path / "absent.kant")

    @pytest.mark.parametrize("edit", [
        lambda m: m["tensors"][0].update(shape=[25, 5]),
        lambda m: m["tensors"][0].update(offset=10_000),
        lambda m: m["tensors"][0].update(offset=-4),
        lambda m: m["tensors"][0].pop("dtype"),
        lambda m: m["layers"][0].update(n_in=5),
        lambda m: m["layers"][0].update(n_out="five"),
        lambda m: m.update(tensors=5),
        lambda m: m.update(input_shape=[7]),
    ])
    def test_inconsistent_metadata_is_a_format_error(self, tiny_mlp, tmp_path, edit):
        path = save_model(tiny_mlp, tmp_path / "m.kant")
        _rewrite_metadata(path, edit)
        with pytest.raises(FormatError):
            load_model(path)


def _rewrite_metadata(path, edit):
    """Apply edit to the JSON metadata of a container, keeping its payload and CRC."""
    data = path.read_bytes()
    magic, version, meta_len = struct.unpack_from("<4sII", data, 0)
    start = struct.calcsize("<4sII")
    metadata = json.loads(data[start:start + meta_len])
    edit(metadata)
    meta_bytes = json.dumps(metadata).encode("utf-8")
    path.write_bytes(struct.pack("<4sII", magic, version, len(meta_bytes)) + meta_bytes + data[start + meta_len:])
