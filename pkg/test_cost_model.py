"""
Tests for the analytic cost model, checked against closed forms and
against instrumented forward passes.
"""
import json

import numpy as np
import pytest

from analysis import (
    ArchDescriptor,
    bitops_kan,
    bitops_mlp,
    builtin_archs,
    cost_report,
    describe_model,
    exceeds_device,
    fp32_coeff_bits,
    fpga_lut_estimate,
    load_arch,
    lut_memory_bits,
    mlp_param_count,
    mul_counts,
    param_count,
    spline_table_bits,
    table_memory,
)
from kan.architectures import init_coeffs, kanmlp1, lekan
from kan.bspline import MulCounter, build_grid
from kan.layers import ConvKanLayer, Flatten, KanLinearLayer
from kan.model import Model
from utils import FormatError, InvalidArgumentError


@pytest.fixture
def mlp1():
    return load_arch("kanmlp1")


class TestClosedForms:
    def test_kanmlp1_multiplications(self, mlp1):
        counts = mul_counts(mlp1)
        assert counts["muls_matmul"] == 47_040
        assert counts["muls_bspline"] == 75_264

    def test_kanmlp1_bitops(self, mlp1):
        assert bitops_kan(mlp1, 32, 32, 32) == 125_239_296
        assert bitops_kan(mlp1, 8, 8, 3) == 5_945_856
        assert bitops_kan(mlp1, 8, 8, 3, tabulated=True) == 1_128_960

    def test_mlp_bitops(self, mlp1):
        assert bitops_mlp(mlp1, 32, 32) == 8_028_160

    def test_memory(self, mlp1):
        assert fp32_coeff_bits(mlp1) == 1_505_280
        assert spline_table_bits(mlp1, 4, 6) == 752_640
        assert spline_table_bits(mlp1, 8, 8) == 16_056_320
        assert lut_memory_bits(8, 8, 3) == 4096

    def test_table_memory_only_fills_supplied_entries(self, mlp1):
        memory = table_memory(mlp1, k=8, h=8, bw_A=4)
        assert memory == {"lut_memory_bits": 4096, "spline_table_bits": 7840 * 16 * 8, "fp32_coeff_bits": 1_505_280}
        assert table_memory(spline_order=3, k=2, h=4) == {
            "lut_memory_bits": 32, "spline_table_bits": 0, "fp32_coeff_bits": 0,
        }

    def test_fpga_estimates(self, mlp1):
        assert fpga_lut_estimate(mlp1) == 70_560
        assert fpga_lut_estimate(load_arch("kanmlp2")) == 457_344

    def test_batch_scales_linearly(self, mlp1):
        assert bitops_kan(mlp1, 8, 8, 3, M=16) == 16 * bitops_kan(mlp1, 8, 8, 3)
        assert mul_counts(mlp1, M=0)["muls_matmul"] == 0
        with pytest.raises(InvalidArgumentError):
            mul_counts(mlp1, M=-1)

    def test_grid_size_changes_params(self, mlp1):
        assert param_count(mlp1.model_copy(update={"G": 5})) == 62_720

    def test_degree_zero_has_no_recursion_cost(self, mlp1):
        flat = mlp1.model_copy(update={"P": 0})
        assert mul_counts(flat)["muls_bspline"] == 0

    def test_single_basis_matches_mlp(self, mlp1):
        one = mlp1.model_copy(update={"G": 1, "P": 0})
        assert param_count(one) == mlp_param_count(one)
        assert bitops_kan(one, 8, 8, 8) == bitops_mlp(one, 8, 8)

    def test_tabulated_never_costs_more(self, mlp1):
        for bw in (2, 4, 8, 32):
            assert bitops_kan(mlp1, bw, bw, bw, tabulated=True) <= bitops_kan(mlp1, bw, bw, bw)

    @pytest.mark.parametrize("field", ["bw_W", "bw_A", "bw_B"])
    def test_bitops_grow_with_each_bitwidth(self, mlp1, field):
        costs = []
        for bw in (2, 3, 4, 8, 32):
            bws = {"bw_W": 8, "bw_A": 8, "bw_B": 8, field: bw}
            costs.append(bitops_kan(mlp1, **bws))
        assert costs == sorted(costs) and len(set(costs)) == len(costs)

    def test_invalid_bitwidth(self, mlp1):
        with pytest.raises(InvalidArgumentError):
            bitops_kan(mlp1, 0, 8, 8)


class TestDescriptors:
    @pytest.mark.parametrize("name,params", [
        ("kanmlp1", 47_040),
        ("kanmlp2", 304_896),
        ("lekan", 39_300),
        ("cnn3", 565_824),
        ("cnn4", 4_127_808),
        ("reskan18", 66_986_112),
    ])
    def test_builtin_parameter_counts(self, name, params):
        assert param_count(load_arch(name)) == params

    def test_builtin_names(self):
        assert {"kanmlp1", "kanmlp2", "lekan", "cnn3", "cnn4", "reskan18"} <= set(builtin_archs())

    def test_device_capacity(self):
        assert not exceeds_device(load_arch("kanmlp1"))
        assert not exceeds_device(load_arch("cnn3"))
        assert exceeds_device(load_arch("cnn4"))
        assert exceeds_device(load_arch("reskan18"))
        assert exceeds_device(load_arch("kanmlp1"), device_luts=1000)

    def test_fpga_estimate_follows_connection_count(self):
        archs = [load_arch(name) for name in ("lekan", "kanmlp1", "kanmlp2", "cnn3", "cnn4", "reskan18")]
        archs.sort(key=lambda a: sum(layer.connections for layer in a.layers))
        estimates = [fpga_lut_estimate(a) for a in archs]
        assert estimates == sorted(estimates)

    def test_lekan_descriptor_matches_model(self):
        described = describe_model(lekan())
        stored = load_arch("lekan")
        assert [l.model_dump(exclude={"label"}) for l in described.layers] == [
            l.model_dump(exclude={"label"}) for l in stored.layers
        ]
        assert param_count(described) == lekan().param_count

    def test_descriptor_from_file(self, tmp_path):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps({"name": "tiny", "layers": [{"kind": "linear", "n_in": 4, "n_out": 2}]}))
        arch = load_arch(path)
        assert (arch.G, arch.P, arch.batch) == (3, 3, 1)
        assert param_count(arch) == 48

    @pytest.mark.parametrize("content", [
        "not json",
        json.dumps({"layers": [{"kind": "conv", "c_in": 1}]}),
        json.dumps({"layers": [{"kind": "dense", "n_in": 1, "n_out": 1}]}),
        json.dumps({"G": 0, "layers": []}),
    ])
    def test_invalid_descriptor(self, tmp_path, content):
        path = tmp_path / "bad.json"
        path.write_text(content)
        with pytest.raises(FormatError):
            load_arch(path)

    def test_missing_descriptor(self, tmp_path):
        with pytest.raises(OSError):
            load_arch(tmp_path / "absent.json")


class TestCostReport:
    def test_totals_equal_layer_sums(self):
        arch = load_arch("lekan")
        report = cost_report(arch, 8, 6, 4, k=4, h=6, table_bw_A=4)
        assert report.bitops == bitops_kan(arch, 8, 6, 4)
        assert report.bitops == sum(layer.bitops for layer in report.layers)
        assert report.spline_table_bits == sum(layer.spline_table_bits for layer in report.layers)
        assert report.lut_memory_bits == lut_memory_bits(4, 6, 3)
        assert [layer.label for layer in report.layers] == ["conv1", "conv2", "fc"]

    def test_to_dict_is_json_serialisable(self, mlp1):
        data = cost_report(mlp1).to_dict()
        assert json.loads(json.dumps(data))["bitops"] == 125_239_296


def _random_model(rng, grid):
    """Conv (random geometry) followed by a linear head."""
    c_in, c_out = rng.integers(1, 3, endpoint=True, size=2)
    kernel = int(rng.integers(1, 3, endpoint=True))
    padding = int(rng.integers(0, 1, endpoint=True))
    size = int(rng.integers(kernel, 6, endpoint=True))
    conv = ConvKanLayer(int(c_in), int(c_out), kernel, 1, padding, grid,
                        init_coeffs(rng, kernel * kernel * int(c_in), int(c_out), grid))
    out_side = size + 2 * padding - kernel + 1
    flat = int(c_out) * out_side * out_side
    n_out = int(rng.integers(1, 4, endpoint=True))
    head = KanLinearLayer(flat, n_out, grid, init_coeffs(rng, flat, n_out, grid))
    return Model([conv, Flatten(), head], (int(c_in), size, size), grid)


@pytest.mark.parametrize("seed", range(20))
def test_instrumented_counts_match_closed_form(seed):
    rng = np.random.default_rng(seed)
    grid = build_grid(int(rng.integers(1, 6, endpoint=True)), int(rng.integers(0, 3, endpoint=True)))
    model = _random_model(rng, grid)
    batch = int(rng.integers(1, 4, endpoint=True))
    counter = MulCounter()
    model.forward(rng.uniform(-1, 1, size=(batch, model.input_size)), counter=counter)
    expected = mul_counts(describe_model(model, M=batch))
    assert counter.matmul == expected["muls_matmul"]
    assert counter.bspline == expected["muls_bspline"]


def test_kanmlp1_instrumented_counts():
    model = kanmlp1()
    counter = MulCounter()
    model.forward(np.zeros((1, 784)), counter=counter)
    assert (counter.matmul, counter.bspline) == (47_040, 75_264)
    assert isinstance(model.describe(), ArchDescriptor)
