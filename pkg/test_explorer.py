"""
Tests for the sweep pipeline, report files and the kantize CLI.
"""
import json

import pytest

import services.sweep_pipeline as sweep_pipeline
from analysis import bitops_kan, fp32_coeff_bits, lut_memory_bits, spline_table_bits
from app import main
from kan.architectures import kan_mlp
from kan.container import save_model
from quantization import VALID_BITWIDTHS, QuantConfig
from services import (
    SweepSpec,
    enumerate_configs,
    evaluate_accuracy,
    get_pipeline,
    read_csv,
    run_sweep,
    synthetic_dataset,
    train,
    write_csv,
)
from services.report_service import ParetoPoint, csv_text, plot_report
from services.sweep_pipeline import BitwidthConfig, SweepPipeline, config_costs
from utils import FormatError, InvalidArgumentError, SweepError


@pytest.fixture
def blobs():
    return synthetic_dataset("blobs", n=160, seed=0)


@pytest.fixture
def trained(grid, blobs):
    model = kan_mlp([2, 2], grid, seed=1, name="blob_kan")
    train(model, blobs, lr=0.1, epochs=10, batch=32)
    return model


def _spec(**data):
    data.setdefault("model", "blob_kan")
    data.setdefault("dataset", "synthetic:blobs")
    data.setdefault("subset", None)
    return SweepSpec.create(**data)


def _sweep(model, dataset, **data):
    return run_sweep(_spec(**data), model, dataset)


# =============================================================================
# CONFIGURATIONS
# =============================================================================

class TestEnumerate:
    def test_bw_b_only(self):
        configs = enumerate_configs(_spec(bw_B_set=[2, 3, 4]))
        assert [(c.bw_W, c.bw_A, c.bw_B) for c in configs] == [(32, 32, 2), (32, 32, 3), (32, 32, 4)]

    def test_full_grid_in_stable_order(self):
        widths = list(VALID_BITWIDTHS)
        spec = _spec(bw_W_set=widths, bw_A_set=widths, bw_B_set=widths)
        configs = enumerate_configs(spec)
        assert len(configs) == 512
        assert configs[0] == BitwidthConfig("fake-quant", 2, 2, 2)
        assert configs[1] == BitwidthConfig("fake-quant", 2, 2, 3)
        assert configs[-1] == BitwidthConfig("fake-quant", 32, 32, 32)
        assert configs == enumerate_configs(spec)

    def test_table_modes_drop_the_sentinel(self):
        spec = _spec(bw_W_set=[8], bw_A_set=[4, 32], bw_B_set=[32], modes=["bspline-lut", "spline-table"],
                     table_bits=6)
        configs = enumerate_configs(spec)
        assert configs == [
            BitwidthConfig("bspline-lut", 8, 4, 6),
            BitwidthConfig("spline-table", 32, 4, 6),
        ]

    def test_lut_bits_fallback(self):
        spec = _spec(modes=["bspline-lut"], lut_bits=3, table_bits=5)
        assert enumerate_configs(spec) == [BitwidthConfig("bspline-lut", 32, 3, 5)]

    def test_duplicates_collapse(self):
        spec = _spec(bw_B_set=[4, 4, 2])
        assert spec.bw_B_set == [4, 2]

    @pytest.mark.parametrize("data", [
        {"bw_W_set": [9]},
        {"bw_A_set": []},
        {"modes": ["int8"]},
        {"modes": []},
        {"subset": 0},
        {"workers": 0},
        {"lut_bits": 1},
        {"range_policy_A": "percentile"},
        {"calibration_size": 0},
    ])
    def test_invalid_specs(self, data):
        with pytest.raises(InvalidArgumentError):
            _spec(**data)

    def test_spec_from_json_with_overrides(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps({"model": "m.kant", "bw_B_set": [2, 3], "subset": 100}))
        spec = SweepSpec.load(path, bw_B_set=[4], subset=None)
        assert spec.model == "m.kant"
        assert spec.bw_B_set == [4]
        assert spec.subset is None


# =============================================================================
# SWEEPS
# =============================================================================

class TestSweep:
    def test_sentinel_only_matches_baseline(self, trained, blobs):
        report = _sweep(trained, blobs)
        assert len(report.points) == 1
        assert report.points[0].accuracy == report.baseline_accuracy

    def test_bitops_increase_with_bw_b(self, trained, blobs):
        report = _sweep(trained, blobs, bw_B_set=[2, 3, 4, 6, 8, 32])
        bitops = [p.bitops for p in report.points]
        assert all(a < b for a, b in zip(bitops, bitops[1:]))

    def test_fronts_are_subsets(self, trained, blobs):
        report = _sweep(trained, blobs, bw_W_set=[2, 8], bw_A_set=[3, 8], bw_B_set=[2, 8],
                        modes=["fake-quant", "bspline-lut", "spline-table"])
        assert report.pareto_bitops and report.pareto_memory
        assert set(report.pareto_bitops) <= set(report.points)
        assert set(report.pareto_memory) <= set(report.points)

    def test_cost_columns_recompute_exactly(self, trained, blobs):
        report = _sweep(trained, blobs, bw_W_set=[4, 32], bw_A_set=[3], bw_B_set=[5],
                        modes=["fake-quant", "bspline-lut", "spline-table"])
        arch = trained.describe()
        for point in report.points:
            assert point.fp32_coeff_bits == fp32_coeff_bits(arch)
            if point.mode == "fake-quant":
                assert point.bitops == bitops_kan(arch, point.bw_W, point.bw_A, point.bw_B)
                assert point.lut_mem_bits == point.spline_mem_bits == 0
            elif point.mode == "bspline-lut":
                assert point.bitops == bitops_kan(arch, point.bw_W, point.bw_A, point.bw_B, tabulated=True)
                assert point.lut_mem_bits == lut_memory_bits(point.bw_A, point.bw_B, arch.P)
            else:
                assert point.bitops == 0
                assert point.spline_mem_bits == spline_table_bits(arch, point.bw_A, point.bw_B)
            cfg = BitwidthConfig(point.mode, point.bw_W, point.bw_A, point.bw_B)
            assert config_costs(arch, cfg)["bitops"] == point.bitops

    def test_lut_points_match_lattice_fake_quant(self, trained, blobs):
        report = _sweep(trained, blobs, bw_A_set=[4], bw_B_set=[8], modes=["bspline-lut"])
        expected = evaluate_accuracy(trained, blobs, "fake-quant", qcfg=QuantConfig(bw_B=8, a_lattice_bits=4))
        assert report.points[0].accuracy == expected

    def test_reproducible_across_runs_and_workers(self, trained, blobs):
        data = dict(bw_W_set=[2, 8], bw_A_set=[2, 8], bw_B_set=[2, 3], modes=["fake-quant", "spline-table"])
        first = csv_text(_sweep(trained, blobs, **data).points)
        second = csv_text(_sweep(trained, blobs, **data).points)
        threaded = csv_text(_sweep(trained, blobs, workers=2, **data).points)
        assert first == second == threaded

    def test_subset_is_applied(self, trained, blobs):
        pipeline = SweepPipeline(_spec(subset=40, seed=3), trained, blobs)
        assert len(pipeline.dataset) == 40
        with pytest.raises(InvalidArgumentError, match="exceeds"):
            SweepPipeline(_spec(subset=1000), trained, blobs)

    def test_failures_carry_the_configuration(self, trained, blobs, monkeypatch):
        def broken(*args, **kwargs):
            raise RuntimeError("boom")

        pipeline = SweepPipeline(_spec(bw_B_set=[4]), trained, blobs)
        monkeypatch.setattr(sweep_pipeline, "evaluate_accuracy", broken)
        with pytest.raises(SweepError, match="fake-quant:32/32/4") as info:
            pipeline.evaluate(BitwidthConfig("fake-quant", 32, 32, 4))
        assert info.value.config == BitwidthConfig("fake-quant", 32, 32, 4)

    def test_report_written_when_out_is_set(self, trained, blobs, tmp_path):
        out = tmp_path / "reports" / "sweep.json"
        report = _sweep(trained, blobs, bw_B_set=[2, 32], out=str(out), format="json")
        data = json.loads(out.read_text())
        assert len(data["points"]) == 2
        assert data["baseline_accuracy"] == report.baseline_accuracy
        assert {"pareto_bitops", "pareto_memory", "spec"} <= set(data)

    def test_csv_report_writes_both_fronts(self, trained, blobs, tmp_path):
        out = tmp_path / "r.csv"
        report = _sweep(trained, blobs, bw_W_set=[2, 8], bw_B_set=[2, 8], modes=["fake-quant", "spline-table"],
                        out=str(out))
        assert sorted(p.name for p in tmp_path.iterdir()) == ["r.csv", "r_pareto_bitops.csv", "r_pareto_memory.csv"]
        points = read_csv(out)
        for name, expected in (("bitops", report.pareto_bitops), ("memory", report.pareto_memory)):
            front = read_csv(tmp_path / f"r_pareto_{name}.csv")
            assert front == expected
            assert set(front) <= set(points)

    def test_calibrated_activation_ranges(self, trained, blobs):
        spec = _spec(bw_A_set=[4], range_policy_A="calibrated-minmax", calibration_size=50, seed=2)
        pipeline = get_pipeline(spec, trained, blobs)
        calibration = blobs.subset(50, 3).inputs
        assert pipeline.calibration.shape == (50, 2)
        expected = evaluate_accuracy(
            trained, blobs, "fake-quant",
            qcfg=QuantConfig(bw_A=4, range_policy_A="calibrated-minmax"), calibration=calibration,
        )
        assert pipeline.run().points[0].accuracy == expected

    def test_grid_bounds_needs_no_calibration(self, trained, blobs):
        assert get_pipeline(_spec(), trained, blobs).calibration is None


# =============================================================================
# REPORT FILES
# =============================================================================

def _point(**overrides):
    row = dict(model="m", mode="fake-quant", bw_W=8, bw_A=8, bw_B=3, accuracy=0.875,
               bitops=5_945_856, lut_mem_bits=0, spline_mem_bits=0, fp32_coeff_bits=1_505_280)
    row.update(overrides)
    return ParetoPoint(**row)


class TestReportFiles:
    def test_csv_round_trip(self, tmp_path):
        points = [_point(), _point(mode="spline-table", bw_W=32, bitops=0, spline_mem_bits=752_640, accuracy=1 / 3)]
        path = write_csv(points, tmp_path / "r.csv")
        assert read_csv(path) == points
        assert path.read_text().splitlines()[0] == (
            "model,mode,bw_W,bw_A,bw_B,accuracy,bitops,lut_mem_bits,spline_mem_bits,fp32_coeff_bits"
        )

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("model,mode\nm,fp32\n")
        with pytest.raises(FormatError, match="missing columns"):
            read_csv(path)

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(csv_text([_point()]).replace("5945856", "lots"))
        with pytest.raises(FormatError, match="malformed"):
            read_csv(path)

    def test_memory_bits(self):
        assert _point().memory_bits == 47_040 * 8
        assert _point(mode="bspline-lut", lut_mem_bits=4096).memory_bits == 47_040 * 8 + 4096
        assert _point(mode="spline-table", spline_mem_bits=752_640).memory_bits == 752_640

    def test_plots_are_written(self, tmp_path):
        points = [
            _point(),
            _point(bw_W=4, bitops=3_000_000, accuracy=0.8),
            _point(mode="spline-table", bw_W=32, bitops=0, spline_mem_bits=752_640),
        ]
        written = plot_report(points, tmp_path, "demo", "png")
        assert sorted(p.name for p in written) == ["demo_bitops.png", "demo_memory.png"]
        assert all(p.stat().st_size > 0 for p in written)


# =============================================================================
# CLI
# =============================================================================

class TestCli:
    def test_cost_json(self, capsys):
        assert main(["cost", "--arch", "kanmlp1", "--format", "json"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["bitops"] == 125_239_296
        assert data["fpga_lut_estimate"] == 70_560

    def test_cost_csv_total(self, capsys):
        assert main(["cost", "--arch", "kanmlp1", "--bw-w", "8", "--bw-a", "8", "--bw-b", "3", "--tabulated"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[-1].split(",")[:4] == ["total", "47040", "75264", "1128960"]

    def test_cost_of_saved_model(self, trained, tmp_path, capsys):
        path = save_model(trained, tmp_path / "blob.kant")
        assert main(["cost", "--model", str(path), "--format", "json", "--table-bw-a", "4", "--h", "6"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["param_count"] == trained.param_count
        assert data["spline_table_bits"] == 4 * 16 * 6

    def test_missing_model_fails_cleanly(self, tmp_path):
        assert main(["eval", "--model", str(tmp_path / "absent.kant")]) == 1

    def test_corrupted_container_fails_cleanly(self, trained, tmp_path):
        path = save_model(trained, tmp_path / "blob.kant")
        data = path.read_bytes()
        path.write_bytes(data.replace(b'"shape": [12, 2]', b'"shape": [13, 2]'))
        assert path.read_bytes() != data
        assert main(["eval", "--model", str(path), "--data", "synthetic:blobs"]) == 1

    def test_eval_with_calibrated_activations(self, trained, tmp_path, capsys):
        path = save_model(trained, tmp_path / "blob.kant")
        assert main(["eval", "--model", str(path), "--data", "synthetic:blobs", "--subset", "40",
                     "--mode", "fake-quant", "--bw-a", "4", "--range-policy-a", "calibrated-minmax",
                     "--calibration-size", "20"]) == 0
        assert 0.0 <= json.loads(capsys.readouterr().out)["accuracy"] <= 1.0

    def test_sweep_needs_a_model(self):
        assert main(["sweep", "--bw-b", "4"]) == 1

    def test_bad_bitwidth_list(self):
        with pytest.raises(SystemExit):
            main(["sweep", "--model", "m.kant", "--bw-b", "four"])

    def test_end_to_end(self, tmp_path, capsys):
        model_path = tmp_path / "kanmlp1.kant"
        assert main([
            "train", "--arch", "kanmlp1", "--data", "synthetic:blobs", "--n-synthetic", "120",
            "--epochs", "1", "--lr", "0.05", "--out", str(model_path),
            "--loss-csv", str(tmp_path / "loss.csv"),
        ]) == 0
        assert model_path.exists() and (tmp_path / "loss.csv").exists()

        assert main(["eval", "--model", str(model_path), "--data", "synthetic:blobs", "--subset", "50",
                     "--mode", "fake-quant", "--bw-w", "8", "--bw-a", "8", "--bw-b", "4"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["samples"] == 50 and 0.0 <= result["accuracy"] <= 1.0

        tabled = tmp_path / "tabled.kant"
        assert main(["tabulate", "--model", str(model_path), "--kind", "tables", "--table-bw-a", "4",
                     "--h", "6", "--save", str(tabled)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["memory_bits"] == 752_640
        assert summary["fp32_coeff_bits"] == 1_505_280
        assert main(["eval", "--model", str(tabled), "--data", "synthetic:blobs", "--subset", "50",
                     "--mode", "spline-table"]) == 0
        capsys.readouterr()

        report = tmp_path / "sweep.csv"
        assert main(["sweep", "--model", str(model_path), "--data", "synthetic:blobs", "--subset", "60",
                     "--bw-b", "2,4,32", "--out", str(report)]) == 0
        points = read_csv(report)
        assert [p.bw_B for p in points] == [2, 4, 32]

        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({"model": str(model_path), "dataset": "synthetic:blobs",
                                         "subset": 60, "bw_B_set": [3]}))
        assert main(["sweep", "--spec", str(spec_path), "--format", "json"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert [p["bw_B"] for p in data["points"]] == [3]

        front = tmp_path / "front.csv"
        assert main(["pareto", str(report), "--out", str(front)]) == 0
        assert set(read_csv(front)) <= set(points)

        assert main(["plot", str(report), "--format", "png", "--out", str(tmp_path / "plots")]) == 0
        assert (tmp_path / "plots" / "sweep_bitops.png").exists()
