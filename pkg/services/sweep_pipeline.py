"""
Sweep pipeline for kantize.
Enumerates bit-width configurations, evaluates accuracy and analytic costs
for each one and assembles the report with its Pareto fronts.
"""
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, Field, PositiveInt, ValidationError, field_validator

from analysis.cost_model import (
    ArchDescriptor,
    bitops_kan,
    fp32_coeff_bits,
    lut_memory_bits,
    spline_table_bits,
)
from kan.container import load_model
from kan.model import Model
from quantization.quantizer import PASSTHROUGH_BW, VALID_BITWIDTHS, QuantConfig
from quantization.tabulation import build_bspline_lut, tabulate_model
from services.dataset_service import Dataset, load_mnist, synthetic_dataset
from services.evaluation_service import evaluate_accuracy
from services.report_service import (
    ParetoPoint,
    fronts,
    plot_report,
    report_dict,
    write_csv,
    write_json,
)
from utils import InvalidArgumentError, SweepError, setup_logger
from config import config


logger = setup_logger(__name__, config.app.log_level)

SWEEP_MODES = ("fake-quant", "bspline-lut", "spline-table")
SweepMode = Literal["fake-quant", "bspline-lut", "spline-table"]


class SweepSpec(BaseModel):
    """Everything a sweep depends on; loadable from JSON."""
    model: str
    dataset: str = "mnist"
    data_dir: Optional[str] = None
    bw_W_set: List[int] = Field(default_factory=lambda: [PASSTHROUGH_BW])
    bw_A_set: List[int] = Field(default_factory=lambda: [PASSTHROUGH_BW])
    bw_B_set: List[int] = Field(default_factory=lambda: [PASSTHROUGH_BW])
    modes: List[SweepMode] = Field(default_factory=lambda: ["fake-quant"])
    range_policy_A: Literal["grid-bounds", "calibrated-minmax"] = "grid-bounds"
    # Samples drawn (seed + 1) for calibrated-minmax activation ranges
    calibration_size: PositiveInt = 256
    # None evaluates the full dataset
    subset: Optional[PositiveInt] = Field(default_factory=lambda: config.sweep.subset)
    seed: int = 0
    lut_bits: int = Field(default_factory=lambda: config.sweep.lut_bits)
    table_bits: int = Field(default_factory=lambda: config.sweep.table_bits)
    workers: PositiveInt = Field(default_factory=lambda: config.sweep.workers)
    out: Optional[str] = None
    format: Literal["csv", "json"] = "csv"
    plot: bool = False

    @field_validator("bw_W_set", "bw_A_set", "bw_B_set")
    @classmethod
    def _check_bitwidths(cls, values: List[int]) -> List[int]:
        if not values:
            raise ValueError("bit-width sets must be non-empty")
        bad = [v for v in values if v not in VALID_BITWIDTHS]
        if bad:
            raise ValueError(f"bit-widths {bad} not in {VALID_BITWIDTHS}")
        return list(dict.fromkeys(values))

    @field_validator("modes")
    @classmethod
    def _check_modes(cls, values: List[str]) -> List[str]:
        if not values:
            raise ValueError("mode set must be non-empty")
        return list(dict.fromkeys(values))

    @field_validator("lut_bits", "table_bits")
    @classmethod
    def _check_table_bits(cls, value: int) -> int:
        if not 2 <= value <= 8:
            raise ValueError(f"table bits must be in [2, 8], got {value}")
        return value

    @classmethod
    def create(cls, **data) -> "SweepSpec":
        """Validated construction raising InvalidArgumentError."""
        try:
            return cls(**data)
        except ValidationError as e:
            raise InvalidArgumentError(f"invalid sweep spec: {e}") from e

    @classmethod
    def load(cls, path: Union[str, Path], **overrides) -> "SweepSpec":
        data = json.loads(Path(path).read_text())
        data.update(overrides)
        return cls.create(**data)


@dataclass(frozen=True)
class BitwidthConfig:
    """One point of the design space."""
    mode: str
    bw_W: int
    bw_A: int
    bw_B: int

    @property
    def label(self) -> str:
        return f"{self.mode}:{self.bw_W}/{self.bw_A}/{self.bw_B}"


def _reduced(values: List[int], fallback: int) -> List[int]:
    """Table-based modes cannot use the 32-bit sentinel."""
    return [v for v in values if v != PASSTHROUGH_BW] or [fallback]


def enumerate_configs(spec: SweepSpec) -> List[BitwidthConfig]:
    """
    Cartesian product of the bit-width sets for every mode, in spec order.

    fake-quant: (bw_W, bw_A, bw_B). bspline-lut: (bw_W, k, h) with k taken
    from bw_A_set and h from bw_B_set. spline-table: (32, bw_A, h) with h
    taken from bw_B_set.

    Raises:
        InvalidArgumentError: If a set is empty
    """
    if not (spec.bw_W_set and spec.bw_A_set and spec.bw_B_set and spec.modes):
        raise InvalidArgumentError("sweep sets must be non-empty")
    configs = []
    for mode in spec.modes:
        if mode == "fake-quant":
            grid = itertools.product(spec.bw_W_set, spec.bw_A_set, spec.bw_B_set)
        elif mode == "bspline-lut":
            grid = itertools.product(
                spec.bw_W_set,
                _reduced(spec.bw_A_set, spec.lut_bits),
                _reduced(spec.bw_B_set, spec.table_bits),
            )
        else:
            grid = itertools.product(
                [PASSTHROUGH_BW],
                _reduced(spec.bw_A_set, spec.table_bits),
                _reduced(spec.bw_B_set, spec.table_bits),
            )
        configs.extend(BitwidthConfig(mode, w, a, b) for w, a, b in grid)
    return configs


def config_costs(arch: ArchDescriptor, cfg: BitwidthConfig) -> dict:
    """Analytic cost columns of one report row (batch 1)."""
    costs = {
        "bitops": 0,
        "lut_mem_bits": 0,
        "spline_mem_bits": 0,
        "fp32_coeff_bits": fp32_coeff_bits(arch),
    }
    if cfg.mode == "fake-quant":
        costs["bitops"] = bitops_kan(arch, cfg.bw_W, cfg.bw_A, cfg.bw_B, M=1)
    elif cfg.mode == "bspline-lut":
        costs["bitops"] = bitops_kan(arch, cfg.bw_W, cfg.bw_A, cfg.bw_B, M=1, tabulated=True)
        costs["lut_mem_bits"] = lut_memory_bits(cfg.bw_A, cfg.bw_B, arch.P)
    else:
        # Lookups and additions only
        costs["spline_mem_bits"] = spline_table_bits(arch, cfg.bw_A, cfg.bw_B)
    return costs


@dataclass
class SweepReport:
    """All evaluated points plus their fronts."""
    spec: SweepSpec
    baseline_accuracy: float
    points: List[ParetoPoint] = field(default_factory=list)

    @property
    def pareto_bitops(self) -> List[ParetoPoint]:
        return fronts(self.points)["pareto_bitops"]

    @property
    def pareto_memory(self) -> List[ParetoPoint]:
        return fronts(self.points)["pareto_memory"]

    def to_dict(self) -> dict:
        return report_dict(self.points, self.spec.model_dump(), self.baseline_accuracy)


class SweepPipeline:
    """Evaluates every configuration of a SweepSpec against one model and dataset."""

    def __init__(self, spec: SweepSpec, model: Optional[Model] = None, dataset: Optional[Dataset] = None):
        self.spec = spec
        self.model = model if model is not None else load_model(spec.model)
        full = dataset if dataset is not None else self._load_dataset()
        if spec.subset is not None and spec.subset > len(full):
            raise InvalidArgumentError(
                f"evaluation subset {spec.subset} exceeds dataset size {len(full)}"
            )
        self.dataset = full.subset(spec.subset, spec.seed)
        self.calibration = None
        if spec.range_policy_A == "calibrated-minmax":
            self.calibration = full.subset(spec.calibration_size, spec.seed + 1).inputs
        self.arch = self.model.describe()
        logger.info(
            f"Sweep pipeline ready: model {self.model.name}, {len(self.dataset)} evaluation samples"
        )

    def _load_dataset(self) -> Dataset:
        name = self.spec.dataset
        if name == "mnist":
            return load_mnist("test", self.spec.data_dir)
        if name.startswith("synthetic:"):
            return synthetic_dataset(
                name.split(":", 1)[1],
                n=self.spec.subset or config.sweep.subset,
                seed=self.spec.seed,
                n_features=self.model.input_size,
                n_classes=self.model.n_classes,
            )
        raise InvalidArgumentError(f"unknown dataset {name!r}; use 'mnist' or 'synthetic:<kind>'")

    def evaluate(self, cfg: BitwidthConfig) -> ParetoPoint:
        """Accuracy and costs of one configuration."""
        try:
            if cfg.mode == "fake-quant":
                accuracy = evaluate_accuracy(
                    self.model, self.dataset, "fake-quant",
                    qcfg=QuantConfig(cfg.bw_W, cfg.bw_A, cfg.bw_B, range_policy_A=self.spec.range_policy_A),
                    calibration=self.calibration,
                )
            elif cfg.mode == "bspline-lut":
                lut = build_bspline_lut(self.model.grid.spline_order, cfg.bw_A, cfg.bw_B)
                accuracy = evaluate_accuracy(
                    self.model, self.dataset, "bspline-lut",
                    qcfg=QuantConfig(bw_W=cfg.bw_W), lut=lut,
                )
            else:
                tables = tabulate_model(self.model, cfg.bw_A, cfg.bw_B)
                accuracy = evaluate_accuracy(self.model, self.dataset, "spline-table", tables=tables)
            return ParetoPoint(
                model=self.model.name,
                mode=cfg.mode,
                bw_W=cfg.bw_W,
                bw_A=cfg.bw_A,
                bw_B=cfg.bw_B,
                accuracy=accuracy,
                **config_costs(self.arch, cfg),
            )
        except Exception as e:
            logger.error(f"Configuration {cfg.label} failed: {e}")
            raise SweepError(f"configuration {cfg.label} failed: {e}", config=cfg) from e

    def run(self) -> SweepReport:
        configs = enumerate_configs(self.spec)
        total = len(configs)
        baseline = evaluate_accuracy(self.model, self.dataset, "fp32")
        logger.info(f"Sweeping {total} configurations on {self.spec.workers} worker(s), fp32 baseline {baseline:.4f}")

        points = []
        with ThreadPoolExecutor(max_workers=self.spec.workers) as executor:
            # map yields in submission order, so the merge is deterministic
            for index, point in enumerate(executor.map(self.evaluate, configs), start=1):
                points.append(point)
                logger.info(f"[{index}/{total}] {point.label} accuracy={point.accuracy:.4f} bitops={point.bitops}")
        return SweepReport(self.spec, baseline, points)


def get_pipeline(spec: SweepSpec, model: Optional[Model] = None, dataset: Optional[Dataset] = None) -> SweepPipeline:
    """Build a pipeline for a spec, loading the model and dataset it names when not given."""
    return SweepPipeline(spec, model, dataset)


def write_report(report: SweepReport, out: Optional[Union[str, Path]] = None, fmt: str = "csv", plot: bool = False) -> Optional[Path]:
    """
    Write a report as CSV or JSON (stdout when out is None) and optional plots beside it.

    A CSV file report gets its two fronts as siblings, <stem>_pareto_bitops.csv
    and <stem>_pareto_memory.csv; the JSON report carries them inline.
    """
    if fmt == "json":
        path = write_json(report.to_dict(), out)
    else:
        path = write_csv(report.points, out)
        if path is not None:
            for name, front in fronts(report.points).items():
                write_csv(front, path.with_name(f"{path.stem}_{name}{path.suffix}"))
    if plot:
        if path is not None:
            plot_report(report.points, path.parent, path.stem)
        else:
            plot_report(report.points, Path("."), Path(report.spec.model).stem or "sweep")
    return path


def run_sweep(spec: SweepSpec, model: Optional[Model] = None, dataset: Optional[Dataset] = None) -> SweepReport:
    """
    Evaluate every configuration of a spec and write the report if spec.out is set.

    Raises:
        SweepError: If a configuration fails (carries the configuration)
    """
    report = get_pipeline(spec, model, dataset).run()
    if spec.out is not None:
        write_report(report, spec.out, spec.format, spec.plot)
    return report
