"""
Report service for kantize.
Reads and writes sweep reports (CSV / JSON) and renders Pareto plots.
"""
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Union

from analysis.pareto import pareto_front
from utils import FormatError, setup_logger
from config import config


logger = setup_logger(__name__, config.app.log_level)

PathLike = Union[str, Path]

CSV_FIELDS = (
    "model",
    "mode",
    "bw_W",
    "bw_A",
    "bw_B",
    "accuracy",
    "bitops",
    "lut_mem_bits",
    "spline_mem_bits",
    "fp32_coeff_bits",
)

_MARKERS = ("o", "s", "^", "v", "D", "P", "X", "*")


@dataclass(frozen=True)
class ParetoPoint:
    """
    One evaluated configuration.

    In bspline-lut rows bw_A holds the lattice bits k and bw_B the LUT value
    bits h; in spline-table rows bw_B holds the table value bits h.
    """
    model: str
    mode: str
    bw_W: int
    bw_A: int
    bw_B: int
    accuracy: float
    bitops: int
    lut_mem_bits: int
    spline_mem_bits: int
    fp32_coeff_bits: int

    @property
    def label(self) -> str:
        return f"{self.mode}:{self.bw_W}/{self.bw_A}/{self.bw_B}"

    @property
    def memory_bits(self) -> int:
        """Inference-time storage: spline tables, or bw_W-bit coefficients plus any LUT."""
        if self.mode == "spline-table":
            return self.spline_mem_bits
        return self.fp32_coeff_bits // 32 * self.bw_W + self.lut_mem_bits

    def to_row(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "ParetoPoint":
        try:
            return cls(
                model=row["model"],
                mode=row["mode"],
                bw_W=int(row["bw_W"]),
                bw_A=int(row["bw_A"]),
                bw_B=int(row["bw_B"]),
                accuracy=float(row["accuracy"]),
                bitops=int(row["bitops"]),
                lut_mem_bits=int(row["lut_mem_bits"]),
                spline_mem_bits=int(row["spline_mem_bits"]),
                fp32_coeff_bits=int(row["fp32_coeff_bits"]),
            )
        except (KeyError, ValueError) as e:
            raise FormatError(f"malformed report row {row}: {e}") from e


def fronts(points: Sequence[ParetoPoint]) -> Dict[str, List[ParetoPoint]]:
    """Accuracy-vs-BitOps and accuracy-vs-memory fronts."""
    return {
        "pareto_bitops": pareto_front(points, lambda p: p.accuracy, lambda p: p.bitops),
        "pareto_memory": pareto_front(points, lambda p: p.accuracy, lambda p: p.memory_bits),
    }


# =============================================================================
# CSV / JSON
# =============================================================================

def _write_rows(points: Iterable[ParetoPoint], stream: TextIO) -> None:
    writer = csv.DictWriter(stream, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for point in points:
        row = point.to_row()
        row["accuracy"] = repr(point.accuracy)
        writer.writerow(row)


def write_csv(points: Iterable[ParetoPoint], path: Optional[PathLike] = None) -> Optional[Path]:
    """Write points as CSV to path, or to stdout when path is None or '-'."""
    if path is None or str(path) == "-":
        _write_rows(points, sys.stdout)
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        _write_rows(points, f)
    logger.info(f"Report written to {path}")
    return path


def csv_text(points: Iterable[ParetoPoint]) -> str:
    buffer = io.StringIO()
    _write_rows(points, buffer)
    return buffer.getvalue()


def read_csv(path: PathLike) -> List[ParetoPoint]:
    """
    Parse a report CSV.

    Raises:
        FormatError: If the header or a row does not match the report schema
    """
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = [name for name in CSV_FIELDS if name not in (reader.fieldnames or ())]
        if missing:
            raise FormatError(f"{path}: report is missing columns {missing}")
        return [ParetoPoint.from_row(row) for row in reader]


def report_dict(
    points: Sequence[ParetoPoint],
    spec: Optional[dict] = None,
    baseline_accuracy: Optional[float] = None,
) -> dict:
    data = {"spec": spec or {}, "points": [p.to_row() for p in points]}
    if baseline_accuracy is not None:
        data["baseline_accuracy"] = baseline_accuracy
    if points:
        data.update({name: [p.to_row() for p in front] for name, front in fronts(points).items()})
    else:
        data.update({"pareto_bitops": [], "pareto_memory": []})
    return data


def write_json(data: dict, path: Optional[PathLike] = None) -> Optional[Path]:
    text = json.dumps(data, indent=2)
    if path is None or str(path) == "-":
        sys.stdout.write(text + "\n")
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n")
    logger.info(f"Report written to {path}")
    return path


# =============================================================================
# PLOTS
# =============================================================================

def _scatter(ax, points: Sequence[ParetoPoint], cost, front: Sequence[ParetoPoint]) -> None:
    import matplotlib

    widths_W = sorted({p.bw_W for p in points})
    widths_A = sorted({p.bw_A for p in points})
    widths_B = sorted({p.bw_B for p in points})
    colours = matplotlib.colormaps["viridis"]([i / max(len(widths_W) - 1, 1) for i in range(len(widths_W))])
    for point in points:
        ax.scatter(
            cost(point),
            point.accuracy,
            color=colours[widths_W.index(point.bw_W)],
            s=20 + 25 * widths_A.index(point.bw_A),
            marker=_MARKERS[widths_B.index(point.bw_B) % len(_MARKERS)],
            alpha=0.75,
            edgecolors="none",
        )
    ordered = sorted(front, key=cost)
    ax.step([cost(p) for p in ordered], [p.accuracy for p in ordered], where="post", color="black", lw=1)
    for bw, colour in zip(widths_W, colours):
        ax.scatter([], [], color=colour, label=f"bw_W={bw}")


def plot_report(
    points: Sequence[ParetoPoint],
    out_dir: PathLike,
    stem: str = "sweep",
    fmt: Optional[str] = None,
) -> List[Path]:
    """
    Accuracy vs BitOps and accuracy vs memory plots (log-x).

    Colour encodes bw_W, marker size bw_A and marker shape bw_B. Failures
    are logged and yield no files; the CSV stays the source of truth.
    """
    fmt = fmt or config.app.plot_format
    written = []
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        axes_spec = (
            ("bitops", "BitOps", lambda p: p.bitops),
            ("memory", "Memory [bits]", lambda p: p.memory_bits),
        )
        for name, xlabel, cost in axes_spec:
            # Log axes cannot place zero-cost points (spline tables have no multiplications)
            shown = [p for p in points if cost(p) > 0]
            if not shown:
                logger.warning(f"No positive {name} values to plot")
                continue
            front = pareto_front(shown, lambda p: p.accuracy, cost)
            fig, ax = plt.subplots(figsize=(7, 5))
            _scatter(ax, shown, cost, front)
            ax.set_xscale("log")
            ax.set_xlabel(xlabel)
            ax.set_ylabel("Accuracy")
            ax.set_title(f"{stem}: accuracy vs {name}")
            ax.legend(loc="lower right", fontsize="small")
            ax.grid(True, which="both", alpha=0.3)
            path = out_dir / f"{stem}_{name}.{fmt}"
            fig.savefig(path, format=fmt, bbox_inches="tight")
            plt.close(fig)
            written.append(path)
            logger.info(f"Plot written to {path}")
    except Exception as e:
        logger.warning(f"Plotting failed: {e}")
    return written
