"""
kantize - quantized KAN inference explorer
Command line entry point: train, evaluate, cost, tabulate and sweep KAN models.

Results go to stdout (or --out); logs go to stderr.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from analysis.cost_model import builtin_archs, cost_report, exceeds_device, load_arch
from analysis.pareto import pareto_front
from kan.architectures import ARCHITECTURES, build_model
from kan.bspline import GridSpec, build_grid
from kan.container import read_container, save_model
from kan.model import Model
from quantization.quantizer import PASSTHROUGH_BW, RANGE_POLICIES, QuantConfig
from quantization.tabulation import (
    build_bspline_lut,
    tables_from_blobs,
    tables_to_blobs,
    tabulate_model,
)
from services.dataset_service import Dataset, load_mnist, synthetic_dataset
from services.evaluation_service import EVAL_MODES, evaluate_accuracy
from services.report_service import plot_report, read_csv, write_csv, write_json
from services.sweep_pipeline import SWEEP_MODES, SweepSpec, run_sweep, write_report
from services.training_service import train
from utils import KantizeError, set_global_level, setup_logger
from config import config


logger = setup_logger(__name__, config.app.log_level)


def _bitwidth_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _mode_list(text: str) -> List[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in SWEEP_MODES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown sweep modes {bad}; choose from {SWEEP_MODES}")
    return modes


def _grid() -> GridSpec:
    g = config.grid
    return build_grid(g.grid_size, g.spline_order, g.domain_lo, g.domain_hi)


def _load_dataset(data: Optional[str], split: str, model: Model, n: int, seed: int) -> Dataset:
    """'mnist' (KANTIZE_DATA_DIR), a directory of IDX files, or 'synthetic:<kind>'."""
    data = data or "mnist"
    if data.startswith("synthetic:"):
        return synthetic_dataset(
            data.split(":", 1)[1], n=n, seed=seed if split == "train" else seed + 1,
            n_features=model.input_size, n_classes=model.n_classes,
        )
    return load_mnist(split, None if data == "mnist" else data)


def _emit(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(text)
    logger.info(f"Wrote {out}")


# =============================================================================
# SUBCOMMANDS
# =============================================================================

def cmd_train(args) -> int:
    model = build_model(args.arch, _grid(), args.seed)
    logger.info(model.summary())
    dataset = _load_dataset(args.data, "train", model, args.n_synthetic, args.seed)
    dataset = dataset.subset(args.subset, args.seed)
    overrides = {
        name: getattr(args, name)
        for name in ("lr", "epochs", "batch", "momentum", "seed")
        if getattr(args, name) is not None
    }
    result = train(model, dataset, loss_csv=args.loss_csv, **overrides)

    test = _load_dataset(args.data, "test", model, args.n_synthetic, args.seed)
    accuracy = evaluate_accuracy(result.model, test, "fp32")
    logger.info(f"Test accuracy {accuracy:.4f} on {len(test)} samples")
    out = args.out or f"models/{args.arch}.kant"
    save_model(result.model, out)
    logger.info(f"Model saved to {out}")
    return 0


def cmd_eval(args) -> int:
    model, blobs = read_container(args.model)
    dataset = _load_dataset(args.data, "test", model, args.subset or config.sweep.subset, args.seed)
    dataset = dataset.subset(args.subset, args.seed)
    kwargs = {}
    if args.mode == "fake-quant":
        kwargs["qcfg"] = QuantConfig(
            args.bw_w, args.bw_a, args.bw_b,
            range_policy_A=args.range_policy_a, a_lattice_bits=args.lattice_bits,
        )
        if args.range_policy_a == "calibrated-minmax":
            kwargs["calibration"] = dataset.subset(args.calibration_size, args.seed + 1).inputs
    elif args.mode == "bspline-lut":
        kwargs["qcfg"] = QuantConfig(bw_W=args.bw_w)
        kwargs["lut"] = build_bspline_lut(model.grid.spline_order, args.k, args.h)
    elif args.mode == "spline-table":
        tables = tables_from_blobs(blobs) or tabulate_model(model, args.table_bw_a, args.h)
        kwargs["tables"] = tables
    accuracy = evaluate_accuracy(model, dataset, args.mode, **kwargs)
    result = {"model": model.name, "mode": args.mode, "samples": len(dataset), "accuracy": accuracy}
    _emit(json.dumps(result) + "\n", args.out)
    return 0


def cmd_cost(args) -> int:
    if args.model:
        model, _ = read_container(args.model)
        arch = model.describe(args.batch)
    else:
        arch = load_arch(args.arch)
    report = cost_report(
        arch, args.bw_w, args.bw_a, args.bw_b, M=args.batch, tabulated=args.tabulated,
        k=args.k, h=args.h, table_bw_A=args.table_bw_a,
    )
    if exceeds_device(arch):
        logger.warning(f"{arch.name}: per-connection tabulation needs ~{report.fpga_lut_estimate} FPGA LUTs, beyond one large device")
    if args.format == "json":
        _emit(json.dumps(report.to_dict(), indent=2) + "\n", args.out)
        return 0
    columns = ["label", "muls_matmul", "muls_bspline", "bitops", "connections", "param_count",
               "spline_table_bits", "fp32_coeff_bits"]
    lines = [",".join(columns)]
    for layer in report.layers:
        lines.append(",".join(str(getattr(layer, c)) for c in columns))
    lines.append(",".join([
        "total", str(report.muls_matmul), str(report.muls_bspline), str(report.bitops),
        str(sum(layer.connections for layer in report.layers)), str(report.param_count),
        str(report.spline_table_bits), str(report.fp32_coeff_bits),
    ]))
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_tabulate(args) -> int:
    model, _ = read_container(args.model)
    if args.kind == "lut":
        lut = build_bspline_lut(model.grid.spline_order, args.k, args.h)
        blobs = [lut.to_blob()]
        summary = {"kind": "lut", "k": args.k, "h": args.h, "memory_bits": lut.accounted_bits}
    else:
        tables = tabulate_model(model, args.table_bw_a, args.h)
        blobs = tables_to_blobs(tables)
        summary = {
            "kind": "tables",
            "bw_A": args.table_bw_a,
            "h": args.h,
            "n_tables": sum(t.n_tables for t in tables),
            "memory_bits": sum(t.stored_bits for t in tables),
            "fp32_coeff_bits": model.param_count * 32,
        }
    if args.save:
        save_model(model, args.save, blobs=blobs)
        summary["container"] = str(args.save)
    _emit(json.dumps(summary) + "\n", args.out)
    return 0


def cmd_sweep(args) -> int:
    overrides = {
        "model": args.model,
        "dataset": args.data,
        "bw_W_set": args.bw_w,
        "bw_A_set": args.bw_a,
        "bw_B_set": args.bw_b,
        "modes": args.mode,
        "range_policy_A": args.range_policy_a,
        "calibration_size": args.calibration_size,
        "seed": args.seed,
        "workers": args.workers,
        "out": args.out,
        "format": args.format,
        "plot": args.plot or None,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.full:
        overrides["subset"] = None
    elif args.subset is not None:
        overrides["subset"] = args.subset
    if args.spec:
        spec = SweepSpec.load(args.spec, **overrides)
    else:
        if args.model is None:
            raise KantizeError("sweep needs --model or --spec")
        spec = SweepSpec.create(**overrides)
    report = run_sweep(spec)
    if spec.out is None:
        write_report(report, None, spec.format)
    return 0


def cmd_pareto(args) -> int:
    points = read_csv(args.report)
    if not points:
        raise KantizeError(f"{args.report} holds no points")
    cost = (lambda p: p.bitops) if args.objective == "bitops" else (lambda p: p.memory_bits)
    front = pareto_front(points, lambda p: p.accuracy, cost)
    logger.info(f"{len(front)} of {len(points)} points on the accuracy/{args.objective} front")
    if args.format == "json":
        write_json({"objective": args.objective, "points": [p.to_row() for p in front]}, args.out)
    else:
        write_csv(front, args.out)
    return 0


def cmd_plot(args) -> int:
    points = read_csv(args.report)
    out_dir = Path(args.out) if args.out else Path(args.report).parent
    written = plot_report(points, out_dir, Path(args.report).stem, args.format)
    for path in written:
        print(path)
    return 0


# =============================================================================
# PARSER
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kantize",
        description="Quantization, tabulation and cost exploration for KAN inference",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_flags(p):
        p.add_argument("--data", default="mnist",
                       help="'mnist' (KANTIZE_DATA_DIR), an IDX directory, or 'synthetic:<blobs|moons>'")
        p.add_argument("--seed", type=int, default=config.train.seed)

    p = sub.add_parser("train", help="train a desk-scale model")
    p.add_argument("--arch", choices=sorted(ARCHITECTURES), default="kanmlp1")
    data_flags(p)
    p.add_argument("--subset", type=int, help="train on a fixed-seed subset")
    p.add_argument("--n-synthetic", type=int, default=2000, help="samples per synthetic split")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--loss-csv", help="write the (epoch, step, loss) curve here")
    p.add_argument("--out", help="model container path (default models/<arch>.kant)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a saved model under one forward path")
    p.add_argument("--model", required=True)
    data_flags(p)
    p.add_argument("--mode", choices=EVAL_MODES, default="fp32")
    p.add_argument("--bw-w", type=int, default=PASSTHROUGH_BW)
    p.add_argument("--bw-a", type=int, default=PASSTHROUGH_BW)
    p.add_argument("--bw-b", type=int, default=PASSTHROUGH_BW)
    p.add_argument("--lattice-bits", type=int, help="quantize activations to the knot lattice")
    p.add_argument("--range-policy-a", choices=RANGE_POLICIES, default="grid-bounds",
                   help="activation range for fake-quant")
    p.add_argument("--calibration-size", type=int, default=256, help="samples for calibrated-minmax")
    p.add_argument("--k", type=int, default=config.sweep.lut_bits, help="LUT addressing bits")
    p.add_argument("--h", type=int, default=config.sweep.table_bits, help="table value bits")
    p.add_argument("--table-bw-a", type=int, default=8, help="spline-table input bits")
    p.add_argument("--subset", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cost", help="analytic MULs, BitOps and memory")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--arch", help=f"descriptor JSON or one of {builtin_archs()}")
    source.add_argument("--model", help="model container")
    p.add_argument("--bw-w", type=int, default=PASSTHROUGH_BW)
    p.add_argument("--bw-a", type=int, default=PASSTHROUGH_BW)
    p.add_argument("--bw-b", type=int, default=PASSTHROUGH_BW)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--tabulated", action="store_true", help="B-spline evaluation by LUT")
    p.add_argument("--k", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--table-bw-a", type=int)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("tabulate", help="build the B-spline LUT or per-connection spline tables")
    p.add_argument("--model", required=True)
    p.add_argument("--kind", choices=("lut", "tables"), default="tables")
    p.add_argument("--k", type=int, default=config.sweep.lut_bits)
    p.add_argument("--h", type=int, default=config.sweep.table_bits)
    p.add_argument("--table-bw-a", type=int, default=8)
    p.add_argument("--save", help="write a container holding the model and its tables")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tabulate)

    p = sub.add_parser("sweep", help="evaluate every bit-width configuration")
    p.add_argument("--model")
    p.add_argument("--spec", help="SweepSpec JSON; flags override its fields")
    p.add_argument("--data")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", type=_mode_list, help=f"comma list of {SWEEP_MODES}")
    p.add_argument("--bw-w", type=_bitwidth_list)
    p.add_argument("--bw-a", type=_bitwidth_list)
    p.add_argument("--bw-b", type=_bitwidth_list)
    p.add_argument("--range-policy-a", choices=RANGE_POLICIES, help="activation range for fake-quant")
    p.add_argument("--calibration-size", type=int)
    p.add_argument("--subset", type=int)
    p.add_argument("--full", action="store_true", help="evaluate on the whole dataset")
    p.add_argument("--workers", type=int)
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--plot", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pareto", help="Pareto front of a report CSV")
    p.add_argument("report")
    p.add_argument("--objective", choices=("bitops", "memory"), default="bitops")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("plot", help="accuracy vs cost plots from a report CSV")
    p.add_argument("report")
    p.add_argument("--format", choices=("svg", "png", "pdf"), default=config.app.plot_format)
    p.add_argument("--out", help="output directory (default: beside the report)")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    if args.verbose:
        set_global_level("DEBUG")
    try:
        return args.func(args)
    except (KantizeError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
