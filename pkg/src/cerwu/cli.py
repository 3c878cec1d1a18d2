"""Command-line interface.

Subcommands: compress, decompress, eval, sweep, pareto (and a hidden
oracle command for debugging tiny instances). Exit status: 0 on success,
1 on input errors, 2 on internal errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from . import entropy
from .engine import CompressionConfig, GAMMA_STANDARD, GAMMA_ZERO
from .errors import CerwuError, InputError
from .grids import COLUMN_MAJOR, ROW_MAJOR, build_grid
from .modelio import (
    COMPRESSED_MAGIC,
    TENSOR_MAGIC,
    load_tensor_file,
    read_compressed,
    write_compressed,
    write_tensor_file,
)
from .pipeline import (
    METHOD_CERWU,
    METHODS,
    collect_hessians,
    compress_model,
    decompress_model,
    evaluate_model,
)
from .sweep import (
    DEFAULT_LAMBDAS,
    pareto_front,
    points_from_csv,
    points_to_csv,
    run_sweep,
)

log = logging.getLogger("cerwu")


def _add_engine_flags(p: argparse.ArgumentParser, with_lambda: bool = True):
    if with_lambda:
        p.add_argument("--lambda", dest="lam", type=float, default=0.0,
                       help="rate-distortion trade-off weight (default 0)")
    p.add_argument("--grid-size", type=int, default=17, help="number of grid levels")
    p.add_argument("--scan-order", choices=[ROW_MAJOR, COLUMN_MAJOR],
                   default=ROW_MAJOR)
    p.add_argument("--model-kind", choices=list(entropy.MODEL_KINDS),
                   default=entropy.ADAPTIVE)
    p.add_argument("--delta", type=float, default=1e-2,
                   help="relative Hessian damping")
    p.add_argument("--gamma-mode", choices=[GAMMA_STANDARD, GAMMA_ZERO],
                   default=GAMMA_STANDARD,
                   help="'zero' disables regularized weight updates")
    p.add_argument("--method", choices=list(METHODS), default=METHOD_CERWU,
                   help="'rtn' is the nearest-level + entropy coding baseline")


def _hessian_cache_path(calib_path: str) -> str:
    return calib_path + ".hcache.npz"


def cmd_compress(args) -> int:
    model_tf = load_tensor_file(args.model)
    calib_tf = load_tensor_file(args.calib)
    hessians = {}
    if args.method == METHOD_CERWU:
        hessians = collect_hessians(
            model_tf, calib_tf, calib_path=args.calib,
            cache_path=_hessian_cache_path(args.calib),
        )
    config = CompressionConfig(
        lam=args.lam,
        grid_size=args.grid_size,
        scan_order=args.scan_order,
        model_kind=args.model_kind,
        damping_delta=args.delta,
        gamma_mode=args.gamma_mode,
    )
    report = compress_model(model_tf, hessians, config, method=args.method)
    write_compressed(report.compressed, args.out)
    for st in report.layers:
        print(
            f"layer {st.name}: {st.params} params, {st.bits_per_weight:.4f} bpw, "
            f"loss delta {st.quadratic_loss_delta:.6g}"
        )
    print(
        f"total: {report.bits_per_weight:.4f} bpw, "
        f"loss delta {report.total_loss_delta:.6g}, "
        f"wall {report.wall_seconds:.2f}s -> {args.out}"
    )
    return 0


def cmd_decompress(args) -> int:
    t0 = time.perf_counter()
    cm = read_compressed(args.input)
    tf = decompress_model(cm)
    write_tensor_file(tf, args.out)
    print(f"decompressed {len(cm.records)} tensors in "
          f"{time.perf_counter() - t0:.2f}s -> {args.out}")
    return 0


def _load_model_or_reconstruction(path):
    """Accept either a compressed model or a plain tensor container."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == COMPRESSED_MAGIC:
        cm = read_compressed(path)
        return decompress_model(cm), cm
    if magic == TENSOR_MAGIC:
        return load_tensor_file(path), None
    raise InputError(f"{path}: neither a compressed model nor a tensor container")


def cmd_eval(args) -> int:
    model_tf = load_tensor_file(args.model)
    recon_tf, cm = _load_model_or_reconstruction(args.compressed)
    calib_tf = load_tensor_file(args.calib)
    test_tf = load_tensor_file(args.test) if args.test else None
    report = evaluate_model(model_tf, recon_tf, calib_tf, test_tf, compressed=cm)
    for name, loss in report.layer_losses.items():
        print(f"layer {name}: loss {loss:.6g}")
    line = f"total loss {report.total_loss:.6g}"
    if report.bits_per_weight is not None:
        line += f", {report.bits_per_weight:.4f} bpw"
    if report.accuracy is not None:
        line += f", accuracy {report.accuracy:.4f}"
    print(line)
    return 0


def cmd_sweep(args) -> int:
    model_tf = load_tensor_file(args.model)
    calib_tf = load_tensor_file(args.calib)
    test_tf = load_tensor_file(args.test) if args.test else None
    hessians = {}
    if args.method == METHOD_CERWU:
        hessians = collect_hessians(
            model_tf, calib_tf, calib_path=args.calib,
            cache_path=_hessian_cache_path(args.calib),
        )
    lambdas = args.lambdas or list(DEFAULT_LAMBDAS)
    points = run_sweep(
        model_tf,
        calib_tf,
        hessians,
        lambdas=lambdas,
        grid_sizes=args.grid_sizes,
        scan_orders=args.scan_orders,
        model_kinds=args.model_kinds,
        test_tf=test_tf,
        method=args.method,
        damping_delta=args.delta,
        gamma_mode=args.gamma_mode,
        threads=args.threads,
    )
    csv_text = points_to_csv(points)
    with open(args.csv_out, "w") as fh:
        fh.write(csv_text)
    failures = sum(1 for p in points if p.error)
    print(f"{len(points)} configurations -> {args.csv_out}"
          + (f" ({failures} failed)" if failures else ""))
    return 0


def cmd_pareto(args) -> int:
    with open(args.csv_in) as fh:
        points = points_from_csv(fh.read())
    front = pareto_front(points)
    with open(args.csv_out, "w") as fh:
        fh.write(points_to_csv(front))
    print(f"{len(front)} of {len(points)} points on the front -> {args.csv_out}")
    return 0


def cmd_oracle(args) -> int:
    # Debugging aid: exhaustive optimum vs engine on a tiny random instance.
    from .engine import compress_layer
    from .grids import round_to_nearest
    from .linalg import accumulate_hessian
    from .oracle import brute_force_minimize, evaluate_objective

    rng = np.random.default_rng(args.seed)
    w = rng.normal(size=(args.rows, args.cols))
    x = rng.normal(size=(args.cols, 4 * args.cols))
    hessian = accumulate_hessian([x])
    grid = build_grid(w, args.grid_size)
    config = CompressionConfig(
        lam=args.lam, grid_size=args.grid_size, scan_order=args.scan_order,
        model_kind=args.model_kind, damping_delta=args.delta,
    )

    def factory():
        return entropy.make_model(
            args.model_kind, args.grid_size, zero_index=grid.zero_index
        )

    best_layer, best = brute_force_minimize(
        w, x, grid, args.lam, factory, scan_order=args.scan_order
    )
    result, _, _ = compress_layer(w, hessian, config)
    engine_obj = evaluate_objective(w, x, result.quantized, args.lam, factory)
    rtn_obj = evaluate_objective(
        w, x, round_to_nearest(w, grid, args.scan_order), args.lam, factory
    )
    print(f"brute force: total {best.total:.6f} "
          f"(distortion {best.distortion:.6f}, rate {best.rate_bits:.3f} bits)")
    print(f"engine:      total {engine_obj.total:.6f} "
          f"(distortion {engine_obj.distortion:.6f}, rate {engine_obj.rate_bits:.3f} bits)")
    print(f"nearest:     total {rtn_obj.total:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cerwu",
        description="Rate-distortion optimized weight compression",
    )
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for sweeps")
    # metavar omits the debugging-only oracle command from --help
    sub = parser.add_subparsers(
        dest="command", required=True,
        metavar="{compress,decompress,eval,sweep,pareto}",
    )

    p = sub.add_parser("compress", help="compress a tensor container")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--out", required=True)
    _add_engine_flags(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="reconstruct tensors from a compressed model")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("eval", help="loss/bpw/accuracy of a reconstruction")
    p.add_argument("--model", required=True)
    p.add_argument("--compressed", required=True,
                   help="compressed model or tensor container to evaluate")
    p.add_argument("--calib", required=True)
    p.add_argument("--test", default=None, help="optional test tensor container")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sweep configurations, write CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--test", default=None)
    p.add_argument("--csv-out", required=True)
    p.add_argument("--lambdas", type=float, nargs="*", default=None,
                   help="default: 1e-8 .. 1e-1 at half-decade steps")
    p.add_argument("--grid-sizes", type=int, nargs="+", default=[5, 9, 17, 33])
    p.add_argument("--scan-orders", nargs="+", default=[ROW_MAJOR],
                   choices=[ROW_MAJOR, COLUMN_MAJOR])
    p.add_argument("--model-kinds", nargs="+", default=[entropy.ADAPTIVE],
                   choices=list(entropy.MODEL_KINDS))
    p.add_argument("--delta", type=float, default=1e-2)
    p.add_argument("--gamma-mode", choices=[GAMMA_STANDARD, GAMMA_ZERO],
                   default=GAMMA_STANDARD)
    p.add_argument("--method", choices=list(METHODS), default=METHOD_CERWU)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pareto", help="extract the Pareto front from a sweep CSV")
    p.add_argument("--csv-in", required=True)
    p.add_argument("--csv-out", required=True)
    p.set_defaults(func=cmd_pareto)

    # debugging command, not advertised in --help
    p = sub.add_parser("oracle")
    p.add_argument("--rows", type=int, default=2)
    p.add_argument("--cols", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    _add_engine_flags(p)
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CerwuError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
