"""``bench`` command line entry point."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from .bench import BenchConfigError, load_config, run_benchmark, write_report
from .data import generate_synthetic, write_csv
from .zoo import MODEL_NAMES, ModelSize, build_model


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except BenchConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    def progress(cell):
        extra = f" r2={cell.r2:.4f}" if cell.status == "ok" else f" ({cell.error})"
        print(f"{cell.model:>12} h={cell.horizon:<3} seed={cell.seed:<3} {cell.status}{extra} "
              f"[{cell.wall_time_s:.1f}s]", flush=True)

    report = run_benchmark(cfg, jobs=args.jobs, progress=None if args.quiet else progress)
    for path in write_report(report, args.out):
        print(f"wrote {path}")
    return 0


def _cmd_synth(args) -> int:
    table = generate_synthetic(args.hours, args.assets, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_csv(table, args.out)
    print(f"wrote {args.hours} rows x {args.assets} assets to {args.out}")
    return 0


def _cmd_params(args) -> int:
    size = ModelSize(d_model=args.d_model, n_heads=args.n_heads, units=tuple(args.units))
    n_observed = args.features - args.known
    model = build_model(args.model, n_observed, args.known, args.past_len, args.horizon, 0, size)
    print(f"{args.model} (horizon {args.horizon}): {model.num_parameters():,} trainable parameters")
    for name, count in model.parameter_breakdown(args.depth).items():
        print(f"  {name:<32} {count:>10,}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradient_suite

    rows = run_gradient_suite(eps=args.eps)
    worst = 0.0
    for name, err, tol in rows:
        status = "ok" if err < tol else "FAIL"
        worst = max(worst, err / tol)
        print(f"{name:<28} max rel err {err:.3e}  (tol {tol:.0e})  {status}")
    return 0 if worst < 1.0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="TKAT forecasting benchmark harness")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a benchmark described by an INI config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--jobs", type=int, default=1, help="worker processes (BENCH_THREADS overrides)")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("synth", help="write the synthetic notional dataset as CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--hours", type=int, default=4000)
    s.add_argument("--assets", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_synth)

    c = sub.add_parser("params", help="print a model's parameter count and breakdown")
    c.add_argument("--model", required=True, choices=MODEL_NAMES)
    c.add_argument("--horizon", type=int, default=1)
    c.add_argument("--features", type=int, default=21, help="past input width (observed + known)")
    c.add_argument("--known", type=int, default=2)
    c.add_argument("--past-len", type=int, default=30)
    c.add_argument("--d-model", type=int, default=100)
    c.add_argument("--n-heads", type=int, default=4)
    c.add_argument("--units", type=int, nargs="+", default=[100, 100])
    c.add_argument("--depth", type=int, default=1)
    c.set_defaults(func=_cmd_params)

    g = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    g.add_argument("--eps", type=float, default=1e-6)
    g.set_defaults(func=_cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
