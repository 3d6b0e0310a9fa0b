"""Command-line entry point: ``ubdeconv {synth,solve,reference,bench,metrics}``."""

import argparse
import json
import sys

from . import harness


def _common():
    p = argparse.ArgumentParser(add_help=False)
    # every default is None so that a config file value survives unless overridden
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--task", choices=harness.TASKS)
    p.add_argument("--image", help="PGM/PPM input image (synth)")
    p.add_argument("--psf", help="boxcar:L or gaussian:L (L odd)")
    p.add_argument("--bsnr", type=float, help="blurred SNR in dB")
    p.add_argument("--lambda", dest="lam", type=float, help="TV weight")
    p.add_argument("--solver", choices=harness.SOLVERS)
    p.add_argument("--mu0", type=float, help="initial penalty (default: lambda)")
    p.add_argument("--t", type=float, help="penalty adaptation threshold")
    p.add_argument("--passes", help="'auto' or a positive integer")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="experiment directory")
    p.add_argument("--iters", type=int, help="iteration cap")
    p.add_argument("--stop-rmse", dest="stop_rmse", type=float,
                   help="stop once the RMSE to the reference is below this")
    p.add_argument("--ratio", type=int, help="superresolution factor")
    p.add_argument("--holes", help="inpainting rectangles 'r,c,h,w;r,c,h,w'")
    p.add_argument("--inner-iters", dest="inner_iters", type=int,
                   help="plugin iterations per framework round")
    p.add_argument("--long-iters", dest="long_iters", type=int,
                   help="reference run length")
    p.add_argument("--frame", choices=harness.FRAMES,
                   help="extend: image is the observed region (default); crop: image is the sharp grid")
    p.add_argument("--no-timing", dest="timing", action="store_const", const=False,
                   help="write elapsed_s as 0 so traces are reproducible")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="ubdeconv", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("synth", parents=[common], help="synthesize an observed instance")
    sub.add_parser("solve", parents=[common], help="restore an instance")
    sub.add_parser("reference", parents=[common], help="long run used as the RMSE reference")
    b = sub.add_parser("bench", parents=[common], help="iterations/time to RMSE < threshold")
    b.add_argument("--sizes", default="5", help="comma-separated PSF sizes")
    b.add_argument("--solvers", default="proposed1,proposedAD,admm_cg,cm")
    b.add_argument("--workers", type=int, default=1)
    m = sub.add_parser("metrics", parents=[common], help="RMSE/ISNR of a restored image")
    m.add_argument("--estimate", help=".npy file (default: restored_<solver>.npy)")
    return parser


def experiment_from_args(args):
    values = harness.read_config(args.config) if args.config else {}
    for name in ("task", "image", "psf", "bsnr", "lam", "solver", "mu0", "t", "passes", "seed",
                 "out", "iters", "stop_rmse", "ratio", "holes", "inner_iters", "long_iters",
                 "frame", "timing"):
        val = getattr(args, name)
        if val is not None:
            values[name] = val
    return harness.Experiment.from_mapping(values)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        exp = experiment_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.verb == "synth":
            parts = harness.cmd_synth(exp)
            print(json.dumps({"k": [p.k for p in parts], "d": [p.d for p in parts]}))
            return harness.EXIT_OK
        if args.verb == "solve":
            return harness.cmd_solve(exp)
        if args.verb == "reference":
            return harness.cmd_reference(exp)
        if args.verb == "bench":
            sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
            solvers = [s.strip() for s in args.solvers.split(",") if s.strip()]
            rows = harness.cmd_bench(exp, sizes, solvers, args.workers)
            for r in rows:
                print(r)
            return harness.EXIT_OK
        result = harness.cmd_metrics(exp.out, args.estimate, exp.solver)
        print(json.dumps(result, indent=2, sort_keys=True))
        return harness.EXIT_OK
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
