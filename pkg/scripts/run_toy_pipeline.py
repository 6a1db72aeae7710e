"""Run the whole CLI chain on the toy Gaussian data and print the F1 report.

    python3 scripts/run_toy_pipeline.py [--config configs/toy.cfg] [--out out/toy] [--seed 7]
"""
import argparse
import sys
import time

from fermech.pipeline.cli import main

STEPS = ("gen-synthetic", "train", "eval", "merge", "correct", "report")


def run(config, out, seed, extra=()):
    base = []
    if config:
        base += ["--config", config]
    if out:
        base += ["--out", out]
    if seed is not None:
        base += ["--seed", str(seed)]
    for step in STEPS:
        t0 = time.perf_counter()
        code = main([step, *base, *extra])
        print(f"-- {step}: exit {code}, {time.perf_counter() - t0:.2f}s")
        if code:
            return code
    return 0


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", default="configs/toy.cfg")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = p.parse_args()
    extra = [x for kv in args.set for x in ("--set", kv)]
    sys.exit(run(args.config, args.out, args.seed, extra))
