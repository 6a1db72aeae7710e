"""Ablation sweep over the MRE branch weight and the mixed-loss weights.

Trains once per setting on the same seeded toy data and prints eval macro F1
for the MRE model, the GUS model and their S1 merge (no third source).

    python3 scripts/sweep_ablation.py [--seeds 7 8] [--lambdas 0 0.5 1] [--csv sweep.csv]
"""
import argparse
import csv
import sys
import time

import numpy as np

from fermech.ensemble import SCHEMES, merge_sources, predict
from fermech.pipeline.config import RunConfig
from fermech.pipeline.data import class_means, gen_synthetic
from fermech.pipeline.metrics import macro_f1
from fermech.pipeline.train import infer, settings_from_config, train

LOSS_GRID = {
    "ce only": (1.0, 0.0, 0.0),
    "default": (1.0, 0.5, 0.1),
    "heavy focal": (1.0, 1.0, 0.1),
}


def one_run(seed, lam, omegas):
    cfg = RunConfig()
    cfg.run.seed = seed
    cfg.mre.lam = lam
    cfg.loss.omega1, cfg.loss.omega2, cfg.loss.omega3 = omegas
    d = cfg.data
    means = class_means(d.dim, d.separation, d.sigma)
    cov = np.eye(d.dim) * d.sigma**2
    tr = gen_synthetic(means, cov, d.n_train_per_class, [seed, 0], prefix="t")
    ev = gen_synthetic(means, cov, d.n_eval_per_class, [seed, 1], prefix="e")
    s = settings_from_config(cfg, tr.x.shape[1:])
    t0 = time.perf_counter()
    models = train(tr, s)
    secs = time.perf_counter() - t0
    res = infer(models, ev.x)
    w = SCHEMES["s1"].as_dict()
    merged = predict(merge_sources({"gus": res["gus"], "mre": res["mre"]}, w))
    return {
        "seed": seed,
        "lambda": lam,
        "omegas": "/".join(str(o) for o in omegas),
        "mre_f1": macro_f1(ev.y, predict(res["mre"])),
        "gus_f1": macro_f1(ev.y, predict(res["gus"])),
        "merged_f1": macro_f1(ev.y, merged),
        "train_s": secs,
    }


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, nargs="+", default=[7])
    p.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    p.add_argument("--losses", nargs="+", default=["default"], choices=sorted(LOSS_GRID))
    p.add_argument("--csv")
    args = p.parse_args()
    rows = []
    print(f"{'seed':>4} {'lambda':>6} {'omegas':>12} {'MRE':>7} {'GUS':>7} {'merged':>7} {'secs':>6}")
    for seed in args.seeds:
        for lam in args.lambdas:
            for name in args.losses:
                r = one_run(seed, lam, LOSS_GRID[name])
                rows.append(r)
                print(f"{r['seed']:>4} {r['lambda']:>6.2f} {r['omegas']:>12} {r['mre_f1']:>7.4f} "
                      f"{r['gus_f1']:>7.4f} {r['merged_f1']:>7.4f} {r['train_s']:>6.1f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
            wr.writeheader()
            wr.writerows(rows)
    sys.exit(0)
