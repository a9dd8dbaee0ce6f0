#!/usr/bin/env python3
"""Exact-identity and distributional-equivalence suite on the stock media.

Writes one CSV per environment; every row is a named check with a
pass/fail flag.
"""
import argparse

from rwre.env_model import Beta, TwoPoint
from rwre.harness import ExperimentConfig, run_identities


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=101)
    ap.add_argument("--replicas", type=int, default=10_000)
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--out-prefix", default="identities")
    args = ap.parse_args()

    for tag, env in (("beta", Beta(3, 1)), ("two_point", TwoPoint(2, 0.25, 0.5))):
        cfg = ExperimentConfig(env=env, experiment="identities", seed=args.seed,
                               replicas=args.replicas, n_grid=(args.n,),
                               workers=args.workers, block_size=1250)
        report = run_identities(cfg)
        out = f"{args.out_prefix}_{tag}.csv"
        report.write_csv(out)
        bad = [r for r in report.rows if "fail" in r.flags]
        print(f"{tag}: {len(report.rows)} checks, {len(bad)} failures -> {out}")


if __name__ == "__main__":
    main()
