#!/usr/bin/env python3
"""Throughput and overhead breakdown across engines and worker counts.

Writes results.csv, throughput.dat and breakdown.dat into --out.
"""
import argparse
import sys

from dumbolab.bench import emit_report, record_of, run_world
from dumbolab.config import ENGINES, load_config


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--mix", default="read-dominated")
    p.add_argument("--engines", default=",".join(ENGINES))
    p.add_argument("--threads", default="1,2,4,8,16")
    p.add_argument("--txs", type=int, default=100)
    p.add_argument("--scale", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--out", default="results/bench")
    args = p.parse_args()

    cfg = load_config(args.config)
    cfg.bench.mix = args.mix
    cfg.bench.txs_per_thread = args.txs
    cfg.bench.scale = args.scale
    cfg.bench.seed = args.seed
    records = []
    for eng in args.engines.split(","):
        for n in (int(x) for x in args.threads.split(",")):
            c = cfg.copy()
            c.bench.threads = n
            rec = record_of(run_world(c, eng), c)
            records.append(rec)
            print(f"{eng:12s} {n:3d}t {rec.commits_per_s:12,.0f} commits/s  "
                  f"capacity aborts {rec.capacity_abort_rate:6.2%}  sgl {rec.sgl_rate:6.2%}",
                  file=sys.stderr)
    for path in emit_report(records, args.out, ("csv", "gnuplot")):
        print(path)


if __name__ == "__main__":
    main()
