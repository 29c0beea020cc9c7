#!/usr/bin/env python3
"""Abort-cause breakdown of single-type workloads on every engine."""
import argparse

from dumbolab.bench import record_of, run_world
from dumbolab.config import ENGINES, Config
from dumbolab.htm import AbortCode


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--types", default="stocklevel,orderstatus")
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--txs", type=int, default=5)
    args = p.parse_args()

    codes = [c.value for c in AbortCode]
    print("type,engine,attempts,commits,sgl_rate," + ",".join(codes))
    for t in args.types.split(","):
        for eng in ENGINES:
            cfg = Config()
            cfg.bench.threads = args.threads
            cfg.bench.mix = f"{t}:100"
            cfg.bench.txs_per_thread = args.txs
            r = record_of(run_world(cfg, eng), cfg)
            rates = ",".join(f"{r.abort_rate(c):.3f}" for c in codes)
            print(f"{t},{eng},{r.htm_attempts},{r.commits},{r.sgl_rate:.3f},{rates}")


if __name__ == "__main__":
    main()
