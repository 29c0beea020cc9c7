#!/usr/bin/env python3
"""Recovery cost of the scan replayer vs. the marker-array replayer."""
import argparse

from dumbolab.bench import replay_bench, replay_csv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--threads", default="2,4,8,16")
    p.add_argument("--txs", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    args = p.parse_args()

    pts = replay_bench([int(x) for x in args.threads.split(",")], args.seed, max_txs=args.txs)
    text = replay_csv(pts)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    print(text, end="")


if __name__ == "__main__":
    main()
