#!/usr/bin/env python3
"""Explore every litmus schedule on each engine; optionally break the isolation wait."""
import argparse
import sys
import time

from dumbolab.checker import ISOLATION, check_litmus
from dumbolab.config import Config
from dumbolab.litmus import load_corpus


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--engines", default="dumbo-si,dumbo-opa,spht,naive-combo,htm-sgl")
    p.add_argument("--litmus", help="directory of .lit files (bundled corpus by default)")
    p.add_argument("--crash", action="store_true", help="crash-check every schedule too")
    p.add_argument("--no-isolation-wait", action="store_true")
    p.add_argument("--post-wait-ts", action="store_true",
                   help="stamp the non-durable state after the isolation wait")
    args = p.parse_args()

    cfg = Config()
    cfg.dumbo.isolation_wait = not args.no_isolation_wait
    if args.post_wait_ts:
        cfg.dumbo.nondurable_ts = "post_wait"
    bad = 0
    for eng in args.engines.split(","):
        t0 = time.perf_counter()
        schedules = viol = 0
        for lit in load_corpus(args.litmus):
            r = check_litmus(lit, eng, cfg, crash=args.crash and eng != "htm-sgl")
            schedules += r.schedules
            n = sum(r.violations.values())
            viol += n
            if n:
                print(f"  {eng} {lit.name}: {dict(r.violations)}  e.g. {r.examples[0]}")
        bad += viol
        print(f"{eng:12s} level={ISOLATION[eng]:8s} schedules={schedules:7d} violations={viol} "
              f"({time.perf_counter() - t0:.1f}s)")
    sys.exit(1 if bad else 0)


if __name__ == "__main__":
    main()
