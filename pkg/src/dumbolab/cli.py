"""Command-line front door: ``dumbolab {bench,check,replay-bench,recover,print-config}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ENGINES, Config, load_config, resolve_engine


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _config(args) -> Config:
    overrides = {}
    for kv in args.set or []:
        key, sep, value = kv.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {kv!r}")
        overrides[key.strip()] = value.strip()
    try:
        return load_config(args.config, overrides)
    except (KeyError, ValueError, OSError) as e:
        raise SystemExit(f"config error: {e}")


def cmd_print_config(args) -> int:
    sys.stdout.write(_config(args).dump())
    return 0


def cmd_bench(args) -> int:
    from .bench import BenchError, csv_text, emit_report, record_of, run_world
    from .pm import save_image

    cfg = _config(args)
    if args.mix:
        cfg.bench.mix = args.mix
    if args.txs:
        cfg.bench.txs_per_thread = args.txs
    if args.scale is not None:
        cfg.bench.scale = args.scale
    if args.seed is not None:
        cfg.bench.seed = args.seed
    engines = _names(args.engine) if args.engine else [cfg.bench.engine]
    threads = _ints(args.threads) if args.threads else [cfg.threads]
    records = []
    try:
        for eng in engines:
            for n in threads:
                c = cfg.copy()
                c.bench.threads = n
                w = run_world(c, eng)
                rec = record_of(w, c)
                if args.save_image:
                    save_image(w.pm.clean_image(), Path(args.save_image) / f"{rec.engine}-{n}t")
                records.append(rec)
                print(f"{rec.engine} threads={n}: {rec.commits} commits, "
                      f"{rec.commits_per_s:,.0f} commits/s (virtual), sgl={rec.sgl_rate:.2%}",
                      file=sys.stderr)
        if args.out:
            fmts = ("csv", "gnuplot") if args.gnuplot else ("csv",)
            for p in emit_report(records, args.out, fmts):
                print(f"wrote {p}", file=sys.stderr)
        else:
            sys.stdout.write(csv_text(records))
    except BenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


def cmd_check(args) -> int:
    from .checker import ISOLATION, check_litmus, crash_sweep, stop_rule_sweep
    from .litmus import load_corpus

    cfg = _config(args)
    engines = [resolve_engine(e, cfg) for e in _names(args.engine or "dumbo-si,dumbo-opa")]
    failed = False
    if not args.skip_litmus:
        corpus = load_corpus(args.litmus)
        for eng in engines:
            for lit in corpus:
                r = check_litmus(lit, eng, cfg, max_schedules=args.max_schedules,
                                 crash=args.crash)
                viol = sum(r.violations.values())
                failed |= viol > 0
                mark = "ok  " if viol == 0 else "FAIL"
                print(f"{mark} {eng:12s} {lit.name:24s} level={ISOLATION[eng]:8s} "
                      f"schedules={r.schedules}{'' if r.exhaustive else '+'} "
                      f"violations={dict(r.violations)} unchecked={r.unchecked}")
                for ex in r.examples[:args.examples]:
                    print(f"       {ex}")
    if args.crash_sweep:
        for eng in engines:
            if eng == "htm-sgl":
                continue
            s = crash_sweep(eng, cfg=cfg, min_images=args.min_images)
            failed |= not s.ok
            print(f"{'ok  ' if s.ok else 'FAIL'} crash-sweep {eng}: {s.passed}/{s.images} images "
                  f"over {s.runs} runs")
            for f in s.failures[:args.examples]:
                print(f"       {f}")
    if args.stop_rule:
        for n in _ints(args.stop_rule):
            s = stop_rule_sweep(n, cfg=cfg)
            failed |= not s.ok
            print(f"{'ok  ' if s.ok else 'FAIL'} stop-rule n={n}: {s.agree}/{s.images} images agree, "
                  f"max unmarked holes below last valid marker {s.max_holes}")
    return 1 if failed else 0


def cmd_replay_bench(args) -> int:
    from .bench import replay_bench, replay_csv

    pts = replay_bench(_ints(args.threads), args.seed, max_txs=args.txs)
    text = replay_csv(pts)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return 0


def cmd_recover(args) -> int:
    from .pm import load_image
    from .replay import recover, recover_scan

    img = load_image(args.image)
    if args.format == "scan":
        heap, rep = recover_scan(img)
    else:
        heap, rep = recover(img, n=args.n)
    print(f"replayed {len(rep.replayed)} transactions ({rep.entries} entries), "
          f"{len(rep.aborted)} abort markers, {len(rep.holes)} unmarked holes, "
          f"scan {rep.start}..{rep.stop}", file=sys.stderr)
    if args.heap_out:
        with open(args.heap_out, "w") as f:
            f.write("addr,value\n")
            for a in sorted(heap):
                f.write(f"{a:#x},{heap[a]:#x}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dumbolab", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    sub = p.add_subparsers(dest="cmd", required=True)

    b = sub.add_parser("bench", parents=[common], help="run TPC-C-lite on one or more engines")
    b.add_argument("--engine", help=f"comma list from {', '.join(ENGINES)}")
    b.add_argument("--threads", help="comma list of worker counts")
    b.add_argument("--mix", help="preset (read-dominated, standard) or type:pct,...")
    b.add_argument("--txs", type=int, help="transactions per thread")
    b.add_argument("--scale", type=float, help="footprint scale")
    b.add_argument("--seed", type=int)
    b.add_argument("--out", help="output directory (CSV to stdout when omitted)")
    b.add_argument("--gnuplot", action="store_true", help="also write .dat files")
    b.add_argument("--save-image", help="directory for the final PM image of each run")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("check", parents=[common], help="litmus exploration and crash sweeps")
    c.add_argument("--engine", help="comma list (default dumbo-si,dumbo-opa)")
    c.add_argument("--litmus", help="directory of .lit files (bundled corpus by default)")
    c.add_argument("--max-schedules", type=int, default=20000)
    c.add_argument("--crash", action="store_true", help="also crash-check every explored schedule")
    c.add_argument("--skip-litmus", action="store_true")
    c.add_argument("--crash-sweep", action="store_true")
    c.add_argument("--min-images", type=int, default=1000)
    c.add_argument("--stop-rule", metavar="N,...", help="stop-rule sweep for these thread counts")
    c.add_argument("--examples", type=int, default=2, help="example violations to print")
    c.set_defaults(func=cmd_check)

    r = sub.add_parser("replay-bench", parents=[common], help="scan vs marker-array replay cost")
    r.add_argument("--threads", default="2,4,8,16")
    r.add_argument("--txs", type=int, default=20000)
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--out")
    r.set_defaults(func=cmd_replay_bench)

    rc = sub.add_parser("recover", parents=[common], help="replay a saved PM image")
    rc.add_argument("image", help="directory written by save_image / bench --save-image")
    rc.add_argument("--format", choices=("marker", "scan"), default="marker")
    rc.add_argument("--n", type=int, help="stop-rule hole count (default: image thread count)")
    rc.add_argument("--heap-out", help="write the recovered heap as addr,value CSV")
    rc.set_defaults(func=cmd_recover)

    pc = sub.add_parser("print-config", parents=[common], help="show the effective configuration")
    pc.set_defaults(func=cmd_print_config)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
