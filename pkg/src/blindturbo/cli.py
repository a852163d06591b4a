"""``sim`` command line entry point."""

import argparse
import logging
import sys

from . import harness


def _build_parser():
    p = argparse.ArgumentParser(prog="sim", description="BER simulation for turbo DE-PSK OFDM")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an SNR sweep and write a CSV")
    run.add_argument("--config", help="flat key = value config file")
    run.add_argument("--preset", help="start from a named preset (see `sim presets`)")
    run.add_argument("--out", required=True, help="output CSV path")
    run.add_argument("--workers", type=int, default=None,
                     help="worker processes (default: $SIM_WORKERS or 1)")
    run.add_argument("--seed", type=int, default=None, help="master seed override")
    run.add_argument("--wilson", action="store_true", help="add Wilson 95%% CI columns")
    run.add_argument("--diagnostics", metavar="PATH",
                     help="write per-block receiver diagnostics ('-' for stderr)")
    run.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("presets", help="list named presets")
    return p


def _resolve_config(args):
    if args.preset is not None and args.preset not in harness.PRESETS:
        raise SystemExit(f"sim: unknown preset {args.preset!r}")
    base = harness.PRESETS[args.preset] if args.preset else None
    if args.config:
        cfg = harness.load_config(args.config, base)
    else:
        cfg = base if base is not None else harness.PRESETS["toy"]
    if args.seed is not None:
        cfg = cfg.replace(master_seed=args.seed)
    return cfg


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "presets":
        for name, cfg in harness.PRESETS.items():
            snrs = ",".join(f"{s:g}" for s in cfg.snr_db)
            print(
                f"{name:24s} format={cfg.format} channel={cfg.channel} rx={cfg.receiver} "
                f"L={cfg.L} M={cfg.M} N={cfg.N} depth={cfg.frame_depth} snr={snrs}"
            )
        return 0

    level = logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)
    try:
        cfg = _resolve_config(args)
    except (OSError, ValueError, KeyError) as exc:
        raise SystemExit(f"sim: bad config: {exc}")

    def progress(recs):
        last = recs[-1]
        print(f"snr={last.snr_db:g} frames={last.frames} ber={last.ber:.3e}", file=sys.stderr)

    diag = None
    if args.diagnostics == "-":
        diag = sys.stderr
    elif args.diagnostics:
        diag = open(args.diagnostics, "w")
    try:
        records = harness.sweep(cfg, workers=args.workers, progress=progress, diagnostics=diag)
    finally:
        if diag is not None and diag is not sys.stderr:
            diag.close()
    harness.write_results(records, args.out, config=cfg, wilson=args.wilson)
    return 0


if __name__ == "__main__":
    sys.exit(main())
