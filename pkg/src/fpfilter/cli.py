"""Command-line entry point: ``fpfilter run|compare|gaindump``."""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError
from .harness import (
    EXIT_USAGE,
    compare_filters,
    gain_dump,
    load_config,
    resolve_output_dir,
    run_scenario,
)

log = logging.getLogger("fpfilter")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    if getattr(args, "trials", None) is not None:
        cfg.trials = args.trials
    return cfg


def build_parser():
    p = argparse.ArgumentParser(prog="fpfilter", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (default: $FPFILTER_OUTPUT_DIR)")
        sp.add_argument("--trials", type=int)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("config")
    common(run)

    cmp_ = sub.add_parser("compare", help="run several scenarios on a shared truth path")
    cmp_.add_argument("configs", nargs="+")
    common(cmp_)
    cmp_.add_argument("--sweep-n", type=_ints, help="comma-separated particle counts")
    cmp_.add_argument("--sweep-alpha", type=_floats, help="comma-separated alpha values (linear model)")

    gd = sub.add_parser("gaindump", help="dump the FPF gain field at a given time")
    gd.add_argument("config")
    gd.add_argument("--at", type=float, required=True)
    common(gd)
    return p


def _expand(configs, sweep_n, sweep_alpha):
    out = []
    for cfg in configs:
        alphas = sweep_alpha or [None]
        ns = sweep_n or [None]
        for a in alphas:
            for n in ns:
                c = dataclasses.replace(cfg, model_params=dict(cfg.model_params))
                if a is not None:
                    c.model_params["alpha"] = a
                if n is not None:
                    c.n_particles = n
                out.append(c)
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.verb == "run":
            cfg = _apply_overrides(load_config(args.config), args)
            cfg.validate()
            report = run_scenario(cfg)
            print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
            return report.exit_code

        if args.verb == "compare":
            cfgs = [_apply_overrides(load_config(c), args) for c in args.configs]
            cfgs = _expand(cfgs, args.sweep_n, args.sweep_alpha)
            for c in cfgs:
                c.validate()
            out = resolve_output_dir(cfgs[0])
            out.mkdir(parents=True, exist_ok=True)
            rows = compare_filters(cfgs, out / "comparison.csv")
            for r in rows:
                log.info("%s", r)
            print(out / "comparison.csv")
            return 0

        cfg = _apply_overrides(load_config(args.config), args)
        cfg.validate()
        out = resolve_output_dir(cfg)
        out.mkdir(parents=True, exist_ok=True)
        path = Path(out) / f"gain_t{args.at!r}.csv"
        gain_dump(cfg, args.at, path)
        print(path)
        return 0
    except ConfigError as e:
        print(f"fpfilter: error: {e}", file=sys.stderr)
        return EXIT_USAGE
