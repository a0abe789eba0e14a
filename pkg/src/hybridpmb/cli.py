"""Command-line entry point: ``python -m hybridpmb``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments as ex


def _cmd_run(args) -> int:
    spec = ex.ExperimentSpec(
        preset=args.preset,
        variants=tuple(args.variant) if args.variant else None,
        runs=args.runs,
        seed=args.seed,
        out=args.out,
        workers=args.workers,
        config_path=args.config,
        cache_dir=args.cache_dir,
    )
    table = ex.run_experiment(spec)
    for name in table.variants:
        s = table.summary(name)
        print(f"{name:>14}: final mospa {s['mospa_mean'][-1]:.3f}  "
              f"undetected mass {s['undetected_mass'][-1]:.4f}  tracks {s['track_count_mean'][-1]:.1f}")
    for f in table.files:
        print(f"wrote {f}")
    return 0


def _cmd_kernel(args) -> int:
    p = ex.load_config(args.config) if args.config else ex.PRESETS[args.preset]
    k = ex.build_kernel(p.scenario, args.cache_dir)
    print(f"kernel for {k.spec.n_cells} cells, effective survival range "
          f"[{k.effective_survival().min():.4f}, {k.effective_survival().max():.4f}]")
    if args.output:
        k.save(args.output)
        print(f"wrote {args.output}")
    return 0


def _cmd_presets(args) -> int:
    for name, p in sorted(ex.PRESETS.items()):
        variants = ", ".join(v.name for v in p.variants)
        print(f"{name}: {p.scenario.duration} steps, sensor {p.scenario.sensor}, variants: {variants}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridpmb", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte Carlo experiment and write CSVs")
    run.add_argument("--preset", default="fig1", choices=sorted(ex.PRESETS))
    run.add_argument("--config", help="YAML experiment file (overrides --preset)")
    run.add_argument("--variant", action="append", help="restrict to this variant (repeatable)")
    run.add_argument("--runs", type=int, default=100)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", default="results")
    run.add_argument("--workers", type=int, default=1, help="process pool size (0 = all cores)")
    run.add_argument("--cache-dir", help="directory for cached transition kernels")
    run.set_defaults(func=_cmd_run)

    kb = sub.add_parser("kernel-build", help="precompute and cache the grid transition kernel")
    kb.add_argument("--preset", default="fig3", choices=sorted(ex.PRESETS))
    kb.add_argument("--config")
    kb.add_argument("--cache-dir", default=".kernel-cache")
    kb.add_argument("--output", help="also save the kernel to this .npz path")
    kb.set_defaults(func=_cmd_kernel)

    ps = sub.add_parser("presets", help="list available presets")
    ps.set_defaults(func=_cmd_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) == 0:
        args.workers = None
    try:
        return args.func(args)
    except (ex.ConfigError, OSError, ValueError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
