"""Command line entry point: ``epsel <mode> --config path.json [overrides]``."""
import argparse
import logging
import sys

from .exceptions import ConfigValidationError
from .experiment import MODES, ExperimentConfig, run_experiment
from .report import emit_report

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ALL_FAILED = 3


def build_parser():
    p = argparse.ArgumentParser(prog="epsel", description="EP signal recovery experiments")
    p.add_argument("mode", choices=MODES, nargs="?", help="experiment mode")
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--mode", dest="mode_override", choices=MODES, help="override the mode")
    p.add_argument("--n", type=int, dest="N")
    p.add_argument("--delta", type=float)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--seed", type=int, dest="base_seed")
    p.add_argument("--trials", type=int)
    p.add_argument("--out", dest="output_dir")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    mode = args.mode_override or args.mode
    try:
        cfg = ExperimentConfig.load(args.config)
        cfg = cfg.replace(mode=mode, N=args.N, delta=args.delta, sigma2=args.sigma2,
                          base_seed=args.base_seed, trials=args.trials,
                          output_dir=args.output_dir)
    except ConfigValidationError as exc:
        print(f"epsel: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"epsel: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INVALID

    res = run_experiment(cfg)
    for path in emit_report(res):
        print(path)
    if res.comparison:
        worst = max(res.comparison, key=lambda r: r["rel_dev"])
        print(f"max rel_dev {worst['rel_dev']:.4f} at iteration {worst['iter']}")
    if res.threshold:
        print(f"threshold estimate ({res.threshold['axis']}): {res.threshold['threshold']}")
    if res.trials and res.n_failed == len(res.trials):
        print(f"epsel: all {res.n_failed} trials failed", file=sys.stderr)
        return EXIT_ALL_FAILED
    if res.n_failed:
        print(f"epsel: {res.n_failed} of {len(res.trials)} trials failed", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
