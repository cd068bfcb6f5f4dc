"""Command line interface: run experiments, verify identities, trace report."""

import argparse
import json
import sys

from .experiments import ExperimentConfig, run_experiment
from .fortin import fortin_report
from .verify import run_verification

_RUN_KEYS = ("experiment", "p_list", "mode", "theta", "iterations", "out",
             "seed", "marker", "dump_meshes", "initial_elements",
             "max_elements", "fit_window")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="bdmadapt",
        description="Adaptive BDM mixed finite elements with superconvergent "
                    "postprocessing and built-in error estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a convergence experiment")
    run.add_argument("--experiment", choices=("smooth", "lshape", "advdiff"),
                     default=None)
    run.add_argument("--p", dest="p_list", type=int, nargs="+", default=None,
                     metavar="P")
    run.add_argument("--mode", choices=("uniform", "adaptive"), default=None)
    run.add_argument("--theta", type=float, default=None)
    run.add_argument("--iters", dest="iterations", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--estimator", dest="marker",
                     choices=("eta", "eta_tilde"), default=None)
    run.add_argument("--dump-meshes", dest="dump_meshes",
                     action="store_true", default=None)
    run.add_argument("--initial-elements", dest="initial_elements", type=int,
                     default=None)
    run.add_argument("--max-elements", dest="max_elements", type=int,
                     default=None)
    run.add_argument("--config", default=None,
                     help="JSON file mirroring the flags; flags override it")

    ver = sub.add_parser("verify", help="run the identity/property suites")
    ver.add_argument("--out", default=None)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--full", action="store_true",
                     help="larger randomized sample sizes")

    fort = sub.add_parser("fortin", help="biorthogonal trace system report")
    fort.add_argument("--out", default=None)
    fort.add_argument("--samples", type=int, default=100)
    fort.add_argument("--seed", type=int, default=20240601)
    return parser


def _cmd_run(args) -> int:
    settings = {}
    if args.config:
        with open(args.config) as fh:
            settings.update(json.load(fh))
    for key in _RUN_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    config = ExperimentConfig.from_dict(settings)
    summary = run_experiment(config, verbose=True)
    print(f"artifacts written to {config.out}")
    for p, entry in summary["per_degree"].items():
        slopes = {k: None if v is None else round(v, 3)
                  for k, v in entry["slopes"].items()}
        print(f"  p={p}: Nel={entry['final_elements']} slopes={slopes}")
    if summary["io_errors"]:
        print(f"  {len(summary['io_errors'])} artifact write failures",
              file=sys.stderr)
        return 1
    return 0


def _cmd_verify(args) -> int:
    report = run_verification(seed=args.seed, quick=not args.full)
    for check in report["checks"]:
        state = "PASS" if check["passed"] else "FAIL"
        print(f"[{state}] {check['name']}: {check['detail']}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=1)
    return 0 if report["passed"] else 1


def _cmd_fortin(args) -> int:
    report = fortin_report(n_samples=args.samples, seed=args.seed)
    print(f"A = {report['A']}")
    print(f"det A = {report['det_A']:.6e}")
    print("biorthogonality residual (reference): "
          f"{report['reference_biorthogonality_residual']:.2e}")
    print("biorthogonality residual (random triangles): "
          f"{report['physical_biorthogonality_residual']:.2e}")
    print(f"projection stability constant: {report['stability_constant']:.4f}")
    for p, entry in report["trace_inequality"].items():
        print(f"trace inequality p={p}: max constant "
              f"{entry['max_constant']:.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=1)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "verify":
        return _cmd_verify(args)
    return _cmd_fortin(args)


if __name__ == "__main__":
    sys.exit(main())
