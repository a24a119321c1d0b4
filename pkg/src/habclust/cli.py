"""Command-line surface: cohort synthesis, experiment runs, holdout
evaluation and static report rendering.

Exit codes: 0 success, 2 usage or validation problem, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import report as report_mod
from .cohort import CohortIOError, default_synth_spec, generate_synthetic, read_cohort, write_cohort
from .pipeline import (
    PipelineConfig,
    apply_bundle,
    load_bundle,
    run_experiment,
)
from .survival import write_km_csv

DEFAULT_THREADS_ENV = "HABCLUST_THREADS"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="habclust",
        description="Stability- and survival-aware tumor habitat clustering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write a synthetic cohort with planted regions")
    p_synth.add_argument("--patients", type=int, required=True)
    p_synth.add_argument("--regions", type=int, required=True)
    p_synth.add_argument("--dims", default="32x32", help="image grid as HxW")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--censoring", type=float, default=0.2)
    p_synth.add_argument("--separation", type=float, default=10.0)
    p_synth.add_argument("--out", required=True)

    p_run = sub.add_parser("run", help="optimize hyper-parameters and fit the final models")
    p_run.add_argument("--cohort", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--config", help="JSON file mirroring the pipeline configuration")
    p_run.add_argument("--alpha", type=float)
    p_run.add_argument("--tau", type=float)
    p_run.add_argument("--k-trials", type=int, dest="k_trials")
    p_run.add_argument("--variant", choices=("baseline", "standard_ae", "ensemble_ae", "fae"))
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--max-steps", type=int, dest="max_steps")
    p_run.add_argument("--epochs", type=int, help="autoencoder training epochs")
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--no-variants", action="store_true", help="skip the variant table")

    p_eval = sub.add_parser("eval", help="apply a fitted bundle to a holdout cohort")
    p_eval.add_argument("--bundle", required=True, help="bundle directory from a run")
    p_eval.add_argument("--cohort", required=True)
    p_eval.add_argument("--out", required=True, help="path for km_test.csv")
    p_eval.add_argument("--threads", type=int, default=None)

    p_report = sub.add_parser("report", help="render SVG plots from run-directory CSVs")
    p_report.add_argument("--run", required=True, help="run directory with trace.csv/km_*.csv")
    return parser


def _threads(value) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get(DEFAULT_THREADS_ENV, "")
    return max(1, int(env)) if env.isdigit() else 1


def _parse_dims(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError as exc:
        raise ValueError(f"--dims expects HxW, got {text!r}") from exc


def cmd_synth(args) -> int:
    try:
        dims = _parse_dims(args.dims)
        spec = default_synth_spec(
            n_patients=args.patients,
            n_regions=args.regions,
            image_dims=dims,
            seed=args.seed,
            censoring_rate=args.censoring,
            separation=args.separation,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    cohort, _truth = generate_synthetic(spec)
    write_cohort(cohort, args.out)
    n_pixels = sum(s.n_pixels for s in cohort.scans)
    print(
        f"wrote {cohort.n_patients} patients ({n_pixels} pixels, "
        f"{len(cohort.modality_names)} modalities, {args.regions} planted regions) to {args.out}"
    )
    return 0


def cmd_run(args) -> int:
    try:
        cohort = read_cohort(args.cohort)
    except (CohortIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.config:
            with open(args.config) as fh:
                config = PipelineConfig.from_json(fh.read())
        else:
            config = PipelineConfig()
        for name in ("alpha", "tau", "k_trials", "variant", "seed", "max_steps"):
            value = getattr(args, name)
            if value is not None:
                setattr(config, name, value)
        if args.epochs is not None:
            config.fae.epochs = args.epochs
        config.__post_init__()  # re-validate after overrides
    except (ValueError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    trace, bundle, _report = run_experiment(
        cohort,
        config,
        out_dir=args.out,
        n_workers=_threads(args.threads),
        include_variants=not args.no_variants,
    )
    star = trace.theta_star
    print(
        f"finished {len(trace.steps)} evaluations; theta*=(gamma={star.gamma:.4f}, eta={star.eta}) "
        f"best loss {trace.best_loss:.6f}; artifacts in {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    try:
        bundle = load_bundle(args.bundle)
        cohort = read_cohort(args.cohort)
    except (CohortIOError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        result = apply_bundle(bundle, cohort, n_workers=_threads(args.threads))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_km_csv(result.km_curves, args.out, result.logrank)
    print(f"chi_square={result.logrank.chi_square:.6g} p_value={result.logrank.p_value:.6g}")
    return 0


def cmd_report(args) -> int:
    trace_csv = os.path.join(args.run, "trace.csv")
    if not os.path.isdir(args.run) or not os.path.exists(trace_csv):
        print(f"error: {args.run} is not a completed run directory", file=sys.stderr)
        return 2
    paths = report_mod.render_run(args.run)
    print("wrote " + " ".join(paths))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    handlers = {"synth": cmd_synth, "run": cmd_run, "eval": cmd_eval, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except (CohortIOError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
