"""Command-line entry point: ``fallrisk <command> [options]``.

Every command writes its outputs into ``--out`` (created atomically) along
with ``manifest.json``, which echoes the configuration, the library version
and the seed. Exit codes: 0 success, 1 failed verification, 2 data or
configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile

import numpy as np

from . import __version__
from ._parallel import default_threads
from .bma import LITERAL_LML_RATIO, NORMALIZED_MARGINAL, build_ensemble
from .datamodel import encode, load_csv, load_schema, render_summary, summarize, write_csv, \
    write_schema
from .evaluate import FALL, FIXED, PATIENT, PIPELINE, loo_cv
from .exceptions import BoundsTooNarrow, DataError, FallRiskError, NumericError
from .glm_core import PriorSpec
from .laplace import fit_design
from .laplace import render_summary as render_fit
from .oracle import box_bounds, importance_lml_for_fit, quadrature_lml, stage1_log_joint_fn
from .predict import LITERAL_LOGODDS_MEAN, PREDICTIVE_MEAN, MCSettings
from .selection import forward_select
from .simulate import example_paths, load_simulation_config, simulate

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# keys left out of the manifest because they do not change any output
_NOT_ECHOED = {"threads", "out", "func", "verbose"}


def _split(text):
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


class _OutputDir:
    """Collects files in a temporary sibling directory, renamed into place on success."""

    def __init__(self, target):
        self.target = os.path.abspath(target)
        parent = os.path.dirname(self.target)
        os.makedirs(parent, exist_ok=True)
        self.tmp = tempfile.mkdtemp(prefix=".fallrisk-", dir=parent)

    def path(self, name):
        return os.path.join(self.tmp, name)

    def write_text(self, name, text):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    def commit(self):
        if os.path.isdir(self.target):
            shutil.rmtree(self.target)
        os.replace(self.tmp, self.target)

    def abort(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _input_paths(args):
    defaults = example_paths()
    patients = args.patients or defaults[0]
    falls = args.falls or (defaults[1] if args.patients is None else None)
    if falls is None:
        raise DataError("--falls is required together with --patients")
    schema = args.schema or defaults[2]
    return patients, falls, schema


def _load(args):
    patients, falls, schema = _input_paths(args)
    return load_csv(patients, falls, load_schema(schema))


def _prior(args):
    return PriorSpec(v0=args.prior_v0, a=args.prior_a, b=args.prior_b)


def _mc(args):
    return MCSettings(args.n_sigma2_draws, args.n_epsilon_draws, args.seed or 0, args.procedure)


def _manifest(args):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}
    inputs = {}
    if getattr(args, "command", None) != "simulate":
        for label, path in zip(("patients", "falls", "schema"), _input_paths(args)):
            inputs[label] = None if path is None else {
                "path": os.path.basename(path), "sha256": _sha256(path)}
    return {
        "library": "fallrisk",
        "version": __version__,
        "command": args.command,
        "seed": args.seed,
        "config": config,
        "inputs": inputs,
    }


def _require_seed(args):
    if args.seed is None:
        raise DataError(f"--seed is required for '{args.command}'")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_fit(args, out):
    ds = _load(args)
    design = encode(ds, _split(args.variables) or [], stage=args.stage,
                    standardize=args.standardize)
    fit = fit_design(design, _prior(args))
    out.write_text("fit.json", _dump(fit.to_dict()))
    table = render_fit(fit)
    out.write_text("summary.txt", table + "\n")
    print(table)
    return EXIT_OK


def cmd_select(args, out):
    ds = _load(args)
    trace = forward_select(ds, _split(args.pool), args.stage, _prior(args),
                           threads=args.threads, standardize=args.standardize)
    ensemble = build_ensemble(trace, args.weight_rule)
    out.write_text("trace.json", _dump(trace.to_dict()))
    out.write_text("trace.txt", trace.render() + "\n")
    out.write_text("bma.json", _dump(ensemble.to_dict(k=5)))
    out.write_text("bma_top5.txt", ensemble.render_table(k=5) + "\n")
    out.write_text("final_fit.json", _dump(trace.final_fit.to_dict()))
    print(trace.render())
    print()
    print(ensemble.render_table(k=5))
    return EXIT_OK


def cmd_cv(args, out):
    _require_seed(args)
    ds = _load(args)
    result = loo_cv(
        ds,
        stage=args.stage,
        unit=args.loo_unit,
        mode=args.mode,
        variables=_split(args.variables) or [],
        pool=_split(args.pool),
        prior=_prior(args),
        mc=_mc(args),
        weight_rule=args.weight_rule,
        threads=args.threads,
        standardize=args.standardize,
    )
    out.write_text("report.json", _dump(result.to_dict()))
    for name, report in result.reports.items():
        prefix = "" if args.mode == FIXED else f"{name}_"
        report.write_roc_csv(out.path(f"{prefix}roc_points.csv"))
        report.write_predictions_csv(out.path(f"{prefix}loo_predictions.csv"))
        auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
        acc = "n/a" if report.accuracy is None else f"{report.accuracy:.3f}"
        print(f"{name}: n={len(report.row_ids)} auc={auc} accuracy={acc} "
              f"skipped={len(report.skipped)}")
    return EXIT_OK


def cmd_simulate(args, out):
    _require_seed(args)
    config = load_simulation_config(args.config) if args.config else {}
    config["seed"] = args.seed
    if args.n_patients is not None:
        config["n_patients"] = args.n_patients
    ds, truth = simulate(config, return_truth=True)
    write_schema(ds.schema, out.path("schema.json"))
    write_csv(ds, out.path("patients.csv"), out.path("falls.csv"))
    out.write_text("truth.json", _dump(truth))
    print(f"simulated {ds.n_patients} patients, {ds.n_fallers} fallers, {ds.n_falls} falls, "
          f"{ds.n_injured} injurious")
    return EXIT_OK


def _verify(args, ds):
    prior = _prior(args)
    design = encode(ds, _split(args.variables) or [], stage=args.stage,
                    standardize=args.standardize)
    fit = fit_design(design, prior)
    if args.stage == 1:
        dim = design.X.shape[1]
        if dim > 3:
            raise DataError(f"quadrature check supports at most 3 coefficients, model has {dim}")
        objective = stage1_log_joint_fn(design.X, design.y, prior.v0)
        n_points = args.n_points or (201 if dim <= 2 else 61)
        for width in (10.0, 15.0, 20.0):
            try:
                oracle = quadrature_lml(objective, dim,
                                        box_bounds(fit.coef, fit.posterior_cov, width), n_points)
                break
            except BoundsTooNarrow:
                if width == 20.0:
                    raise
        tolerance = 0.1 if args.tolerance is None else args.tolerance
    else:
        oracle = importance_lml_for_fit(design, fit, prior, args.n_samples, args.seed)
        tolerance = 0.3 if args.tolerance is None else args.tolerance
    discrepancy = abs(fit.lml - oracle.value)
    return {
        "main_value": fit.lml,
        "oracle_value": oracle.value,
        "oracle_error_estimate": oracle.error_estimate,
        "oracle_method": oracle.method,
        "discrepancy": discrepancy,
        "tolerance": tolerance,
        "pass": bool(discrepancy <= tolerance),
    }


def cmd_verify(args, out):
    _require_seed(args)
    result = _verify(args, _load(args))
    out.write_text("verify.json", _dump(result))
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK if result["pass"] else EXIT_VERIFY_FAILED


def cmd_summarize(args, out):
    summary = summarize(_load(args))
    out.write_text("summary.json", _dump(summary))
    table = render_summary(summary)
    out.write_text("summary.txt", table + "\n")
    print(table)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "select": cmd_select,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "summarize": cmd_summarize,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _data_flags(p):
    g = p.add_argument_group("data")
    g.add_argument("--patients", help="patients CSV (default: bundled example cohort)")
    g.add_argument("--falls", help="falls CSV")
    g.add_argument("--schema", help="schema JSON (default: bundled schema)")
    g.add_argument("--standardize", action="store_true",
                   help="centre and scale continuous covariates")


def _model_flags(p, pool=False, variables=False):
    p.add_argument("--stage", type=int, choices=(1, 2), default=1)
    p.add_argument("--prior-v0", type=float, default=1000.0)
    p.add_argument("--prior-a", type=float, default=0.001)
    p.add_argument("--prior-b", type=float, default=0.001)
    if pool:
        p.add_argument("--pool", help="comma-separated candidate variables (default: all)")
    if variables:
        p.add_argument("--variables", help="comma-separated model variables (default: none)")


def _mc_flags(p):
    p.add_argument("--n-sigma2-draws", type=int, default=200)
    p.add_argument("--n-epsilon-draws", type=int, default=50)
    p.add_argument("--procedure", choices=(PREDICTIVE_MEAN, LITERAL_LOGODDS_MEAN),
                   default=PREDICTIVE_MEAN)


def build_parser():
    parser = argparse.ArgumentParser(prog="fallrisk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fallrisk {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=default_threads(),
                        help="worker threads (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit one model")
    _data_flags(p)
    _model_flags(p, variables=True)

    p = sub.add_parser("select", parents=[common], help="forward selection and BMA table")
    _data_flags(p)
    _model_flags(p, pool=True)
    p.add_argument("--weight-rule", choices=(NORMALIZED_MARGINAL, LITERAL_LML_RATIO),
                   default=NORMALIZED_MARGINAL)

    p = sub.add_parser("cv", parents=[common], help="leave-one-out evaluation")
    _data_flags(p)
    _model_flags(p, pool=True, variables=True)
    _mc_flags(p)
    p.add_argument("--mode", choices=(FIXED, PIPELINE), default=FIXED,
                   help="refit a fixed model or rerun selection in every fold")
    p.add_argument("--loo-unit", choices=(PATIENT, FALL), default=PATIENT)
    p.add_argument("--weight-rule", choices=(NORMALIZED_MARGINAL, LITERAL_LML_RATIO),
                   default=NORMALIZED_MARGINAL)

    p = sub.add_parser("simulate", parents=[common], help="simulate a cohort")
    p.add_argument("--config", help="simulation config JSON (default: bundled schema, no effects)")
    p.add_argument("--n-patients", type=int)

    p = sub.add_parser("verify", parents=[common], help="compare an lml with an oracle")
    _data_flags(p)
    _model_flags(p, variables=True)
    p.add_argument("--tolerance", type=float, help="nats (default 0.1 stage 1, 0.3 stage 2)")
    p.add_argument("--n-points", type=int, help="quadrature points per axis (stage 1)")
    p.add_argument("--n-samples", type=int, default=20_000,
                   help="importance samples (stage 2)")

    p = sub.add_parser("summarize", parents=[common], help="descriptive cohort summary")
    _data_flags(p)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = _OutputDir(args.out)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        with np.errstate(over="ignore", under="ignore"):
            code = COMMANDS[args.command](args, out)
        out.write_text("manifest.json", _dump(_manifest(args)))
    except (DataError, OSError, json.JSONDecodeError) as exc:
        out.abort()
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        out.abort()
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FallRiskError as exc:
        out.abort()
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BaseException:
        out.abort()
        raise
    out.commit()
    return code


if __name__ == "__main__":
    sys.exit(main())
