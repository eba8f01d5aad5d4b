"""Command-line frontend for batch fitting, encoding, and evaluation.

Progress and diagnostics go to standard error; standard output and
named output files carry only machine-readable results, so identical
invocations produce identical artifacts.  Exit codes: 0 success, 1
usage error, 2 data or file-format error, 3 fit failure.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .compare import compare
from .errors import DataFormatError, FitError, InputError
from .formats import (
    read_embeddings,
    read_model,
    write_embeddings,
    write_id_table,
    write_model,
)
from .gmm import GmmLevel
from .kmeans import FitConfig
from .pipeline import Method, encode_batch, evaluate, fit
from .synth import SynthSpec, generate

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_FIT = 3


class _Parser(argparse.ArgumentParser):
    """argparse maps usage problems to exit code 2; this tool reserves
    2 for data errors, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _nonneg_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def _positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value}")
    return value


def _nonneg_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {value}")
    return value


def _seed_list(text):
    try:
        seeds = [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}"
        ) from None
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError(f"expected non-negative seeds, got {text!r}")
    return seeds


def _method_list(text):
    try:
        return [Method(part) for part in text.split(",") if part != ""]
    except ValueError:
        choices = ", ".join(m.value for m in Method)
        raise argparse.ArgumentTypeError(
            f"unknown method in {text!r} (choose from {choices})"
        ) from None


def _add_fit_flags(p):
    p.add_argument("--method", choices=[m.value for m in Method], default="rq-gmm")
    p.add_argument("--levels", type=_positive_int, default=2)
    p.add_argument("--k", type=_positive_int, default=128)
    p.add_argument("--max-iters", type=_positive_int, default=30)
    p.add_argument("--tol", type=_positive_float, default=1e-6)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--no-reseed-empty", action="store_true",
                   help="keep empty clusters instead of reseeding them")


def _add_spec_flags(p):
    p.add_argument("--n", type=_positive_int, default=5000)
    p.add_argument("--d", type=_positive_int, default=16)
    p.add_argument("--coarse-k", type=_positive_int, default=8)
    p.add_argument("--fine-k", type=_positive_int, default=8)
    p.add_argument("--coarse-scale", type=_nonneg_float, default=None)
    p.add_argument("--fine-scale", type=_nonneg_float, default=None)
    p.add_argument("--noise-sigma", type=_nonneg_float, default=None)
    p.add_argument("--homoscedastic", action="store_true",
                   help="equal noise scale for every fine cluster")


def _spec_from_args(args, seed):
    spec = SynthSpec(
        n=args.n,
        d=args.d,
        coarse_k=args.coarse_k,
        fine_k=args.fine_k,
        heteroscedastic=not args.homoscedastic,
        seed=seed,
    )
    overrides = {}
    if args.coarse_scale is not None:
        overrides["coarse_scale"] = args.coarse_scale
    if args.fine_scale is not None:
        overrides["fine_scale"] = args.fine_scale
    if args.noise_sigma is not None:
        overrides["noise_sigma"] = args.noise_sigma
    return dataclasses.replace(spec, **overrides) if overrides else spec


def build_parser():
    parser = _Parser(prog="rqgmm", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for per-iteration detail")
    parser.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: RQGMM_THREADS or 1); "
                             "results are identical for any value")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fit", parents=[], help="fit a model from an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--model-out", required=True)
    _add_fit_flags(p)

    p = sub.add_parser("encode", help="assign semantic IDs with a fitted model")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="ID table destination")

    p = sub.add_parser("eval", help="reconstruction quality of a model on data")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--json", help="also write the full report as JSON")

    p = sub.add_parser("compare", help="multi-seed method comparison on synthetic data")
    _add_spec_flags(p)
    p.add_argument("--methods", type=_method_list, default=[Method.RQ_GMM, Method.RQ_KMEANS])
    p.add_argument("--seeds", type=_seed_list, default=list(range(10)))
    p.add_argument("--levels", type=_positive_int, default=2)
    p.add_argument("--k", type=_positive_int, default=8)
    p.add_argument("--max-iters", type=_positive_int, default=30)
    p.add_argument("--tol", type=_positive_float, default=1e-6)
    p.add_argument("--no-reseed-empty", action="store_true")
    p.add_argument("--table", help="write the per-cell result table here")
    p.add_argument("--json", help="write the full report as JSON here")

    p = sub.add_parser("synth", help="generate a synthetic embedding file")
    _add_spec_flags(p)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--out", required=True, help="embedding file destination")
    p.add_argument("--truth-labels", help="write per-row coarse/fine labels here")
    p.add_argument("--truth-params", help="write true centers and scales as JSON here")

    p = sub.add_parser("inspect", help="summarize a model file")
    p.add_argument("--model", required=True)
    return parser


def _f(value):
    """Shortest-roundtrip decimal text for a float; stable across runs."""
    return repr(float(value))


def _cmd_fit(args, threads):
    x, _ = read_embeddings(args.embeddings)
    cfg = FitConfig(max_iters=args.max_iters, tol=args.tol, seed=args.seed,
                    reseed_empty=not args.no_reseed_empty)
    model = fit(x, args.method, args.levels, args.k, cfg, threads=threads)
    write_model(model, args.model_out)
    print("level\titerations\trmse\tobjective")
    for r in model.fit_report:
        print(f"{r.level_index + 1}\t{r.iterations}\t{_f(r.rmse)}\t{_f(r.objective)}")
    log.info("model written to %s", args.model_out)
    return EXIT_OK


def _cmd_encode(args, threads):
    x, ids = read_embeddings(args.embeddings)
    model = read_model(args.model)
    codes = encode_batch(x, model, threads=threads)
    keys = ids if ids is not None else [str(i) for i in range(x.n)]
    write_id_table(keys, codes, args.out)
    log.info("%d IDs written to %s", x.n, args.out)
    return EXIT_OK


def _quality_json(q):
    return {
        "rmse": q.rmse,
        "n_samples": q.n_samples,
        "utilization_per_level": [float(u) for u in q.utilization_per_level],
        "code_histogram_per_level": [
            [int(c) for c in row] for row in q.code_histogram_per_level
        ],
    }


def _write_json(doc, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def _cmd_eval(args, threads):
    x, _ = read_embeddings(args.embeddings)
    model = read_model(args.model)
    q = evaluate(x, model, threads=threads)
    print(f"rmse\t{_f(q.rmse)}")
    print(f"n_samples\t{q.n_samples}")
    for li, u in enumerate(q.utilization_per_level):
        used = int(np.count_nonzero(q.code_histogram_per_level[li]))
        print(f"utilization\t{li + 1}\t{_f(u)}\t{used}/{model.k_per_level}")
    if args.json:
        _write_json(_quality_json(q), args.json)
    return EXIT_OK


def _cmd_compare(args, threads):
    spec = _spec_from_args(args, seed=args.seeds[0])
    cfg = FitConfig(max_iters=args.max_iters, tol=args.tol, seed=0,
                    reseed_empty=not args.no_reseed_empty)
    report = compare(spec, args.methods, args.levels, args.k, args.seeds, cfg,
                     threads=threads)

    print("method\tmedian_rmse\tmedian_utilization\trmse_wins\tutil_wins\tmean_iterations")
    for s in report.summaries:
        util = ",".join(_f(u) for u in s.median_utilization)
        print(f"{s.method}\t{_f(s.median_rmse)}\t{util}\t{s.rmse_wins}"
              f"\t{s.utilization_wins}\t{_f(s.mean_iterations)}")

    if args.table:
        # Per-cell table; wall times are deliberately left out so reruns
        # of the same command produce identical bytes.
        with open(args.table, "w", encoding="utf-8") as f:
            f.write("method\tseed\tstatus\trmse\tutilization\titerations\terror\n")
            for c in report.cells:
                if c.failed:
                    err = c.error.replace("\t", " ").replace("\n", " ")
                    f.write(f"{c.method}\t{c.seed}\tfailed\t-\t-\t-\t{err}\n")
                else:
                    util = ",".join(_f(u) for u in c.quality.utilization_per_level)
                    iters = ",".join(str(i) for i in c.iterations_per_level)
                    f.write(f"{c.method}\t{c.seed}\tok\t{_f(c.quality.rmse)}"
                            f"\t{util}\t{iters}\t-\n")
    if args.json:
        doc = {
            "spec": dataclasses.asdict(report.spec),
            "methods": [m.value for m in report.methods],
            "seeds": list(report.seeds),
            "levels": report.levels,
            "k": report.k,
            "cells": [
                {
                    "method": c.method.value,
                    "seed": c.seed,
                    "status": "failed" if c.failed else "ok",
                    "quality": None if c.failed else _quality_json(c.quality),
                    "iterations_per_level": list(c.iterations_per_level),
                    "error": c.error,
                }
                for c in report.cells
            ],
            "summaries": [
                {
                    "method": s.method.value,
                    "median_rmse": s.median_rmse,
                    "median_utilization": [float(u) for u in s.median_utilization],
                    "rmse_wins": s.rmse_wins,
                    "utilization_wins": s.utilization_wins,
                    "mean_iterations": s.mean_iterations,
                    "n_failed": s.n_failed,
                }
                for s in report.summaries
            ],
        }
        _write_json(doc, args.json)
    return EXIT_OK


def _cmd_synth(args, threads):
    spec = _spec_from_args(args, seed=args.seed)
    x, truth = generate(spec)
    write_embeddings(x, args.out)
    log.info("%d x %d embeddings written to %s", x.n, x.d, args.out)
    if args.truth_labels:
        labels = np.column_stack([truth.coarse_labels, truth.fine_labels])
        write_id_table([str(i) for i in range(x.n)], labels, args.truth_labels)
    if args.truth_params:
        doc = {
            "spec": dataclasses.asdict(spec),
            "coarse_centers": truth.coarse_centers.tolist(),
            "fine_offsets": truth.fine_offsets.tolist(),
            "noise_sigmas": truth.noise_sigmas.tolist(),
        }
        _write_json(doc, args.truth_params)
    return EXIT_OK


def _cmd_inspect(args, threads):
    model = read_model(args.model)
    print(f"method\t{model.method}")
    print(f"levels\t{model.n_levels}")
    print(f"k_per_level\t{model.k_per_level}")
    print(f"dim\t{model.dim}")
    if model.config is not None:
        print(f"seed\t{model.config.seed}")
        print(f"tol\t{_f(model.config.tol)}")
        print(f"max_iters\t{model.config.max_iters}")
    for li, level in enumerate(model.levels):
        r = model.fit_report[li]
        line = f"level\t{li + 1}\titerations\t{r.iterations}\ttrain_rmse\t{_f(r.rmse)}"
        if isinstance(level, GmmLevel):
            w = level.weights[level.weights > 0]
            entropy = float(-np.sum(w * np.log(w)))
            line += f"\tweight_entropy\t{_f(entropy)}"
        print(line)
    return EXIT_OK


_COMMANDS = {
    "fit": _cmd_fit,
    "encode": _cmd_encode,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "synth": _cmd_synth,
    "inspect": _cmd_inspect,
}


def _resolve_threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("RQGMM_THREADS")
    if env is None:
        return 1
    try:
        threads = int(env)
    except ValueError:
        threads = 0
    if threads < 1:
        print(f"rqgmm: error: RQGMM_THREADS must be a positive integer, got {env!r}",
              file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    return threads


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        threads = _resolve_threads(args)
    except SystemExit as e:
        return e.code if e.code is not None else EXIT_OK

    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        return _COMMANDS[args.subcommand](args, threads)
    except (InputError, DataFormatError) as e:
        print(f"rqgmm: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"rqgmm: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FitError as e:
        print(f"rqgmm: fit failed: {e}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
