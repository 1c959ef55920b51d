"""Command-line interface: ``rdmkit {distances,whiten,compare,simulate,selftest}``.

Exit codes: 0 success, 2 usage, 3 input, 4 numerical. Results are written
to a temporary file and renamed into place; ``--out -`` streams JSON to
standard output. Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .compare import ALIASES, CRITERIA, ModelRDM, compare_models
from .covariance import null_covariance, whitener
from .dataset import load_dataset, read_matrix_csv
from .errors import IngestionError, InvalidArgumentError, RDMKitError
from .estimators import (biased_distances, read_rdm_json, unbiased_distances, write_rdm_csv,
                         write_rdm_json)
from .noise import DEFAULT_SHRINKAGE, estimate_sigma_p, prewhiten, shrink_sigma_p

log = logging.getLogger("rdmkit")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3, 4


def write_json(path, obj) -> None:
    """Write ``obj`` as JSON atomically, or to standard output when ``path`` is ``-``."""
    text = json.dumps(obj, indent=2) + "\n"
    if str(path) == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _existing_file(value: str) -> Path:
    path = Path(value)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {value}")
    return path


def _existing_path(value: str) -> Path:
    path = Path(value)
    if not path.exists():
        raise argparse.ArgumentTypeError(f"no such file or directory: {value}")
    return path


def _nonneg_int(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if n < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {n}")
    return n


def _unit_interval(value: str) -> float:
    try:
        h = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None
    if not 0.0 <= h <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {h}")
    return h


# ---------------------------------------------------------------------------
# subcommands


def cmd_distances(args) -> int:
    dataset = load_dataset(args.manifest)
    if args.metric == "mahalanobis":
        regressors = args.regressors if args.regressors is not None else dataset.k
        sigma_hat = estimate_sigma_p(dataset, regressors)
        dataset = prewhiten(dataset, shrink_sigma_p(sigma_hat, args.shrink))
    if args.method == "biased":
        rdm = biased_distances(dataset, metric=args.metric)
    else:
        rdm = unbiased_distances(dataset, metric=args.metric)
    write_rdm_json(args.out, rdm)
    if args.csv:
        write_rdm_csv(args.csv, rdm)
    log.info("wrote %d distances (%s, %s)", rdm.d.size, rdm.estimator, rdm.metric)
    return EXIT_OK


def _read_sigma_k(path, k):
    if path is None:
        return np.eye(k)
    return read_matrix_csv(path, ncols=k, nrows=k)


def cmd_whiten(args) -> int:
    rdm = read_rdm_json(args.rdm)
    sigma_k = _read_sigma_k(args.sigma_k, rdm.k)
    v = null_covariance(sigma_k)
    w = whitener(v)
    out = {"k": rdm.k, "pairs": [list(p) for p in rdm.pairs],
           "d_whitened": [float(x) for x in w @ rdm.d]}
    write_json(args.out, out)
    return EXIT_OK


def _read_model(path: Path) -> ModelRDM:
    name = path.stem
    try:
        if path.suffix == ".json":
            obj = json.loads(path.read_text(encoding="utf-8"))
            values = obj["d"] if "d" in obj else obj["m"]
            name = obj.get("name", name)
        else:
            rows = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
            if rows and rows[0].replace(" ", "") == "i,j,d":
                values = [float(r.split(",")[2]) for r in rows[1:]]
            else:
                values = [float(r) for r in rows]
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read model ({exc.strerror})") from exc
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise IngestionError(f"{path}: malformed model RDM ({exc})") from exc
    return ModelRDM(name, values)


def _model_files(paths):
    files = []
    for p in paths:
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.suffix in (".json", ".csv")))
        else:
            files.append(p)
    if not files:
        raise IngestionError("no model RDM files found")
    return files


def cmd_compare(args) -> int:
    rdm = read_rdm_json(args.rdm)
    models = []
    for f in _model_files(args.models):
        mod = _read_model(f)
        if mod.m.size != rdm.d.size:
            raise InvalidArgumentError(
                f"model file {f} has {mod.m.size} distances but the data RDM has {rdm.d.size}")
        models.append(mod)
    v = None
    if args.sigma_k is not None:
        v = null_covariance(_read_sigma_k(args.sigma_k, rdm.k))
    result = compare_models(rdm.d, models, args.criterion, v=v)
    write_json(args.out, result.to_dict())
    log.info("winner: %s", result.winner)
    return EXIT_OK


def _parse_params(items):
    params = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise InvalidArgumentError(f"--param expects key=value, got {item!r}")
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    return params


def _build_scenario(args):
    from .simulate import SCENARIO_NAMES, load_scenario, scenario_library

    params = _parse_params(args.param)
    if args.scenario in SCENARIO_NAMES:
        overrides = {"n_sims": args.sims, "seed": args.seed}
        return scenario_library(args.scenario, **params,
                                **{k: v for k, v in overrides.items() if v is not None})
    path = Path(args.scenario)
    if path.suffix != ".json" and not path.is_file():
        raise InvalidArgumentError(
            f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIO_NAMES)} "
            "or give a scenario JSON file")
    if params:
        raise InvalidArgumentError("--param only applies to named scenarios")
    scen = load_scenario(path)
    changes = {k: v for k, v in (("n_sims", args.sims), ("seed", args.seed)) if v is not None}
    return dataclasses.replace(scen, **changes) if changes else scen


def cmd_simulate(args) -> int:
    from .simulate import SWEEPS, parse_criterion, run_condition_split_sweep, run_scenario, sweep

    if args.sims is not None and args.sims < 1:
        raise InvalidArgumentError("--sims must be at least 1")
    criteria = [c for c in (args.criteria or ",".join(CRITERIA)).split(",") if c.strip()]
    for c in criteria:
        parse_criterion(c)
    threads = args.threads
    if threads is None and os.environ.get("RDMKIT_THREADS"):
        try:
            threads = int(os.environ["RDMKIT_THREADS"])
        except ValueError:
            raise InvalidArgumentError("RDMKIT_THREADS must be an integer") from None
    scenario = _build_scenario(args)
    if not args.sweep:
        report = run_scenario(scenario, criteria, threads=threads)
        write_json(args.out, report.to_dict(timing=args.timing))
        return EXIT_OK
    if args.scenario not in SWEEPS:
        raise InvalidArgumentError("--sweep needs a named scenario")
    key, values = SWEEPS[args.scenario]
    if key == "condition_splits":
        base = dataclasses.replace(scenario, condition_splits=0,
                                   candidate_models=_unsplit_models(scenario))
        reports = run_condition_split_sweep(base, values, criteria, threads=threads)
        points = [(v, reports[v]) for v in values]
    else:
        params = _parse_params(args.param)
        params.pop(key, None)
        overrides = {k: v for k, v in (("n_sims", args.sims), ("seed", args.seed)) if v is not None}
        points = [(v, run_scenario(sc, criteria, threads=threads))
                  for v, sc in sweep(args.scenario, **params, **overrides)]
    write_json(args.out, {"scenario": args.scenario, "parameter": key,
                          "points": [{"value": v, "report": r.to_dict(timing=args.timing)}
                                     for v, r in points]})
    return EXIT_OK


def _unsplit_models(scenario):
    from .estimators import distances_from_second_moment

    return tuple(ModelRDM(mod.name, distances_from_second_moment(g))
                 for mod, g in zip(scenario.candidate_models, scenario.signal_models))


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest()
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.detail} ({r.seconds:.2f} s)", file=sys.stderr)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdmkit", description="Estimate, whiten and compare representational dissimilarity matrices.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distances", help="estimate an RDM from a dataset manifest")
    p.add_argument("--manifest", required=True, type=_existing_file)
    p.add_argument("--method", choices=("biased", "crossval"), default="crossval")
    p.add_argument("--metric", choices=("euclidean", "mahalanobis"), default="euclidean")
    p.add_argument("--shrink", type=_unit_interval, default=DEFAULT_SHRINKAGE,
                   help="shrinkage towards the diagonal for the channel covariance (default %(default)s)")
    p.add_argument("--regressors", type=_nonneg_int, default=None,
                   help="regressors per partition for the residual degrees of freedom (default K)")
    p.add_argument("--out", required=True, help="output RDM JSON, or - for standard output")
    p.add_argument("--csv", default=None, help="also write the distances as CSV")
    p.set_defaults(func=cmd_distances)

    p = sub.add_parser("whiten", help="whiten an RDM with the null covariance")
    p.add_argument("--rdm", required=True, type=_existing_file)
    p.add_argument("--sigma-k", type=_existing_file, default=None,
                   help="K x K condition noise covariance CSV (default identity)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_whiten)

    p = sub.add_parser("compare", help="compare a data RDM with model RDMs")
    p.add_argument("--criterion", required=True, choices=CRITERIA + tuple(ALIASES))
    p.add_argument("--rdm", required=True, type=_existing_file)
    p.add_argument("--models", required=True, nargs="+", type=_existing_path,
                   help="model RDM files (.json or .csv) or directories containing them")
    p.add_argument("--sigma-k", type=_existing_file, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", help="run a model-selection simulation")
    p.add_argument("--scenario", required=True, help="library scenario name or scenario JSON file")
    p.add_argument("--sims", type=_nonneg_int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--criteria", default=None,
                   help="comma-separated criteria; name:biased or name:unbiased picks the estimator")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="scenario parameter override (repeatable)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default RDMKIT_THREADS or the CPU count)")
    p.add_argument("--sweep", action="store_true", help="run the scenario's standard parameter sweep")
    p.add_argument("--timing", action="store_true", help="include runtime in the report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("selftest", help="run fast numerical self-checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.ERROR if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="rdmkit: %(message)s")
    try:
        return args.func(args)
    except InvalidArgumentError as exc:
        parser.print_usage(sys.stderr)
        print(f"rdmkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RDMKitError as exc:
        print(f"rdmkit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"rdmkit: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
