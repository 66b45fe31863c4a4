"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 contract
violation.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

from .data import generate_synthetic_benchmark
from .evaluation import EvaluationReport
from .exceptions import ConfigError, ContractViolation, DataFormatError
from .experiment import (
    DEFAULTS,
    PROFILES,
    resolve_config,
    run_baseline,
    run_federated,
    run_raw_detector,
    write_outputs,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONTRACT = 0, 2, 3, 4


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    """Set ``a.b.c=value`` in a nested dict; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p!r} is not a section")
    node[parts[-1]] = _parse_value(value)


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_user_config(args):
    user = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
    fed = {}
    if args.rounds is not None:
        fed["rounds"] = args.rounds
    if args.epochs is not None:
        fed["local_epochs"] = args.epochs
    if args.batch_size is not None:
        fed["batch_size"] = args.batch_size
    if args.lr is not None:
        fed["lr"] = args.lr
    if getattr(args, "method", None) is not None:
        fed["method"] = args.method
    if getattr(args, "mu", None) is not None:
        fed["mu"] = args.mu
    if getattr(args, "fraction", None) is not None:
        fed["fraction"] = args.fraction
    if fed:
        user["federation"] = {**user.get("federation", {}), **fed}
    if args.seeds is not None:
        user["seeds"] = args.seeds
    if args.clients is not None:
        user["n_clients"] = args.clients
    if args.jobs is not None:
        user["n_jobs"] = args.jobs
    if args.detectors is not None:
        known = DEFAULTS["detectors"]
        chosen = [d.strip() for d in args.detectors.split(",") if d.strip()]
        unknown = [d for d in chosen if d not in known]
        if unknown:
            raise ConfigError(f"unknown detectors {unknown}; choose from {sorted(known)}")
        current = user.get("detectors", {})
        user["detectors"] = {d: copy.deepcopy(current.get(d, known[d])) for d in chosen}
    if args.out is not None:
        user["output_dir"] = args.out
    for assignment in args.set or []:
        apply_override(user, assignment)
    return user


def _add_run_options(p, federated=False):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--profile", default="desk", choices=sorted(PROFILES),
                   help="named default set applied before --config (default: desk)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry, e.g. autoencoder.latent_dim=4 (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds, e.g. 0,1,2")
    p.add_argument("--clients", type=int, help="number of clients K")
    p.add_argument("--rounds", type=int, help="communication rounds R")
    p.add_argument("--epochs", type=int, help="local epochs E per round")
    p.add_argument("--batch-size", type=int, help="mini-batch size B")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--detectors", help="comma-separated subset of RF,MLP")
    p.add_argument("--jobs", type=int, help="threads for client updates")
    if federated:
        p.add_argument("--method", choices=["fedavg", "fedprox"])
        p.add_argument("--mu", type=float, help="FedProx proximal weight")
        p.add_argument("--fraction", type=float, help="client sampling fraction C")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fedod", description="Federated autoencoder representations for outlier detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the synthetic multi-client benchmark")
    p.add_argument("--out", required=True, help="directory for client CSVs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clients", type=int, default=4)
    p.add_argument("--rows", type=int, default=2000, help="rows per client")
    p.add_argument("--shift", type=float, default=1.0, help="per-client mean shift")

    p = sub.add_parser("baseline", help="local autoencoders, no federation")
    _add_run_options(p)
    p = sub.add_parser("federate", help="FedAvg / FedProx autoencoders")
    _add_run_options(p, federated=True)
    p = sub.add_parser("raw", help="detectors on encoded features without an autoencoder")
    _add_run_options(p)

    p = sub.add_parser("report-merge", help="combine report.json files into one")
    p.add_argument("reports", nargs="+", help="report.json paths")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_synth(args):
    bench = generate_synthetic_benchmark(args.out, seed=args.seed, n_clients=args.clients,
                                         rows_per_client=args.rows, shift=args.shift)
    for p in bench.paths:
        print(p)


_RUNNERS = {"baseline": run_baseline, "federate": run_federated, "raw": run_raw_detector}


def _cmd_run(args):
    cfg = resolve_config(build_user_config(args), args.profile)
    result = _RUNNERS[args.command](cfg)
    out = write_outputs(result, cfg)
    print(out / "report.json")


def _cmd_merge(args):
    reports = []
    for path in args.reports:
        try:
            reports.append(EvaluationReport.from_dict(json.loads(Path(path).read_text())))
        except FileNotFoundError as exc:
            raise DataFormatError(f"report not found: {path}") from exc
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataFormatError(f"{path}: not a report ({exc})") from exc
    merged = EvaluationReport.merge(reports)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(merged.to_json())
    (out / "report.csv").write_text(merged.to_csv())
    print(out / "report.json")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            _cmd_synth(args)
        elif args.command == "report-merge":
            _cmd_merge(args)
        else:
            _cmd_run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
