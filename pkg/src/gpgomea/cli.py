"""Command-line entry point: ``gpgomea {run,summarize,dump-mi}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys

from . import harness
from .fitness import DataError, load_csv
from .gomea import ConfigError
from .linkage import LinkageError


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--dataset", help="CSV file, target in the last column")
    p.add_argument("--algorithm", choices=harness.ALGORITHMS)
    p.add_argument("--erc", choices=("none", "all", "no", "bin"))
    p.add_argument("--h", type=int, help="maximum tree height")
    p.add_argument("--n-pop", type=int, dest="n_pop")
    p.add_argument("--ims-g", type=int, dest="ims_g")
    p.add_argument("--ims-n-base", type=int, dest="ims_n_base")
    p.add_argument("--generations", type=int)
    p.add_argument("--seconds", type=float)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--output")
    p.add_argument("--bin-capacity", type=int, dest="bin_capacity")


_CONFIG_KEYS = ("dataset", "algorithm", "erc", "h", "n_pop", "ims_g", "ims_n_base",
                "generations", "seconds", "repetitions", "seed", "output", "bin_capacity")


def config_from_args(args: argparse.Namespace) -> harness.ExperimentConfig:
    file_values = harness.parse_config_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in _CONFIG_KEYS}
    # a budget or sizing given on the command line replaces the one from the file
    if args.seconds is not None and args.generations is None:
        file_values["generations"] = None
    if args.n_pop is not None:
        file_values.pop("ims_g", None)
        file_values.pop("ims_n_base", None)
    if args.ims_g is not None or args.ims_n_base is not None:
        file_values.pop("n_pop", None)
    return harness.build_config(file_values, overrides)


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    records = harness.run_experiment(cfg)
    harness.emit_results(records, cfg.output)
    print(f"wrote {len(records)} record(s) to {cfg.output}")
    return 0


def cmd_summarize(args) -> int:
    records = []
    for path in args.results:
        records.extend(harness.read_results(path))
    if not records:
        raise ConfigError("results: no rows found")
    rows = harness.summarize(records)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: format(v, ".6g") if isinstance(v, float) else v for k, v in row.items()})
    return 0


def cmd_dump_mi(args) -> int:
    cfg = config_from_args(args)
    dataset = load_csv(cfg.dataset)
    harness.dump_similarity_matrix(cfg, args.generation, args.matrix, dataset, args.kind)
    print(f"wrote generation-{args.generation} matrix to {args.matrix}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpgomea", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run all repetitions and write a results CSV")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("summarize", help="median and IQR per algorithm and dataset")
    p.add_argument("results", nargs="+")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("dump-mi", help="write a location similarity matrix as CSV")
    _add_config_flags(p)
    p.add_argument("--generation", type=int, default=1,
                   help="1 is the initial population")
    p.add_argument("--kind", choices=("mi", "mib"),
                   help="defaults to mib for gomea-lt-mib, mi otherwise")
    p.add_argument("--matrix", required=True, help="output CSV path")
    p.set_defaults(func=cmd_dump_mi)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, LinkageError, OSError, TypeError) as exc:
        print(f"gpgomea: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
