"""Command-line entry point: ``dpagg <command> ...``.

Exit codes: 0 success, 2 invalid parameters, 3 I/O error, 4 contract violation.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

from dpagg import datagen
from dpagg.engine import default_workers
from dpagg.errors import ContractViolation, DataIOError, InvalidParameterError
from dpagg.evaluate import (NOT_PRIVATE_NOTE, RUN_COLUMNS, absolute_error, relative_error,
                            summarize, sweep_l)
from dpagg.mechanisms import make_mechanism
from dpagg.model import read_result_csv, read_tsv, split_budget, write_result_csv, write_tsv
from dpagg.pipelines import RunOptions, run_pipeline
from dpagg.selection import DEFAULT_LOOKUP_CUTOFF

log = logging.getLogger("dpagg")

STATS_COLUMNS = ["pipeline", "n_records", "n_users", "retained_keys", "shuffle_stages",
                 "shuffled_records", "lookup_probes", "wall_ms"]

EXIT_OK, EXIT_PARAM, EXIT_IO, EXIT_CONTRACT = 0, 2, 3, 4


def _real(text: str) -> float:
    """Parse a real; ``ln3`` / ``ln(3)`` are accepted as shorthand for natural logs."""
    t = text.strip().lower()
    try:
        if t.startswith("ln"):
            value = math.log(float(t[2:].strip("() ")))
        else:
            value = float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"not finite: {text!r}")
    return value


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="input TSV (user, key, value)")
    p.add_argument("--mechanism", choices=["count", "sum"], default="count")
    p.add_argument("--clamp", type=_real, default=None,
                   help="per-(user, key) ceiling for the sum mechanism")
    p.add_argument("--lower", type=_real, default=0.0,
                   help="per-(user, key) floor for the sum mechanism (default 0)")
    p.add_argument("--epsilon", type=_real, default=math.log(3))
    p.add_argument("--delta", type=_real, default=1e-5)
    p.add_argument("--selection-fraction", type=float, default=0.5,
                   help="share of epsilon spent on key selection")
    p.add_argument("--workers", type=int, default=None,
                   help="partitions/threads (default: CPU count)")
    p.add_argument("--lookup-cutoff", type=int, default=DEFAULT_LOOKUP_CUTOFF,
                   help="largest |S| broadcast to mappers; above it a shared table is used")
    p.add_argument("--debug-no-noise", action="store_true",
                   help="pin all noise to 0 (NOT private; debugging only)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpagg", description="User-level DP keyed aggregation (Naive / fast / Plume).")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (("gen-synth", "heavy-tailed synthetic count dataset"),
                           ("gen-landmark", "home + landmark toy dataset")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--users", type=int, required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)

    p = sub.add_parser("ingest", help="user<TAB>text corpus -> per-(user, word) counts")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run one pipeline")
    p.add_argument("--pipeline", choices=["naive", "fast", "plume", "exact"], required=True)
    _add_run_flags(p)
    p.add_argument("--l-bound", type=int, default=64)
    p.add_argument("--out", required=True, help="result CSV (key,value)")
    p.add_argument("--stats", default=None, help="stats CSV")

    p = sub.add_parser("eval", help="compare a DP result with the exact result")
    p.add_argument("--dp", required=True)
    p.add_argument("--exact", required=True)
    p.add_argument("--mode", choices=["retained", "all"], default="retained")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep-l", help="error as a function of L (not itself private)")
    _add_run_flags(p)
    p.add_argument("--l-values", type=_int_list, default=[1, 2, 4, 8, 16, 32, 64, 128, 256, 512])
    p.add_argument("--pipelines", default="naive,fast,plume")
    p.add_argument("--seeds", type=int, default=1,
                   help="number of seeds, starting at --seed")
    p.add_argument("--out", required=True, help="per-run CSV")
    p.add_argument("--summary", default=None, help="per-(pipeline, L) mean/std/se CSV")
    return parser


def _mechanism(args):
    if args.mechanism == "count" and args.clamp is not None:
        raise InvalidParameterError("--clamp only applies to --mechanism sum")
    return make_mechanism(args.mechanism, args.clamp, args.lower)


def _options(args) -> RunOptions:
    return RunOptions(lookup_cutoff=args.lookup_cutoff, debug_no_noise=args.debug_no_noise)


def _workers(args) -> int:
    w = default_workers() if args.workers is None else args.workers
    if w < 1:
        raise InvalidParameterError(f"--workers must be >= 1, got {w}")
    return w


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n",
                                extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (format(v, ".17g") if isinstance(v, float) else v)
                             for k, v in row.items()})


def cmd_gen(args) -> None:
    gen = datagen.gen_synth if args.command == "gen-synth" else datagen.gen_landmark
    d = gen(args.users, args.seed)
    write_tsv(args.out, d)
    log.info("wrote %d records for %d users to %s", len(d), args.users, args.out)


def cmd_ingest(args) -> None:
    d = datagen.ingest_corpus(args.input)
    write_tsv(args.out, d)
    log.info("wrote %d records to %s", len(d), args.out)


def cmd_run(args) -> None:
    mech = _mechanism(args)
    d = read_tsv(args.input)
    budget = None
    if args.pipeline != "exact":
        budget = split_budget(args.epsilon, args.delta, args.l_bound, args.selection_fraction)
        if args.debug_no_noise:
            print("warning: --debug-no-noise disables all privacy noise", file=sys.stderr)
    rep = run_pipeline(args.pipeline, d, mech, budget, seed=args.seed,
                       workers=_workers(args), options=_options(args))
    write_result_csv(args.out, rep.outputs)
    log.info("%s: %d keys retained, %d shuffles, lookup mode %s",
             rep.pipeline, rep.retained, rep.stats.shuffle_stages, rep.lookup_mode)
    if args.stats:
        _write_csv(args.stats, STATS_COLUMNS, [{
            "pipeline": rep.pipeline, "n_records": rep.n_records, "n_users": rep.n_users,
            "retained_keys": rep.retained, "shuffle_stages": rep.stats.shuffle_stages,
            "shuffled_records": rep.stats.shuffled_records,
            "lookup_probes": rep.stats.lookup_probes, "wall_ms": rep.wall_ms}])


def cmd_eval(args) -> None:
    dp = read_result_csv(args.dp)
    exact = read_result_csv(args.exact)
    row = {"mode": args.mode, "keys": len(dp) if args.mode == "retained" else len(exact),
           "absolute_error": absolute_error(dp, exact, args.mode),
           "relative_error": relative_error(dp, exact) if args.mode == "retained" else ""}
    _write_csv(args.out, ["mode", "keys", "absolute_error", "relative_error"], [row])


def cmd_sweep(args) -> None:
    print(NOT_PRIVATE_NOTE, file=sys.stderr)
    mech = _mechanism(args)
    d = read_tsv(args.input)
    pipelines = [p.strip() for p in args.pipelines.split(",") if p.strip()]
    bad = [p for p in pipelines if p not in ("naive", "fast", "plume")]
    if bad or not pipelines:
        raise InvalidParameterError(f"unknown pipelines {bad}")
    if args.seeds < 1:
        raise InvalidParameterError("--seeds must be >= 1")
    rows = sweep_l(d, args.l_values, mech, args.epsilon, args.delta,
                   seeds=range(args.seed, args.seed + args.seeds), pipelines=pipelines,
                   selection_fraction=args.selection_fraction, workers=_workers(args),
                   options=_options(args), dataset_id=Path(args.input).name)
    _write_csv(args.out, RUN_COLUMNS, rows)
    if args.summary:
        summary = summarize(rows)
        _write_csv(args.summary, list(summary[0]), summary)


COMMANDS = {"gen-synth": cmd_gen, "gen-landmark": cmd_gen, "ingest": cmd_ingest,
            "run": cmd_run, "eval": cmd_eval, "sweep-l": cmd_sweep}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except InvalidParameterError as exc:
        print(f"dpagg: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except (DataIOError, OSError) as exc:
        print(f"dpagg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ContractViolation as exc:
        print(f"dpagg: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
