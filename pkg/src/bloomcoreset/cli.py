"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 runtime error.
Data and JSON go to stdout; diagnostics go to stderr.
"""

import argparse
import json
import sys

import numpy as np

from . import __version__
from .bench import SyntheticSpec, generate, run_bench
from .cbf import load_filter
from .embedding_io import load_matrix, write_matrix
from .exceptions import (
    BloomCoresetError,
    DataError,
    DimError,
    EmptyCandidateError,
    EmptyInputError,
    FormatError,
    IoError,
)
from .sampler import STRATEGIES, THREADS_ENV, SamplerConfig, build_fingerprint, sample_coreset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fraction(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError("must be in (0, 1]")
    return value


def _positive(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _seed(text):
    value = int(text)
    if not 0 <= value <= 0xFFFFFFFF:
        raise argparse.ArgumentTypeError("seeds are unsigned 32-bit integers")
    return value


def build_parser():
    parser = _Parser(prog="bloomcoreset", description="Bloom-filter coreset sampling")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--verbose", action="store_true", help="print the resolved config to stderr")
        p.add_argument("--threads", type=_positive, default=None, help=f"worker cap (fallback ${THREADS_ENV})")

    p = sub.add_parser("build-filter", help="fingerprint a downstream matrix into a CBF1 file")
    p.add_argument("--downstream", required=True)
    p.add_argument("--size", type=_positive, default=None, help="counter count (default: sized from N)")
    p.add_argument("--seeds", type=_seed, nargs="+", default=None)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("sample", help="screen an open-set and write the coreset")
    p.add_argument("--filter", required=True)
    p.add_argument("--downstream", required=True)
    p.add_argument("--openset", required=True)
    p.add_argument("--budget", type=_fraction, default=0.01)
    p.add_argument("--agg", choices=STRATEGIES, default="max")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--indices", default=None, help="optional one-index-per-line output")
    common(p)

    p = sub.add_parser("bench", help="compare bloom_topk, bloom_only, random and exhaustive")
    p.add_argument("--spec", default=None, help="JSON spec (default: bundled spec)")
    p.add_argument("--seed", type=int, default=None, help="override the spec rng_seed")
    p.add_argument("--csv", default=None)
    p.add_argument("--json", dest="json_out", default=None, help="write the full report as JSON")
    p.add_argument("--format", choices=("text", "json"), default="text")
    common(p)

    p = sub.add_parser("gen", help="write a synthetic downstream/open-set pair")
    p.add_argument("--spec", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-downstream", required=True)
    p.add_argument("--out-openset", required=True)
    p.add_argument("--out-labels", default=None)
    common(p)

    p = sub.add_parser("stats", help="print FilterStats for a CBF1 file")
    p.add_argument("--filter", required=True)
    common(p)
    return parser


def _say(*parts):
    print(*parts, file=sys.stderr)


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def load_bench_spec(path, seed=None):
    """Parse a bench JSON: SyntheticSpec fields plus an optional "sampler" object."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read spec {path}: {exc.strerror or exc}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"spec {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise UsageError("spec must be a JSON object")
    data = dict(data)
    sampler = data.pop("sampler", {}) or {}
    try:
        spec = SyntheticSpec.from_dict(data)
        if seed is not None:
            spec.rng_seed = seed
        config = SamplerConfig(**sampler)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid spec: {exc}")
    return spec, config


def cmd_build_filter(args):
    downstream = load_matrix(args.downstream, normalize_rows=not args.no_normalize)
    config = SamplerConfig(
        normalize=not args.no_normalize,
        seeds=tuple(args.seeds) if args.seeds else tuple(range(10)),
        filter_size=args.size,
        threads=args.threads,
    )
    if args.verbose:
        _say("config:", json.dumps(config.to_dict()))
    filt = build_fingerprint(downstream, config)
    filt.save(args.out)
    _emit(filt.stats().to_dict())


def cmd_sample(args):
    filt = load_filter(args.filter)
    downstream = load_matrix(args.downstream)
    openset = load_matrix(args.openset)
    for name, matrix in (("downstream", downstream), ("openset", openset)):
        if matrix.shape[1] != filt.dim:
            raise DimError(f"{name} dim {matrix.shape[1]} != filter dim {filt.dim}")
    config = SamplerConfig(
        budget_fraction=args.budget,
        strategy=args.agg,
        normalize=not args.no_normalize,
        seeds=filt.family.seeds,
        filter_size=filt.size,
        threads=args.threads,
    )
    if args.verbose:
        _say("config:", json.dumps(config.to_dict()))
    filt.freeze()
    selection = sample_coreset(downstream, openset, config, filt=filt)
    selection.write_json(args.out)
    if args.indices:
        selection.write_indices(args.indices)
    for note in selection.notes:
        _say("note:", note)
    total = sum(selection.timings_ms.values())
    print(
        f"n_candidates={selection.n_candidates} n_selected={selection.n_selected} "
        f"total_ms={total:.1f}"
    )


def cmd_bench(args):
    spec, config = load_bench_spec(args.spec, args.seed)
    if args.threads is not None:
        config.threads = args.threads
    if args.verbose:
        _say("spec:", json.dumps(spec.to_dict()))
        _say("config:", json.dumps(config.to_dict()))
    report = run_bench(spec, config)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(report.to_csv())
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fh.write(report.to_json(indent=2) + "\n")
    if args.format == "json":
        sys.stdout.write(report.to_json(indent=2) + "\n")
    else:
        sys.stdout.write(report.to_text())


def cmd_gen(args):
    spec, _ = load_bench_spec(args.spec, args.seed)
    if args.verbose:
        _say("spec:", json.dumps(spec.to_dict()))
    downstream, openset, labels = generate(spec)
    write_matrix(downstream, args.out_downstream)
    write_matrix(openset, args.out_openset)
    if args.out_labels:
        np.savetxt(args.out_labels, labels, fmt="%d")
    _emit({"n_downstream": int(downstream.shape[0]), "n_openset": int(openset.shape[0]), "dim": spec.dim})


def cmd_stats(args):
    filt = load_filter(args.filter)
    if args.verbose:
        _say("filter:", repr(filt))
    _emit(filt.stats().to_dict())


COMMANDS = {
    "build-filter": cmd_build_filter,
    "sample": cmd_sample,
    "bench": cmd_bench,
    "gen": cmd_gen,
    "stats": cmd_stats,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help/--version exit 0; parse errors exit EXIT_USAGE via _Parser.error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        _say(f"error: {exc}")
        return EXIT_USAGE
    except (FormatError, DataError, DimError, EmptyInputError, IoError) as exc:
        _say(f"error: {exc}")
        return EXIT_DATA
    except EmptyCandidateError as exc:
        _say(f"error: {exc}")
        return EXIT_RUNTIME
    except (BloomCoresetError, RuntimeError, MemoryError, OSError) as exc:
        _say(f"error: {exc}")
        return EXIT_RUNTIME
    return EXIT_OK

