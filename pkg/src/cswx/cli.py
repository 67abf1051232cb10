"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 domain error (invalid tree,
unalignable pair, failed crossover), 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import math
import shlex
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .grammar import GrammarConfig, GrammarError, canonical_form, read_corpus, render_tree, write_corpus

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DomainError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _invocation(argv) -> str:
    return "cswx " + " ".join(shlex.quote(a) for a in argv)


def _fmt(x: float) -> str:
    if math.isfinite(x) and x == int(x):
        return str(int(x))
    return repr(float(x))


def _read_tree(path: str):
    trees = read_corpus(Path(path).read_text(encoding="utf-8"))
    if not trees:
        raise DomainError(f"{path}: no tree found")
    return trees[0]


def _read_trees(path: str):
    return read_corpus(Path(path).read_text(encoding="utf-8"))


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _scoring(spec: str):
    from .scoring import load_scoring
    try:
        return load_scoring(spec)
    except (ValueError, OSError) as exc:
        raise UsageError(f"--scoring: {exc}") from None


def _csv_header(argv) -> str:
    return f"# {_invocation(argv)}\n"


# -- commands ------------------------------------------------------------------

def cmd_align(args, argv) -> int:
    from .cswx import align, trace_back
    from .rcswx import align_recursive
    from .serialise import serialise
    m = _scoring(args.scoring)
    s1, s2 = serialise(_read_tree(args.a)), serialise(_read_tree(args.b))
    if args.dump_tokens:
        sys.stderr.write(s1.dump() + "\n" + s2.dump())
    matrix = align_recursive(s1, s2, m) if args.method == "rcswx" else align(s1, s2, m)
    path = trace_back(matrix)
    if args.dump_matrix:
        lines = [_csv_header(argv).rstrip("\n"), ",".join(["", *s2.labels])]
        for lab, row in zip(s1.labels, matrix.dist):
            lines.append(",".join([lab, *(_fmt(x) if math.isfinite(x) else "inf" for x in row)]))
        Path(args.dump_matrix).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.dump_ops:
        data = {"invocation": _invocation(argv), "method": args.method, "scoring": m.name, **path.to_dict()}
        Path(args.dump_ops).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    print(f"distance\t{_fmt(path.total_cost)}")
    for op in path.operations:
        print(f"{op.id}\t{op.op_type.value}\t{_fmt(op.value)}\ti={op.i}\tj={op.j}")
    return EXIT_OK


def cmd_distance(args, argv) -> int:
    from .analysis import distance_fn
    m = _scoring(args.scoring)
    t1, t2 = _read_tree(args.a), _read_tree(args.b)
    print(_fmt(distance_fn(args.method)(t1, t2, m)))
    if args.dump_ops:
        from .crossover import edit_path
        path = edit_path(t1, t2, m, recursive=args.method == "rcswx")
        data = {"invocation": _invocation(argv), "method": args.method, "scoring": m.name, **path.to_dict()}
        Path(args.dump_ops).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_verify(args, argv) -> int:
    from .cswx import EditPath, apply_operations
    from .serialise import deserialise, serialise
    t1, t2 = _read_tree(args.a), _read_tree(args.b)
    data = json.loads(Path(args.ops).read_text(encoding="utf-8"))
    path = EditPath.from_dict(data, serialise(t1), serialise(t2))
    child = deserialise(apply_operations(path, [op.id for op in path.operations]))
    if canonical_form(child) == canonical_form(t2):
        print(f"ok\t{len(path.operations)} operations reconstruct the second tree")
        return EXIT_OK
    print(f"mismatch\t{render_tree(child)}")
    return EXIT_DOMAIN


def cmd_crossover(args, argv) -> int:
    from .crossover import path_crossover, stx_crossover
    m = _scoring(args.scoring)
    rng = np.random.default_rng(args.seed)
    t1, t2 = _read_tree(args.a), _read_tree(args.b)
    if args.method == "stx":
        child = stx_crossover(t1, t2, rng)
    else:
        child = path_crossover(t1, t2, m, args.skewness, rng, recursive=args.method == "rcswx").child
    _write(args.output, write_corpus([child], [_invocation(argv)]))
    return EXIT_OK


def cmd_search(args, argv) -> int:
    from .search import SearchConfig, evolve
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    try:
        cfg = SearchConfig.from_keyfile(text)
        if args.seed is not None:
            cfg.seed = args.seed
        for key in ("crossover", "total_evaluations", "population_size"):
            val = getattr(args, key)
            if val is not None:
                setattr(cfg, key, val)
        cfg.__post_init__()
    except ValueError as exc:
        raise UsageError(f"search config: {exc}") from None
    hist = evolve(cfg)
    _write(args.out, _csv_header(argv) + hist.to_csv())
    if args.trees_out:
        Path(args.trees_out).write_text(
            write_corpus([i.tree for i in hist.population], [_invocation(argv)]), encoding="utf-8")
    print(f"best_fitness\t{hist.best.fitness!r}", file=sys.stderr)
    return EXIT_OK


def _load_matrix(path: str):
    from .analysis import DistanceMatrix
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    return DistanceMatrix.from_csv("\n".join(lines))


def _load_fitness(path: str) -> np.ndarray:
    vals = []
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        field = ln.split(",")[-1]
        try:
            vals.append(float(field))
        except ValueError:
            if vals:
                raise DomainError(f"{path}: bad fitness value {field!r}") from None
            # header row
    return np.array(vals)


def cmd_analyze(args, argv) -> int:
    from . import analysis
    if args.analysis == "distances":
        m = _scoring(args.scoring)
        trees = _read_trees(args.trees)
        dm = analysis.pairwise_distance_matrix(trees, args.method, m, workers=args.workers)
        _write(args.output, _csv_header(argv) + dm.to_csv())
    elif args.analysis == "diversity":
        m = _scoring(args.scoring)
        root = Path(args.history)
        files = sorted(root.glob("*.trees")) if root.is_dir() else [root]
        if not files:
            raise DomainError(f"{root}: no .trees files")
        print("file,diversity")
        for f in files:
            trees = _read_trees(str(f))
            print(f"{f.name},{analysis.population_diversity(trees, args.method, m)!r}")
    elif args.analysis == "variogram":
        dm = _load_matrix(args.distances)
        fit = _load_fitness(args.fitness)
        try:
            pts = analysis.empirical_semivariogram(dm, fit, args.bins)
            model = analysis.fit_spherical(pts)
        except ValueError as exc:
            raise DomainError(str(exc)) from None
        data = {**model.to_dict(), "invocation": _invocation(argv),
                "bins": [[p.h, p.gamma, p.count] for p in pts]}
        _write(args.output, json.dumps(data, indent=2) + "\n")
    elif args.analysis == "metric-check":
        from .grammar import sample_tree
        m = _scoring(args.scoring)
        cfg = GrammarConfig(max_depth=args.max_depth)
        rep = analysis.metric_axiom_check(lambda r: sample_tree(cfg, r), args.n, args.method, m,
                                          np.random.default_rng(args.seed))
        print(f"# {_invocation(argv)}")
        print(rep.summary())
        return EXIT_OK if rep.passed else EXIT_DOMAIN
    return EXIT_OK


def cmd_sensitivity(args, argv) -> int:
    from .analysis import scoring_sensitivity
    from .bench import sample_tree_of_length
    rng = np.random.default_rng(args.seed)
    lengths = np.linspace(args.min_len, args.max_len, args.pairs).round().astype(int)
    pairs = [(sample_tree_of_length(int(n) - 1, rng), sample_tree_of_length(int(n) - 1, rng)) for n in lengths]
    presets = args.presets.split(",")
    rep = scoring_sensitivity(pairs, presets, args.method)
    print(f"# {_invocation(argv)}")
    print("preset,pearson_vs_" + presets[0] + ",r2_vs_" + presets[0])
    for k, p in enumerate(presets[1:], start=1):
        print(f"{p},{float(rep.pearson[0, k])!r},{rep.r2_vs_first[p]!r}")
    return EXIT_OK


def cmd_bench(args, argv) -> int:
    from .bench import BENCH_METHODS, records_to_csv, scaling_benchmark
    try:
        sizes = [int(s) for s in args.sizes.split(",")]
    except ValueError:
        raise UsageError("--sizes must be a comma-separated list of integers") from None
    methods = args.methods.split(",")
    bad = [x for x in methods if x not in BENCH_METHODS]
    if bad:
        raise UsageError(f"--methods: unknown {', '.join(bad)}")
    recs = scaling_benchmark(sizes, args.samples, methods, args.seed, branch_free=not args.with_branches,
                             m=_scoring(args.scoring), repeats=args.repeats, timeout=args.timeout)
    _write(args.output, _csv_header(argv) + records_to_csv(recs))
    return EXIT_OK


def cmd_oracle(args, argv) -> int:
    from .oracle import run_suite, suite_pairs
    rng = np.random.default_rng(args.seed)
    rep = run_suite(args.suite, suite_pairs(args.suite, args.pairs, rng), _scoring(args.scoring))
    print(f"# {_invocation(argv)}")
    print(rep.line())
    return EXIT_OK if rep.failed == 0 else EXIT_DOMAIN


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cswx", description="Grammar-constrained edit distance and crossover for architecture trees.")
    p.add_argument("--version", action="version", version=f"cswx {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def pair(sp):
        sp.add_argument("a", help="file holding the first tree")
        sp.add_argument("b", help="file holding the second tree")
        sp.add_argument("--scoring", default="sm0", help="sm0|sm1|sm2|sm3 or a key=value file")

    sp = sub.add_parser("align", help="align two trees and list the edit operations")
    pair(sp)
    sp.add_argument("--method", choices=("cswx", "rcswx"), default="cswx")
    sp.add_argument("--dump-matrix", metavar="CSV")
    sp.add_argument("--dump-ops", metavar="JSON")
    sp.add_argument("--dump-tokens", action="store_true", help="print both token sequences to stderr")
    sp.set_defaults(fn=cmd_align)

    sp = sub.add_parser("distance", help="print the distance between two trees")
    pair(sp)
    sp.add_argument("--method", choices=("cswx", "rcswx"), default="rcswx")
    sp.add_argument("--dump-ops", metavar="JSON")
    sp.set_defaults(fn=cmd_distance)

    sp = sub.add_parser("verify", help="replay an ops file and check it rebuilds the second tree")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("ops", help="JSON written by --dump-ops")
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("crossover", help="produce one offspring")
    pair(sp)
    sp.add_argument("--method", choices=("cswx", "rcswx", "stx"), default="rcswx")
    sp.add_argument("--skewness", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output")
    sp.set_defaults(fn=cmd_crossover)

    sp = sub.add_parser("search", help="run a steady-state evolutionary search")
    sp.add_argument("--config", help="key=value file of search settings")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--crossover", choices=("none", "stx", "cswx", "rcswx"))
    sp.add_argument("--total-evaluations", dest="total_evaluations", type=int)
    sp.add_argument("--population-size", dest="population_size", type=int)
    sp.add_argument("--out", help="history CSV (default stdout)")
    sp.add_argument("--trees-out", help="final population as a tree corpus")
    sp.set_defaults(fn=cmd_search)

    sp = sub.add_parser("analyze", help="distance matrices, diversity, variograms, metric checks")
    asub = sp.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    a = asub.add_parser("distances")
    a.add_argument("trees")
    a.add_argument("-o", "--output")
    a.add_argument("--method", choices=("cswx", "rcswx"), default="rcswx")
    a.add_argument("--scoring", default="sm0")
    a.add_argument("--workers", type=int, default=1)
    a = asub.add_parser("diversity")
    a.add_argument("history", help="directory of .trees files (or one file)")
    a.add_argument("--method", choices=("cswx", "rcswx"), default="rcswx")
    a.add_argument("--scoring", default="sm0")
    a = asub.add_parser("variogram")
    a.add_argument("distances")
    a.add_argument("fitness")
    a.add_argument("--bins", type=int, default=30)
    a.add_argument("-o", "--output")
    a = asub.add_parser("metric-check")
    a.add_argument("--n", type=int, default=500)
    a.add_argument("--method", choices=("cswx", "rcswx"), default="rcswx")
    a.add_argument("--scoring", default="sm0")
    a.add_argument("--max-depth", type=int, default=4)
    a.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_analyze)

    sp = sub.add_parser("sensitivity", help="correlate distances across scoring presets")
    sp.add_argument("--pairs", type=int, default=50)
    sp.add_argument("--min-len", type=int, default=4)
    sp.add_argument("--max-len", type=int, default=104)
    sp.add_argument("--presets", default="sm0,sm1,sm2,sm3")
    sp.add_argument("--method", choices=("cswx", "rcswx"), default="rcswx")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_sensitivity)

    sp = sub.add_parser("bench", help="runtime scaling of the aligners")
    sp.add_argument("--sizes", default="8,16,32,64,128")
    sp.add_argument("--samples", type=int, default=5)
    sp.add_argument("--methods", default="cswx,rcswx,sepx")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--timeout", type=float, default=120.0)
    sp.add_argument("--with-branches", action="store_true", help="allow branching modules in sampled trees")
    sp.add_argument("--scoring", default="sm0")
    sp.add_argument("-o", "--output")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("oracle", help="compare the aligners with slow exact oracles")
    osub = sp.add_subparsers(dest="action", required=True, parser_class=_Parser)
    o = osub.add_parser("check")
    o.add_argument("--suite", choices=("dp", "perm", "ged"), required=True)
    o.add_argument("--pairs", type=int, default=50)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--scoring", default="sm0")
    sp.set_defaults(fn=cmd_oracle)
    return p


def run(argv: list[str] | None = None) -> int:
    from .cswx import UnalignableError
    from .crossover import CrossoverFailure
    from .oracle import OracleRefusal, OracleTimeout
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args, argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GrammarError, UnalignableError, CrossoverFailure, OracleRefusal, OracleTimeout, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run())
