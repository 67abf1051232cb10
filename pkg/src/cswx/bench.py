"""Runtime scaling of the aligners and the exact graph oracle.

Sizes are token counts of the serialised sequence without its start token.
Timings cover alignment only; serialisation and graph construction happen
before the clock starts.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass

import numpy as np

from .cswx import align
from .grammar import Category, GrammarConfig, Kind, Node, branch, branch2_count, chain, route, sample_terminal
from .oracle import OracleRefusal, OracleTimeout, brute_force_permutation_distance, ged_sepx_path, tree_graph
from .rcswx import align_recursive
from .scoring import ScoringMatrix, preset
from .serialise import serialise

BENCH_METHODS = ("cswx", "rcswx", "brute", "sepx")
SEPX_MAX_TOKENS = 14


def sample_tree_of_length(n: int, rng: np.random.Generator, branch_free: bool = False,
                          config: GrammarConfig | None = None) -> Node:
    """Random tree whose serialisation holds exactly ``n`` non-start tokens.

    ``branch_free`` restricts composites to Sequential and Routing, so every
    token is either a computation, a routing opener or its closer.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = config or GrammarConfig()

    def leaf() -> Node:
        return Node(Kind.COMPUTATION, (sample_terminal(Category.COMPUTATION, cfg, rng),))

    def build(b: int) -> Node:
        if b == 1:
            return leaf()
        options = ["seq"]
        if b >= 3:
            options.append("route")
            if not branch_free:
                options += ["branchN"]
        if b >= 5 and not branch_free:
            options.append("branch2")
        weights = {"seq": 0.55, "route": 0.2, "branchN": 0.1, "branch2": 0.15}
        p = np.array([weights[o] for o in options])
        kind = options[int(rng.choice(len(options), p=p / p.sum()))]
        if kind == "seq":
            k = int(rng.integers(1, b))
            return chain([build(k), build(b - k)])
        if kind == "route":
            pre = sample_terminal(Category.PRE_ROUTING, cfg, rng)
            post = sample_terminal(Category.POST_ROUTING, cfg, rng)
            return route(pre, build(b - 2), post)
        factor = 2 if kind == "branch2" else int(rng.choice([4, 8]))
        bop = sample_terminal(Category.BRANCHING, cfg, rng, factor)
        aop = sample_terminal(Category.AGGREGATION, cfg, rng, factor)
        if factor == 2:
            k = int(rng.integers(1, b - 3))
            return branch(2, bop, build(k), build(b - 3 - k), aop)
        return branch(factor, bop, build(b - 2), aop)

    return build(n)


@dataclass
class BenchRecord:
    method: str
    size: int
    n1: int
    n2: int
    seconds: float
    cell_visits: int
    variant_peak: int
    censored: bool = False

    FIELDS = ("method", "size", "n1", "n2", "seconds", "cell_visits", "variant_peak", "censored")

    def row(self) -> list:
        return [self.method, self.size, self.n1, self.n2, repr(self.seconds),
                self.cell_visits, self.variant_peak, int(self.censored)]


def records_to_csv(records: list[BenchRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BenchRecord.FIELDS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def _timed(fn, repeats: int):
    best = math.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return out, max(best, 1e-9)


def measure_pair(method: str, t1: Node, t2: Node, m: ScoringMatrix, size: int,
                 repeats: int = 3, timeout: float = 120.0) -> BenchRecord:
    s1, s2 = serialise(t1), serialise(t2)
    n1, n2 = len(s1), len(s2)
    if method == "cswx":
        mat, sec = _timed(lambda: align(s1, s2, m), repeats)
        return BenchRecord(method, size, n1, n2, sec, mat.cell_visits, 1)
    if method == "rcswx":
        mat, sec = _timed(lambda: align_recursive(s1, s2, m), repeats)
        return BenchRecord(method, size, n1, n2, sec, mat.cell_visits, int(mat.variant_counts.max()))
    if method == "brute":
        b = branch2_count(t1) + branch2_count(t2)
        visits = (1 << b) * n1 * n2
        if b > 10:
            return BenchRecord(method, size, n1, n2, math.nan, visits, 1 << b, censored=True)
        _, sec = _timed(lambda: brute_force_permutation_distance(t1, t2, m), 1)
        return BenchRecord(method, size, n1, n2, sec, visits, 1 << b)
    if method == "sepx":
        try:
            g1, g2 = tree_graph(t1), tree_graph(t2)
            b = sum(1 for g in (g1, g2) for t in g.labels if t.node_type == "branch2")
            _, sec = _timed(lambda: ged_sepx_path(g1, g2, m, max_nodes=SEPX_MAX_TOKENS, timeout=timeout), 1)
            return BenchRecord(method, size, g1.n, g2.n, sec, 0, 1 << b)
        except OracleTimeout:
            return BenchRecord(method, size, n1, n2, timeout, 0, 0, censored=True)
    raise ValueError(f"unknown bench method {method!r}")


def scaling_benchmark(sizes, samples: int, methods, seed: int = 0, branch_free: bool = True,
                      m: ScoringMatrix | None = None, repeats: int = 3,
                      timeout: float = 120.0) -> list[BenchRecord]:
    """Time every method on ``samples`` random pairs per size.

    Tree sampling depends only on ``seed`` and the sizes; the graph oracle is
    skipped above ``SEPX_MAX_TOKENS`` tokens.
    """
    m = m or preset("sm0")
    for meth in methods:
        if meth not in BENCH_METHODS:
            raise ValueError(f"unknown bench method {meth!r}; choose from {', '.join(BENCH_METHODS)}")
    if any(s < 2 for s in sizes):
        raise ValueError("sizes must be >= 2")
    records = []
    for size in sizes:
        rng = np.random.default_rng([seed, size])
        for _ in range(samples):
            t1 = sample_tree_of_length(size, rng, branch_free)
            t2 = sample_tree_of_length(size, rng, branch_free)
            for meth in methods:
                if meth == "sepx" and size > SEPX_MAX_TOKENS:
                    continue
                try:
                    records.append(measure_pair(meth, t1, t2, m, size, repeats, timeout))
                except OracleRefusal:
                    continue
    return records


def loglog_slope(records: list[BenchRecord], method: str) -> float:
    """Slope of log(median seconds) against log(size)."""
    sizes = sorted({r.size for r in records if r.method == method})
    med = [np.median([r.seconds for r in records if r.method == method and r.size == s]) for s in sizes]
    slope, _ = np.polyfit(np.log(sizes), np.log(med), 1)
    return float(slope)


def median_seconds(records: list[BenchRecord], method: str, size: int) -> float:
    vals = [r.seconds for r in records if r.method == method and r.size == size]
    return float(np.median(vals)) if vals else math.nan
