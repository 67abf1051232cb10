"""Acceptance criteria 1 to 9, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL ...`` line (shown even under
output capture) before asserting.
"""
import math
import time

import numpy as np
import pytest
from scipy.stats import chisquare, skewnorm

from cswx.analysis import (empirical_semivariogram, fit_spherical, metric_axiom_check,
                           planted_variogram_points, scoring_sensitivity)
from cswx.bench import loglog_slope, median_seconds, sample_tree_of_length, scaling_benchmark
from cswx.crossover import (cswx_crossover, edit_path, generate_offspring, rcswx_crossover,
                            select_operations, stx_crossover, CrossoverFailure)
from cswx.cswx import apply_operations
from cswx.grammar import (GrammarConfig, bundled_corpus, canonical_form, chain, comp, parse_tree,
                          sample_tree, validate)
from cswx.oracle import run_suite, suite_pairs
from cswx.rcswx import rcswx_distance
from cswx.scoring import ScoringMatrix, preset
from cswx.search import SearchConfig, evolve
from cswx.serialise import SerialisationError, deserialise

# evaluations-to-target median for rcswx crossover, seeds 0..19 (calibrated: 580.5)
SEARCH_BOUND = 600


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    return emit


def test_criterion_1_metric_axioms(report):
    t0 = time.time()
    cfg = GrammarConfig(max_depth=4)
    lines, bad = [], 0
    for k, name in enumerate(("sm0", "sm1", "sm2", "sm3")):
        rep = metric_axiom_check(lambda g: sample_tree(cfg, g), 500, "rcswx", preset(name),
                                 np.random.default_rng([1, k]), permutations=200)
        bad += rep.violations
        lines.append(f"{name}:{rep.violations}")
    elapsed = time.time() - t0
    ok = bad == 0 and elapsed < 300
    report(1, ok, f"violations {' '.join(lines)} time={elapsed:.0f}s")
    assert ok


def test_criterion_2_oracle_equivalence(report):
    t0 = time.time()
    rng = np.random.default_rng(2024)
    reps = [run_suite("dp", suite_pairs("dp", 200, rng)),
            run_suite("perm", suite_pairs("perm", 100, rng)),
            run_suite("ged", suite_pairs("ged", 50, rng))]
    elapsed = time.time() - t0
    ok = all(r.failed == 0 and r.passed == n for r, n in zip(reps, (200, 100, 50))) and elapsed < 1200
    report(2, ok, "; ".join(r.line() for r in reps) + f" time={elapsed:.0f}s")
    assert ok


def test_criterion_3_worked_example(report):
    p1, p2 = bundled_corpus("worked_example")
    expected_ops = [("RemoveNode", 1.0), ("AddEnclosure", 1.0), ("Substitute", 0.5),
                    ("AddEnclosure", 1.0), ("Substitute", 0.5)]
    intermediates = [parse_tree(t) for t in (
        "seq(comp(pos-enc), comp(pos-enc))",
        "seq(route(im2col,4, comp(pos-enc), col2im,4), comp(pos-enc))",
        "seq(route(im2col,4, comp(relu), col2im,4), comp(pos-enc))",
        "seq(route(im2col,4, comp(relu), col2im,4), branch4(group,1,4; comp(pos-enc); cat,1,4))",
    )]
    details, ok = [], True
    for recursive in (False, True):
        path = edit_path(p1, p2, recursive=recursive)
        ops = [(op.op_type.value, op.value) for op in path.operations]
        kids = [generate_offspring(path, range(k)) for k in range(1, 6)]
        this = (ops == expected_ops
                and path.operations[0].i == 1
                and all(a == b for a, b in zip(kids[:4], intermediates))
                and canonical_form(kids[4]) == canonical_form(p2))
        ok &= this
        details.append(f"{'rcswx' if recursive else 'cswx'}: ops={len(ops)} match={this}")
    report(3, ok, "; ".join(details))
    assert ok


def test_criterion_4_offspring_validity(report):
    rng = np.random.default_rng(4)
    cfg = GrammarConfig(max_depth=4)
    m = preset("sm0")
    invalid = {"cswx": 0, "rcswx": 0, "stx": 0}
    stx_failed = 0
    interp_bad = 0
    for _ in range(1000):
        a, b = sample_tree(cfg, rng), sample_tree(cfg, rng)
        c = cswx_crossover(a, b, m, 0.0, rng)
        invalid["cswx"] += bool(validate(c))
        r = rcswx_crossover(a, b, m, 0.0, rng)
        invalid["rcswx"] += bool(validate(r))
        if rcswx_distance(r, a, m) + rcswx_distance(r, b, m) > rcswx_distance(a, b, m) + 1e-9:
            interp_bad += 1
    stx_done = 0
    while stx_done < 1000:
        a, b = sample_tree(cfg, rng), sample_tree(cfg, rng)
        try:
            s = stx_crossover(a, b, rng)
        except CrossoverFailure:
            stx_failed += 1
            continue
        invalid["stx"] += bool(validate(s))
        stx_done += 1
    ok = sum(invalid.values()) == 0 and interp_bad == 0
    report(4, ok, f"invalid={invalid} interpolation_violations={interp_bad} "
                  f"stx_no_common_kind={stx_failed}")
    assert ok


def test_criterion_5_scaling(report):
    t0 = time.time()
    recs = scaling_benchmark([8, 16, 32, 64, 128], 5, ["cswx", "rcswx"], seed=5, branch_free=True)
    slope = loglog_slope(recs, "cswx")
    sepx = scaling_benchmark([12], 5, ["sepx"], seed=5, branch_free=True)
    sepx_med = median_seconds(sepx, "sepx", 12)
    rc_med = median_seconds(recs, "rcswx", 64)
    # visit counts on pairs that do contain 2-way branches
    branchy = scaling_benchmark([8, 16, 32, 64], 5, ["rcswx", "brute"], seed=5, branch_free=False,
                                repeats=1)
    visits_ok = True
    rc = [r for r in branchy if r.method == "rcswx"]
    br = [r for r in branchy if r.method == "brute"]
    for a, b in zip(rc, br):
        visits_ok &= a.cell_visits <= b.cell_visits
    elapsed = time.time() - t0
    ok = 1.5 <= slope <= 2.5 and sepx_med > rc_med and visits_ok and len(rc) == len(br) and elapsed < 1800
    report(5, ok, f"cswx_slope={slope:.3f} sepx@12={sepx_med * 1e3:.2f}ms rcswx@64={rc_med * 1e3:.2f}ms "
                  f"visits_ok={visits_ok} ({len(rc)} pairs) time={elapsed:.0f}s")
    assert ok


def _independent_ok(path, chosen) -> bool:
    """Offspring validity decided by building and validating the tree."""
    try:
        tree = deserialise(apply_operations(path, chosen))
    except SerialisationError:
        return False
    return not validate(tree)


def test_criterion_6_selection_distribution(report):
    p1 = chain([comp("relu")] * 10)
    p2 = chain([comp("identity")] * 10)
    unit = ScoringMatrix("unit", c1=1.0, c2=1.0)
    path = edit_path(p1, p2, unit, recursive=False)
    assert len(path.operations) == 10 and all(op.value == 1.0 and not op.rules for op in path.operations)
    rng = np.random.default_rng(6)
    draws = np.array([select_operations(path, 0.0, rng).realised_cost for _ in range(10_000)])
    k = np.arange(11)
    expected = np.array([math.comb(10, int(i)) for i in k]) * skewnorm.pdf(k, 0.0, loc=5.0, scale=2.5)
    expected = expected / expected.sum() * len(draws)
    observed = np.bincount(draws.astype(int), minlength=11)
    # pool sparse tails so every expected count is >= 5
    keep = expected >= 5
    obs = np.append(observed[keep], observed[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    pval = chisquare(obs, exp).pvalue

    fuzz_rng = np.random.default_rng(66)
    cfg = GrammarConfig(max_depth=4)
    broken = 0
    draws_done = 0
    while draws_done < 10_000:
        a, b = sample_tree(cfg, fuzz_rng), sample_tree(cfg, fuzz_rng)
        pth = edit_path(a, b, preset("sm0"), recursive=bool(fuzz_rng.integers(2)))
        for _ in range(20):
            sel = select_operations(pth, float(fuzz_rng.normal(0, 3)), fuzz_rng)
            broken += not _independent_ok(pth, sel.chosen)
            draws_done += 1
    ok = pval > 0.01 and broken == 0
    report(6, ok, f"chi2 p={pval:.4f} fuzz_draws={draws_done} invalid={broken}")
    assert ok


def test_criterion_7_semivariogram(report):
    worst = 0.0
    truth = {"nugget": 0.1, "sill": 1.0, "range": 25.0}
    for seed in range(10):
        pts = planted_variogram_points(0.1, 1.0, 25.0, 0.02, 400, np.random.default_rng([7, seed]))
        fit = fit_spherical(pts)
        for key, val in truth.items():
            worst = max(worst, abs(getattr(fit, key) - val) / val)
    rng = np.random.default_rng(77)
    dist = rng.uniform(0, 20, (40, 40))
    dist = np.triu(dist, 1) + np.triu(dist, 1).T
    bins = empirical_semivariogram(dist, np.full(40, 0.7))
    flat = fit_spherical(bins)
    flat_ok = all(b.gamma == 0 for b in bins) and flat.degenerate
    ok = worst <= 0.10 and flat_ok
    report(7, ok, f"worst_relative_error={worst:.4f} constant_degenerate={flat_ok}")
    assert ok


def test_criterion_8_sensitivity(report):
    rng = np.random.default_rng(8)
    lengths = np.linspace(4, 104, 50).round().astype(int)
    # serialised length counts the start token
    pairs = [(sample_tree_of_length(int(n) - 1, rng), sample_tree_of_length(int(n) - 1, rng)) for n in lengths]
    rep = scoring_sensitivity(pairs, ("sm0", "sm1", "sm2", "sm3"))
    r01, r02 = rep.pearson[0, 1], rep.pearson[0, 2]
    ok = r01 > 0.9 and r02 > 0.9 and rep.lowest_r2() == "sm3"
    r2 = " ".join(f"{k}={v:.3f}" for k, v in rep.r2_vs_first.items())
    report(8, ok, f"r(sm0,sm1)={r01:.4f} r(sm0,sm2)={r02:.4f} R2 {r2}")
    assert ok


def test_criterion_9_search(report):
    evals = []
    for seed in range(20):
        hist = evolve(SearchConfig(crossover="rcswx", seed=seed, stop_at=0.0))
        e = hist.evaluations_to(0.0)
        evals.append(e if e is not None else math.inf)
    median = float(np.median(evals))
    mut_ok = True
    for seed in range(20):
        cfg = SearchConfig(crossover="none", seed=seed)
        hist = evolve(cfg)
        best = [r.best_fitness for r in hist.records]
        mut_ok &= (len(hist.records) == cfg.total_evaluations
                   and len(hist.population) == cfg.population_size
                   and all(b2 >= b1 for b1, b2 in zip(best, best[1:])))
    ok = median <= SEARCH_BOUND and mut_ok
    report(9, ok, f"rcswx median evaluations-to-target={median} bound={SEARCH_BOUND} mutation_arm_ok={mut_ok}")
    assert ok
