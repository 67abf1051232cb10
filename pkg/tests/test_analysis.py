import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cswx.analysis import (DistanceMatrix, VariogramBin, empirical_semivariogram, fit_spherical,
                           metric_axiom_check, model_residual, pairwise_distance_matrix,
                           planted_variogram_points, population_diversity, scoring_sensitivity,
                           spherical, spherical_field)
from cswx.bench import sample_tree_of_length
from cswx.grammar import GrammarConfig, parse_tree, sample_tree
from cswx.rcswx import rcswx_distance
from cswx.scoring import preset


def _trees(n, seed=0):
    rng = np.random.default_rng(seed)
    cfg = GrammarConfig(max_depth=4)
    return [sample_tree(cfg, rng) for _ in range(n)]


def test_identical_trees_zero_matrix():
    t = _trees(1)[0]
    dm = pairwise_distance_matrix([t] * 5)
    assert np.all(dm.values == 0)
    assert population_diversity([t] * 5) == 0


def test_two_trees_diversity_is_distance():
    a, b = _trees(2, 1)
    assert population_diversity([a, b]) == rcswx_distance(a, b)
    with pytest.raises(ValueError):
        population_diversity([a])


def test_matrix_symmetric_and_parallel_equal():
    trees = _trees(12, 2)
    seq = pairwise_distance_matrix(trees, "rcswx")
    par = pairwise_distance_matrix(trees, "rcswx", workers=4)
    assert np.array_equal(seq.values, par.values)
    assert np.array_equal(seq.values, seq.values.T)
    assert np.all(np.diag(seq.values) == 0) and np.all(np.isfinite(seq.values))


def test_distance_matrix_csv_round_trip():
    dm = pairwise_distance_matrix(_trees(4, 3), "cswx", labels=["a", "b", "c", "d"])
    back = DistanceMatrix.from_csv(dm.to_csv())
    assert back.labels == ["a", "b", "c", "d"]
    assert np.array_equal(back.values, dm.values)
    with pytest.raises(ValueError):
        DistanceMatrix(np.zeros((2, 3)), ["a", "b"])
    with pytest.raises(ValueError):
        pairwise_distance_matrix(_trees(2), "sepx")


def test_constant_fitness_gives_zero_gamma():
    d = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
    assert all(b.gamma == 0 for b in empirical_semivariogram(d, [5.0, 5.0, 5.0], bins=3))


def test_two_points_single_bin():
    d = np.array([[0, 7.0], [7.0, 0]])
    bins = empirical_semivariogram(d, [1.0, 4.0], bins=5)
    assert bins == [VariogramBin(7.0, 4.5, 1)]


def test_semivariogram_errors():
    d = np.zeros((3, 3))
    with pytest.raises(ValueError):
        empirical_semivariogram(d, [1, 2, 3], bins=1)
    with pytest.raises(ValueError):
        empirical_semivariogram(d, [1, 2], bins=4)


def test_gaussian_field_variogram_within_fifteen_percent():
    rng = np.random.default_rng(0)
    xy = rng.uniform(0, 50, (200, 2))
    d = np.sqrt(((xy[:, None] - xy[None]) ** 2).sum(-1))
    fields = spherical_field(xy, 0.1, 1.0, 25.0, rng, samples=300)
    iu = np.triu_indices(len(xy), 1)
    h = d[iu]
    edges = np.linspace(0, h.max(), 16)
    idx = np.clip(np.searchsorted(edges, h, side="right") - 1, 0, 14)
    truth = np.bincount(idx, spherical(h, 0.1, 1.0, 25.0), 15) / np.bincount(idx, minlength=15)
    gammas = np.mean([[b.gamma for b in empirical_semivariogram(d, f, bins=15)] for f in fields], axis=0)
    assert len(gammas) == 15
    assert np.all(np.abs(gammas - truth) <= 0.15 * truth)


def test_spherical_shape():
    assert spherical(0.0, 0.1, 1.0, 25.0) == pytest.approx(0.1)
    assert spherical(25.0, 0.1, 1.0, 25.0) == pytest.approx(1.0)
    assert spherical(80.0, 0.1, 1.0, 25.0) == pytest.approx(1.0)


def test_planted_recovery():
    for seed in range(5):
        fit = fit_spherical(planted_variogram_points(0.1, 1.0, 25.0, 0.02, 400, np.random.default_rng(seed)))
        assert not fit.degenerate
        assert fit.nugget == pytest.approx(0.1, rel=0.1)
        assert fit.sill == pytest.approx(1.0, rel=0.1)
        assert fit.range == pytest.approx(25.0, rel=0.1)


def test_fit_is_optimal_against_random_parameters():
    pts = planted_variogram_points(0.2, 0.9, 12.0, 0.05, 200, np.random.default_rng(3))
    fit = fit_spherical(pts)
    assert math.isclose(fit.residual, model_residual(pts, fit.nugget, fit.sill, fit.range), rel_tol=1e-9)
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = rng.uniform(0, 0.5)
        s = n + rng.uniform(0, 1.5)
        r = rng.uniform(0.5, 30)
        assert fit.residual <= model_residual(pts, n, s, r) + 1e-12


@settings(max_examples=20)
@given(st.floats(0.1, 100.0), st.floats(0.1, 100.0))
def test_fit_scale_equivariant(a, b):
    pts = planted_variogram_points(0.1, 1.0, 25.0, 0.02, 200, np.random.default_rng(5))
    base = fit_spherical(pts)
    scaled = fit_spherical([VariogramBin(p.h * a, p.gamma * b, p.count) for p in pts])
    assert scaled.nugget == pytest.approx(base.nugget * b, rel=1e-3, abs=1e-6 * b)
    assert scaled.sill == pytest.approx(base.sill * b, rel=1e-3)
    assert scaled.range == pytest.approx(base.range * a, rel=1e-3)


def test_degenerate_fits():
    flat = [VariogramBin(float(h), 0.0, 3) for h in range(1, 10)]
    fit = fit_spherical(flat)
    assert fit.degenerate and fit.nugget == fit.sill == 0
    level = [VariogramBin(float(h), 0.4, 3) for h in range(1, 10)]
    assert fit_spherical(level).degenerate
    with pytest.raises(ValueError):
        fit_spherical(flat[:3])
    assert set(fit.to_dict()) == {"nugget", "sill", "range", "residual", "degenerate"}


def test_axiom_check_detects_plain_permutation_distance():
    cfg = GrammarConfig(max_depth=4)
    cfg.weights["module"] = {"comp": 0.3, "seq": 0.2, "route": 0.1, "branch2": 0.3,
                             "branch4": 0.05, "branch8": 0.05}
    rep = metric_axiom_check(lambda g: sample_tree(cfg, g), 30, "cswx", preset("sm0"),
                             np.random.default_rng(0))
    assert rep.permutation_positive > 0 and rep.passed
    rep = metric_axiom_check(lambda g: sample_tree(cfg, g), 30, "rcswx", preset("sm0"),
                             np.random.default_rng(0))
    assert rep.permutation_positive == 0 and rep.passed
    assert "triangle=0" in rep.summary()


def test_axiom_check_counts_triangle_counterexample():
    a = "route(im2col,4, comp(relu), col2im,4)"
    b = "branch4(group,1,4; comp(linear,64); cat,1,4)"
    triple = iter([parse_tree(f"seq({a}, {b})"), parse_tree(f"branch2(clone,2; {a}; {b}; add,2)"),
                   parse_tree(f"seq({b}, {a})")] * 3)
    rep = metric_axiom_check(lambda g: next(triple), 1, "rcswx", permutations=0)
    assert rep.triangle == 1 and rep.worst_triangle == -2.0 and not rep.passed


def test_sensitivity_report():
    rng = np.random.default_rng(8)
    pairs = [(sample_tree_of_length(n, rng), sample_tree_of_length(n, rng)) for n in range(4, 104, 4)]
    rep = scoring_sensitivity(pairs)
    assert rep.distances.shape == (25, 4)
    assert np.allclose(np.diag(rep.pearson), 1)
    assert rep.pearson[0, 1] > 0.9 and rep.lowest_r2() == "sm3"
    with pytest.raises(ValueError):
        scoring_sensitivity(pairs[:5])
