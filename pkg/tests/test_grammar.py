import numpy as np
import pytest
from hypothesis import given

from cswx.grammar import (ArityError, Category, GrammarConfig, GrammarError, Kind, Node, Terminal,
                          TreeSyntaxError, UnknownOperationError, all_branch_permutations,
                          branch2_count, bundled_corpus, canonical_form, depth, iter_nodes, mutate,
                          parse_tree, read_corpus, render_tree, sample_tree, swap_branches, validate,
                          write_corpus)

from conftest import trees

SKIP = "branch2(clone,2; comp(linear,64); comp(identity); add,2)"


def test_parse_single_computation():
    t = parse_tree("comp(identity)")
    assert t.kind is Kind.COMPUTATION
    assert t.children == (Terminal(Category.COMPUTATION, "identity"),)


def test_parse_sequential_has_two_computations():
    t = parse_tree("seq(comp(linear,64), comp(relu))")
    assert t.kind is Kind.SEQUENTIAL
    assert [c.kind for c in t.children] == [Kind.COMPUTATION, Kind.COMPUTATION]
    assert t.children[0].children[0].params == (64,)


def test_parse_skip_connection_branch():
    t = parse_tree(SKIP)
    assert t.kind is Kind.BRANCHING and t.factor == 2
    assert len(t.children) == 4
    assert t.children[0] == Terminal(Category.BRANCHING, "clone", (2,))
    assert t.children[3] == Terminal(Category.AGGREGATION, "add", (2,))
    assert render_tree(t.children[1]) == "comp(linear,64)"


def test_render_keeps_stored_branch_order():
    assert render_tree(parse_tree(SKIP)) == SKIP
    flipped = "branch2(clone,2; comp(identity); comp(linear,64); add,2)"
    assert render_tree(parse_tree(flipped)) == flipped


def test_render_identity():
    assert render_tree(parse_tree("comp(identity)")) == "comp(identity)"


def test_render_canonicalises_whitespace():
    messy = "seq( comp(linear ,64),\n   comp( relu ) )"
    assert render_tree(parse_tree(messy)) == "seq(comp(linear,64), comp(relu))"


@pytest.mark.parametrize("text,exc", [
    ("comp(identity", TreeSyntaxError),
    ("seq(comp(relu))", GrammarError),
    ("comp(frobnicate)", UnknownOperationError),
    ("comp(linear)", ArityError),
    ("branch2(clone,2; comp(relu); add,2)", GrammarError),
    ("branch3(clone,3; comp(relu); add,3)", GrammarError),
    ("comp(relu) comp(relu)", TreeSyntaxError),
])
def test_parse_errors(text, exc):
    with pytest.raises(exc):
        parse_tree(text)


def test_syntax_error_reports_position():
    with pytest.raises(TreeSyntaxError) as info:
        read_corpus("comp(relu)\nseq(comp(relu), ?)\n")
    assert info.value.line == 2
    assert info.value.column == 17


def test_corpus_round_trip(worked_pair):
    text = write_corpus(list(worked_pair), ["hdr"])
    assert text.startswith("# hdr\n")
    assert read_corpus(text) == list(worked_pair)
    for t in worked_pair:
        assert render_tree(parse_tree(render_tree(t))) == render_tree(t)


def test_bundled_fixture_parses():
    p1, p2 = bundled_corpus("worked_example")
    assert not validate(p1) and not validate(p2)


def test_validate_branch2_arity():
    good = parse_tree(SKIP)
    bad = Node(Kind.BRANCHING, good.children[:3], factor=2)
    kinds = {v.kind for v in validate(bad)}
    assert "arity" in kinds


def test_validate_category():
    bad = Node(Kind.COMPUTATION, (Terminal(Category.BRANCHING, "clone", (2,)),))
    assert [v.kind for v in validate(bad)] == ["category"]


@given(trees)
def test_sampled_trees_validate_and_round_trip(t):
    assert validate(t) == []
    assert parse_tree(render_tree(t)) == t
    assert depth(t) <= 4


def test_max_depth_one_is_computation():
    cfg = GrammarConfig(max_depth=1)
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert sample_tree(cfg, rng).kind is Kind.COMPUTATION


def test_sampling_is_deterministic():
    cfg = GrammarConfig()
    assert sample_tree(cfg, np.random.default_rng(42)) == sample_tree(cfg, np.random.default_rng(42))


def test_node_ids_unique():
    t = sample_tree(GrammarConfig(max_depth=6), np.random.default_rng(3))
    ids = [n.node_id for n in iter_nodes(t)]
    assert len(ids) == len(set(ids))


def test_expansion_frequencies_match_weights():
    # Root expansions of depth-capped samples are plain draws from the module
    # weights; 10 000 draws, each frequency within 3 standard errors.
    cfg = GrammarConfig(max_depth=2)
    rng = np.random.default_rng(7)
    n = 10_000
    names = {"comp": 0, "seq": 0, "route": 0, "branch2": 0, "branch4": 0, "branch8": 0}
    for _ in range(n):
        t = sample_tree(cfg, rng)
        key = t.kind.value if t.kind is not Kind.BRANCHING else f"branch{t.factor}"
        names[key] += 1
    for key, p in cfg.weights["module"].items():
        se = np.sqrt(p * (1 - p) / n)
        assert abs(names[key] / n - p) <= 3 * se, key


def test_config_rejects_bad_weights():
    w = GrammarConfig().weights
    w["module"] = dict(w["module"], comp=0.9)
    with pytest.raises(ValueError):
        GrammarConfig(weights=w)
    with pytest.raises(ValueError):
        GrammarConfig(max_depth=0)


def test_mutate_single_computation_changes_terminal():
    cfg = GrammarConfig(max_depth=1)
    rng = np.random.default_rng(1)
    t = parse_tree("comp(relu)")
    for _ in range(20):
        m = mutate(t, cfg, rng)
        assert m.kind is Kind.COMPUTATION and m != t


def test_mutate_fuzz_valid_and_deterministic():
    cfg = GrammarConfig(max_depth=5)
    rng = np.random.default_rng(11)
    t = sample_tree(cfg, rng)
    for _ in range(10_000 // 10):
        for _ in range(10):
            t = mutate(t, cfg, rng)
            assert not validate(t)
            assert depth(t) <= cfg.max_depth
    a = mutate(t, cfg, np.random.default_rng(5))
    b = mutate(t, cfg, np.random.default_rng(5))
    assert a == b


def test_branch_permutations_share_canonical_form():
    t = parse_tree("branch2(clone,2; branch2(clone,2; comp(relu); comp(identity); add,2); "
                   "comp(linear,64); add,2)")
    perms = list(all_branch_permutations(t))
    assert branch2_count(t) == 2 and len(perms) == 4
    assert len({render_tree(p) for p in perms}) == 4
    assert len({canonical_form(p) for p in perms}) == 1


def test_swap_branches_inner_only():
    t = parse_tree("branch2(clone,2; branch2(clone,2; comp(relu); comp(identity); add,2); "
                   "comp(linear,64); add,2)")
    inner = swap_branches(t, 0b10)
    assert render_tree(inner).startswith("branch2(clone,2; branch2(clone,2; comp(identity); comp(relu)")
