import itertools
import math

import numpy as np
import pytest
from hypothesis import given

from cswx.cswx import (DEFAULT_TIE_ORDER, MOVE_DEL, MOVE_INS, MOVE_SUB, EditPath, OpType, align,
                       apply_operations, cswx_distance, trace_back, valid_path)
from cswx.grammar import GrammarConfig, canonical_form, chain, parse_tree, sample_tree, validate
from cswx.rcswx import align_recursive
from cswx.scoring import preset
from cswx.serialise import deserialise, serialise

from conftest import small_trees, trees

SM0 = preset("sm0")


def _s(text):
    return serialise(parse_tree(text))


def test_relu_vs_identity():
    mat = align(_s("comp(relu)"), _s("comp(identity)"), SM0)
    assert mat.distance == 0.5
    assert mat.dist[0, 0] == 0
    assert mat.dist.shape == (2, 2)
    assert mat.path_labels()[1, 1] == "sub"
    path = trace_back(mat)
    assert [op.op_type for op in path.operations] == [OpType.SUBSTITUTE]
    assert path.total_cost == 0.5


def test_identity_alignment_is_diagonal_and_empty():
    s = _s("seq(route(im2col,4, comp(relu), col2im,4), branch2(clone,2; comp(relu); comp(identity); add,2))")
    mat = align(s, s, SM0)
    assert mat.distance == 0
    assert all(mat.paths[k, k] == MOVE_SUB for k in range(1, len(s)))
    assert trace_back(mat).operations == []


def test_valid_path_examples():
    b = _s("branch2(clone,2; comp(relu); comp(relu); add,2)")
    b2 = _s("branch2(clone,2; comp(identity); comp(linear,32); add,2)")
    mat = align(b, b2, SM0)
    assert valid_path(mat, 5, 5, "sub")  # closers after their openers were substituted
    r = _s("route(permute, comp(relu), permute)")
    mat = align(r, r, SM0)
    assert not valid_path(mat, 2, 3, "add")  # the opener was substituted, not added
    assert not valid_path(mat, 3, 2, "rem")
    mat = align(_s("branch4(clone,4; comp(relu); add,4)"), _s("comp(relu)"), SM0)
    assert not valid_path(mat, 1, 1, "sub")
    assert valid_path(mat, 1, 0, "rem")
    with pytest.raises(ValueError):
        valid_path(align_recursive(b, b2, SM0), 5, 5, "sub")


def test_tie_order_validation():
    s = _s("comp(relu)")
    with pytest.raises(ValueError):
        align(s, s, SM0, tie_order=(0, 0, 1))


def test_worked_example_distance_under_every_tie_order(worked_pair):
    s1, s2 = (serialise(t) for t in worked_pair)
    for order in itertools.permutations((MOVE_SUB, MOVE_INS, MOVE_DEL)):
        assert align(s1, s2, SM0, tie_order=order).distance == 4.0


def test_tie_order_invariance_two_hundred_pairs():
    rng = np.random.default_rng(31)
    cfg = GrammarConfig(max_depth=4)
    orders = list(itertools.permutations((MOVE_SUB, MOVE_INS, MOVE_DEL)))
    for _ in range(200):
        s1, s2 = serialise(sample_tree(cfg, rng)), serialise(sample_tree(cfg, rng))
        ref = align(s1, s2, SM0, tie_order=DEFAULT_TIE_ORDER)
        for order in orders[1:]:
            other = align(s1, s2, SM0, tie_order=order)
            assert other.distance == ref.distance
            assert np.array_equal(other.dist, ref.dist)


@given(trees, trees)
def test_transpose(a, b):
    s1, s2 = serialise(a), serialise(b)
    m1, m2 = align(s1, s2, SM0), align(s2, s1, SM0)
    assert m1.distance == m2.distance
    assert np.array_equal(m1.dist, m2.dist.T)


@given(trees, trees, small_trees)
def test_identical_suffix_never_increases_distance(a, b, suffix):
    assert cswx_distance(chain([a, suffix]), chain([b, suffix])) <= cswx_distance(a, b)


@given(trees, trees)
def test_matrix_invariants(a, b):
    mat = align(serialise(a), serialise(b), SM0)
    assert mat.dist[0, 0] == 0
    m1s, m2s, costs, backs, moves, cells, cstart, best = mat.pool
    for state in best[best >= 0]:
        chain_costs = []
        s = int(state)
        while s >= 0:
            chain_costs.append(costs[s])
            s = int(backs[s])
        assert int(cells[_last(mat, int(state))]) == 0
        assert all(x >= y for x, y in zip(chain_costs, chain_costs[1:]))


def _last(mat, state):
    backs = mat.pool[3]
    while backs[state] >= 0:
        state = int(backs[state])
    return state


@given(trees, trees)
def test_path_cost_and_operation_fields(a, b):
    mat = align(serialise(a), serialise(b), SM0)
    path = trace_back(mat)
    assert math.isclose(path.total_cost, sum(op.value for op in path.operations))
    assert path.total_cost == mat.distance
    for op in path.operations:
        assert op.value > 0
        step = path.steps[op.step]
        assert (step.i, step.j) == (op.i, op.j)
        if op.op_type in (OpType.ADD_ENCLOSURE, OpType.REMOVE_ENCLOSURE):
            side = path.seq1 if op.op_type is OpType.REMOVE_ENCLOSURE else path.seq2
            k = op.i if op.op_type is OpType.REMOVE_ENCLOSURE else op.j
            sep = op.ii if op.op_type is OpType.REMOVE_ENCLOSURE else op.jj
            assert sep == side.matching[k][0]


def test_replay_all_operations_fuzz():
    rng = np.random.default_rng(17)
    cfg = GrammarConfig(max_depth=4)
    for _ in range(1000):
        a, b = sample_tree(cfg, rng), sample_tree(cfg, rng)
        path = trace_back(align(serialise(a), serialise(b), SM0))
        child = deserialise(apply_operations(path, range(len(path))))
        assert not validate(child)
        assert canonical_form(child) == canonical_form(b)
        assert deserialise(apply_operations(path, ())) == deserialise(serialise(a))


@given(trees, trees)
def test_path_json_round_trip(a, b):
    s1, s2 = serialise(a), serialise(b)
    path = trace_back(align(s1, s2, SM0))
    back = EditPath.from_dict(path.to_dict(), s1, s2)
    assert back.to_dict() == path.to_dict()


def test_from_dict_rejects_out_of_range():
    s = _s("comp(relu)")
    with pytest.raises(ValueError):
        EditPath.from_dict({"total_cost": 0, "steps": [[5, 1, "sub", 0.0]]}, s, s)


@given(trees)
def test_self_distance_zero(t):
    assert cswx_distance(t, t) == 0


def test_symmetry_and_triangle_five_hundred():
    rng = np.random.default_rng(99)
    cfg = GrammarConfig(max_depth=4)
    for _ in range(500):
        a, b, c = (sample_tree(cfg, rng) for _ in range(3))
        ab, ba = cswx_distance(a, b), cswx_distance(b, a)
        assert ab == ba
        assert cswx_distance(a, c) <= ab + cswx_distance(b, c) + 1e-9
