"""Constrained alignment of serialised trees, traceback and edit paths."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from ._kernels import MOVE_DEL, MOVE_INS, MOVE_SUB
from .grammar import Node
from .scoring import ScoringMatrix, cost_tables, preset
from .serialise import (CLOSER, COMP, DIVIDER, OPENER, SerialisedSequence, Token, relink,
                        serialise)

MOVE_NAMES = {MOVE_SUB: "sub", MOVE_INS: "add", MOVE_DEL: "rem"}
DIRECTIONS = {"sub": MOVE_SUB, "mut": MOVE_SUB, "add": MOVE_INS, "rem": MOVE_DEL}


class UnalignableError(ValueError):
    """No finite-cost grammar-consistent path exists under the scoring matrix."""


# -- token DAGs ----------------------------------------------------------------

@dataclass(frozen=True)
class BranchSpan:
    opener: int
    divider: int
    closer: int
    depth: int


def branch_spans(seq: SerialisedSequence) -> list[BranchSpan]:
    """2-way branch spans in opener order, with their nesting depth."""
    spans = []
    for o, seps in seq.matching.items():
        if len(seps) == 2:
            spans.append((o, seps[0], seps[1]))
    out = []
    for o, d, c in spans:
        depth = sum(1 for (o2, _, c2) in spans if o2 < o and c < c2)
        out.append(BranchSpan(o, d, c, depth))
    return out


@dataclass
class TokenDag:
    """Token occurrences in topological order with CSR predecessor lists.

    ``swap[u]`` is the set of 2-way spans (bit k = k-th span) traversed in
    swapped order on the way to node ``u``.
    """

    tok: np.ndarray
    pstart: np.ndarray
    pidx: np.ndarray
    swap: list[int]
    spans: list[BranchSpan]

    @property
    def size(self) -> int:
        return len(self.tok)

    def preds(self, u: int) -> np.ndarray:
        return self.pidx[self.pstart[u]:self.pstart[u + 1]]


def _pack(tok: list[int], preds: list[list[int]], swap: list[int], spans) -> TokenDag:
    pstart = np.zeros(len(tok) + 1, dtype=np.int64)
    pstart[1:] = np.cumsum([len(p) for p in preds])
    flat = [q for p in preds for q in p]
    return TokenDag(np.asarray(tok, dtype=np.int64), pstart,
                    np.asarray(flat, dtype=np.int64), swap, spans)


def chain_dag(seq: SerialisedSequence) -> TokenDag:
    n = len(seq)
    return _pack(list(range(n)), [[]] + [[k - 1] for k in range(1, n)], [0] * n, [])


def permutation_dag(seq: SerialisedSequence) -> TokenDag:
    """Every branch-order variant of ``seq`` merged on shared prefixes.

    Each 2-way span forks after its opener into the stored order
    (half 1, divider, half 2) and the swapped order (half 2, divider, half 1);
    the two forks meet again at the closer.
    """
    spans = branch_spans(seq)
    by_opener = {s.opener: (k, s) for k, s in enumerate(spans)}
    tok: list[int] = []
    preds: list[list[int]] = []
    swap: list[int] = []

    def emit(k: int, p: list[int], sw: int) -> int:
        tok.append(k)
        preds.append(list(p))
        swap.append(sw)
        return len(tok) - 1

    def walk(lo: int, hi: int, p: list[int], sw: int) -> list[int]:
        k = lo
        while k < hi:
            if k in by_opener:
                bit, span = by_opener[k]
                o = emit(k, p, sw)
                d, c = span.divider, span.closer
                e = walk(o_lo := k + 1, d, [o], sw)
                e = walk(d + 1, c, [emit(d, e, sw)], sw)
                sw2 = sw | (1 << bit)
                f = walk(d + 1, c, [o], sw2)
                f = walk(o_lo, d, [emit(d, f, sw2)], sw2)
                p = [emit(c, e + f, sw)]
                k = c + 1
            else:
                p = [emit(k, p, sw)]
                k += 1
        return p

    emit(0, [], 0)
    walk(1, len(seq), [0], 0)
    return _pack(tok, preds, swap, spans)


# -- alignment -----------------------------------------------------------------

@dataclass
class AlignmentMatrix:
    """Result of a DP fill.

    ``dist`` and ``paths`` are the |s1| x |s2| views (for the permutation
    variant, the minimum over all DAG nodes sharing a token pair). The raw
    per-state pool is kept for traceback.
    """

    seq1: SerialisedSequence
    seq2: SerialisedSequence
    scoring: ScoringMatrix
    dag1: TokenDag
    dag2: TokenDag
    pool: tuple
    recursive: bool = False

    @property
    def n1(self) -> int:
        return len(self.seq1)

    @property
    def n2(self) -> int:
        return len(self.seq2)

    @cached_property
    def _cell_best(self) -> tuple[np.ndarray, np.ndarray]:
        costs, moves, best = self.pool[2], self.pool[4], self.pool[7]
        shape = (self.dag1.size, self.dag2.size)
        ok = best >= 0
        c = np.full(best.shape, math.inf)
        c[ok] = costs[best[ok]]
        mv = np.full(best.shape, -1, dtype=np.int64)
        mv[ok] = moves[best[ok]]
        return c.reshape(shape), mv.reshape(shape)

    @cached_property
    def _collapsed(self) -> tuple[np.ndarray, np.ndarray]:
        cost, mv = self._cell_best
        dist = np.full((self.n1, self.n2), math.inf)
        paths = np.full((self.n1, self.n2), -1, dtype=np.int64)
        uu, vv = np.meshgrid(np.arange(self.dag1.size), np.arange(self.dag2.size), indexing="ij")
        flat_cost = cost.ravel()
        order = np.lexsort((vv.ravel(), uu.ravel(), flat_cost))
        i = self.dag1.tok[uu.ravel()[order]]
        j = self.dag2.tok[vv.ravel()[order]]
        key = i * self.n2 + j
        _, first = np.unique(key, return_index=True)
        sel = order[first]
        ii, jj = self.dag1.tok[uu.ravel()[sel]], self.dag2.tok[vv.ravel()[sel]]
        dist[ii, jj] = flat_cost[sel]
        paths[ii, jj] = mv.ravel()[sel]
        return dist, paths

    @property
    def dist(self) -> np.ndarray:
        return self._collapsed[0]

    @property
    def paths(self) -> np.ndarray:
        """Back-pointer codes (see ``MOVE_NAMES``); -1 where unreachable."""
        return self._collapsed[1]

    @property
    def distance(self) -> float:
        return float(self._cell_best[0][-1, -1])

    @property
    def cell_visits(self) -> int:
        return self.dag1.size * self.dag2.size

    @property
    def state_count(self) -> int:
        return int(self.pool[6][-1])

    @cached_property
    def variant_counts(self) -> np.ndarray:
        """Number of branch-order variants held per (i, j) token cell."""
        c1 = np.bincount(self.dag1.tok, minlength=self.n1)
        c2 = np.bincount(self.dag2.tok, minlength=self.n2)
        return np.outer(c1, c2)

    def path_labels(self) -> np.ndarray:
        names = np.array(["", *(MOVE_NAMES[k] for k in range(3))])
        return names[self.paths + 1]


DEFAULT_TIE_ORDER = (MOVE_SUB, MOVE_INS, MOVE_DEL)


def align_dags(s1: SerialisedSequence, s2: SerialisedSequence, m: ScoringMatrix,
               dag1: TokenDag, dag2: TokenDag, recursive: bool,
               tie_order=DEFAULT_TIE_ORDER) -> AlignmentMatrix:
    """Fill the state pool. ``tie_order`` lists the moves in the order they
    are tried; a later move replaces an earlier one only if strictly cheaper."""
    if sorted(tie_order) != [MOVE_SUB, MOVE_INS, MOVE_DEL]:
        raise ValueError(f"tie_order must be a permutation of the three moves, got {tie_order}")
    sub, ind1, ind2 = cost_tables(s1, s2, m)
    if max(s1.levels.max(initial=0), s2.levels.max(initial=0)) >= 62:
        raise ValueError("enclosure nesting deeper than 62 levels is not supported")
    pool = _kernels.align_dags(
        dag1.tok, dag1.pstart, dag1.pidx, dag2.tok, dag2.pstart, dag2.pidx,
        s1.codes, s1.levels, s2.codes, s2.levels, sub, ind1, ind2,
        np.asarray(tie_order, dtype=np.int64))
    return AlignmentMatrix(s1, s2, m, dag1, dag2, pool, recursive)


def align(s1: SerialisedSequence, s2: SerialisedSequence, m: ScoringMatrix | None = None,
          tie_order=DEFAULT_TIE_ORDER) -> AlignmentMatrix:
    m = m or preset("sm0")
    return align_dags(s1, s2, m, chain_dag(s1), chain_dag(s2), recursive=False, tie_order=tie_order)


def _state_path(matrix: AlignmentMatrix, state: int) -> list[int]:
    backs = matrix.pool[3]
    out = []
    while state >= 0:
        out.append(state)
        state = int(backs[state])
    return out[::-1]


def valid_path(matrix: AlignmentMatrix, i: int, j: int, direction: str) -> bool:
    """Whether stepping into token cell ``(i, j)`` along ``direction`` keeps the
    best stored path into the source cell grammar-consistent.

    ``direction`` uses the matrix labels: ``sub`` consumes both tokens,
    ``add`` inserts ``s2[j]`` coming from ``(i, j-1)`` and ``rem`` removes
    ``s1[i]`` coming from ``(i-1, j)``. Only defined on chain alignments.
    """
    if matrix.recursive:
        raise ValueError("valid_path is defined on plain alignments only")
    move = DIRECTIONS[direction]
    pi, pj = (i - 1, j - 1) if move == MOVE_SUB else (i - 1, j) if move == MOVE_DEL else (i, j - 1)
    if pi < 0 or pj < 0:
        return False
    m1s, m2s, _, _, _, _, cstart, best = matrix.pool
    state = int(best[pi * matrix.n2 + pj])
    if state < 0:
        return False
    a, b = int(m1s[state]), int(m2s[state])
    s1, s2 = matrix.seq1, matrix.seq2
    c1, l1 = int(s1.codes[i]), int(s1.levels[i])
    c2, l2 = int(s2.codes[j]), int(s2.levels[j])
    if move == MOVE_SUB:
        if s1[i].node_type != s2[j].node_type:
            return False
        if c1 in (DIVIDER, CLOSER):
            return c1 == c2 and bool((a >> l1) & 1) and bool((b >> l2) & 1)
        return True
    code, level, mask = (c1, l1, a) if move == MOVE_DEL else (c2, l2, b)
    if code in (DIVIDER, CLOSER):
        return not (mask >> level) & 1
    return code in (COMP, OPENER)


# -- edit operations -----------------------------------------------------------

class OpType(enum.Enum):
    ADD_NODE = "AddNode"
    REMOVE_NODE = "RemoveNode"
    SUBSTITUTE = "Substitute"
    ADD_ENCLOSURE = "AddEnclosure"
    REMOVE_ENCLOSURE = "RemoveEnclosure"


@dataclass(frozen=True)
class Rule:
    """Chosen set S breaks the rule when every disabler is in S and no enabler is."""

    disablers: frozenset[int]
    enablers: frozenset[int]

    def violated(self, chosen) -> bool:
        return self.disablers <= chosen and not (self.enablers & chosen)


@dataclass
class EditOperation:
    id: int
    op_type: OpType
    value: float
    i: int | None
    j: int | None
    ii: int | None = None
    jj: int | None = None
    step: int = -1
    separator_steps: tuple[int, ...] = ()
    rules: list[Rule] = field(default_factory=list)
    variant: tuple[int, int] = (0, 0)

    @property
    def disablers(self) -> set[int]:
        return set().union(*(r.disablers for r in self.rules)) - {self.id}

    @property
    def enablers(self) -> set[int]:
        return set().union(*(r.enablers for r in self.rules))

    def to_dict(self) -> dict:
        return {
            "id": self.id, "type": self.op_type.value, "value": self.value,
            "i": self.i, "j": self.j, "ii": self.ii, "jj": self.jj,
            "step": self.step, "separator_steps": list(self.separator_steps),
            "disablers": sorted(self.disablers), "enablers": sorted(self.enablers),
            "rules": [{"disablers": sorted(r.disablers), "enablers": sorted(r.enablers)}
                      for r in self.rules],
            "variant": list(self.variant),
        }


@dataclass(frozen=True)
class PathStep:
    """One move of the traced path: token indices consumed (None if not)."""

    i: int | None
    j: int | None
    move: int
    cost: float
    swap1: int = 0
    swap2: int = 0


@dataclass
class EditPath:
    seq1: SerialisedSequence
    seq2: SerialisedSequence
    steps: list[PathStep]
    operations: list[EditOperation]
    total_cost: float
    swapped1: int = 0
    swapped2: int = 0

    def __len__(self) -> int:
        return len(self.operations)

    def to_dict(self) -> dict:
        return {
            "total_cost": self.total_cost,
            "swapped1": self.swapped1,
            "swapped2": self.swapped2,
            "steps": [[s.i, s.j, MOVE_NAMES[s.move], s.cost, s.swap1, s.swap2] for s in self.steps],
            "operations": [op.to_dict() for op in self.operations],
        }

    @classmethod
    def from_dict(cls, data: dict, seq1: SerialisedSequence, seq2: SerialisedSequence) -> EditPath:
        """Rebuild a path from :meth:`to_dict` output and the two sequences.

        Operations and their rules are re-derived from the steps, so a
        replay does not trust the stored dependency sets.
        """
        steps = []
        for row in data["steps"]:
            i, j, move, cost = row[:4]
            sw1, sw2 = (row[4], row[5]) if len(row) > 4 else (0, 0)
            for idx, seq in ((i, seq1), (j, seq2)):
                if idx is not None and not 0 <= idx < len(seq):
                    raise ValueError(f"step index {idx} outside a sequence of {len(seq)} tokens")
            steps.append(PathStep(i, j, DIRECTIONS[move], float(cost), int(sw1), int(sw2)))
        ops = build_operations(seq1, seq2, steps)
        return cls(seq1, seq2, steps, ops, float(data["total_cost"]),
                   int(data.get("swapped1", 0)), int(data.get("swapped2", 0)))


def trace_steps(matrix: AlignmentMatrix) -> list[PathStep]:
    """Forward list of moves along the stored optimal path."""
    m1s, m2s, costs, backs, moves, cells, cstart, best = matrix.pool
    final = int(best[-1])
    if final < 0 or not math.isfinite(costs[final]):
        raise UnalignableError("no finite-cost grammar-consistent alignment; review the scoring matrix")
    n2 = matrix.dag2.size
    chain = _state_path(matrix, final)
    steps = []
    for prev, state in zip(chain, chain[1:]):
        u, v = divmod(int(cells[state]), n2)
        mv = int(moves[state])
        i = int(matrix.dag1.tok[u]) if mv != MOVE_INS else None
        j = int(matrix.dag2.tok[v]) if mv != MOVE_DEL else None
        steps.append(PathStep(i, j, mv, float(costs[state] - costs[prev]),
                              matrix.dag1.swap[u], matrix.dag2.swap[v]))
    return steps


def _intervals(sep_steps: list[int], opener_step: int) -> list[tuple[int, int]]:
    bounds = [opener_step, *sep_steps]
    return list(zip(bounds, bounds[1:]))


def _crosses(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] < b[0] < a[1] < b[1] or b[0] < a[0] < b[1] < a[1]


def build_operations(s1: SerialisedSequence, s2: SerialisedSequence,
                     steps: list[PathStep]) -> list[EditOperation]:
    """Group path moves into operations and derive their dependency rules."""
    ops: list[EditOperation] = []
    owner1: dict[int, int] = {}  # s1 opener index -> op id (enclosure removals)
    owner2: dict[int, int] = {}
    enclosures = []  # (side, opener token, opener step, op id or None)
    comps = []  # (step, side, op id)
    opener_step1: dict[int, int] = {}
    opener_step2: dict[int, int] = {}
    sep_steps1: dict[int, list[int]] = {}
    sep_steps2: dict[int, list[int]] = {}

    def new_op(kind: OpType, value: float, p: int, step: PathStep) -> EditOperation:
        op = EditOperation(len(ops), kind, value, step.i, step.j, step=p,
                           variant=(step.swap1, step.swap2))
        ops.append(op)
        return op

    for p, st in enumerate(steps):
        t1 = s1[st.i] if st.i is not None else None
        t2 = s2[st.j] if st.j is not None else None
        if st.move == MOVE_SUB:
            if t1.is_separator:
                sep_steps1[t1.opener].append(p)
                sep_steps2[t2.opener].append(p)
                continue
            op_id = None
            if st.cost > 0:
                op_id = new_op(OpType.SUBSTITUTE, st.cost, p, st).id
            if t1.is_opener:
                opener_step1[st.i] = opener_step2[st.j] = p
                sep_steps1[st.i], sep_steps2[st.j] = [], []
                enclosures.append(("both", st.i, p, None))
            else:
                comps.append((p, "both", op_id))
        elif st.move == MOVE_DEL:
            if t1.is_separator:
                sep_steps1[t1.opener].append(p)
                continue
            if t1.is_opener:
                op = new_op(OpType.REMOVE_ENCLOSURE, st.cost, p, st)
                owner1[st.i] = op.id
                opener_step1[st.i] = p
                sep_steps1[st.i] = []
                enclosures.append(("s1", st.i, p, op.id))
            else:
                op = new_op(OpType.REMOVE_NODE, st.cost, p, st)
                comps.append((p, "s1", op.id))
        else:
            if t2.is_separator:
                sep_steps2[t2.opener].append(p)
                continue
            if t2.is_opener:
                op = new_op(OpType.ADD_ENCLOSURE, st.cost, p, st)
                owner2[st.j] = op.id
                opener_step2[st.j] = p
                sep_steps2[st.j] = []
                enclosures.append(("s2", st.j, p, op.id))
            else:
                op = new_op(OpType.ADD_NODE, st.cost, p, st)
                comps.append((p, "s2", op.id))

    # separator positions of enclosure operations
    for side, k, p, op_id in enclosures:
        seps = sep_steps1[k] if side in ("both", "s1") else sep_steps2[k]
        if op_id is not None:
            op = ops[op_id]
            op.separator_steps = tuple(seps)
            first = steps[seps[0]]
            op.ii, op.jj = first.i, first.j

    # emptiness: each body must keep at least one computation
    comp_steps = np.array([c[0] for c in comps], dtype=np.int64)

    def body_rule(lo: int, hi: int, extra_enabler: int | None):
        inside = [c for c, p in zip(comps, comp_steps) if lo < p < hi]
        if any(side == "both" for _, side, _ in inside):
            return None
        dis = frozenset(op for _, side, op in inside if side == "s1")
        en = {op for _, side, op in inside if side == "s2"}
        if extra_enabler is not None:
            en.add(extra_enabler)
        return Rule(dis, frozenset(en))

    bodies = [(-1, len(steps), "top", None)]
    for side, k, p, op_id in enclosures:
        seps = sep_steps1[k] if side in ("both", "s1") else sep_steps2[k]
        for lo, hi in _intervals(seps, p):
            bodies.append((lo, hi, side, op_id))
    for lo, hi, side, op_id in bodies:
        rule = body_rule(lo, hi, op_id if side == "s1" else None)
        if rule is None:
            continue
        if side == "s2":
            ops[op_id].rules.append(rule)
        else:
            for d in rule.disablers:
                ops[d].rules.append(rule)

    # a kept enclosure of parent 1 and an added one of parent 2 must not overlap
    def spans_of(side, k, p):
        seps = sep_steps1[k] if side == "s1" else sep_steps2[k]
        return [(p, seps[-1])] + (_intervals(seps, p) if len(seps) == 2 else [])

    removed = [(spans_of("s1", k, p), op_id) for side, k, p, op_id in enclosures if side == "s1"]
    added = [(spans_of("s2", k, p), op_id) for side, k, p, op_id in enclosures if side == "s2"]
    for iv2, a_id in added:
        for iv1, r_id in removed:
            if any(_crosses(x, y) for x in iv1 for y in iv2):
                ops[a_id].rules.append(Rule(frozenset(), frozenset({r_id})))
    return ops


def selection_violations(ops: list[EditOperation], chosen) -> list[tuple[int, Rule]]:
    chosen = frozenset(chosen)
    return [(op.id, r) for op in ops if op.id in chosen for r in op.rules if r.violated(chosen)]


def trace_back(matrix: AlignmentMatrix) -> EditPath:
    steps = trace_steps(matrix)
    ops = build_operations(matrix.seq1, matrix.seq2, steps)
    swapped1 = swapped2 = 0
    for st in steps:
        swapped1 |= st.swap1
        swapped2 |= st.swap2
    return EditPath(matrix.seq1, matrix.seq2, steps, ops, matrix.distance, swapped1, swapped2)


def cswx_distance(t1: Node, t2: Node, m: ScoringMatrix | None = None) -> float:
    d = align(serialise(t1), serialise(t2), m).distance
    if not math.isfinite(d):
        raise UnalignableError("no finite-cost grammar-consistent alignment; review the scoring matrix")
    return d


def offspring_tokens(path: EditPath, chosen) -> tuple[list[Token], list]:
    """Tokens of parent 1 after applying the chosen operations, with the
    enclosure key of each token (see :func:`serialise.relink`)."""
    chosen = set(chosen)
    s1, s2 = path.seq1, path.seq2
    by_step = {op.step: op for op in path.operations}
    fate1: dict[int, bool] = {}  # s1 opener -> kept
    fate2: dict[int, bool] = {}  # s2 opener -> emitted
    out: list[Token] = [s1[0]]
    keys: list = [None]

    def put(tok: Token, key) -> None:
        out.append(tok)
        keys.append(key)

    for p, st in enumerate(path.steps):
        op = by_step.get(p)
        picked = op is not None and op.id in chosen
        if st.move == MOVE_SUB:
            t1, t2 = s1[st.i], s2[st.j]
            if t1.is_separator:
                put(t1, (1, t1.opener))
            else:
                put(t2 if picked else t1, (1, st.i))
        elif st.move == MOVE_DEL:
            t1 = s1[st.i]
            if t1.is_separator:
                if fate1[t1.opener]:
                    put(t1, (1, t1.opener))
                continue
            if t1.is_opener:
                fate1[st.i] = not picked
            if not picked:
                put(t1, (1, st.i))
        else:
            t2 = s2[st.j]
            if t2.is_separator:
                if fate2[t2.opener]:
                    put(t2, (2, t2.opener))
                continue
            if t2.is_opener:
                fate2[st.j] = picked
            if picked:
                put(t2, (2, st.j))
    return out, keys


def apply_operations(path: EditPath, chosen) -> SerialisedSequence:
    tokens, keys = offspring_tokens(path, chosen)
    return relink(tokens, keys)
