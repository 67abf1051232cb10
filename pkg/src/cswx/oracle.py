"""Slow reference implementations used to certify the aligners.

* :func:`brute_force_permutation_distance` runs the plain aligner on every
  combination of 2-way branch orders.
* :func:`exhaustive_edit_distance` searches directly over trees, applying one
  grammar-valid edit at a time (best-first, admissible bound).
* :func:`ged_sepx_path` finds an exact minimum node-edit mapping between two
  small graphs by branch and bound.
"""
from __future__ import annotations

import heapq
import itertools
import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .cswx import cswx_distance
from .grammar import Kind, Node, all_branch_permutations, branch2_count
from .scoring import ScoringMatrix, indel_cost, preset, substitution_cost
from .serialise import Role, SerialisedSequence, Token, serialise


class OracleRefusal(ValueError):
    """Input is beyond the size the exhaustive method accepts."""


class OracleTimeout(RuntimeError):
    pass


# -- brute-force branch permutations -----------------------------------------

def brute_force_permutation_distance(t1: Node, t2: Node, m: ScoringMatrix | None = None,
                                     max_branches: int = 10) -> float:
    b = branch2_count(t1) + branch2_count(t2)
    if b > max_branches:
        raise OracleRefusal(f"{b} two-way branches exceed the limit of {max_branches}")
    m = m or preset("sm0")
    perms2 = list(all_branch_permutations(t2))
    return min(cswx_distance(p1, p2, m) for p1 in all_branch_permutations(t1) for p2 in perms2)


def brute_force_cell_visits(s1: SerialisedSequence, s2: SerialisedSequence, b: int) -> int:
    return (1 << b) * len(s1) * len(s2)


# -- exhaustive search over edit scripts --------------------------------------
#
# A forest is a tuple of items; an item is ("c", token) for a computation or
# ("e", token, bodies) for an enclosure whose bodies are forests (two for a
# 2-way branch). Every body is kept non-empty, so each state is a valid tree.

def _forest(seq: SerialisedSequence):
    pos = [1]

    def body():
        items = []
        while pos[0] < len(seq) and not seq[pos[0]].is_separator:
            tok = seq[pos[0]]
            pos[0] += 1
            if tok.kind is Kind.COMPUTATION:
                items.append(("c", tok.identity_key))
                continue
            bodies = []
            while True:
                bodies.append(body())
                sep = seq[pos[0]]
                pos[0] += 1
                if sep.role is Role.CLOSER:
                    break
            items.append(("e", tok.identity_key, tuple(bodies)))
        return tuple(items)

    return body()


def _node_count(forest) -> int:
    return sum(1 + sum(_node_count(b) for b in item[2]) if item[0] == "e" else 1 for item in forest)


def _idents(forest, out: Counter) -> Counter:
    for item in forest:
        out[item[1]] += 1
        if item[0] == "e":
            for b in item[2]:
                _idents(b, out)
    return out


class _Costs:
    def __init__(self, s1: SerialisedSequence, s2: SerialisedSequence, m: ScoringMatrix):
        self.tokens = {t.identity_key: t for t in [*s1.tokens[1:], *s2.tokens[1:]] if not t.is_separator}
        self.m = m
        self.sub_cache: dict = {}
        self.types = {k: t.node_type for k, t in self.tokens.items()}
        self.indel = {k: indel_cost(t, m) for k, t in self.tokens.items()}
        self.delta: dict[str, float] = {}
        self.sigma: dict[str, float] = {}
        for k, t in self.tokens.items():
            ty = self.types[k]
            self.delta[ty] = min(self.delta.get(ty, math.inf), self.indel[k])
        for a, b in itertools.product(self.tokens, repeat=2):
            c = self.sub(a, b)
            if 0 < c < math.inf:
                ty = self.types[a]
                self.sigma[ty] = min(self.sigma.get(ty, math.inf), c)

    def sub(self, a, b) -> float:
        key = (a, b)
        if key not in self.sub_cache:
            self.sub_cache[key] = substitution_cost(self.tokens[a], self.tokens[b], self.m)
        return self.sub_cache[key]

    def bound(self, have: Counter, want: Counter) -> float:
        """Admissible remaining cost from identity multisets."""
        a: dict[str, int] = {}
        b: dict[str, int] = {}
        for k in have.keys() | want.keys():
            ty = self.types[k]
            x, y = have.get(k, 0), want.get(k, 0)
            shared = min(x, y)
            a[ty] = a.get(ty, 0) + x - shared
            b[ty] = b.get(ty, 0) + y - shared
        total = 0.0
        for ty in a:
            d = self.delta[ty]
            s = min(self.sigma.get(ty, math.inf), 2 * d)
            total += min(a[ty], b[ty]) * s + abs(a[ty] - b[ty]) * d
        return total


def _successors(body, costs: _Costs, target_idents, is_top: bool):
    """Yield (new_body, cost) for every single valid edit inside ``body``."""
    n = len(body)
    comps = [k for k in target_idents if costs.types[k] == "comp"]
    encls = [k for k in target_idents if costs.types[k] != "comp"]
    for p in range(n + 1):
        for k in comps:
            yield body[:p] + (("c", k),) + body[p:], costs.indel[k]
    for a in range(n):
        for b in range(a + 1, n + 1):
            for k in encls:
                if costs.types[k] == "branch2":
                    for s in range(a + 1, b):
                        item = ("e", k, (body[a:s], body[s:b]))
                        yield body[:a] + (item,) + body[b:], costs.indel[k]
                else:
                    yield body[:a] + (("e", k, (body[a:b],)),) + body[b:], costs.indel[k]
    for p, item in enumerate(body):
        head, tail = body[:p], body[p + 1:]
        if item[0] == "c":
            if n > 1:
                yield head + tail, costs.indel[item[1]]
            for k in comps:
                if k != item[1]:
                    yield head + (("c", k),) + tail, costs.sub(item[1], k)
            continue
        _, ident, bodies = item
        spliced = tuple(x for bd in bodies for x in bd)
        yield head + spliced + tail, costs.indel[ident]
        for k in encls:
            if k != ident:
                c = costs.sub(ident, k)
                if c < math.inf:
                    yield head + (("e", k, bodies),) + tail, c
        for q, bd in enumerate(bodies):
            for new_bd, c in _successors(bd, costs, target_idents, False):
                nb = bodies[:q] + (new_bd,) + bodies[q + 1:]
                yield head + (("e", ident, nb),) + tail, c


def exhaustive_edit_distance(s1: SerialisedSequence, s2: SerialisedSequence,
                             m: ScoringMatrix | None = None, max_tokens: int = 14,
                             timeout: float = 120.0) -> float:
    """Cheapest sequence of single grammar-valid edits turning ``s1`` into ``s2``.

    Substitutions only target identities that occur in ``s2``; with costs
    obeying the triangle inequality a detour through another identity is never
    cheaper. Intermediate trees are capped at |s1| + |s2| nodes.
    """
    total = len(s1) + len(s2)
    if total > max_tokens:
        raise OracleRefusal(f"{total} tokens exceed the limit of {max_tokens}")
    m = m or preset("sm0")
    start, goal = _forest(s1), _forest(s2)
    costs = _Costs(s1, s2, m)
    want = _idents(goal, Counter())
    target_idents = list(want)
    cap = _node_count(start) + _node_count(goal)
    g = {start: 0.0}
    h = {start: costs.bound(_idents(start, Counter()), want)}
    tie = itertools.count()
    heap = [(h[start], next(tie), start)]
    deadline = time.monotonic() + timeout
    while heap:
        f, _, state = heapq.heappop(heap)
        gs = g[state]
        if f > gs + h[state] + 1e-12:
            continue  # stale entry
        if state == goal:
            return gs
        if time.monotonic() > deadline:
            raise OracleTimeout("exhaustive search timed out")
        for nxt, c in _successors(state, costs, target_idents, True):
            ng = gs + c
            if ng < g.get(nxt, math.inf) - 1e-12:
                if nxt not in h:
                    if _node_count(nxt) > cap:
                        continue
                    h[nxt] = costs.bound(_idents(nxt, Counter()), want)
                g[nxt] = ng
                heapq.heappush(heap, (ng + h[nxt], next(tie), nxt))
    return math.inf


# -- exact graph edit distance on small graphs --------------------------------

MAX_GRAPH_NODES = 14


@dataclass
class SmallGraph:
    """Labelled DAG derived from a tree.

    Nodes are the non-separator tokens (computations and enclosure openers).
    ``contain`` edges run from an enclosure to the first item of each of its
    bodies, labelled by body index; ``next`` edges chain siblings in order.
    """

    labels: list[Token]
    contain: list[tuple[int, int, int]] = field(default_factory=list)
    next: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.labels) > MAX_GRAPH_NODES:
            raise OracleRefusal(f"graph has {len(self.labels)} nodes; the oracle accepts at most {MAX_GRAPH_NODES}")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(a, b) for a, b, _ in self.contain] + list(self.next)

    def bodies(self, u: int) -> list[list[int]]:
        nxt = dict(self.next)
        heads = sorted((h, b) for a, b, h in self.contain if a == u)
        out = []
        for _, b in heads:
            chain = [b]
            while chain[-1] in nxt:
                chain.append(nxt[chain[-1]])
            out.append(chain)
        return out

    def roots(self) -> list[int]:
        inner = {b for _, b, _ in self.contain} | {b for _, b in self.next}
        nxt = dict(self.next)
        first = [u for u in range(self.n) if u not in inner]
        chain = first[:1]
        while chain and chain[-1] in nxt:
            chain.append(nxt[chain[-1]])
        return chain

    def is_acyclic(self) -> bool:
        indeg = [0] * self.n
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for a, b in self.edges:
            adj[a].append(b)
            indeg[b] += 1
        queue = [u for u in range(self.n) if indeg[u] == 0]
        seen = 0
        while queue:
            u = queue.pop()
            seen += 1
            for w in adj[u]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
        return seen == self.n

    def preorder(self, flipped: frozenset = frozenset()):
        """(order, parent, half) with the bodies of ``flipped`` 2-way branches
        visited in swapped order. ``half`` is the rank of the body under its
        parent in visiting order."""
        order: list[int] = []
        parent = [-1] * self.n
        half = [-1] * self.n

        def visit(items, par, h):
            for u in items:
                order.append(u)
                parent[u], half[u] = par, h
                bodies = self.bodies(u)
                idx = list(range(len(bodies)))
                if u in flipped:
                    idx.reverse()
                for rank, q in enumerate(idx):
                    visit(bodies[q], u, rank)

        visit(self.roots(), -1, -1)
        return order, parent, half


def tree_graph(tree: Node) -> SmallGraph:
    seq = serialise(tree)
    labels: list[Token] = []
    contain: list[tuple[int, int, int]] = []
    nxt: list[tuple[int, int]] = []
    pos = [1]

    def body(owner: int, h: int) -> None:
        prev = -1
        while pos[0] < len(seq) and not seq[pos[0]].is_separator:
            tok = seq[pos[0]]
            pos[0] += 1
            u = len(labels)
            labels.append(tok)
            if prev < 0 and owner >= 0:
                contain.append((owner, u, h))
            elif prev >= 0:
                nxt.append((prev, u))
            prev = u
            if tok.is_opener:
                q = 0
                while True:
                    body(u, q)
                    sep = seq[pos[0]]
                    pos[0] += 1
                    q += 1
                    if sep.role is Role.CLOSER:
                        break

    body(-1, -1)
    return SmallGraph(labels, contain, nxt)


@dataclass(frozen=True)
class GraphEditOp:
    kind: str  # "substitute" | "delete" | "insert"
    node1: int | None
    node2: int | None
    cost: float


@dataclass
class GraphEditPath:
    operations: list[GraphEditOp]
    total_cost: float
    mapping: dict[int, int]
    flipped1: frozenset
    flipped2: frozenset


def _ged_one(g1: SmallGraph, g2: SmallGraph, f1, f2, m: ScoringMatrix, best: float, deadline: float):
    """Branch and bound over node maps under one fixed pair of branch orders.

    Nodes of ``g1`` are taken in preorder; each is either deleted or mapped
    to any unused, type-compatible node of ``g2``. A partial map is kept only
    when every mapped pair agrees on preorder rank, ancestry and the half of
    each common 2-way ancestor, which makes the node script realisable.
    Unused ``g2`` nodes are inserted at the end.
    """
    o1, par1, half1 = g1.preorder(f1)
    o2, par2, half2 = g2.preorder(f2)
    n1, n2 = len(o1), len(o2)

    def ancestry(par, half, u):
        out = {}
        while par[u] >= 0:
            out[par[u]] = half[u]
            u = par[u]
        return out

    anc1 = {u: ancestry(par1, half1, u) for u in o1}
    anc2 = {v: ancestry(par2, half2, v) for v in o2}
    del1 = [indel_cost(g1.labels[u], m) for u in o1]
    ins2 = [indel_cost(g2.labels[v], m) for v in o2]
    sub = np.array([[substitution_cost(g1.labels[u], g2.labels[v], m) for v in o2] for u in o1])
    types1 = [g1.labels[u].node_type for u in o1]
    types2 = [g2.labels[v].node_type for v in o2]
    min_del = {t: min(c for c, tt in zip(del1, types1) if tt == t) for t in set(types1)}
    min_ins = {t: min(c for c, tt in zip(ins2, types2) if tt == t) for t in set(types2)}
    cand = [sorted((q for q in range(n2) if math.isfinite(sub[k, q])), key=lambda q: sub[k, q])
            for k in range(n1)]

    def lower(k: int, used: list[bool]) -> float:
        c1 = Counter(types1[k:])
        c2 = Counter(t for t, u in zip(types2, used) if not u)
        lb = 0.0
        for t in set(c1) | set(c2):
            d = c1[t] - c2[t]
            lb += d * min_del[t] if d > 0 else -d * min_ins[t] if d < 0 else 0.0
        return lb

    def admissible(k: int, q: int, mapping) -> bool:
        u, v = o1[k], o2[q]
        for a, b in mapping:
            ua, vb = o1[a], o2[b]
            if (a < k) != (b < q):
                return False
            ha, hb = anc1[u].get(ua), anc2[v].get(vb)
            if (ha is None) != (hb is None) or ha != hb:
                return False
        return True

    state = {"best": best, "map": None}
    mapping: list[tuple[int, int]] = []
    used = [False] * n2

    def dfs(k: int, cost: float) -> None:
        if time.monotonic() > deadline:
            raise OracleTimeout("graph edit search timed out")
        if k == n1:
            total = cost + sum(c for c, u in zip(ins2, used) if not u)
            if total < state["best"] - 1e-12:
                state["best"] = total
                state["map"] = list(mapping)
            return
        if cost + lower(k, used) >= state["best"] - 1e-12:
            return
        for q in cand[k]:
            if used[q] or not admissible(k, q, mapping):
                continue
            used[q] = True
            mapping.append((k, q))
            dfs(k + 1, cost + sub[k, q])
            mapping.pop()
            used[q] = False
        dfs(k + 1, cost + del1[k])

    dfs(0, 0.0)
    if state["map"] is None:
        return None
    return state["best"], [(o1[a], o2[b]) for a, b in state["map"]]



def _flip_sets(g: SmallGraph):
    b2 = [u for u in range(g.n) if g.labels[u].node_type == "branch2"]
    for r in range(len(b2) + 1):
        for combo in itertools.combinations(b2, r):
            yield frozenset(combo)


def ged_sepx_path(g1: SmallGraph, g2: SmallGraph, m: ScoringMatrix | None = None,
                  max_nodes: int = 12, timeout: float = 120.0) -> GraphEditPath:
    """Exact minimum node-edit script, quotiented by 2-way branch order.

    A node mapping is admissible when it keeps sibling order and ancestry
    (children of a deleted node are spliced into its parent) and sends a node
    in one half of a matched 2-way branch into the same half of its image.
    Edge edits are implied by node edits and cost nothing.
    """
    if max(g1.n, g2.n) > max_nodes:
        raise OracleRefusal(f"graphs with {max(g1.n, g2.n)} nodes exceed the limit of {max_nodes}")
    m = m or preset("sm0")
    deadline = time.monotonic() + timeout
    best = math.inf
    found = None
    for f1 in _flip_sets(g1):
        for f2 in _flip_sets(g2):
            res = _ged_one(g1, g2, f1, f2, m, best, deadline)
            if res is not None and res[0] < best - 1e-12:
                best = res[0]
                found = (res[1], f1, f2)
    if found is None:
        raise OracleRefusal("no admissible mapping")
    pairs, f1, f2 = found
    mapping = dict(pairs)
    ops = []
    for u, v in pairs:
        c = substitution_cost(g1.labels[u], g2.labels[v], m)
        if c > 0:
            ops.append(GraphEditOp("substitute", u, v, c))
    for u in range(g1.n):
        if u not in mapping:
            ops.append(GraphEditOp("delete", u, None, indel_cost(g1.labels[u], m)))
    image = set(mapping.values())
    for v in range(g2.n):
        if v not in image:
            ops.append(GraphEditOp("insert", None, v, indel_cost(g2.labels[v], m)))
    return GraphEditPath(ops, best, mapping, f1, f2)


@dataclass
class GraphOffspring:
    labels: dict  # node key -> Token
    edges: set


def sepx_crossover(g1: SmallGraph, g2: SmallGraph, rng: np.random.Generator,
                   m: ScoringMatrix | None = None) -> tuple[GraphOffspring, GraphEditPath]:
    """Apply a uniform random ceil(k/2)-subset of the k minimal-path operations
    to ``g1``. Nodes of ``g1`` are keyed ``(1, u)`` and inserted nodes
    ``(2, v)``; the edge set is the union of both parents' edges among the
    nodes that survive."""
    path = ged_sepx_path(g1, g2, m)
    k = len(path.operations)
    take = math.ceil(k / 2)
    idx = rng.choice(k, size=take, replace=False) if take else []
    chosen = [path.operations[int(t)] for t in idx]
    labels = {(1, u): g1.labels[u] for u in range(g1.n)}
    for op in chosen:
        if op.kind == "substitute":
            labels[(1, op.node1)] = g2.labels[op.node2]
        elif op.kind == "delete":
            del labels[(1, op.node1)]
        else:
            labels[(2, op.node2)] = g2.labels[op.node2]
    key2 = {v: (1, u) for u, v in path.mapping.items()}
    key2.update({v: (2, v) for v in range(g2.n) if (2, v) in labels})
    edges = {((1, a), (1, b)) for a, b in g1.edges if (1, a) in labels and (1, b) in labels}
    for a, b in g2.edges:
        ka, kb = key2.get(a), key2.get(b)
        if ka in labels and kb in labels:
            edges.add((ka, kb))
    return GraphOffspring(labels, edges), path


# -- equivalence suites ---------------------------------------------------------

ORACLE_SUITES = ("dp", "perm", "ged")


def _branchy_config(max_depth: int):
    from .grammar import GrammarConfig
    cfg = GrammarConfig(max_depth=max_depth)
    cfg.weights["module"] = {"comp": 0.30, "seq": 0.25, "route": 0.10,
                             "branch2": 0.25, "branch4": 0.05, "branch8": 0.05}
    return cfg


def suite_pairs(suite: str, n: int, rng: np.random.Generator) -> list[tuple[Node, Node]]:
    """Random tree pairs inside each suite's size limits.

    ``dp``: at most 14 tokens in total. ``perm``: one to four 2-way branches
    across the pair. ``ged``: at most 12 graph nodes per tree.
    """
    from .grammar import sample_tree
    out = []
    if suite == "dp":
        cfg = _branchy_config(3)
        while len(out) < n:
            a, b = sample_tree(cfg, rng), sample_tree(cfg, rng)
            if len(serialise(a)) + len(serialise(b)) <= 14:
                out.append((a, b))
    elif suite == "perm":
        cfg = _branchy_config(4)
        while len(out) < n:
            a, b = sample_tree(cfg, rng), sample_tree(cfg, rng)
            if 1 <= branch2_count(a) + branch2_count(b) <= 4 and len(serialise(a)) + len(serialise(b)) <= 60:
                out.append((a, b))
    elif suite == "ged":
        cfg = _branchy_config(4)
        while len(out) < n:
            a, b = sample_tree(cfg, rng), sample_tree(cfg, rng)
            na = sum(1 for t in serialise(a).tokens[1:] if not t.is_separator)
            nb = sum(1 for t in serialise(b).tokens[1:] if not t.is_separator)
            if na <= 12 and nb <= 12:
                out.append((a, b))
    else:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(ORACLE_SUITES)}")
    return out


@dataclass
class SuiteReport:
    suite: str
    passed: int = 0
    failed: int = 0
    max_deviation: float = 0.0
    failures: list = field(default_factory=list)

    def line(self) -> str:
        return (f"suite={self.suite} pass={self.passed} fail={self.failed} "
                f"max_deviation={self.max_deviation:.3g}")


def run_suite(suite: str, pairs: list[tuple[Node, Node]], m: ScoringMatrix | None = None) -> SuiteReport:
    """Compare each aligner with its oracle; equality must be exact."""
    from .rcswx import rcswx_distance
    m = m or preset("sm0")
    rep = SuiteReport(suite)
    for a, b in pairs:
        if suite == "dp":
            fast = cswx_distance(a, b, m)
            slow = exhaustive_edit_distance(serialise(a), serialise(b), m)
        elif suite == "perm":
            fast = rcswx_distance(a, b, m)
            slow = brute_force_permutation_distance(a, b, m)
        else:
            fast = rcswx_distance(a, b, m)
            slow = ged_sepx_path(tree_graph(a), tree_graph(b), m).total_cost
        dev = abs(fast - slow)
        rep.max_deviation = max(rep.max_deviation, dev)
        if dev == 0:
            rep.passed += 1
        else:
            rep.failed += 1
            rep.failures.append((a, b, fast, slow))
    return rep
