"""Offspring generation from edit paths, plus the subtree-crossover baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import skewnorm

from .cswx import (EditOperation, EditPath, align, apply_operations, selection_violations,
                   trace_back)
from .grammar import Kind, Node, iter_nodes, replace_at, validate
from .rcswx import align_recursive
from .scoring import ScoringMatrix, preset
from .serialise import SerialisationError, deserialise, serialise

EXACT_LIMIT = 16
SAMPLED_SUBSETS = 4096


class OffspringError(RuntimeError):
    """A selection produced an invalid tree; indicates a bug, not bad input."""


class CrossoverFailure(ValueError):
    pass


@dataclass(frozen=True)
class OperationSelection:
    chosen: frozenset[int]
    realised_cost: float
    skewness: float
    total_cost: float
    candidates: int  # number of valid subsets the draw was made from


def _rule_masks(ops: list[EditOperation]):
    """Flattened (owner bit, disabler mask, enabler mask) triples."""
    out = []
    for op in ops:
        for r in op.rules:
            dm = sum(1 << d for d in r.disablers)
            em = sum(1 << e for e in r.enablers)
            out.append((op.id, dm, em))
    return out


def valid_masks(ops: list[EditOperation], masks: np.ndarray) -> np.ndarray:
    """Vectorised rule check over integer-encoded subsets (<= 62 ops)."""
    ok = np.ones(masks.shape, dtype=bool)
    for owner, dm, em in _rule_masks(ops):
        chosen = (masks >> owner) & 1 == 1
        all_d = (masks & dm) == dm
        no_e = (masks & em) == 0
        ok &= ~(chosen & all_d & no_e)
    return ok


def subset_density(costs: np.ndarray, total: float, skewness: float) -> np.ndarray:
    """Skew-normal density centred mid-path, truncated to ``[0, total]``."""
    dens = skewnorm.pdf(costs, skewness, loc=total / 2.0, scale=total / 4.0)
    dens = np.where((costs >= -1e-12) & (costs <= total + 1e-12), dens, 0.0)
    return dens


def _repair(ops: list[EditOperation], chosen: set[int]) -> set[int]:
    while True:
        bad = selection_violations(ops, chosen)
        if not bad:
            return chosen
        chosen.discard(bad[0][0])


def select_operations(path: EditPath, skewness: float, rng: np.random.Generator) -> OperationSelection:
    ops = path.operations
    k = len(ops)
    values = np.array([op.value for op in ops], dtype=float)
    total = float(values.sum())
    if k == 0 or total <= 0:
        return OperationSelection(frozenset(), 0.0, skewness, total, 1)
    if k <= EXACT_LIMIT:
        masks = np.arange(1 << k, dtype=np.int64)
        bits = ((masks[:, None] >> np.arange(k)) & 1).astype(float)
        masks = masks[valid_masks(ops, masks)]
        costs = bits[masks] @ values
        subsets = masks
    else:
        seen: dict[frozenset, None] = {}
        for _ in range(SAMPLED_SUBSETS):
            pick = set(np.flatnonzero(rng.random(k) < 0.5).tolist())
            seen[frozenset(_repair(ops, pick))] = None
        subsets = list(seen)
        costs = np.array([values[list(s)].sum() if s else 0.0 for s in subsets])
    dens = subset_density(costs, total, skewness)
    if dens.sum() <= 0:
        dens = np.ones_like(dens)
    pick = int(rng.choice(len(subsets), p=dens / dens.sum()))
    chosen = subsets[pick]
    if k <= EXACT_LIMIT:
        chosen = frozenset(int(b) for b in range(k) if (int(chosen) >> b) & 1)
    return OperationSelection(chosen, float(costs[pick]), skewness, total, len(subsets))


def generate_offspring(path: EditPath, chosen) -> Node:
    chosen = frozenset(chosen)
    bad = selection_violations(path.operations, chosen)
    if bad:
        raise OffspringError(f"selection breaks dependency rules of operations {sorted({b[0] for b in bad})}")
    try:
        tree = deserialise(apply_operations(path, chosen))
    except SerialisationError as exc:
        raise OffspringError(f"offspring tokens do not form a tree: {exc}") from exc
    problems = validate(tree)
    if problems:
        raise OffspringError("offspring fails validation: " + "; ".join(map(str, problems)))
    return tree


@dataclass
class CrossoverResult:
    child: Node
    path: EditPath
    selection: OperationSelection


def edit_path(t1: Node, t2: Node, m: ScoringMatrix | None = None, recursive: bool = True) -> EditPath:
    s1, s2 = serialise(t1), serialise(t2)
    matrix = align_recursive(s1, s2, m) if recursive else align(s1, s2, m or preset("sm0"))
    return trace_back(matrix)


def path_crossover(t1: Node, t2: Node, m: ScoringMatrix | None, skewness: float,
                   rng: np.random.Generator, recursive: bool) -> CrossoverResult:
    path = edit_path(t1, t2, m, recursive)
    sel = select_operations(path, skewness, rng)
    return CrossoverResult(generate_offspring(path, sel.chosen), path, sel)


def cswx_crossover(t1: Node, t2: Node, m: ScoringMatrix | None = None, skewness: float = 0.0,
                   rng: np.random.Generator | None = None) -> Node:
    rng = rng if rng is not None else np.random.default_rng(0)
    return path_crossover(t1, t2, m, skewness, rng, recursive=False).child


def rcswx_crossover(t1: Node, t2: Node, m: ScoringMatrix | None = None, skewness: float = 0.0,
                    rng: np.random.Generator | None = None) -> Node:
    rng = rng if rng is not None else np.random.default_rng(0)
    return path_crossover(t1, t2, m, skewness, rng, recursive=True).child


# -- subtree crossover ----------------------------------------------------------

def node_kind(node: Node) -> str:
    if node.kind is Kind.BRANCHING:
        return f"branch{node.factor}"
    return node.kind.value


def crossover_kinds(tree: Node) -> dict[str, list[int]]:
    """Preorder positions per non-terminal kind eligible as a crossover point.

    Computation modules are only eligible in trees that have no composite
    module at all; otherwise every tree would share them and the crossover
    could never fail.
    """
    sites: dict[str, list[int]] = {}
    for pos, node in enumerate(iter_nodes(tree)):
        sites.setdefault(node_kind(node), []).append(pos)
    if len(sites) > 1 or "comp" not in sites:
        sites.pop("comp", None)
    return sites


def stx_crossover(t1: Node, t2: Node, rng: np.random.Generator) -> Node:
    k1, k2 = crossover_kinds(t1), crossover_kinds(t2)
    common = sorted(set(k1) & set(k2))
    if not common:
        raise CrossoverFailure("no common non-terminals")
    kind = common[int(rng.integers(len(common)))]
    pos1 = k1[kind][int(rng.integers(len(k1[kind])))]
    pos2 = k2[kind][int(rng.integers(len(k2[kind])))]
    donor = list(iter_nodes(t2))[pos2]
    return replace_at(t1, pos1, donor)
