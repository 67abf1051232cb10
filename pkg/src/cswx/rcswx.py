"""Branch-order invariant alignment.

Both sequences are expanded into DAGs holding every ordering of every 2-way
branch (see :func:`cswx.cswx.permutation_dag`). Orderings share all cells
outside the swapped spans and merge at each span's closer, where the
cheaper variant wins per state; a cell whose tokens sit inside ``d`` open
2-way spans across both sequences is therefore computed ``2**d`` times
rather than once per global permutation.
"""
from __future__ import annotations

import math

from .cswx import (AlignmentMatrix, EditPath, UnalignableError, align_dags, permutation_dag,
                   trace_back)
from .grammar import Node
from .scoring import ScoringMatrix, preset
from .serialise import SerialisedSequence, serialise


def align_recursive(s1: SerialisedSequence, s2: SerialisedSequence,
                    m: ScoringMatrix | None = None) -> AlignmentMatrix:
    m = m or preset("sm0")
    return align_dags(s1, s2, m, permutation_dag(s1), permutation_dag(s2), recursive=True)


def rcswx_distance(t1: Node, t2: Node, m: ScoringMatrix | None = None) -> float:
    d = align_recursive(serialise(t1), serialise(t2), m).distance
    if not math.isfinite(d):
        raise UnalignableError("no finite-cost grammar-consistent alignment; review the scoring matrix")
    return d


def rcswx_trace_back(matrix: AlignmentMatrix) -> EditPath:
    """Edit path through the winning branch orders.

    Steps inside a swapped span visit its second half first; each operation
    carries the swap sets active where it was traced.
    """
    return trace_back(matrix)


def span_count_bound(s1: SerialisedSequence, s2: SerialisedSequence) -> int:
    """Sum over token pairs of 2**(open 2-way spans on both sides)."""
    d1 = permutation_dag(s1).size
    d2 = permutation_dag(s2).size
    return d1 * d2
