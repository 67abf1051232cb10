"""Substitution and indel costs for token alignment."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .grammar import GrammarConfig, Kind
from .serialise import SerialisedSequence, Token, Variant

INF = math.inf

PRESETS = ("sm0", "sm1", "sm2", "sm3")


@dataclass(frozen=True)
class ScoringMatrix:
    """Cost configuration.

    ``c1`` is charged when two tokens of one type use the same operations with
    different hyperparameters, ``c2`` when the operations differ. With
    ``branching_weighted`` set, branching openers cost their branch count to
    insert or delete and ``|f1 - f2|`` to substitute across factors.
    ``substitution_fn`` optionally overrides the same-type cost.
    """

    name: str = "sm0"
    c0: float = 0.0
    c1: float = 0.25
    c2: float = 0.5
    indel_default: float = 1.0
    separator_cost: float = 0.0
    branching_weighted: bool = False
    substitution_fn: Callable[[Token, Token], float] | None = None

    def __post_init__(self):
        if not (0 <= self.c0 <= self.c1 <= self.c2):
            raise ValueError(f"need 0 <= c0 <= c1 <= c2, got {self.c0}, {self.c1}, {self.c2}")
        if self.c0 != 0:
            raise ValueError("identical tokens must cost 0")
        if not (self.indel_default > 0 and math.isfinite(self.indel_default)):
            raise ValueError("indel_default must be positive and finite")
        if not math.isfinite(self.c2):
            raise ValueError("same-type substitution costs must be finite")


def preset(name: str) -> ScoringMatrix:
    key = name.lower()
    if key == "sm0":
        return ScoringMatrix("sm0")
    if key in ("sm1", "sm2"):
        # both reduce to identical -> 0, otherwise 0.5 once hyperparameters are
        # folded into the token identity
        return ScoringMatrix(key, c1=0.5, c2=0.5)
    if key == "sm3":
        return ScoringMatrix("sm3", branching_weighted=True)
    raise ValueError(f"unknown scoring preset {name!r}; choose from {', '.join(PRESETS)}")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_keyfile(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` comments and blank lines are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value.strip().strip('"').strip("'")
    return out


def custom_from_text(text: str) -> ScoringMatrix:
    kv = parse_keyfile(text)
    allowed = {"c1", "c2", "indel_default", "branching_weighted"}
    unknown = set(kv) - allowed
    if unknown:
        raise ValueError(f"unknown scoring keys: {', '.join(sorted(unknown))}")
    return ScoringMatrix(
        "custom",
        c1=float(kv.get("c1", 0.25)),
        c2=float(kv.get("c2", 0.5)),
        indel_default=float(kv.get("indel_default", 1.0)),
        branching_weighted=_parse_bool(kv.get("branching_weighted", "false")),
    )


def load_scoring(spec: str) -> ScoringMatrix:
    """A preset name, or a path to a key=value file for a custom matrix."""
    if spec.lower() in PRESETS:
        return preset(spec)
    path = Path(spec)
    if not path.is_file():
        raise ValueError(f"unknown scoring preset or missing file {spec!r}")
    return custom_from_text(path.read_text())


def substitution_cost(a: Token, b: Token, m: ScoringMatrix) -> float:
    if a.node_type != b.node_type:
        return INF
    if a.variant is Variant.START:
        return 0.0
    if a.variant is Variant.SEPARATOR:
        return 0.0 if a.role is b.role else INF
    if a.terminals == b.terminals and a.factor == b.factor:
        return 0.0
    if m.branching_weighted and a.kind is Kind.BRANCHING and a.factor != b.factor:
        return float(abs(a.factor - b.factor))
    if m.substitution_fn is not None:
        return float(m.substitution_fn(a, b))
    names_a = tuple(t.name for t in a.terminals)
    names_b = tuple(t.name for t in b.terminals)
    return m.c1 if names_a == names_b else m.c2


def indel_cost(t: Token, m: ScoringMatrix) -> float:
    if t.variant is Variant.SEPARATOR:
        return m.separator_cost
    if t.variant is Variant.START:
        return INF
    if m.branching_weighted and t.kind is Kind.BRANCHING:
        return float(t.factor)
    return m.indel_default


# identities determine substitution costs, so they are memoised per matrix
_SUB_CACHE: dict = {}
_SUB_CACHE_LIMIT = 64  # scoring matrices held


def cost_tables(s1: SerialisedSequence, s2: SerialisedSequence, m: ScoringMatrix):
    """Dense substitution matrix (inf where forbidden) and indel vectors."""
    uniq1, first1, idx1 = np.unique(s1.identity_keys, return_index=True, return_inverse=True)
    uniq2, first2, idx2 = np.unique(s2.identity_keys, return_index=True, return_inverse=True)
    small = np.empty((len(uniq1), len(uniq2)))
    if len(_SUB_CACHE) > _SUB_CACHE_LIMIT:
        _SUB_CACHE.clear()
    cache = _SUB_CACHE.setdefault(m, {})
    for p, (ka, fa) in enumerate(zip(uniq1.tolist(), first1.tolist())):
        for q, (kb, fb) in enumerate(zip(uniq2.tolist(), first2.tolist())):
            c = cache.get((ka, kb))
            if c is None:
                c = cache[ka, kb] = substitution_cost(s1[fa], s2[fb], m)
            small[p, q] = c
    sub = small[np.ix_(idx1.ravel(), idx2.ravel())]
    ind1 = np.array([indel_cost(t, m) for t in s1])
    ind2 = np.array([indel_cost(t, m) for t in s2])
    return sub, ind1, ind2


def probabilistic_substitution(config: GrammarConfig) -> Callable[[Token, Token], float]:
    """Substitution hook weighting each differing choice by how unlikely it is.

    Every terminal decision (operation name, then each hyperparameter) that
    differs between the tokens contributes ``1 - p`` where ``p`` is the
    sampling probability of the first token's choice. Pass the result as
    ``ScoringMatrix(substitution_fn=...)``; costs are not clipped to c1/c2.
    """

    def prob(term, level: int) -> float:
        if level == 0:
            return config.weights.get(term.category.value, {}).get(term.name, 0.0)
        slots = config.registry[term.category][term.name]
        slot = slots[level - 1]
        if slot == "branches":
            return 1.0
        return 1.0 / len(config.values[slot])

    def fn(a: Token, b: Token) -> float:
        cost = 0.0
        for ta, tb in zip(a.terminals, b.terminals):
            choices_a = (ta.name, *ta.params)
            choices_b = (tb.name, *tb.params)
            for level, (x, y) in enumerate(zip(choices_a, choices_b)):
                if x != y:
                    cost += 1.0 - prob(ta, level)
                    if level == 0:
                        break
        return cost

    return fn
