"""Flat token sequences for derivation trees.

Sequential nodes are dropped and the first/last terminals of routing and
branching nodes are folded into a single opener token. Each routing or
branching body is followed by a separator token: a divider between the two
halves of a 2-way branch, and a closer after the last body.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .grammar import GrammarError, Kind, Node, Terminal, chain, renumber


class Variant(enum.Enum):
    START = "start"
    NODE = "node"
    SEPARATOR = "sep"


class Role(enum.Enum):
    DIVIDER = "divider"
    CLOSER = "closer"


_IDENTITY_KEYS: dict[tuple, int] = {}

# integer codes shared with the alignment kernels
START, COMP, OPENER, DIVIDER, CLOSER = range(5)


class SerialisationError(GrammarError):
    pass


@dataclass(frozen=True)
class Token:
    variant: Variant
    kind: Kind | None = None
    factor: int = 0
    terminals: tuple[Terminal, ...] = ()
    node_id: int = -1
    opener: int = -1
    role: Role | None = None

    @property
    def is_separator(self) -> bool:
        return self.variant is Variant.SEPARATOR

    @property
    def is_opener(self) -> bool:
        return self.variant is Variant.NODE and self.kind is not Kind.COMPUTATION

    @property
    def code(self) -> int:
        if self.variant is Variant.START:
            return START
        if self.variant is Variant.SEPARATOR:
            return DIVIDER if self.role is Role.DIVIDER else CLOSER
        return COMP if self.kind is Kind.COMPUTATION else OPENER

    @property
    def node_type(self) -> str:
        """Substitution class: tokens of different types never substitute."""
        if self.variant is Variant.START:
            return "start"
        if self.variant is Variant.SEPARATOR:
            return "sep"
        if self.kind is Kind.BRANCHING:
            return "branch2" if self.factor == 2 else "branchN"
        return self.kind.value

    @cached_property
    def identity(self) -> tuple:
        """Everything a substitution compares; excludes position and node id."""
        return (self.variant, self.kind, self.factor, self.terminals, self.role)

    @cached_property
    def identity_key(self) -> int:
        """Small integer standing for :attr:`identity`, stable within a process."""
        return _IDENTITY_KEYS.setdefault(self.identity, len(_IDENTITY_KEYS))

    @property
    def label(self) -> str:
        if self.variant is Variant.START:
            return "start"
        if self.variant is Variant.SEPARATOR:
            return f"{self.role.value}@{self.opener}"
        head = self.kind.value if self.kind is not Kind.BRANCHING else f"branch{self.factor}"
        return head + ":" + "/".join(t.render() for t in self.terminals)


@dataclass(frozen=True)
class SerialisedSequence:
    tokens: tuple[Token, ...]
    source_tree_id: str = ""

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, k):
        return self.tokens[k]

    def __iter__(self):
        return iter(self.tokens)

    @cached_property
    def codes(self) -> np.ndarray:
        return np.array([t.code for t in self.tokens], dtype=np.int64)

    @cached_property
    def levels(self) -> np.ndarray:
        """Stack level of each token's enclosure.

        For an opener this is the number of enclosures already open before
        it; a separator shares its opener's level. Other tokens get -1.
        """
        out = np.full(len(self.tokens), -1, dtype=np.int64)
        stack: list[int] = []
        for k, tok in enumerate(self.tokens):
            if tok.is_opener:
                out[k] = len(stack)
                stack.append(k)
            elif tok.is_separator:
                out[k] = len(stack) - 1
                if tok.role is Role.CLOSER:
                    stack.pop()
        return out

    @cached_property
    def matching(self) -> dict[int, list[int]]:
        """Opener index -> indices of its separators, in order."""
        out: dict[int, list[int]] = {}
        for k, tok in enumerate(self.tokens):
            if tok.is_opener:
                out[k] = []
            elif tok.is_separator:
                out[tok.opener].append(k)
        return out

    @cached_property
    def identity_keys(self) -> np.ndarray:
        return np.array([t.identity_key for t in self.tokens], dtype=np.int64)

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.tokens]

    def dump(self) -> str:
        """One token per line: ``idx<TAB>variant<TAB>payload``."""
        lines = []
        for k, tok in enumerate(self.tokens):
            payload = "" if tok.variant is Variant.START else tok.label
            lines.append(f"{k}\t{tok.variant.value}\t{payload}")
        return "\n".join(lines) + "\n"


def _emit(node: Node, out: list[Token]) -> None:
    if node.kind is Kind.SEQUENTIAL:
        for child in node.modules:
            _emit(child, out)
        return
    terms = node.terminals
    if node.kind is Kind.COMPUTATION:
        out.append(Token(Variant.NODE, Kind.COMPUTATION, 0, terms, node.node_id))
        return
    opener = len(out)
    folded = (terms[0], terms[-1])
    out.append(Token(Variant.NODE, node.kind, node.factor, folded, node.node_id))
    bodies = node.modules
    for k, body in enumerate(bodies):
        _emit(body, out)
        role = Role.CLOSER if k == len(bodies) - 1 else Role.DIVIDER
        out.append(Token(Variant.SEPARATOR, opener=opener, role=role, node_id=node.node_id))


def serialise(tree: Node, source_tree_id: str = "") -> SerialisedSequence:
    out = [Token(Variant.START)]
    _emit(tree, out)
    return SerialisedSequence(tuple(out), source_tree_id)


def relink(tokens: Sequence[Token], keys: Sequence | None = None) -> SerialisedSequence:
    """Rebuild separator back-references after tokens were spliced together.

    Separators are reassigned to the innermost open opener. When ``keys`` is
    given (one hashable per token, shared by an opener and its separators),
    a separator must belong to that opener; otherwise enclosures that
    interleave would silently be re-paired.
    """
    out = []
    stack: list[int] = []
    for k, tok in enumerate(tokens):
        if tok.is_opener:
            stack.append(len(out))
            out.append(tok)
        elif tok.is_separator:
            if not stack:
                raise SerialisationError(f"separator at position {len(out)} has no open opener")
            opener = stack[-1]
            if keys is not None and keys[k] != keys[opener]:
                raise SerialisationError(
                    f"separator at position {k} closes {keys[k]!r} but {keys[opener]!r} is open")
            out.append(Token(Variant.SEPARATOR, opener=opener, role=tok.role, node_id=tok.node_id))
            if tok.role is Role.CLOSER:
                stack.pop()
        else:
            out.append(tok)
    return SerialisedSequence(tuple(out))


class _Reader:
    def __init__(self, tokens: Sequence[Token]):
        self.tokens = tokens
        self.k = 1

    def peek(self) -> Token | None:
        return self.tokens[self.k] if self.k < len(self.tokens) else None

    def body(self, opener: int | None) -> Node:
        start = self.k
        modules = []
        while True:
            tok = self.peek()
            if tok is None or tok.is_separator:
                break
            if tok.variant is Variant.START:
                raise SerialisationError(f"unexpected start token at position {self.k}")
            modules.append(self.module())
        if not modules:
            where = "top level" if opener is None else f"body of opener {opener}"
            raise SerialisationError(f"empty {where} at position {start}")
        return chain(modules)

    def separator(self, opener: int, role: Role) -> None:
        tok = self.peek()
        if tok is None:
            raise SerialisationError(f"opener {opener} is never closed")
        if tok.opener != opener:
            raise SerialisationError(
                f"separator at position {self.k} refers to opener {tok.opener}, expected {opener}")
        if tok.role is not role:
            raise SerialisationError(
                f"expected {role.value} at position {self.k}, got {tok.role.value}")
        self.k += 1

    def module(self) -> Node:
        pos = self.k
        tok = self.tokens[pos]
        self.k += 1
        if tok.kind is Kind.COMPUTATION:
            return Node(Kind.COMPUTATION, tok.terminals)
        first, last = tok.terminals
        if tok.kind is Kind.ROUTING:
            inner = self.body(pos)
            self.separator(pos, Role.CLOSER)
            return Node(Kind.ROUTING, (first, inner, last))
        if tok.factor == 2:
            left = self.body(pos)
            self.separator(pos, Role.DIVIDER)
            right = self.body(pos)
            self.separator(pos, Role.CLOSER)
            return Node(Kind.BRANCHING, (first, left, right, last), factor=2)
        inner = self.body(pos)
        self.separator(pos, Role.CLOSER)
        return Node(Kind.BRANCHING, (first, inner, last), factor=tok.factor)


def deserialise(seq: SerialisedSequence | Sequence[Token]) -> Node:
    """Inverse of :func:`serialise`; Sequential chains nest to the right."""
    tokens = seq.tokens if isinstance(seq, SerialisedSequence) else tuple(seq)
    if not tokens or tokens[0].variant is not Variant.START:
        raise SerialisationError("sequence must begin with a start token")
    reader = _Reader(tokens)
    tree = reader.body(None)
    if reader.k != len(tokens):
        tok = tokens[reader.k]
        raise SerialisationError(f"dangling {tok.role.value} at position {reader.k}")
    return renumber(tree)


def flatten(tree: Node) -> Node:
    """Canonical right-nested form; equal results mean functionally equal trees
    up to Sequential nesting."""
    return deserialise(serialise(tree))
