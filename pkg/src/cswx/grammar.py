"""Architecture grammar: derivation trees, text format, sampling and mutation.

A module ``M`` expands to one of::

    comp(C)                 computation terminal
    seq(M, M)               two modules in sequence
    route(P, M, Q)          pre-routing op, module, post-routing op
    branch2(B; M; M; A)     two independently sampled branches
    branch4(B; M; A)        one submodule repeated over 4 (or 8) branches

Terminals carry an operation name from a fixed per-category registry and a
tuple of small integer hyperparameters.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np


class Category(enum.Enum):
    BRANCHING = "branching"
    AGGREGATION = "aggregation"
    PRE_ROUTING = "pre-routing"
    POST_ROUTING = "post-routing"
    COMPUTATION = "computation"


class Kind(enum.Enum):
    SEQUENTIAL = "seq"
    BRANCHING = "branch"
    ROUTING = "route"
    COMPUTATION = "comp"


BRANCH_FACTORS = (2, 4, 8)

# name -> hyperparameter slot names; a "branches" slot must equal the factor
DEFAULT_REGISTRY: dict[Category, dict[str, tuple[str, ...]]] = {
    Category.BRANCHING: {"clone": ("branches",), "group": ("dim", "branches")},
    Category.AGGREGATION: {"add": ("branches",), "cat": ("dim", "branches")},
    Category.PRE_ROUTING: {"im2col": ("kernel",), "permute": ()},
    Category.POST_ROUTING: {"col2im": ("kernel",), "permute": ()},
    Category.COMPUTATION: {
        "linear": ("width",),
        "relu": (),
        "identity": (),
        "pos-enc": (),
        "softmax": (),
    },
}

DEFAULT_VALUES: dict[str, tuple[int, ...]] = {
    "width": (16, 32, 64, 128),
    "dim": (1, 2),
    "kernel": (2, 4, 8),
}


class GrammarError(ValueError):
    """Base class for invalid architecture text or trees."""


class TreeSyntaxError(GrammarError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ArityError(GrammarError):
    pass


class UnknownOperationError(GrammarError):
    pass


@dataclass(frozen=True)
class Terminal:
    category: Category
    name: str
    params: tuple[int, ...] = ()

    def render(self) -> str:
        return ",".join([self.name, *map(str, self.params)])


@dataclass(frozen=True)
class Node:
    """A nonterminal of the derivation tree.

    ``children`` holds the right-hand side of the applied production in order,
    mixing :class:`Terminal` and :class:`Node` entries. ``node_id`` is excluded
    from equality so structurally identical trees compare equal.
    """

    kind: Kind
    children: tuple
    factor: int = 0
    node_id: int = field(default=-1, compare=False)

    @property
    def modules(self) -> tuple[Node, ...]:
        return tuple(c for c in self.children if isinstance(c, Node))

    @property
    def terminals(self) -> tuple[Terminal, ...]:
        return tuple(c for c in self.children if isinstance(c, Terminal))

    def __str__(self) -> str:
        return render_tree(self)


# -- constructors -----------------------------------------------------------

def comp(name: str, *params: int) -> Node:
    return Node(Kind.COMPUTATION, (Terminal(Category.COMPUTATION, name, tuple(params)),))


def seq(first: Node, second: Node) -> Node:
    return Node(Kind.SEQUENTIAL, (first, second))


def route(pre: Terminal, body: Node, post: Terminal) -> Node:
    return Node(Kind.ROUTING, (pre, body, post))


def branch(factor: int, bop: Terminal, *rest) -> Node:
    return Node(Kind.BRANCHING, (bop, *rest), factor=factor)


def chain(modules: Sequence[Node]) -> Node:
    """Right-nested Sequential chain of one or more modules."""
    if not modules:
        raise ValueError("chain needs at least one module")
    out = modules[-1]
    for m in reversed(modules[:-1]):
        out = seq(m, out)
    return out


# -- traversal --------------------------------------------------------------

def iter_nodes(tree: Node) -> Iterator[Node]:
    """Preorder over nonterminal nodes."""
    stack = [tree]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.modules))


def iter_with_depth(tree: Node, depth: int = 1) -> Iterator[tuple[Node, int]]:
    yield tree, depth
    for child in tree.modules:
        yield from iter_with_depth(child, depth + 1)


def depth(tree: Node) -> int:
    return 1 + max((depth(c) for c in tree.modules), default=0)


def size(tree: Node) -> int:
    return sum(1 for _ in iter_nodes(tree))


def renumber(tree: Node, start: int = 0) -> Node:
    """Copy of ``tree`` with preorder node ids."""
    counter = [start]

    def visit(node: Node) -> Node:
        nid = counter[0]
        counter[0] += 1
        children = tuple(visit(c) if isinstance(c, Node) else c for c in node.children)
        return replace(node, children=children, node_id=nid)

    return visit(tree)


def replace_at(tree: Node, position: int, new: Node) -> Node:
    """Replace the subtree at preorder ``position`` (over nonterminals)."""
    counter = [0]

    def visit(node: Node) -> Node:
        here = counter[0]
        counter[0] += 1
        if here == position:
            return new
        children = []
        for c in node.children:
            children.append(visit(c) if isinstance(c, Node) else c)
        return replace(node, children=tuple(children))

    return renumber(visit(tree))


# -- validation -------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    node_id: int
    kind: str  # "arity" | "category" | "operation" | "hyperparams"
    message: str

    def __str__(self) -> str:
        return f"node {self.node_id}: {self.kind}: {self.message}"


_LAYOUT = {
    Kind.COMPUTATION: (Category.COMPUTATION,),
    Kind.SEQUENTIAL: (None, None),
    Kind.ROUTING: (Category.PRE_ROUTING, None, Category.POST_ROUTING),
}


def _layout(node: Node) -> tuple | None:
    if node.kind is Kind.BRANCHING:
        if node.factor == 2:
            return (Category.BRANCHING, None, None, Category.AGGREGATION)
        if node.factor in (4, 8):
            return (Category.BRANCHING, None, Category.AGGREGATION)
        return None
    return _LAYOUT[node.kind]


def check_terminal(term: Terminal, registry=None, factor: int | None = None) -> list[str]:
    registry = registry or DEFAULT_REGISTRY
    ops = registry.get(term.category, {})
    if term.name not in ops:
        return [f"unknown {term.category.value} operation {term.name!r}"]
    slots = ops[term.name]
    if len(slots) != len(term.params):
        return [f"{term.name} takes {len(slots)} hyperparameter(s), got {len(term.params)}"]
    problems = []
    for slot, value in zip(slots, term.params):
        if slot == "branches" and factor is not None and value != factor:
            problems.append(f"{term.name} branch count {value} != factor {factor}")
    return problems


def validate(tree, registry=None) -> list[Violation]:
    """Return every arity/category violation; an empty list means valid."""
    out: list[Violation] = []

    def visit(node) -> None:
        if not isinstance(node, Node):
            out.append(Violation(-1, "category", f"expected a module, got {node!r}"))
            return
        layout = _layout(node)
        if layout is None:
            out.append(Violation(node.node_id, "arity", f"unsupported branch factor {node.factor}"))
            return
        if len(node.children) != len(layout):
            out.append(Violation(
                node.node_id, "arity",
                f"{node.kind.value} expects {len(layout)} children, got {len(node.children)}"))
        for slot, child in zip(layout, node.children):
            if slot is None:
                if isinstance(child, Node):
                    visit(child)
                else:
                    out.append(Violation(node.node_id, "category", f"expected a module, got {child!r}"))
            elif not isinstance(child, Terminal) or child.category is not slot:
                got = child.category.value if isinstance(child, Terminal) else "module"
                out.append(Violation(node.node_id, "category", f"expected {slot.value} terminal, got {got}"))
            else:
                factor = node.factor if node.kind is Kind.BRANCHING else None
                for msg in check_terminal(child, registry, factor):
                    out.append(Violation(node.node_id, "operation", msg))

    visit(tree)
    return out


def is_valid(tree) -> bool:
    return not validate(tree)


# -- text format --------------------------------------------------------------

_TOKEN_RE = re.compile(r"\s*(?:(?P<int>\d+)|(?P<name>[A-Za-z_][A-Za-z0-9_\-]*)|(?P<punct>[(),;])|(?P<bad>\S))")
_MODULE_RE = re.compile(r"^(comp|seq|route|branch(\d+))$")


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.toks: list[tuple[str, str, int]] = []
        pos = 0
        while True:
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                break
            kind = m.lastgroup
            start = m.start(kind)
            if kind == "bad":
                line, col = self.locate(start)
                raise TreeSyntaxError(f"unexpected character {m.group(kind)!r}", line, col)
            self.toks.append((kind, m.group(kind), start))
            pos = m.end()
        self.i = 0

    def locate(self, offset: int) -> tuple[int, int]:
        line = self.text.count("\n", 0, offset) + 1
        col = offset - (self.text.rfind("\n", 0, offset) + 1) + 1
        return line, col

    def peek(self, k: int = 0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else ("eof", "", len(self.text))

    def error(self, message: str, tok=None) -> TreeSyntaxError:
        tok = tok or self.peek()
        return TreeSyntaxError(message, *self.locate(tok[2]))

    def expect(self, value: str):
        tok = self.peek()
        if tok[1] != value or tok[0] == "eof":
            raise self.error(f"expected {value!r}, got {tok[1] or 'end of input'!r}")
        self.i += 1
        return tok

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok


def _is_module_start(lex: _Lexer) -> bool:
    kind, value, _ = lex.peek()
    return kind == "name" and bool(_MODULE_RE.match(value)) and lex.peek(1)[1] == "("


def _parse_terminal(lex: _Lexer, category: Category, registry, factor=None) -> Terminal:
    tok = lex.next()
    if tok[0] != "name":
        raise lex.error(f"expected {category.value} operation name", tok)
    params = []
    while lex.peek()[1] == "," and lex.peek(1)[0] == "int":
        lex.i += 1
        params.append(int(lex.next()[1]))
    term = Terminal(category, tok[1], tuple(params))
    ops = registry.get(category, {})
    if term.name not in ops:
        line, col = lex.locate(tok[2])
        raise UnknownOperationError(
            f"line {line}, column {col}: unknown {category.value} operation {term.name!r}")
    problems = check_terminal(term, registry, factor)
    if problems:
        line, col = lex.locate(tok[2])
        raise ArityError(f"line {line}, column {col}: {problems[0]}")
    return term


def _parse_module(lex: _Lexer, registry) -> Node:
    tok = lex.next()
    m = _MODULE_RE.match(tok[1]) if tok[0] == "name" else None
    if m is None:
        raise lex.error(f"expected a module, got {tok[1] or 'end of input'!r}", tok)
    head = m.group(1)
    lex.expect("(")
    if head == "comp":
        node = Node(Kind.COMPUTATION, (_parse_terminal(lex, Category.COMPUTATION, registry),))
    elif head == "seq":
        first = _parse_module(lex, registry)
        lex.expect(",")
        second = _parse_module(lex, registry)
        node = seq(first, second)
    elif head == "route":
        pre = _parse_terminal(lex, Category.PRE_ROUTING, registry)
        lex.expect(",")
        body = _parse_module(lex, registry)
        lex.expect(",")
        post = _parse_terminal(lex, Category.POST_ROUTING, registry)
        node = route(pre, body, post)
    else:
        factor = int(m.group(2))
        if factor not in BRANCH_FACTORS:
            raise lex.error(f"unsupported branch factor {factor}", tok)
        bop = _parse_terminal(lex, Category.BRANCHING, registry, factor)
        bodies = []
        lex.expect(";")
        while _is_module_start(lex):
            bodies.append(_parse_module(lex, registry))
            lex.expect(";")
        aop = _parse_terminal(lex, Category.AGGREGATION, registry, factor)
        want = 2 if factor == 2 else 1
        if len(bodies) != want:
            line, col = lex.locate(tok[2])
            raise ArityError(
                f"line {line}, column {col}: branch{factor} takes {want} submodule(s), got {len(bodies)}")
        node = branch(factor, bop, *bodies, aop)
    lex.expect(")")
    return node


def parse_tree(text: str, registry=None) -> Node:
    """Parse one architecture in the text format; raises :class:`GrammarError`."""
    registry = registry or DEFAULT_REGISTRY
    lex = _Lexer(text)
    tree = _parse_module(lex, registry)
    if lex.peek()[0] != "eof":
        raise lex.error(f"trailing input {lex.peek()[1]!r}")
    return renumber(tree)


def render_tree(tree: Node) -> str:
    kind = tree.kind
    if kind is Kind.COMPUTATION:
        return f"comp({tree.children[0].render()})"
    if kind is Kind.SEQUENTIAL:
        a, b = tree.children
        return f"seq({render_tree(a)}, {render_tree(b)})"
    if kind is Kind.ROUTING:
        pre, body, post = tree.children
        return f"route({pre.render()}, {render_tree(body)}, {post.render()})"
    parts = [c.render() if isinstance(c, Terminal) else render_tree(c) for c in tree.children]
    return f"branch{tree.factor}(" + "; ".join(parts) + ")"


def read_corpus(text: str, registry=None) -> list[Node]:
    """One tree per non-empty line; ``#`` starts a comment line."""
    trees = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            trees.append(parse_tree(stripped, registry))
        except TreeSyntaxError as exc:
            raise TreeSyntaxError(str(exc).split(": ", 1)[-1], lineno, exc.column) from None
    return trees


def write_corpus(trees: Sequence[Node], header: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header]
    lines += [render_tree(t) for t in trees]
    return "\n".join(lines) + "\n"


# -- sampling -----------------------------------------------------------------

MODULE_EXPANSIONS = ("comp", "seq", "route", "branch2", "branch4", "branch8")


def _default_weights() -> dict[str, dict[str, float]]:
    return {
        "module": {"comp": 0.35, "seq": 0.30, "route": 0.10,
                   "branch2": 0.15, "branch4": 0.05, "branch8": 0.05},
        Category.COMPUTATION.value: {"linear": 0.40, "relu": 0.20, "identity": 0.15,
                                     "pos-enc": 0.10, "softmax": 0.15},
        Category.BRANCHING.value: {"clone": 0.5, "group": 0.5},
        Category.AGGREGATION.value: {"add": 0.5, "cat": 0.5},
        Category.PRE_ROUTING.value: {"im2col": 0.7, "permute": 0.3},
        Category.POST_ROUTING.value: {"col2im": 0.7, "permute": 0.3},
    }


@dataclass
class GrammarConfig:
    """Sampling weights per nonterminal, depth cap and terminal registry.

    The default weights are placeholders chosen for desk-scale experiments.
    """

    weights: dict[str, dict[str, float]] = field(default_factory=_default_weights)
    max_depth: int = 6
    registry: dict = field(default_factory=lambda: DEFAULT_REGISTRY)
    values: dict[str, tuple[int, ...]] = field(default_factory=lambda: dict(DEFAULT_VALUES))

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        for name, table in self.weights.items():
            total = sum(table.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"weights for {name!r} sum to {total}, not 1")
            if any(w < 0 for w in table.values()):
                raise ValueError(f"negative weight in {name!r}")
        unknown = set(self.weights["module"]) - set(MODULE_EXPANSIONS)
        if unknown:
            raise ValueError(f"unknown module expansions {sorted(unknown)}")


def _choose(table: dict[str, float], rng: np.random.Generator) -> str:
    names = list(table)
    probs = np.array([table[n] for n in names], dtype=float)
    return names[int(rng.choice(len(names), p=probs / probs.sum()))]


def sample_terminal(category: Category, config: GrammarConfig, rng: np.random.Generator,
                    factor: int | None = None, exclude: Terminal | None = None) -> Terminal:
    table = dict(config.weights[category.value])
    for _ in range(64):
        name = _choose(table, rng)
        params = []
        for slot in config.registry[category][name]:
            if slot == "branches":
                params.append(int(factor))
            else:
                choices = config.values[slot]
                params.append(int(choices[int(rng.integers(len(choices)))]))
        term = Terminal(category, name, tuple(params))
        if term != exclude:
            return term
    return term


def _sample_module(config: GrammarConfig, rng: np.random.Generator, budget: int) -> Node:
    if budget <= 1:
        expansion = "comp"
    else:
        expansion = _choose(config.weights["module"], rng)
    if expansion == "comp":
        return Node(Kind.COMPUTATION, (sample_terminal(Category.COMPUTATION, config, rng),))
    if expansion == "seq":
        return seq(_sample_module(config, rng, budget - 1), _sample_module(config, rng, budget - 1))
    if expansion == "route":
        pre = sample_terminal(Category.PRE_ROUTING, config, rng)
        body = _sample_module(config, rng, budget - 1)
        post = sample_terminal(Category.POST_ROUTING, config, rng)
        return route(pre, body, post)
    factor = int(expansion[len("branch"):])
    bop = sample_terminal(Category.BRANCHING, config, rng, factor)
    n_bodies = 2 if factor == 2 else 1
    bodies = [_sample_module(config, rng, budget - 1) for _ in range(n_bodies)]
    aop = sample_terminal(Category.AGGREGATION, config, rng, factor)
    return branch(factor, bop, *bodies, aop)


def sample_tree(config: GrammarConfig, rng: np.random.Generator) -> Node:
    """Draw a derivation tree; at ``max_depth`` expansion is forced to ``comp``."""
    return renumber(_sample_module(config, rng, config.max_depth))


def mutate(tree: Node, config: GrammarConfig, rng: np.random.Generator) -> Node:
    """Apply one local edit: resample a subtree or tweak one terminal."""
    nodes = list(iter_with_depth(tree))
    terminal_sites = [(pos, k) for pos, (node, _) in enumerate(nodes)
                      for k, c in enumerate(node.children) if isinstance(c, Terminal)]
    for _ in range(32):
        if rng.random() < 0.5:
            pos = int(rng.integers(len(nodes)))
            node, d = nodes[pos]
            budget = max(1, config.max_depth - d + 1)
            mutant = replace_at(tree, pos, _sample_module(config, rng, budget))
        else:
            pos, k = terminal_sites[int(rng.integers(len(terminal_sites)))]
            node = nodes[pos][0]
            old = node.children[k]
            factor = node.factor if node.kind is Kind.BRANCHING else None
            new = sample_terminal(old.category, config, rng, factor, exclude=old)
            children = list(node.children)
            children[k] = new
            mutant = replace_at(tree, pos, replace(node, children=tuple(children)))
        if mutant != tree:
            return mutant
    return mutant


# -- branch permutations ------------------------------------------------------

def branch2_count(tree: Node) -> int:
    return sum(1 for n in iter_nodes(tree) if n.kind is Kind.BRANCHING and n.factor == 2)


def swap_branches(tree: Node, mask: int) -> Node:
    """Swap the halves of the k-th 2-way branch (preorder) when bit k is set."""
    counter = [0]

    def visit_pre(node: Node) -> Node:
        flip = False
        if node.kind is Kind.BRANCHING and node.factor == 2:
            flip = bool((mask >> counter[0]) & 1)
            counter[0] += 1
        children = [visit_pre(c) if isinstance(c, Node) else c for c in node.children]
        if flip:
            children[1], children[2] = children[2], children[1]
        return replace(node, children=tuple(children))

    return renumber(visit_pre(tree))


def all_branch_permutations(tree: Node) -> Iterator[Node]:
    b = branch2_count(tree)
    for mask in range(1 << b):
        yield swap_branches(tree, mask)


def random_branch_permutation(tree: Node, rng: np.random.Generator) -> Node:
    b = branch2_count(tree)
    mask = int(rng.integers(1 << b)) if b else 0
    return swap_branches(tree, mask)


def canonical_form(tree: Node) -> str:
    """Text of a representative of the tree's equivalence class under 2-way
    branch swaps and Sequential re-nesting."""

    def flat(node: Node) -> list[str]:
        if node.kind is Kind.SEQUENTIAL:
            return [s for c in node.modules for s in flat(c)]
        return [canon(node)]

    def canon(node: Node) -> str:
        if node.kind is Kind.SEQUENTIAL:
            return "[" + " ".join(flat(node)) + "]"
        if node.kind is Kind.COMPUTATION:
            return render_tree(node)
        parts = [c.render() if isinstance(c, Terminal) else "[" + " ".join(flat(c)) + "]"
                 for c in node.children]
        if node.kind is Kind.BRANCHING and node.factor == 2:
            parts[1:3] = sorted(parts[1:3])
        head = node.kind.value if node.kind is Kind.ROUTING else f"branch{node.factor}"
        return f"{head}(" + "; ".join(parts) + ")"

    return " ".join(flat(tree))


def bundled_corpus(name: str) -> list[Node]:
    """Trees shipped in the package's ``data`` directory."""
    from importlib import resources
    text = resources.files("cswx").joinpath("data", f"{name}.trees").read_text(encoding="utf-8")
    return read_corpus(text)
