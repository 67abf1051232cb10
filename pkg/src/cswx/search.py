"""Steady-state evolutionary search over derivation trees."""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .crossover import CrossoverFailure, cswx_crossover, rcswx_crossover, stx_crossover
from .grammar import GrammarConfig, Node, depth, mutate, parse_tree, sample_tree, validate
from .rcswx import rcswx_distance
from .scoring import ScoringMatrix, load_scoring, parse_keyfile, preset
from .serialise import serialise

CROSSOVER_METHODS = ("none", "stx", "cswx", "rcswx")
WORST_FITNESS = -1e12

Fitness = Callable[[Node], float]


@dataclass
class Individual:
    tree: Node
    fitness: float
    birth_iteration: int


@dataclass
class SearchConfig:
    population_size: int = 100
    total_evaluations: int = 1000
    tournament_size: int = 5
    crossover: str = "rcswx"
    crossover_prob: float = 1.0
    mutation_prob: float = 1.0
    skewness: float = 0.0
    scoring: str = "sm0"
    seed: int = 0
    fitness: str = "target-random:3"
    max_depth: int = 4
    diversity_every: int = 0  # 0 disables the (quadratic) diversity column
    stop_at: float | None = None  # stop once the incumbent reaches this fitness

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.total_evaluations < self.population_size:
            raise ValueError("total_evaluations must be >= population_size")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must lie in [1, population_size]")
        if self.crossover not in CROSSOVER_METHODS:
            raise ValueError(f"crossover must be one of {', '.join(CROSSOVER_METHODS)}")
        for name in ("crossover_prob", "mutation_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")

    @classmethod
    def from_keyfile(cls, text: str) -> SearchConfig:
        raw = parse_keyfile(text)
        kwargs: dict = {}
        for f in cls.__dataclass_fields__.values():
            if f.name not in raw:
                continue
            val = raw.pop(f.name)
            if f.name in ("crossover", "scoring", "fitness"):
                kwargs[f.name] = val
            elif f.name in ("crossover_prob", "mutation_prob", "skewness", "stop_at"):
                kwargs[f.name] = float(val)
            else:
                kwargs[f.name] = int(val)
        if raw:
            raise ValueError(f"unknown search keys: {', '.join(sorted(raw))}")
        return cls(**kwargs)


@dataclass
class IterationRecord:
    iteration: int
    best_fitness: float
    mean_fitness: float
    diversity: float
    operator: str
    parents: tuple[int, int] | None = None


@dataclass
class SearchHistory:
    config: SearchConfig
    records: list[IterationRecord] = field(default_factory=list)
    population: list[Individual] = field(default_factory=list)
    best: Individual | None = None

    def evaluations_to(self, threshold: float) -> int | None:
        """First evaluation count at which the incumbent reached ``threshold``."""
        for r in self.records:
            if r.best_fitness >= threshold:
                return r.iteration
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "best_fitness", "mean_fitness", "diversity", "operator"])
        for r in self.records:
            div = "" if math.isnan(r.diversity) else repr(r.diversity)
            w.writerow([r.iteration, repr(r.best_fitness), repr(r.mean_fitness), div, r.operator])
        return buf.getvalue()


# -- fitness functions -----------------------------------------------------------

def target_distance_fitness(tree: Node, target: Node, m: ScoringMatrix | None = None) -> float:
    return -rcswx_distance(tree, target, m or preset("sm0"))


def motif_count_fitness(tree: Node, motif: Node) -> float:
    """Occurrences of the motif's token string inside the tree's token string."""
    hay = [t.identity for t in serialise(tree).tokens[1:]]
    needle = [t.identity for t in serialise(motif).tokens[1:]]
    n, k = len(hay), len(needle)
    return float(sum(1 for p in range(n - k + 1) if hay[p:p + k] == needle))


def sample_target(target_depth: int, rng: np.random.Generator) -> Node:
    """A random tree of exactly the given depth."""
    cfg = GrammarConfig(max_depth=target_depth)
    for _ in range(10_000):
        t = sample_tree(cfg, rng)
        if depth(t) == target_depth:
            return t
    raise RuntimeError(f"could not sample a tree of depth {target_depth}")


def make_fitness(spec: str, m: ScoringMatrix, rng: np.random.Generator) -> tuple[Fitness, Node | None]:
    """Build a fitness from ``target:<tree>``, ``target-random:<depth>`` or
    ``motif:<tree>``. Returns the function and the planted target if any."""
    head, _, arg = spec.partition(":")
    if head == "target":
        target = parse_tree(arg)
    elif head == "target-random":
        target = sample_target(int(arg or 3), rng)
    elif head == "motif":
        motif = parse_tree(arg)
        return (lambda t: motif_count_fitness(t, motif)), None
    else:
        raise ValueError(f"unknown fitness spec {spec!r}")
    return (lambda t: target_distance_fitness(t, target, m)), target


# -- operators -----------------------------------------------------------------

def tournament_select(population: list[Individual], k: int, rng: np.random.Generator) -> Individual:
    if not 1 <= k <= len(population):
        raise ValueError(f"tournament size {k} outside [1, {len(population)}]")
    picks = rng.choice(len(population), size=k, replace=False)
    # ties go to the earliest-drawn contestant
    return max((population[int(p)] for p in picks), key=lambda ind: ind.fitness)


def _evaluate(fitness: Fitness, tree: Node) -> float:
    try:
        f = float(fitness(tree))
    except Exception:
        return WORST_FITNESS
    return f if math.isfinite(f) else WORST_FITNESS


def _diversity(trees: list[Node], m: ScoringMatrix) -> float:
    from .analysis import population_diversity
    return population_diversity(trees, "rcswx", m)


def evolve(config: SearchConfig, fitness: Fitness | None = None,
           grammar: GrammarConfig | None = None) -> SearchHistory:
    rng = np.random.default_rng(config.seed)
    m = load_scoring(config.scoring)
    if fitness is None:
        fitness, _ = make_fitness(config.fitness, m, rng)
    grammar = grammar or GrammarConfig(max_depth=config.max_depth)
    history = SearchHistory(config)
    population: deque[Individual] = deque()
    best: Individual | None = None
    evaluations = 0

    def record(op: str, parents=None) -> None:
        fits = np.array([ind.fitness for ind in population])
        div = math.nan
        if config.diversity_every and evaluations % config.diversity_every == 0:
            div = _diversity([ind.tree for ind in population], m)
        history.records.append(IterationRecord(evaluations, best.fitness, float(fits.mean()), div, op, parents))

    def done() -> bool:
        return (evaluations >= config.total_evaluations
                or (config.stop_at is not None and best.fitness >= config.stop_at))

    for _ in range(config.population_size):
        tree = sample_tree(grammar, rng)
        ind = Individual(tree, _evaluate(fitness, tree), evaluations)
        evaluations += 1
        population.append(ind)
        if best is None or ind.fitness > best.fitness:
            best = ind
        record("init")
    while not done():
        pool = list(population)
        p1 = tournament_select(pool, config.tournament_size, rng)
        p2 = tournament_select(pool, config.tournament_size, rng)
        op = "clone"
        child = p1.tree
        if config.crossover != "none" and rng.random() < config.crossover_prob:
            try:
                if config.crossover == "stx":
                    child = stx_crossover(p1.tree, p2.tree, rng)
                elif config.crossover == "cswx":
                    child = cswx_crossover(p1.tree, p2.tree, m, config.skewness, rng)
                else:
                    child = rcswx_crossover(p1.tree, p2.tree, m, config.skewness, rng)
                op = config.crossover
            except CrossoverFailure:
                op = config.crossover + "-failed"
        if rng.random() < config.mutation_prob:
            child = mutate(child, grammar, rng)
            op += "+mut"
        problems = validate(child)
        if problems:
            raise RuntimeError(f"operator {op} produced an invalid tree: {problems[0]}")
        ind = Individual(child, _evaluate(fitness, child), evaluations)
        evaluations += 1
        population.append(ind)
        population.popleft()
        if ind.fitness > best.fitness:
            best = ind
        record(op, (p1.birth_iteration, p2.birth_iteration))
    history.population = list(population)
    history.best = best
    return history
