"""Traditional tree-based GP baseline.

Trees have free shape and are stored in prefix order, so every subtree is a
contiguous slice. Variation is Koza-style subtree crossover and subtree
mutation under either a height limit or a node-count limit; offspring that
break the limit are replaced by a copy of the (first) parent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .fitness import Dataset, SplitIndices, TrainingData
from .gomea import ConfigError, RunResult
from .tree import DEFAULT_FUNCTIONS, OPERATORS, SymbolSet, format_constant, template_size

LIMIT_KINDS = ("height", "nodes")


@dataclass
class VariableTree:
    codes: np.ndarray
    consts: np.ndarray

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        self.consts = np.asarray(self.consts, dtype=np.float64)

    def __len__(self) -> int:
        return self.codes.shape[0]

    def copy(self) -> "VariableTree":
        return VariableTree(self.codes.copy(), self.consts.copy())

    def key(self) -> tuple:
        return (self.codes.tobytes(), self.consts.tobytes())


def subtree_end(tree: VariableTree, start: int, arities: np.ndarray) -> int:
    """Index one past the subtree rooted at ``start``."""
    need = 1
    p = start
    while need:
        need += arities[tree.codes[p]] - 1
        p += 1
    return p


def node_depths(tree: VariableTree, arities: np.ndarray) -> np.ndarray:
    depths = np.empty(len(tree), dtype=np.int64)
    stack = []  # remaining child slots per open ancestor, with its depth
    for p, c in enumerate(tree.codes):
        d = stack[-1][1] + 1 if stack else 0
        depths[p] = d
        if stack:
            stack[-1][0] -= 1
            if stack[-1][0] == 0:
                stack.pop()
        a = arities[c]
        if a:
            stack.append([a, d])
    return depths


def height(tree: VariableTree, arities: np.ndarray) -> int:
    return int(node_depths(tree, arities).max())


def node_count(tree: VariableTree) -> int:
    return len(tree)


def check_structure(tree: VariableTree, arities: np.ndarray) -> bool:
    """Every function has exactly ``arity`` children and nothing is left over."""
    need = 1
    for c in tree.codes:
        if need == 0:
            return False
        need += arities[c] - 1
    return need == 0


def _random_terminal(rng, sets: SymbolSet) -> tuple[int, float]:
    t = int(rng.integers(sets.n_terminal_choices))
    if t < sets.n_features:
        return sets.n_functions + t, 0.0
    return sets.const_code, float(rng.uniform(*sets.erc))


def grow(rng: np.random.Generator, depth: int, sets: SymbolSet, full: bool = False,
         min_depth: int = 0) -> VariableTree:
    """Random tree of height at most ``depth`` (exactly ``depth`` when ``full``).

    Grow picks a function with probability 0.5 at every node shallower than
    ``depth``; above ``min_depth`` functions are forced.
    """
    codes: list[int] = []
    consts: list[float] = []

    def build(d: int) -> None:
        if d < depth and (full or d < min_depth or rng.random() < 0.5):
            c = int(rng.integers(sets.n_functions))
            codes.append(c)
            consts.append(0.0)
            for _ in range(int(sets.arities[c])):
                build(d + 1)
        else:
            c, v = _random_terminal(rng, sets)
            codes.append(c)
            consts.append(v)

    build(0)
    return VariableTree(codes, consts)


def init_ramped_half_and_half(rng: np.random.Generator, h_max: int, sets: SymbolSet) -> VariableTree:
    """Height drawn uniformly in [2, h_max]; Full or Grow with equal odds."""
    if h_max < 2:
        raise ConfigError("ramped half-and-half needs h_max >= 2")
    depth = int(rng.integers(2, h_max + 1))
    full = bool(rng.random() < 0.5)
    return grow(rng, depth, sets, full=full, min_depth=2)


@dataclass(frozen=True)
class SizeLimit:
    kind: str
    value: int

    def __post_init__(self):
        if self.kind not in LIMIT_KINDS:
            raise ConfigError(f"limit kind must be one of {LIMIT_KINDS}")
        if self.value < 0:
            raise ConfigError("limit must be non-negative")

    def holds(self, tree: VariableTree, arities: np.ndarray) -> bool:
        if self.kind == "nodes":
            return len(tree) <= self.value
        return height(tree, arities) <= self.value


def _splice(a: VariableTree, start: int, end: int, sub: VariableTree) -> VariableTree:
    return VariableTree(np.concatenate([a.codes[:start], sub.codes, a.codes[end:]]),
                        np.concatenate([a.consts[:start], sub.consts, a.consts[end:]]))


def subtree_crossover(a: VariableTree, b: VariableTree, rng: np.random.Generator,
                      limit: SizeLimit, sets: SymbolSet) -> VariableTree:
    """Replace a random subtree of ``a`` with a random subtree of ``b``."""
    i = int(rng.integers(len(a)))
    j = int(rng.integers(len(b)))
    j_end = subtree_end(b, j, sets.arities)
    donor = VariableTree(b.codes[j:j_end], b.consts[j:j_end])
    child = _splice(a, i, subtree_end(a, i, sets.arities), donor)
    if not limit.holds(child, sets.arities):
        return a.copy()
    return child


def _max_full_depth(nodes: int, r: int) -> int:
    """Largest depth whose full r-ary tree has at most ``nodes`` nodes."""
    d = -1
    while template_size(d + 1, r) <= nodes:
        d += 1
    return d


def subtree_mutation(a: VariableTree, rng: np.random.Generator, limit: SizeLimit,
                     sets: SymbolSet) -> VariableTree:
    """Replace a random subtree of ``a`` with a fresh Grow subtree."""
    i = int(rng.integers(len(a)))
    end = subtree_end(a, i, sets.arities)
    if limit.kind == "height":
        cap = limit.value - int(node_depths(a, sets.arities)[i])
    else:
        cap = _max_full_depth(limit.value - (len(a) - (end - i)), sets.arity)
    if cap < 0:
        return a.copy()
    child = _splice(a, i, end, grow(rng, cap, sets))
    if not limit.holds(child, sets.arities):
        return a.copy()
    return child


def tournament_select(fitness: np.ndarray, k: int, rng: np.random.Generator) -> int:
    """Index of the best of ``k`` uniform draws (with replacement).

    Ties go to the earliest draw.
    """
    picks = rng.integers(0, len(fitness), size=k)
    return int(picks[np.argmin(fitness[picks])])


def to_infix(tree: VariableTree, sets: SymbolSet) -> str:
    pos = 0

    def render() -> str:
        nonlocal pos
        c = int(tree.codes[pos])
        v = tree.consts[pos]
        pos += 1
        if c < sets.n_functions:
            name = sets.functions[c]
            _, arity, infix = OPERATORS[name]
            parts = [render() for _ in range(arity)]
            if infix:
                return f"({parts[0]} {infix} {parts[1]})"
            return f"{name}({', '.join(parts)})"
        if c < sets.const_code:
            return f"x{c - sets.n_functions}"
        return format_constant(v)

    return render()


def evaluate(tree: VariableTree, X: np.ndarray, sets: SymbolSet) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    buf = np.empty((len(tree), X.shape[0]))
    with np.errstate(all="ignore"):
        out = K.eval_prefix(tree.codes, tree.consts, sets.kinds, sets.args, sets.arities,
                            np.ascontiguousarray(X.T), buf)
    return out.copy()


@dataclass
class TradSolution:
    tree: VariableTree
    fitness: float = np.inf
    scale: tuple[float, float] = (0.0, 1.0)

    def copy(self) -> "TradSolution":
        return TradSolution(self.tree.copy(), self.fitness, self.scale)


@dataclass(frozen=True)
class TradConfig:
    n_pop: int = 1000
    limit: str = "height"
    h: int = 4
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    tournament: int = 7
    erc: bool = False
    functions: tuple[str, ...] = DEFAULT_FUNCTIONS
    generations: int | None = 20
    seconds: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_pop < 2:
            raise ConfigError("n_pop must be at least 2")
        if self.limit not in LIMIT_KINDS:
            raise ConfigError(f"limit must be one of {LIMIT_KINDS}")
        if self.h < 2:
            raise ConfigError("h must be at least 2")
        if abs(self.crossover_rate + self.mutation_rate - 1.0) > 1e-12:
            raise ConfigError("crossover and mutation rates must sum to 1")
        if self.tournament < 1:
            raise ConfigError("tournament size must be at least 1")
        if self.generations is None and self.seconds is None:
            raise ConfigError("a generation or a time budget is required")

    def size_limit(self, r: int) -> SizeLimit:
        if self.limit == "height":
            return SizeLimit("height", self.h)
        return SizeLimit("nodes", template_size(self.h, r))

    def symbol_set(self, X: np.ndarray) -> SymbolSet:
        return SymbolSet.for_data(X, self.functions, use_erc=self.erc)


class TradRun:
    """A GP-Trad run advanced one generation at a time."""

    def __init__(self, config: TradConfig, data: TrainingData, sets: SymbolSet,
                 rng: np.random.Generator, n_pop: int | None = None):
        self.config = config
        self.data = data
        self.sets = sets
        self.rng = rng
        self.n_pop = n_pop or config.n_pop
        self.limit = config.size_limit(sets.arity)
        self.trees: list[VariableTree] = []
        self.fitness = np.empty(0)
        self.scales: list[tuple[float, float]] = []
        self.best: TradSolution | None = None
        self.generation = 0
        self.evaluations = 0
        self.trace: list[float] = []

    @property
    def best_fitness(self) -> float:
        return np.inf if self.best is None else self.best.fitness

    def _evaluate(self, tree: VariableTree) -> tuple[float, float, float]:
        self.evaluations += 1
        with np.errstate(all="ignore"):
            f, a, b = K.prefix_fitness(tree.codes, tree.consts, self.sets.kinds, self.sets.args,
                                       self.sets.arities, self.data.XT, self.data.y)
        return float(f), float(a), float(b)

    def _set_population(self, trees, results) -> None:
        self.trees = trees
        self.fitness = np.array([r[0] for r in results])
        self.scales = [(r[1], r[2]) for r in results]
        i = int(np.argmin(self.fitness))
        if self.best is None or self.fitness[i] < self.best.fitness:
            self.best = TradSolution(trees[i].copy(), float(self.fitness[i]), self.scales[i])

    def initialize(self) -> None:
        trees = [init_ramped_half_and_half(self.rng, self.config.h, self.sets)
                 for _ in range(self.n_pop)]
        self._set_population(trees, [self._evaluate(t) for t in trees])

    def step(self) -> None:
        if not self.trees:
            self.initialize()
        cfg = self.config
        rng = self.rng
        elite = int(np.argmin(self.fitness))
        trees = [self.trees[elite].copy()]
        results = [(float(self.fitness[elite]),) + self.scales[elite]]
        while len(trees) < self.n_pop:
            if rng.random() < cfg.crossover_rate:
                i = tournament_select(self.fitness, cfg.tournament, rng)
                j = tournament_select(self.fitness, cfg.tournament, rng)
                child = subtree_crossover(self.trees[i], self.trees[j], rng, self.limit, self.sets)
            else:
                i = tournament_select(self.fitness, cfg.tournament, rng)
                child = subtree_mutation(self.trees[i], rng, self.limit, self.sets)
            trees.append(child)
            if np.array_equal(child.codes, self.trees[i].codes) and \
                    np.array_equal(child.consts, self.trees[i].consts):
                results.append((float(self.fitness[i]),) + self.scales[i])
            else:
                results.append(self._evaluate(child))
        self._set_population(trees, results)
        self.generation += 1
        self.trace.append(self.best.fitness)

    def has_converged(self) -> bool:
        return bool(self.trees) and len({t.key() for t in self.trees}) == 1


def run_gptrad(config: TradConfig, dataset: Dataset, split: SplitIndices) -> RunResult:
    X, y = dataset.subset(split.train)
    sets = config.symbol_set(X)
    data = TrainingData(X, y)
    rng = np.random.default_rng(config.seed)
    start = time.perf_counter()
    run = TradRun(config, data, sets, rng)
    run.initialize()
    while True:
        if config.generations is not None and run.generation >= config.generations:
            break
        if config.seconds is not None and time.perf_counter() - start >= config.seconds:
            break
        run.step()
    return RunResult(run.best, run.trace, run.evaluations, time.perf_counter() - start,
                     run.generation)
