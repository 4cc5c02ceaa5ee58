"""GP-GOMEA: linkage-learning generational loop with Gene-pool Optimal Mixing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .fitness import Dataset, SplitIndices, TrainingData
from .linkage import (
    BiasCoefficients,
    ErcBinTable,
    Fos,
    biased_mi_matrix,
    build_linkage_tree,
    build_random_tree,
    capture_bias,
    count_frequencies,
    mi_matrix,
)
from .tree import (
    DEFAULT_FUNCTIONS,
    GenotypeTree,
    SymbolSet,
    random_population,
    template,
    template_size,
)

FOS_KINDS = ("lt-mib", "lt-mi", "rt")
ERC_MODES = ("none", "all", "no", "bin")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GomeaConfig:
    n_pop: int = 2000
    h: int = 4
    fos: str = "lt-mib"
    erc: str = "none"
    functions: tuple[str, ...] = DEFAULT_FUNCTIONS
    generations: int | None = 20
    seconds: float | None = None
    seed: int = 0
    bin_capacity: int = 100
    persist_bins: bool = False
    sets: SymbolSet | None = None

    def __post_init__(self):
        if self.n_pop < 2:
            raise ConfigError("n_pop must be at least 2")
        if self.h < 0:
            raise ConfigError("h must be non-negative")
        if self.fos not in FOS_KINDS:
            raise ConfigError(f"fos must be one of {FOS_KINDS}, got {self.fos!r}")
        if self.erc not in ERC_MODES:
            raise ConfigError(f"erc must be one of {ERC_MODES}, got {self.erc!r}")
        if self.generations is None and self.seconds is None:
            raise ConfigError("a generation or a time budget is required")

    def symbol_set(self, X: np.ndarray) -> SymbolSet:
        if self.sets is not None:
            if self.sets.n_features != X.shape[1]:
                raise ConfigError(f"symbol set has {self.sets.n_features} features, "
                                  f"data has {X.shape[1]}")
            return self.sets
        return SymbolSet.for_data(X, self.functions, use_erc=self.erc != "none")


@dataclass
class Solution:
    tree: GenotypeTree
    fitness: float = np.inf
    scale: tuple[float, float] = (0.0, 1.0)

    def copy(self) -> "Solution":
        return Solution(self.tree.copy(), self.fitness, self.scale)


@dataclass
class Population:
    """Struct-of-arrays population: row i is individual i."""

    h: int
    r: int
    codes: np.ndarray
    consts: np.ndarray
    fitness: np.ndarray
    scale_a: np.ndarray
    scale_b: np.ndarray

    def __len__(self) -> int:
        return self.codes.shape[0]

    def solution(self, i: int) -> Solution:
        tree = GenotypeTree(self.h, self.r, self.codes[i].copy(), self.consts[i].copy())
        return Solution(tree, float(self.fitness[i]), (float(self.scale_a[i]), float(self.scale_b[i])))

    def solutions(self) -> list[Solution]:
        return [self.solution(i) for i in range(len(self))]

    def best_index(self) -> int:
        return int(np.argmin(self.fitness))

    @classmethod
    def from_solutions(cls, sols: list[Solution]) -> "Population":
        t0 = sols[0].tree
        return cls(t0.h, t0.r,
                   np.stack([s.tree.codes for s in sols]),
                   np.stack([s.tree.consts for s in sols]),
                   np.array([s.fitness for s in sols], dtype=float),
                   np.array([s.scale[0] for s in sols], dtype=float),
                   np.array([s.scale[1] for s in sols], dtype=float))


def make_fitness_fn(sets: SymbolSet, data: TrainingData, h: int):
    """Tree -> (scaled MSE, a, b) on the training data."""
    children = template(h, sets.arity).children
    buf = np.empty((template_size(h, sets.arity), data.y.shape[0]))

    def fitness_fn(tree: GenotypeTree):
        with np.errstate(all="ignore"):
            f, a, b = K.template_fitness(tree.codes, tree.consts, sets.kinds, sets.args,
                                         sets.arities, children, data.XT, data.y, buf)
        return float(f), float(a), float(b)

    return fitness_fn


def init_population(rng: np.random.Generator, n_pop: int, h: int, sets: SymbolSet,
                    data: TrainingData) -> Population:
    codes, consts = random_population(rng, n_pop, h, sets)
    tpl = template(h, sets.arity)
    fit, a, b = K.evaluate_population(codes, consts, sets.kinds, sets.args, sets.arities,
                                      tpl.children, data.XT, data.y)
    return Population(h, sets.arity, codes, consts, fit, a, b)


def draw_gom_randomness(rng: np.random.Generator, n_fos: int, n_pop: int):
    """Subset order and donor indices for one GOM application."""
    return rng.permutation(n_fos), rng.integers(0, n_pop, size=n_fos)


def gom(parent: Solution, population: Population, fos: Fos, fitness_fn,
        rng: np.random.Generator, sets: SymbolSet, observer=None) -> tuple[Solution, int]:
    """Gene-pool Optimal Mixing of one parent; returns the offspring and the
    number of evaluations spent.

    Straightforward per-individual version of what :func:`generation` does in
    compiled code for the whole population; both consume ``rng`` identically.
    ``observer(before, after, evaluated, accepted)``, if given, sees copies
    of the genotype around every subset step.
    """
    order, donors = draw_gom_randomness(rng, len(fos), len(population))
    tpl = template(parent.tree.h, parent.tree.r)
    off = parent.copy()
    backup = parent.copy()
    evaluations = 0
    mask_b = np.empty(tpl.size, dtype=np.bool_)
    mask_o = np.empty(tpl.size, dtype=np.bool_)
    K.active_mask(backup.tree.codes, sets.arities, tpl.children, mask_b)
    for s, d in zip(order, donors):
        subset = np.asarray(fos.subsets[s])
        if len(subset) == fos.ell:
            continue
        before = off.tree.copy() if observer else None
        off.tree.codes[subset] = population.codes[d, subset]
        off.tree.consts[subset] = population.consts[d, subset]
        K.active_mask(off.tree.codes, sets.arities, tpl.children, mask_o)
        changed = (not np.array_equal(mask_b, mask_o)
                   or np.any(off.tree.codes[mask_o] != backup.tree.codes[mask_o])
                   or np.any(off.tree.consts[mask_o] != backup.tree.consts[mask_o]))
        if not changed:
            backup.tree.codes[subset] = off.tree.codes[subset]
            backup.tree.consts[subset] = off.tree.consts[subset]
            if observer:
                observer(before, off.tree.copy(), False, True)
            continue
        f, a, b = fitness_fn(off.tree)
        evaluations += 1
        accepted = f <= backup.fitness
        if accepted:
            backup.tree.codes[subset] = off.tree.codes[subset]
            backup.tree.consts[subset] = off.tree.consts[subset]
            backup.fitness, backup.scale = f, (a, b)
            mask_b[:] = mask_o
        else:
            off.tree.codes[subset] = backup.tree.codes[subset]
            off.tree.consts[subset] = backup.tree.consts[subset]
        if observer:
            observer(before, off.tree.copy(), True, accepted)
    off.fitness, off.scale = backup.fitness, backup.scale
    return off, evaluations


def learn_fos(population: Population, fos_kind: str, sets: SymbolSet,
              rng: np.random.Generator, erc: str = "all",
              bias: BiasCoefficients | None = None, bins: ErcBinTable | None = None) -> Fos:
    ell = population.codes.shape[1]
    if fos_kind == "rt":
        return build_random_tree(rng, ell)
    model = count_frequencies(population.codes, population.consts, sets.const_code,
                              "all" if erc == "none" else erc, bins)
    if fos_kind == "lt-mi":
        return build_linkage_tree(mi_matrix(model))
    if bias is None:
        raise ConfigError("lt-mib needs bias coefficients from the initial population")
    return build_linkage_tree(biased_mi_matrix(model, bias))


def generation(population: Population, fos: Fos, sets: SymbolSet, data: TrainingData,
               rng: np.random.Generator) -> tuple[Population, int]:
    """Apply GOM to every individual; the offspring replace the population."""
    n_pop = len(population)
    n_fos = len(fos)
    perms = np.empty((n_pop, n_fos), dtype=np.int64)
    donors = np.empty((n_pop, n_fos), dtype=np.int64)
    for i in range(n_pop):
        perms[i], donors[i] = draw_gom_randomness(rng, n_fos, n_pop)
    members, offsets, skip = fos.flat()
    tpl = template(population.h, population.r)
    with np.errstate(all="ignore"):
        codes, consts, fit, a, b, evals = K.gom_generation(
            population.codes, population.consts, population.fitness,
            population.scale_a, population.scale_b, members, offsets, skip,
            perms, donors, sets.kinds, sets.args, sets.arities, tpl.children,
            data.XT, data.y)
    return Population(population.h, population.r, codes, consts, fit, a, b), int(evals)


def has_converged(population: Population) -> bool:
    """True iff every genotype (introns included) is identical."""
    return bool(np.all(population.codes == population.codes[0])
                and np.all(population.consts == population.consts[0]))


@dataclass
class RunResult:
    best: Solution
    trace: list[float] = field(default_factory=list)
    evaluations: int = 0
    seconds: float = 0.0
    generations: int = 0
    restarts: int = 0


class GomeaRun:
    """One GP-GOMEA run that advances a generation at a time."""

    def __init__(self, config: GomeaConfig, data: TrainingData, sets: SymbolSet,
                 rng: np.random.Generator, n_pop: int | None = None):
        self.config = config
        self.data = data
        self.sets = sets
        self.rng = rng
        self.n_pop = n_pop or config.n_pop
        self.population: Population | None = None
        self.bias: BiasCoefficients | None = None
        self.bins = ErcBinTable(config.bin_capacity)
        self.best: Solution | None = None
        self.generation = 0
        self.evaluations = 0
        self.trace: list[float] = []
        self.last_fos: Fos | None = None

    @property
    def best_fitness(self) -> float:
        return np.inf if self.best is None else self.best.fitness

    def initialize(self) -> None:
        """(Re)start from a fresh random population; the best-so-far is kept."""
        cfg = self.config
        self.population = init_population(self.rng, self.n_pop, cfg.h, self.sets, self.data)
        self.evaluations += self.n_pop
        self.bins.reset()
        if cfg.fos == "lt-mib":
            model = count_frequencies(self.population.codes, self.population.consts,
                                      self.sets.const_code, self._strategy, self.bins)
            self.bias = capture_bias(model)
        self._update_best()

    @property
    def _strategy(self) -> str:
        return "all" if self.config.erc == "none" else self.config.erc

    def _update_best(self) -> None:
        i = self.population.best_index()
        if self.best is None or self.population.fitness[i] < self.best.fitness:
            self.best = self.population.solution(i)

    def learn_fos(self) -> Fos:
        if not self.config.persist_bins:
            self.bins.reset()
        return learn_fos(self.population, self.config.fos, self.sets, self.rng,
                         self._strategy, self.bias, self.bins)

    def step(self) -> None:
        if self.population is None:
            self.initialize()
        fos = self.learn_fos()
        self.last_fos = fos
        self.population, evals = generation(self.population, fos, self.sets, self.data, self.rng)
        self.evaluations += evals
        self.generation += 1
        self._update_best()
        self.trace.append(self.best.fitness)

    def has_converged(self) -> bool:
        return self.population is not None and has_converged(self.population)


def run_gomea(config: GomeaConfig, dataset: Dataset, split: SplitIndices) -> RunResult:
    """Run GP-GOMEA on the training part of ``split`` until the budget is spent.

    With a time budget a converged population is restarted from scratch
    (bias recaptured); the best solution found so far is always kept.
    """
    X, y = dataset.subset(split.train)
    sets = config.symbol_set(X)
    data = TrainingData(X, y)
    rng = np.random.default_rng(config.seed)
    start = time.perf_counter()
    run = GomeaRun(config, data, sets, rng)
    run.initialize()
    restarts = 0
    while True:
        if config.generations is not None and run.generation >= config.generations:
            break
        if config.seconds is not None and time.perf_counter() - start >= config.seconds:
            break
        if config.seconds is not None and run.has_converged():
            run.initialize()
            restarts += 1
        run.step()
    return RunResult(run.best, run.trace, run.evaluations,
                     time.perf_counter() - start, run.generation, restarts)


def with_seed(config: GomeaConfig, seed: int) -> GomeaConfig:
    return replace(config, seed=seed)
