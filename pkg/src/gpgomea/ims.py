"""Interleaved Multistart Scheme.

Runs with doubling population sizes are interleaved: run i+1 performs its
k-th generation once run i has performed g*k generations. A run stops when a
later run has a strictly better best solution or when its population has
converged. The bests of stopped (and, at shutdown, surviving) runs go to an
archive, from which the final model is picked on the validation set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .fitness import TrainingData
from .gomea import ConfigError, GomeaConfig, GomeaRun
from .gptrad import TradConfig, TradRun
from .solutions import mse_fixed_scale
from .tree import SymbolSet

PENDING, ACTIVE, TERMINATED = "pending", "active", "terminated"


@dataclass(frozen=True)
class ImsConfig:
    base: GomeaConfig | TradConfig
    g: int = 4
    generations: int | None = None
    seconds: float | None = None

    def __post_init__(self):
        if self.g < 1:
            raise ConfigError("g must be at least 1")
        if self.base.n_pop < 2:
            raise ConfigError("n_base must be at least 2")
        if self.generations is None and self.seconds is None:
            raise ConfigError("IMS needs a generation or a time budget")

    @property
    def n_base(self) -> int:
        return self.base.n_pop


@dataclass
class RunSlot:
    index: int  # 1-based
    run: object
    status: str = ACTIVE

    @property
    def generation(self) -> int:
        return self.run.generation


@dataclass
class ArchiveEntry:
    solution: object
    run_index: int
    train_fitness: float


def run_seed(master: int, index: int) -> np.random.SeedSequence:
    """Independent stream per run index, so runs never perturb each other."""
    return np.random.SeedSequence(master, spawn_key=(index,))


def default_run_factory(config: ImsConfig, data: TrainingData, sets: SymbolSet):
    base = config.base
    cls = GomeaRun if isinstance(base, GomeaConfig) else TradRun

    def factory(index: int, n_pop: int):
        rng = np.random.default_rng(run_seed(base.seed, index))
        return cls(base, data, sets, rng, n_pop=n_pop)

    return factory


class ImsScheduler:
    """Single-threaded state machine over interleaved runs.

    ``run_factory(index, n_pop)`` must return an object with ``step()``,
    ``generation``, ``best``, ``best_fitness`` and ``has_converged()``.
    """

    def __init__(self, config: ImsConfig, run_factory):
        self.config = config
        self.factory = run_factory
        self.slots: list[RunSlot] = []
        self.archive: list[ArchiveEntry] = []
        self.total_generations = 0
        self.log: list[tuple[int, int]] = []
        self._finalized = False

    def alive(self) -> list[RunSlot]:
        return [s for s in self.slots if s.status == ACTIVE]

    def population_size(self, index: int) -> int:
        return 2 ** (index - 1) * self.config.n_base

    def _pick(self) -> RunSlot | None:
        """The latest run that is due; ``None`` means a new run is due."""
        g = self.config.g
        alive = self.alive()
        if not alive or alive[-1].generation >= g:
            return None
        for pos in range(len(alive) - 1, 0, -1):
            prev, slot = alive[pos - 1], alive[pos]
            if prev.generation >= g * (slot.generation + 1):
                return slot
        return alive[0]

    def schedule_step(self) -> tuple[int, int]:
        """Execute one generation of the run chosen by the cadence rule."""
        slot = self._pick()
        if slot is None:
            index = len(self.slots) + 1
            slot = RunSlot(index, self.factory(index, self.population_size(index)))
            self.slots.append(slot)
        slot.run.step()
        self.total_generations += 1
        self.log.append((slot.index, slot.generation))
        self.check_termination(slot.index)
        return slot.index, slot.generation

    def _terminate(self, slot: RunSlot) -> None:
        slot.status = TERMINATED
        best = slot.run.best
        self.archive.append(ArchiveEntry(best, slot.index, best.fitness))

    def check_termination(self, just_finished: int) -> list[int]:
        """Stop runs beaten by a later run, and converged runs."""
        alive = self.alive()
        stopped = []
        for pos, slot in enumerate(alive):
            mine = slot.run.best_fitness
            beaten = any(later.run.best_fitness < mine for later in alive[pos + 1:])
            if beaten or slot.run.has_converged():
                stopped.append(slot)
        for slot in stopped:
            self._terminate(slot)
        return [s.index for s in stopped]

    def budget_left(self, start: float) -> bool:
        cfg = self.config
        if cfg.generations is not None and self.total_generations >= cfg.generations:
            return False
        if cfg.seconds is not None and time.perf_counter() - start >= cfg.seconds:
            return False
        return True

    def run(self) -> None:
        start = time.perf_counter()
        while self.budget_left(start):
            self.schedule_step()

    def shutdown(self) -> None:
        if self._finalized:
            return
        for slot in self.alive():
            best = slot.run.best
            self.archive.append(ArchiveEntry(best, slot.index, best.fitness))
        self._finalized = True

    def finalize(self, X_val, y_val, sets: SymbolSet) -> ArchiveEntry:
        """Archive entry with the lowest validation error (earliest on ties)."""
        self.shutdown()
        if not self.archive:
            raise ConfigError("empty archive: no generation was executed")
        scores = [mse_fixed_scale(e.solution, X_val, y_val, sets) for e in self.archive]
        return self.archive[int(np.argmin(scores))]

    @property
    def evaluations(self) -> int:
        return sum(s.run.evaluations for s in self.slots)
