"""Experiment orchestration: repeated runs on paired splits and CSV output."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .fitness import Dataset, TrainingData, load_csv, split
from .gomea import ConfigError, GomeaConfig, GomeaRun, run_gomea
from .gptrad import TradConfig, run_gptrad
from .ims import ImsConfig, ImsScheduler, default_run_factory
from .linkage import (
    biased_mi_matrix,
    capture_bias,
    count_frequencies,
    mi_matrix,
    write_matrix_csv,
)
from .solutions import nmse_on, scaled_expression

log = logging.getLogger(__name__)

ALGORITHMS = ("gomea-lt-mib", "gomea-lt-mi", "gomea-rt", "gptrad-h", "gptrad-l")
RESULT_HEADER = ("run_id", "seed", "algo", "dataset", "split_seed", "train_nmse",
                 "val_nmse", "test_nmse", "evaluations", "elapsed_s", "expression")
ROLE_SPLIT, ROLE_RUN = 0, 1


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = ""
    algorithm: str = "gomea-lt-mib"
    erc: str = "none"
    h: int = 4
    n_pop: int | None = None
    ims_g: int | None = None
    ims_n_base: int | None = None
    generations: int | None = 20
    seconds: float | None = None
    repetitions: int = 30
    seed: int = 0
    output: str = "results.csv"
    bin_capacity: int = 100

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: expected one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.erc not in ("none", "all", "no", "bin"):
            raise ConfigError(f"erc: expected none/all/no/bin, got {self.erc!r}")
        ims = self.ims_g is not None or self.ims_n_base is not None
        if ims == (self.n_pop is not None):
            raise ConfigError("n_pop / ims: set exactly one of n_pop or the ims_g + ims_n_base pair")
        if ims and (self.ims_g is None or self.ims_n_base is None):
            raise ConfigError("ims_g, ims_n_base: both are required for IMS")
        if self.repetitions < 1:
            raise ConfigError("repetitions: must be at least 1")
        if self.generations is None and self.seconds is None:
            raise ConfigError("generations / seconds: a budget is required")

    @property
    def uses_ims(self) -> bool:
        return self.ims_g is not None


def _coerce(field_type: str, raw: str):
    raw = raw.strip()
    if raw.lower() in ("", "none", "null"):
        return None
    if "int" in field_type:
        return int(raw)
    if "float" in field_type:
        return float(raw)
    return raw


def parse_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    types = {f.name: str(f.type) for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(types[key], raw)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from None
    return values


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults < config file < explicit overrides (``None`` means unset)."""
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "n_pop" not in values and "ims_g" not in values and "ims_n_base" not in values:
        values["n_pop"] = 1000
    return ExperimentConfig(**values)


def derive_seed(master: int, repetition: int, role: int) -> int:
    """Hash (master seed, repetition, role) into a 63-bit seed."""
    ss = np.random.SeedSequence(master, spawn_key=(repetition, role))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class RunRecord:
    run_id: int
    seed: int
    algo: str
    dataset: str
    split_seed: int
    train_nmse: float
    val_nmse: float
    test_nmse: float
    evaluations: int
    elapsed_s: float
    expression: str


def algorithm_config(cfg: ExperimentConfig, seed: int, n_pop: int):
    if cfg.algorithm.startswith("gomea"):
        return GomeaConfig(n_pop=n_pop, h=cfg.h, fos=cfg.algorithm[len("gomea-"):], erc=cfg.erc,
                           generations=cfg.generations, seconds=cfg.seconds, seed=seed,
                           bin_capacity=cfg.bin_capacity)
    limit = "height" if cfg.algorithm == "gptrad-h" else "nodes"
    return TradConfig(n_pop=n_pop, limit=limit, h=cfg.h, erc=cfg.erc != "none",
                      generations=cfg.generations, seconds=cfg.seconds, seed=seed)


def run_once(cfg: ExperimentConfig, dataset: Dataset, repetition: int) -> RunRecord:
    split_seed = derive_seed(cfg.seed, repetition, ROLE_SPLIT)
    seed = derive_seed(cfg.seed, repetition, ROLE_RUN)
    sp = split(dataset, np.random.default_rng(split_seed))
    X_tr, y_tr = dataset.subset(sp.train)
    X_va, y_va = dataset.subset(sp.validation)
    X_te, y_te = dataset.subset(sp.test)
    start = time.perf_counter()
    if cfg.uses_ims:
        base = algorithm_config(cfg, seed, cfg.ims_n_base)
        sets = base.symbol_set(X_tr)
        ims_cfg = ImsConfig(base, g=cfg.ims_g, generations=cfg.generations, seconds=cfg.seconds)
        sched = ImsScheduler(ims_cfg, default_run_factory(ims_cfg, TrainingData(X_tr, y_tr), sets))
        sched.run()
        best = sched.finalize(X_va, y_va, sets).solution
        evaluations = sched.evaluations
    else:
        acfg = algorithm_config(cfg, seed, cfg.n_pop)
        sets = acfg.symbol_set(X_tr)
        result = (run_gomea if isinstance(acfg, GomeaConfig) else run_gptrad)(acfg, dataset, sp)
        best = result.best
        evaluations = result.evaluations
    elapsed = time.perf_counter() - start
    record = RunRecord(
        run_id=repetition, seed=seed, algo=cfg.algorithm, dataset=dataset.name,
        split_seed=split_seed,
        train_nmse=nmse_on(best, X_tr, y_tr, sets),
        val_nmse=nmse_on(best, X_va, y_va, sets),
        test_nmse=nmse_on(best, X_te, y_te, sets),
        evaluations=int(evaluations), elapsed_s=elapsed,
        expression=scaled_expression(best, sets))
    log.info("%s %s rep %d: train %.4g val %.4g test %.4g (%.1fs)", cfg.algorithm,
             dataset.name, repetition, record.train_nmse, record.val_nmse,
             record.test_nmse, elapsed)
    return record


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None) -> list[RunRecord]:
    """All repetitions of one configuration; split seeds depend only on the
    master seed and repetition index, so algorithms are paired."""
    if dataset is None:
        if not cfg.dataset:
            raise ConfigError("dataset: no path given")
        dataset = load_csv(cfg.dataset)
    return [run_once(cfg, dataset, rep) for rep in range(cfg.repetitions)]


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def emit_results(records: list[RunRecord], path) -> None:
    if not records:
        raise ConfigError("no records to write")
    rows = sorted(records, key=lambda r: (r.dataset, r.algo, r.run_id))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for r in rows:
            w.writerow([_fmt(getattr(r, k)) for k in RESULT_HEADER])


def read_results(path) -> list[RunRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(RunRecord(
                int(row["run_id"]), int(row["seed"]), row["algo"], row["dataset"],
                int(row["split_seed"]), float(row["train_nmse"]), float(row["val_nmse"]),
                float(row["test_nmse"]), int(row["evaluations"]), float(row["elapsed_s"]),
                row["expression"]))
    return out


def summarize(records: list[RunRecord]) -> list[dict]:
    """Median and interquartile range per (algorithm, dataset)."""
    groups: dict[tuple[str, str], list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.algo, r.dataset), []).append(r)
    out = []
    for (algo, ds), recs in sorted(groups.items()):
        row = {"algo": algo, "dataset": ds, "runs": len(recs)}
        for key in ("train_nmse", "val_nmse", "test_nmse", "elapsed_s"):
            vals = np.array([getattr(r, key) for r in recs])
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            row[f"{key}_median"] = float(med)
            row[f"{key}_iqr"] = float(q3 - q1)
        out.append(row)
    return out


def similarity_at_generation(cfg: ExperimentConfig, dataset: Dataset, generation: int,
                             kind: str | None = None) -> np.ndarray:
    """MI (or bias-corrected MI) matrix of the population at ``generation``.

    Generation 1 is the freshly initialized population.
    """
    if not cfg.algorithm.startswith("gomea"):
        raise ConfigError("algorithm: similarity dumps need a gomea algorithm")
    if generation < 1:
        raise ConfigError("generation: must be at least 1")
    kind = kind or ("mib" if cfg.algorithm == "gomea-lt-mib" else "mi")
    sp = split(dataset, np.random.default_rng(derive_seed(cfg.seed, 0, ROLE_SPLIT)))
    X, y = dataset.subset(sp.train)
    gcfg = algorithm_config(cfg, derive_seed(cfg.seed, 0, ROLE_RUN), cfg.n_pop or cfg.ims_n_base)
    sets = gcfg.symbol_set(X)
    run = GomeaRun(gcfg, TrainingData(X, y), sets, np.random.default_rng(gcfg.seed))
    run.initialize()
    strategy = "all" if cfg.erc == "none" else cfg.erc
    if kind == "mib" and run.bias is None:
        run.bias = capture_bias(count_frequencies(
            run.population.codes, run.population.consts, sets.const_code, strategy))
    for _ in range(generation - 1):
        run.step()
    model = count_frequencies(run.population.codes, run.population.consts,
                              sets.const_code, strategy)
    if kind == "mib":
        return biased_mi_matrix(model, run.bias)
    return mi_matrix(model)


def dump_similarity_matrix(cfg: ExperimentConfig, generation: int, path,
                           dataset: Dataset | None = None, kind: str | None = None) -> np.ndarray:
    dataset = dataset if dataset is not None else load_csv(cfg.dataset)
    m = similarity_at_generation(cfg, dataset, generation, kind)
    write_matrix_csv(m, path)
    return m
