import csv

import numpy as np
import pytest

from gpgomea import cli, harness
from gpgomea.fitness import split
from gpgomea.gomea import ConfigError
from gpgomea.harness import (
    ExperimentConfig,
    RunRecord,
    build_config,
    derive_seed,
    emit_results,
    parse_config_file,
    read_results,
    run_experiment,
    similarity_at_generation,
    summarize,
)
from gpgomea.tree import evaluate_infix

from conftest import make_dataset


def quick(**kw):
    base = dict(algorithm="gomea-lt-mib", h=3, n_pop=30, generations=2, repetitions=1, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def write_dataset(path, ds):
    np.savetxt(path, np.column_stack([ds.features, ds.target]), delimiter=",", fmt="%.17g")
    return str(path)


class TestConfig:
    def test_exactly_one_sizing(self):
        with pytest.raises(ConfigError, match="n_pop"):
            ExperimentConfig(n_pop=10, ims_g=4, ims_n_base=8)
        with pytest.raises(ConfigError, match="n_pop"):
            ExperimentConfig()
        with pytest.raises(ConfigError, match="ims_n_base"):
            ExperimentConfig(ims_g=4)
        assert ExperimentConfig(ims_g=4, ims_n_base=8).uses_ims

    def test_unknown_algorithm_named(self):
        with pytest.raises(ConfigError, match="algorithm"):
            quick(algorithm="gomea-xx")

    def test_file_parsing(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\nalgorithm = gptrad-l\nn-pop = 50  # trailing\nseconds = 1.5\n"
                     "generations = none\n")
        vals = parse_config_file(p)
        assert vals == {"algorithm": "gptrad-l", "n_pop": 50, "seconds": 1.5, "generations": None}

    @pytest.mark.parametrize("text,match", [("bogus = 1\n", "unknown key"), ("h = tall\n", "bad value"),
                                            ("just words\n", "expected key = value")])
    def test_file_errors_name_line(self, tmp_path, text, match):
        p = tmp_path / "bad.cfg"
        p.write_text("seed = 1\n" + text)
        with pytest.raises(ConfigError, match=f"bad.cfg:2: {match}"):
            parse_config_file(p)

    def test_precedence(self):
        cfg = build_config({"h": 5, "seed": 9}, {"h": 3, "seed": None})
        assert (cfg.h, cfg.seed, cfg.n_pop, cfg.algorithm) == (3, 9, 1000, "gomea-lt-mib")

    def test_cli_overrides_file(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("n_pop = 40\ngenerations = 7\nh = 5\n")
        args = cli.build_parser().parse_args(
            ["run", "--config", str(p), "--ims-g", "4", "--ims-n-base", "8", "--seconds", "2"])
        cfg = cli.config_from_args(args)
        assert (cfg.n_pop, cfg.ims_g, cfg.ims_n_base, cfg.generations, cfg.seconds, cfg.h) == \
            (None, 4, 8, None, 2.0, 5)


class TestSeeds:
    def test_roles_and_reps_differ(self):
        seeds = {derive_seed(0, rep, role) for rep in range(50) for role in (0, 1)}
        assert len(seeds) == 100
        assert all(0 <= s < 2**63 for s in seeds)

    def test_stable_across_calls(self):
        assert derive_seed(42, 3, 1) == derive_seed(42, 3, 1)


class TestRunExperiment:
    def test_one_repetition_one_record(self, dataset):
        recs = run_experiment(quick(), dataset)
        assert len(recs) == 1
        r = recs[0]
        assert min(r.train_nmse, r.val_nmse, r.test_nmse) >= 0
        assert r.evaluations > 0 and r.dataset == dataset.name

    def test_paired_split_seeds(self, dataset):
        a = run_experiment(quick(algorithm="gomea-rt", repetitions=3), dataset)
        b = run_experiment(quick(algorithm="gptrad-h", repetitions=3), dataset)
        assert [r.split_seed for r in a] == [r.split_seed for r in b]
        assert len({r.split_seed for r in a}) == 3

    @pytest.mark.parametrize("algo", harness.ALGORITHMS)
    def test_expression_reproduces_test_nmse(self, dataset, algo):
        for r in run_experiment(quick(algorithm=algo, repetitions=2, erc="bin"), dataset):
            sp = split(dataset, np.random.default_rng(r.split_seed))
            X, y = dataset.subset(sp.test)
            assert abs(nmse_of(r.expression, X, y) - r.test_nmse) <= 1e-9

    def test_ims_path(self, dataset):
        r = run_experiment(quick(n_pop=None, ims_g=2, ims_n_base=8, generations=9), dataset)[0]
        sp = split(dataset, np.random.default_rng(r.split_seed))
        X, y = dataset.subset(sp.validation)
        assert abs(nmse_of(r.expression, X, y) - r.val_nmse) <= 1e-9

    def test_pure_function_of_config(self, dataset):
        strip = lambda recs: [(r.seed, r.train_nmse, r.test_nmse, r.expression, r.evaluations)
                              for r in recs]
        cfg = quick(repetitions=2, erc="all")
        assert strip(run_experiment(cfg, dataset)) == strip(run_experiment(cfg, dataset))

    def test_missing_dataset(self):
        with pytest.raises(ConfigError, match="dataset"):
            run_experiment(quick())


def nmse_of(expression, X, y):
    return 100 * np.mean((y - evaluate_infix(expression, X)) ** 2) / np.var(y)


class TestEmit:
    def record(self, run_id=0, algo="gomea-rt", **kw):
        base = dict(run_id=run_id, seed=1, algo=algo, dataset="d", split_seed=2,
                    train_nmse=1 / 3, val_nmse=0.1, test_nmse=2.0, evaluations=5,
                    elapsed_s=0.25, expression="(x0 + 1)")
        base.update(kw)
        return RunRecord(**base)

    def test_single_record(self, tmp_path):
        p = tmp_path / "r.csv"
        emit_results([self.record()], p)
        lines = p.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0] == ",".join(harness.RESULT_HEADER)
        assert "0.33333333333333331" in lines[1]

    def test_byte_identical_and_ordered(self, tmp_path):
        recs = [self.record(2), self.record(0, algo="gptrad-h"), self.record(1), self.record(0)]
        emit_results(recs, tmp_path / "a.csv")
        emit_results(recs[::-1], tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        back = read_results(tmp_path / "a.csv")
        assert [(r.algo, r.run_id) for r in back] == [("gomea-rt", 0), ("gomea-rt", 1),
                                                      ("gomea-rt", 2), ("gptrad-h", 0)]
        assert back[0] == self.record(0)

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            emit_results([], tmp_path / "x.csv")

    def test_unwritable(self, tmp_path):
        with pytest.raises(OSError):
            emit_results([self.record()], tmp_path / "missing" / "x.csv")

    def test_expression_with_comma_survives(self, tmp_path):
        r = self.record(expression="aq(x0, x1)")
        emit_results([r], tmp_path / "c.csv")
        assert read_results(tmp_path / "c.csv")[0].expression == "aq(x0, x1)"

    def test_summary(self):
        recs = [self.record(i, train_nmse=float(i)) for i in range(5)]
        (row,) = summarize(recs)
        assert row["runs"] == 5
        assert row["train_nmse_median"] == 2.0
        assert row["train_nmse_iqr"] == 2.0


class TestSimilarityDump:
    def test_identity_at_generation_one(self, dataset):
        cfg = quick(h=2, n_pop=500, dataset="x")
        m = similarity_at_generation(cfg, dataset, 1)
        np.testing.assert_allclose(m, np.eye(7), atol=1e-9)

    def test_shape_and_symmetry(self, dataset):
        m = similarity_at_generation(quick(h=2, n_pop=200, algorithm="gomea-lt-mi"), dataset, 3)
        assert m.shape == (7, 7)
        np.testing.assert_array_equal(m, m.T)

    def test_small_population_leaves_unit_range(self):
        ds = make_dataset(n=60, d=6, seed=1)
        outside = 0
        for seed in range(10):
            m = similarity_at_generation(quick(h=2, n_pop=10, seed=seed), ds, 2)
            off = m[~np.eye(7, dtype=bool)]
            outside += int(np.any((off < 0) | (off > 1)))
        assert outside > 0

    def test_needs_gomea(self, dataset):
        with pytest.raises(ConfigError):
            similarity_at_generation(quick(algorithm="gptrad-h"), dataset, 1)


class TestCli:
    def test_run_summarize_dump(self, tmp_path, capsys):
        data = write_dataset(tmp_path / "d.csv", make_dataset(n=60))
        out = tmp_path / "res.csv"
        code = cli.main(["run", "--dataset", data, "--n-pop", "20", "--h", "3", "--generations", "2",
                         "--repetitions", "2", "--output", str(out)])
        assert code == 0
        assert len(out.read_text().splitlines()) == 3
        assert cli.main(["summarize", str(out)]) == 0
        rows = list(csv.DictReader(capsys.readouterr().out.splitlines()[1:]))
        assert rows[0]["runs"] == "2"
        mat = tmp_path / "m.csv"
        assert cli.main(["dump-mi", "--dataset", data, "--n-pop", "100", "--h", "2",
                         "--matrix", str(mat)]) == 0
        np.testing.assert_allclose(np.loadtxt(mat, delimiter=","), np.eye(7), atol=1e-9)

    @pytest.mark.parametrize("argv", [
        ["run", "--dataset", "/nonexistent.csv", "--n-pop", "5"],
        ["run", "--n-pop", "5"],
        ["run", "--n-pop", "5", "--ims-g", "2", "--ims-n-base", "4", "--dataset", "x"],
        ["summarize", "/nonexistent.csv"],
    ])
    def test_errors_exit_nonzero(self, argv, capsys):
        assert cli.main(argv) == 2
        assert "gpgomea: error:" in capsys.readouterr().err
