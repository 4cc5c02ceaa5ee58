import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpgomea.fitness import TrainingData, scaled_mse, split
from gpgomea.gomea import ConfigError
from gpgomea.gptrad import (
    SizeLimit,
    TradConfig,
    TradRun,
    VariableTree,
    check_structure,
    evaluate,
    grow,
    height,
    init_ramped_half_and_half,
    node_depths,
    run_gptrad,
    subtree_crossover,
    subtree_end,
    subtree_mutation,
    to_infix,
    tournament_select,
)
from gpgomea.tree import SymbolSet, evaluate_prefix, parse_infix

from oracles import python_eval


def prefix(tokens, sets):
    codes, consts = [], []
    for t in tokens:
        if isinstance(t, float):
            codes.append(sets.const_code)
            consts.append(t)
        elif t.startswith("x"):
            codes.append(sets.n_functions + int(t[1:]))
            consts.append(0.0)
        else:
            codes.append(sets.functions.index(t))
            consts.append(0.0)
    return VariableTree(codes, consts)


class TestStructure:
    def test_depths_and_height(self, sets):
        t = prefix(["+", "*", "x0", "x1", "x2"], sets)
        np.testing.assert_array_equal(node_depths(t, sets.arities), [0, 1, 2, 2, 1])
        assert height(t, sets.arities) == 2
        assert subtree_end(t, 1, sets.arities) == 4
        assert check_structure(t, sets.arities)

    def test_malformed(self, sets):
        assert not check_structure(prefix(["+", "x0"], sets), sets.arities)
        assert not check_structure(prefix(["x0", "x1"], sets), sets.arities)


class TestInit:
    def test_degenerate_ramp(self, sets):
        r = np.random.default_rng(0)
        for _ in range(500):
            assert height(init_ramped_half_and_half(r, 2, sets), sets.arities) == 2

    def test_full_leaves_at_depth(self, sets):
        t = grow(np.random.default_rng(1), 3, sets, full=True)
        d = node_depths(t, sets.arities)
        leaves = sets.arities[t.codes] == 0
        assert np.all(d[leaves] == 3)

    def test_ramp_covers_heights(self, erc_sets):
        r = np.random.default_rng(2)
        seen = {height(init_ramped_half_and_half(r, 4, erc_sets), erc_sets.arities)
                for _ in range(10_000)}
        assert seen == {2, 3, 4}

    def test_trees_are_well_formed(self, erc_sets):
        r = np.random.default_rng(3)
        for _ in range(300):
            t = init_ramped_half_and_half(r, 5, erc_sets)
            assert check_structure(t, erc_sets.arities)

    def test_needs_height_two(self, sets):
        with pytest.raises(ConfigError):
            init_ramped_half_and_half(np.random.default_rng(0), 1, sets)


class TestTournament:
    def test_k1_uniform(self):
        r = np.random.default_rng(0)
        picks = np.bincount([tournament_select(np.arange(5.0), 1, r) for _ in range(5000)], minlength=5)
        assert picks.min() > 850

    def test_clones(self):
        r = np.random.default_rng(1)
        assert 0 <= tournament_select(np.ones(10), 7, r) < 10

    def test_best_sampled_always_wins(self):
        # 50 draws from 3 individuals include the best one for these seeds
        fit = np.array([3.0, 1.0, 2.0])
        draws = [tournament_select(fit, 50, np.random.default_rng(s)) for s in range(20)]
        assert set(draws) == {1}


class TestVariation:
    def test_root_swap_gives_copy_of_donor(self, sets):
        a = prefix(["+", "x0", "x1"], sets)
        b = prefix(["*", "x2", "x2"], sets)

        class Fixed:
            def integers(self, n):
                return 0

        child = subtree_crossover(a, b, Fixed(), SizeLimit("height", 4), sets)
        np.testing.assert_array_equal(child.codes, b.codes)

    def test_over_budget_returns_copy_of_first(self, sets):
        a = prefix(["+", "x0", "x1"], sets)
        b = prefix(["*", "+", "x0", "x1", "-", "x2", "x0"], sets)

        class Fixed:
            def __init__(self):
                self.calls = iter([1, 0])

            def integers(self, n):
                return next(self.calls)

        child = subtree_crossover(a, b, Fixed(), SizeLimit("nodes", 4), sets)
        np.testing.assert_array_equal(child.codes, a.codes)
        assert child is not a

    def test_leaf_mutation_with_zero_cap(self, sets):
        a = prefix(["+", "x0", "x1"], sets)

        class LeafFirst:
            """Pick position 2 (a leaf at the height limit), then defer."""

            def __init__(self, seed):
                self.inner = np.random.default_rng(seed)
                self.first = True

            def integers(self, *args, **kw):
                if self.first:
                    self.first = False
                    return 2
                return self.inner.integers(*args, **kw)

            def random(self, *args):
                return self.inner.random(*args)

        for seed in range(30):
            child = subtree_mutation(a, LeafFirst(seed), SizeLimit("height", 1), sets)
            np.testing.assert_array_equal(child.codes[:2], a.codes[:2])
            assert len(child) == 3
            assert sets.arities[child.codes[2]] == 0

    @pytest.mark.parametrize("kind,value", [("height", 4), ("nodes", 15), ("nodes", 31)])
    def test_limits_hold(self, erc_sets, kind, value):
        r = np.random.default_rng(value)
        limit = SizeLimit(kind, value)
        pool = [init_ramped_half_and_half(r, 4 if kind == "height" else 3, erc_sets)
                for _ in range(50)]
        pool = [t for t in pool if limit.holds(t, erc_sets.arities)]
        for _ in range(2000):
            a, b = pool[r.integers(len(pool))], pool[r.integers(len(pool))]
            child = (subtree_crossover(a, b, r, limit, erc_sets) if r.random() < 0.5
                     else subtree_mutation(a, r, limit, erc_sets))
            assert check_structure(child, erc_sets.arities)
            assert limit.holds(child, erc_sets.arities)
            pool[r.integers(len(pool))] = child

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_deterministic(self, seed):
        sets = SymbolSet(("+", "-", "*", "aq"), 2, erc=(-1.0, 1.0))
        a = init_ramped_half_and_half(np.random.default_rng(seed), 4, sets)
        b = init_ramped_half_and_half(np.random.default_rng(seed + 1), 4, sets)
        lim = SizeLimit("height", 4)
        c1 = subtree_crossover(a, b, np.random.default_rng(seed), lim, sets)
        c2 = subtree_crossover(a, b, np.random.default_rng(seed), lim, sets)
        m1 = subtree_mutation(a, np.random.default_rng(seed), lim, sets)
        m2 = subtree_mutation(a, np.random.default_rng(seed), lim, sets)
        assert c1.key() == c2.key() and m1.key() == m2.key()


class TestExport:
    def test_infix_matches_evaluation(self, erc_sets):
        r = np.random.default_rng(4)
        X = r.normal(size=(20, 3))
        for _ in range(100):
            t = init_ramped_half_and_half(r, 4, erc_sets)
            out = evaluate(t, X, erc_sets)
            text = to_infix(t, erc_sets)
            np.testing.assert_allclose(python_eval(text, X), out, rtol=1e-12, atol=1e-12)
            np.testing.assert_array_equal(evaluate_prefix(parse_infix(text), X, erc_sets), out)


class TestRun:
    @pytest.mark.parametrize("limit", ["height", "nodes"])
    def test_elitism_and_budget(self, dataset, limit):
        cfg = TradConfig(n_pop=80, limit=limit, h=3, erc=True, generations=6, seed=3)
        res = run_gptrad(cfg, dataset, split(dataset, np.random.default_rng(0)))
        assert res.generations == 6
        assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))

    def test_mutation_only_respects_limits(self, dataset):
        cfg = TradConfig(n_pop=60, limit="nodes", h=3, crossover_rate=0.0, mutation_rate=1.0,
                         generations=5, seed=1)
        X, y = dataset.features, dataset.target
        sets = cfg.symbol_set(X)
        run = TradRun(cfg, TrainingData(X, y), sets, np.random.default_rng(0))
        for _ in range(5):
            run.step()
            assert all(len(t) <= 15 for t in run.trees)

    def test_best_fitness_is_consistent(self, dataset):
        cfg = TradConfig(n_pop=50, h=4, generations=3, seed=2)
        X, y = dataset.features, dataset.target
        sets = cfg.symbol_set(X)
        run = TradRun(cfg, TrainingData(X, y), sets, np.random.default_rng(0))
        run.step()
        run.step()
        best = run.best
        assert best.fitness == pytest.approx(scaled_mse(y, evaluate(best.tree, X, sets)), rel=1e-12)
        assert run.evaluations <= 50 * 3

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            TradConfig(crossover_rate=0.5, mutation_rate=0.1)
        with pytest.raises(ConfigError):
            TradConfig(limit="depth")
