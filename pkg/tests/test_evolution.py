import math

import numpy as np
import pytest
from scipy import stats

from gpreg.chromosome import Chromosome
from gpreg.evaluation import GroundTruthTransform, make_synthetic_pair, make_texture_scene
from gpreg.evolution import (
    FitnessEvaluator,
    GpParams,
    RunState,
    adapt_mutation_rate,
    crossover,
    initialize,
    mutate,
    rank_population,
    register,
    select_pair,
    select_positions,
    selection_probability,
    should_stop,
    step_generation,
    stop_reason,
    tree_nodes,
)
from gpreg.evolution import _point_mutation
from gpreg.expr import ARITY, TAGS_BY_ARITY, iter_preorder, parse, random_tree
from gpreg.fitness import FitnessResult, SamplePlan

DIMS = (256, 256)


def scored(mi, id, valid=True):
    c = Chromosome(parse("x"), parse("y"), id=id)
    c.fitness = FitnessResult(mi, 1.0 if valid else 0.1, valid)
    return c


def random_chrom(rng, height=6):
    return Chromosome(random_tree(rng, height, DIMS, "full"), random_tree(rng, height, DIMS, "grow"))


@pytest.fixture(scope="module")
def small_pair():
    scene = make_texture_scene(48, seed=2, slope=3.0)
    t = GroundTruthTransform(parse("(sub x (const 3))"), parse("(sub y (const 5))"))
    ref, sensed, _ = make_synthetic_pair(scene, t)
    return sensed, ref


SMALL = GpParams(population_size=20, max_generations=8)
SMALL_PLAN = SamplePlan(0.05, 100, 0.25)


class TestParams:
    def test_table_defaults(self):
        p = GpParams()
        assert (p.population_size, p.crossover_prob, p.mutation_rate) == (150, 0.9, 0.3)
        assert (p.elite_count, p.init_max_height, p.mutation_max_height) == (3, 6, 3)
        assert (p.cross_axis_prob, p.stall_increment) == (0.2, 0.02)
        assert (p.stall_window, p.stop_patience, p.max_generations) == (10, 30, 500)

    @pytest.mark.parametrize("n, elites", [(1, 1), (50, 1), (51, 2), (150, 3), (200, 4)])
    def test_elite_count_is_two_percent_rounded_up(self, n, elites):
        assert GpParams(population_size=n).elite_count == elites

    def test_validation(self):
        for bad in [dict(population_size=0), dict(crossover_prob=1.5), dict(mutation_rate=-0.1), dict(init_max_height=13)]:
            with pytest.raises(ValueError):
                GpParams(**bad)


class TestRanking:
    def test_invalid_sorts_last(self):
        ranked = rank_population([scored(0.3, 5), scored(0.9, 2), scored(0.9, 7, valid=False)])
        assert [(c.id, c.rank) for c in ranked] == [(2, 1), (5, 2), (7, 3)]

    def test_single(self):
        assert rank_population([scored(0.1, 0)])[0].rank == 1

    def test_ties_go_to_lower_id(self):
        ranked = rank_population([scored(0.5, 9), scored(0.5, 4)])
        assert [c.id for c in ranked] == [4, 9]

    def test_unevaluated_raises(self):
        with pytest.raises(ValueError):
            rank_population([Chromosome(parse("x"), parse("y"))])


class TestSelection:
    def test_probability_examples(self):
        assert selection_probability(1, 150) == pytest.approx(150 / 11325, rel=1e-15)
        assert selection_probability(1, 150) == pytest.approx(0.0132450, abs=1e-7)
        assert selection_probability(150, 150) == pytest.approx(8.83e-5, abs=1e-7)

    @pytest.mark.parametrize("M", [1, 2, 10, 150, 1000])
    def test_probabilities_sum_to_one(self, M):
        assert math.fsum(selection_probability(p, M) for p in range(1, M + 1)) == pytest.approx(1.0, abs=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            selection_probability(0, 10)
        with pytest.raises(ValueError):
            selection_probability(11, 10)

    def test_rank_one_frequency(self):
        draws = select_positions(np.random.default_rng(0), 10, 1_000_000)
        assert abs(np.mean(draws == 0) - 10 / 55) <= 0.01

    def test_chi_square(self):
        draws = select_positions(np.random.default_rng(1), 10, 1_000_000)
        observed = np.bincount(draws, minlength=10)
        expected = np.array([selection_probability(p, 10) for p in range(1, 11)]) * draws.size
        _, p_value = stats.chisquare(observed, expected)
        assert p_value > 0.001

    def test_single_member(self):
        only = [scored(0.2, 0)]
        a, b = select_pair(only, np.random.default_rng(0))
        assert a is only[0] and b is only[0]

    def test_seeded_stream_is_reproducible(self):
        pop = rank_population([scored(i / 10, i) for i in range(10)])
        seq = lambda: [tuple(c.id for c in select_pair(pop, rng)) for _ in range(50)]  # noqa: E731
        rng = np.random.default_rng(7)
        first = seq()
        rng = np.random.default_rng(7)
        assert seq() == first


class TestCrossover:
    def test_no_crossover_copies_parents(self):
        rng = np.random.default_rng(0)
        a, b = random_chrom(rng), random_chrom(rng)
        ca, cb = crossover(a, b, GpParams(crossover_prob=0.0), rng)
        assert ca.same_trees(a) and cb.same_trees(b)
        assert ca is not a and ca.fitness is None

    def test_terminal_parents_swap_at_root(self):
        a = Chromosome(parse("x"), parse("y"))
        b = Chromosome(parse("e"), parse("(const 4)"))
        ca, cb = crossover(a, b, GpParams(crossover_prob=1.0, cross_axis_prob=0.0), np.random.default_rng(0))
        assert ca.x_tree == b.x_tree and cb.x_tree == a.x_tree
        assert ca.y_tree == b.y_tree and cb.y_tree == a.y_tree

    def test_cross_axis(self):
        a = Chromosome(parse("x"), parse("y"))
        b = Chromosome(parse("e"), parse("(const 4)"))
        ca, cb = crossover(a, b, GpParams(crossover_prob=1.0, cross_axis_prob=1.0), np.random.default_rng(0))
        # a's x-tree swapped with b's y-tree, a's y-tree with b's x-tree
        assert ca.x_tree == b.y_tree and cb.y_tree == a.x_tree
        assert ca.y_tree == b.x_tree and cb.x_tree == a.y_tree

    def test_swap_conserves_nodes(self):
        rng = np.random.default_rng(3)
        params = GpParams(crossover_prob=1.0, cross_axis_prob=0.0)
        for _ in range(200):
            a, b = random_chrom(rng, 4), random_chrom(rng, 4)
            ca, cb = crossover(a, b, params, rng)
            before = sorted(n.tag for t in (a.x_tree, b.x_tree) for n in iter_preorder(t))
            after = sorted(n.tag for t in (ca.x_tree, cb.x_tree) for n in iter_preorder(t))
            assert before == after

    def test_depth_cap_over_many_operations(self):
        rng = np.random.default_rng(4)
        params = GpParams(crossover_prob=1.0)
        pool = [random_chrom(rng) for _ in range(60)]
        for i in range(10_000):
            a, b = pool[i % 60], pool[(7 * i + 3) % 60]
            ca, cb = crossover(a, b, params, rng)
            for c in (ca, cb):
                assert c.x_tree.height <= 12 and c.y_tree.height <= 12
            pool[i % 60], pool[(7 * i + 3) % 60] = ca, cb


class TestMutation:
    def test_zero_rate_is_identity(self):
        rng = np.random.default_rng(0)
        c = random_chrom(rng)
        for _ in range(100):
            assert mutate(c, GpParams(), 0.0, rng, DIMS) is c

    def test_point_mutation_keeps_arity(self):
        params = GpParams(node_mutation_prob=1.0)
        rng = np.random.default_rng(1)
        seen = set()
        for _ in range(500):
            t = _point_mutation(parse("(add x y)"), params, rng, DIMS)
            seen.add(t.tag)
            assert t.tag in TAGS_BY_ARITY[2]
            assert all(ch.tag in TAGS_BY_ARITY[0] for ch in t.children)
        assert seen == set(TAGS_BY_ARITY[2])

    def test_constants_redrawn_in_range(self):
        rng = np.random.default_rng(2)
        values = []
        for _ in range(2000):
            t = _point_mutation(parse("x"), GpParams(node_mutation_prob=1.0), rng, (40, 10))
            if t.tag == "const":
                values.append(t.value)
        assert values and max(abs(v) for v in values) <= 40

    def test_structure_over_many_operations(self):
        rng = np.random.default_rng(5)
        params = GpParams()
        c = random_chrom(rng)
        changed = 0
        for _ in range(10_000):
            m = mutate(c, params, 0.9, rng, DIMS)
            changed += m is not c
            for n in tree_nodes(m):
                assert len(n.children) == ARITY[n.tag]
            assert m.x_tree.height <= 12 and m.y_tree.height <= 12
            c = m if m.x_tree.size + m.y_tree.size < 400 else c
        assert changed > 5000

    def test_rate_drives_frequency(self):
        rng = np.random.default_rng(6)
        c = random_chrom(rng, 5)
        n = 4000
        changed = sum(mutate(c, GpParams(), 0.3, rng, DIMS) is not c for _ in range(n))
        # P(neither variant fires) = 0.85^2; variant 2 can fire without changing anything
        assert 0.15 < changed / n < 1 - 0.85**2 + 0.03


class TestAdaptiveRate:
    def fresh(self, score=1.0):
        best = scored(score, 0)
        return RunState(0, [best], best, 0.3, np.random.default_rng(0), reference_score=score)

    def test_two_flat_windows(self):
        state, params = self.fresh(), GpParams()
        for _ in range(2 * params.stall_window):
            adapt_mutation_rate(state, params)
        assert state.current_mutation_rate == pytest.approx(0.34, abs=1e-12)

    def test_reset_on_improvement(self):
        state, params = self.fresh(), GpParams()
        for _ in range(25):
            adapt_mutation_rate(state, params)
        assert state.current_mutation_rate > 0.3
        state.best_ever = scored(1.01, 1)
        assert adapt_mutation_rate(state, params) == 0.3
        assert state.stall_counter == 0

    def test_tiny_gains_count_as_flat(self):
        state, params = self.fresh(), GpParams()
        for k in range(1, 11):
            state.best_ever = scored(1.0 + k * 5e-6, k)
            adapt_mutation_rate(state, params)
        assert state.current_mutation_rate == pytest.approx(0.32)

    def test_capped(self):
        state, params = self.fresh(), GpParams()
        for _ in range(10_000):
            adapt_mutation_rate(state, params)
            assert state.current_mutation_rate <= 0.9
        assert state.current_mutation_rate == pytest.approx(0.9)


class TestStopping:
    def test_patience(self):
        best = scored(1.0, 0)
        state = RunState(5, [best], best, 0.3, np.random.default_rng(0), reference_score=1.0)
        params = GpParams()
        for _ in range(29):
            adapt_mutation_rate(state, params)
            assert not should_stop(state, params)
        adapt_mutation_rate(state, params)
        assert stop_reason(state, params) == "patience"

    def test_improving_runs_to_budget(self):
        best = scored(0.0, 0)
        state = RunState(0, [best], best, 0.3, np.random.default_rng(0), reference_score=0.0)
        params = GpParams(max_generations=100)
        while not should_stop(state, params):
            state.generation += 1
            state.best_ever = scored(state.generation * 0.01, state.generation)
            adapt_mutation_rate(state, params)
        assert state.generation == 100
        assert stop_reason(state, params) == "max_generations"

    def test_zero_budget(self, small_pair):
        sensed, ref = small_pair
        r = register(sensed, ref, GpParams(population_size=10, max_generations=0), SMALL_PLAN, seed=1)
        assert r.generations == 0 and r.stop_reason == "max_generations"
        assert len(r.trace) == 1
        assert r.best.rank == 1


class TestLoop:
    def test_initialize_doubles_then_truncates(self, small_pair):
        sensed, ref = small_pair
        ev = FitnessEvaluator(sensed, ref, 0, SMALL_PLAN)
        state = initialize(GpParams(), sensed.dims, np.random.default_rng(0), ev)
        assert len(state.population) == 150
        assert state.next_id == 300
        assert [c.rank for c in state.population] == list(range(1, 151))
        assert max(c.height for ch in state.population for c in (ch.x_tree, ch.y_tree)) <= 6
        kept = {c.id for c in state.population}
        assert kept <= set(range(300))

    def test_initialize_keeps_the_best_half(self, small_pair):
        sensed, ref = small_pair
        captured = {}

        class Spy(FitnessEvaluator):
            def evaluate(self, chromosomes, generation):
                super().evaluate(chromosomes, generation)
                captured["all"] = list(chromosomes)

        ev = Spy(sensed, ref, 0, SMALL_PLAN)
        state = initialize(GpParams(population_size=40), sensed.dims, np.random.default_rng(1), ev)
        kept = {c.id for c in state.population}
        dropped = [c for c in captured["all"] if c.id not in kept]
        assert len(captured["all"]) == 80 and len(dropped) == 40
        worst_kept = state.population[-1].fitness.score
        assert all(c.fitness.score <= worst_kept for c in dropped)

    def test_population_of_one(self, small_pair):
        sensed, ref = small_pair
        ev = FitnessEvaluator(sensed, ref, 0, SMALL_PLAN)
        params = GpParams(population_size=1)
        state = initialize(params, sensed.dims, np.random.default_rng(0), ev)
        assert len(state.population) == 1 and state.next_id == 2
        step_generation(state, params, ev, sensed.dims)
        assert len(state.population) == 1

    def test_step_composition(self, small_pair):
        sensed, ref = small_pair
        ev = FitnessEvaluator(sensed, ref, 0, SMALL_PLAN)
        params = GpParams()
        state = initialize(params, sensed.dims, np.random.default_rng(2), ev)
        elites = [(c.id, c.fitness) for c in state.population[:3]]
        best_before = state.best_ever.fitness.score
        step_generation(state, params, ev, sensed.dims)
        assert len(state.population) == 150
        assert state.generation == 1
        ids = {c.id for c in state.population}
        for eid, fit in elites:
            assert eid in ids
            assert next(c for c in state.population if c.id == eid).fitness == fit
        assert sum(c.id >= 300 for c in state.population) == 147
        assert state.best_ever.fitness.score >= best_before

    def test_best_is_monotone(self, small_pair):
        sensed, ref = small_pair
        r = register(sensed, ref, GpParams(population_size=20, max_generations=40, stop_patience=100), SMALL_PLAN, seed=3)
        best = [rec.best_mi for rec in r.trace]
        assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))
        assert len(r.trace) == r.generations + 1

    def test_trees_stay_valid(self, small_pair):
        sensed, ref = small_pair
        seen = []

        def check(state):
            for c in state.population:
                for n in tree_nodes(c):
                    assert len(n.children) == ARITY[n.tag]
                assert c.x_tree.height <= 12 and c.y_tree.height <= 12
            seen.append(len(state.population))

        register(sensed, ref, GpParams(population_size=30, max_generations=15, stop_patience=100), SMALL_PLAN, seed=4, callback=check)
        assert seen == [30] * 16

    def test_deterministic(self, small_pair):
        sensed, ref = small_pair
        a = register(sensed, ref, SMALL, SMALL_PLAN, seed=11)
        b = register(sensed, ref, SMALL, SMALL_PLAN, seed=11)
        assert a.best.to_text() == b.best.to_text()
        assert a.trace == b.trace and a.generations == b.generations

    def test_threads_match_sequential(self, small_pair):
        sensed, ref = small_pair
        a = register(sensed, ref, SMALL, SMALL_PLAN, seed=12, threads=1)
        b = register(sensed, ref, SMALL, SMALL_PLAN, seed=12, threads=4)
        assert a.best.to_text() == b.best.to_text()
        assert a.trace == b.trace

    def test_seed_changes_run(self, small_pair):
        sensed, ref = small_pair
        a = register(sensed, ref, SMALL, SMALL_PLAN, seed=1)
        b = register(sensed, ref, SMALL, SMALL_PLAN, seed=2)
        assert a.trace != b.trace

    def test_final_mi_uses_every_pixel(self, small_pair):
        from gpreg.fitness import full_mutual_information

        sensed, ref = small_pair
        r = register(sensed, ref, SMALL, SMALL_PLAN, seed=5)
        assert r.final_fitness == full_mutual_information(r.best, sensed, ref)
