"""Generational GP loop over chromosome pairs of expression trees.

One run: a doubled random initial population is truncated to
``population_size``; each generation keeps ``elite_count`` elites, breeds the
rest through rank-based selection, subtree crossover and the two mutation
variants, and scores the offspring on a freshly drawn pixel sample shared by
the whole generation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .chromosome import Chromosome
from .expr import (
    ARITY,
    DEFAULT_DEPTH_CAP,
    TAGS_BY_ARITY,
    Node,
    constant_bound,
    depth_at,
    iter_preorder,
    node_at,
    random_tree,
    replace_at,
)
from .fitness import DEFAULT_BIN_WIDTH, FitnessContext, FitnessResult, SamplePlan, full_mutual_information, sample_pixels

__all__ = [
    "Chromosome",
    "GenerationRecord",
    "GpParams",
    "RunResult",
    "RunState",
    "FitnessEvaluator",
    "adapt_mutation_rate",
    "crossover",
    "initialize",
    "mutate",
    "rank_population",
    "register",
    "select_pair",
    "selection_probability",
    "should_stop",
    "step_generation",
]

REPAIR_ATTEMPTS = 5


@dataclass(frozen=True)
class GpParams:
    population_size: int = 150
    crossover_prob: float = 0.9
    mutation_rate: float = 0.3
    elite_count: int | None = None
    init_max_height: int = 6
    mutation_max_height: int = 3
    cross_axis_prob: float = 0.2
    stall_window: int = 10
    stall_increment: float = 0.02
    max_mutation_rate: float = 0.9
    stop_patience: int = 30
    max_generations: int = 500
    node_mutation_prob: float = 0.05
    improvement_threshold: float = 1e-4
    depth_cap: int = DEFAULT_DEPTH_CAP

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.elite_count is None:
            object.__setattr__(self, "elite_count", math.ceil(0.02 * self.population_size))
        if not 0 <= self.elite_count <= self.population_size:
            raise ValueError("elite_count must be in [0, population_size]")
        for name in ("crossover_prob", "mutation_rate", "cross_axis_prob", "max_mutation_rate", "node_mutation_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.init_max_height < 1 or self.mutation_max_height < 1:
            raise ValueError("tree heights must be >= 1")
        if self.init_max_height > self.depth_cap:
            raise ValueError("init_max_height exceeds depth_cap")
        if self.stall_window < 1 or self.stop_patience < 1 or self.max_generations < 0:
            raise ValueError("stall_window and stop_patience must be >= 1, max_generations >= 0")


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_mi: float
    mean_mi: float
    mutation_rate: float
    stall_counter: int


@dataclass
class RunState:
    generation: int
    population: list
    best_ever: Chromosome
    current_mutation_rate: float
    rng: np.random.Generator
    stall_counter: int = 0
    flat_generations: int = 0
    reference_score: float = -math.inf
    next_id: int = 0
    trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# fitness fan-out
# ---------------------------------------------------------------------------


class FitnessEvaluator:
    """Draws each generation's shared pixel sample and scores chromosomes.

    The sample for generation ``g`` comes from a stream seeded by
    ``(seed, g)`` so it does not depend on how many draws the main stream
    has made. With ``threads > 1`` scoring fans out over a thread pool;
    results are identical to the sequential path.
    """

    def __init__(self, sensed, reference, seed: int, plan: SamplePlan = SamplePlan(), bin_width=DEFAULT_BIN_WIDTH, threads=1):
        self.sensed = sensed
        self.reference = reference
        self.seed = int(seed)
        self.plan = plan
        self.bin_width = bin_width
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def context(self, generation: int) -> FitnessContext:
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(1, generation)))
        samples = sample_pixels(rng, self.sensed.dims, self.plan)
        return FitnessContext(self.sensed, self.reference, samples, self.plan, self.bin_width)

    def evaluate(self, chromosomes, generation: int) -> None:
        ctx = self.context(generation)
        if self._pool is None or len(chromosomes) < 2:
            results = [ctx.evaluate(c) for c in chromosomes]
        else:
            results = list(self._pool.map(ctx.evaluate, chromosomes))
        for chrom, res in zip(chromosomes, results):
            chrom.fitness = res

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


# ---------------------------------------------------------------------------
# ranking and selection
# ---------------------------------------------------------------------------


def _sort_key(chrom: Chromosome):
    fit = chrom.fitness
    if fit is None:
        raise ValueError(f"chromosome {chrom.id} has not been evaluated")
    return (not fit.valid, -fit.mi if fit.valid else 0.0, chrom.id)


def rank_population(population):
    """Sort best-first (invalid last, ties by lower id) and set ``rank`` = position."""
    ranked = sorted(population, key=_sort_key)
    for pos, chrom in enumerate(ranked, start=1):
        chrom.rank = pos
    return ranked


def selection_probability(pos: int, M: int) -> float:
    if not 1 <= pos <= M:
        raise ValueError(f"rank {pos} outside 1..{M}")
    return (M - pos + 1) / (M * (M + 1) / 2)


@lru_cache(maxsize=64)
def _rank_cdf(M: int) -> np.ndarray:
    weights = np.arange(M, 0, -1, dtype=np.float64)
    cdf = np.cumsum(weights) / weights.sum()
    cdf[-1] = 1.0
    return cdf


def select_positions(rng: np.random.Generator, M: int, n: int) -> np.ndarray:
    """``n`` independent 0-based positions drawn with rank-linear weights."""
    return np.searchsorted(_rank_cdf(M), rng.random(n), side="right")


def select_pair(ranked, rng: np.random.Generator):
    i, j = select_positions(rng, len(ranked), 2)
    return ranked[i], ranked[j]


# ---------------------------------------------------------------------------
# variation
# ---------------------------------------------------------------------------


def _swap_subtrees(a: Node, b: Node, rng, depth_cap: int):
    """One-point subtree swap; falls back to the originals if the cap cannot be met."""
    child_a = child_b = None
    for _ in range(1 + REPAIR_ATTEMPTS):
        i = int(rng.integers(a.size))
        j = int(rng.integers(b.size))
        child_a = replace_at(a, i, node_at(b, j))
        child_b = replace_at(b, j, node_at(a, i))
        if child_a.height <= depth_cap and child_b.height <= depth_cap:
            return child_a, child_b
    return (
        child_a if child_a.height <= depth_cap else a,
        child_b if child_b.height <= depth_cap else b,
    )


def crossover(parent_a: Chromosome, parent_b: Chromosome, params: GpParams, rng: np.random.Generator):
    """Subtree crossover on both tree pairs. Children are new, unevaluated chromosomes."""
    if rng.random() >= params.crossover_prob:
        return Chromosome(parent_a.x_tree, parent_a.y_tree), Chromosome(parent_b.x_tree, parent_b.y_tree)
    if rng.random() < params.cross_axis_prob:
        ax, by = _swap_subtrees(parent_a.x_tree, parent_b.y_tree, rng, params.depth_cap)
        ay, bx = _swap_subtrees(parent_a.y_tree, parent_b.x_tree, rng, params.depth_cap)
    else:
        ax, bx = _swap_subtrees(parent_a.x_tree, parent_b.x_tree, rng, params.depth_cap)
        ay, by = _swap_subtrees(parent_a.y_tree, parent_b.y_tree, rng, params.depth_cap)
    return Chromosome(ax, ay), Chromosome(bx, by)


def _subtree_mutation(tree: Node, params: GpParams, rng, dims) -> Node:
    for _ in range(1 + REPAIR_ATTEMPTS):
        idx = int(rng.integers(tree.size))
        room = params.depth_cap - depth_at(tree, idx) + 1
        sub = random_tree(rng, params.mutation_max_height, dims, "grow")
        if sub.height <= room:
            return replace_at(tree, idx, sub)
    return tree


def _point_mutation(tree: Node, params: GpParams, rng, dims) -> Node:
    bound = constant_bound(dims)

    def visit(node):
        children = tuple(visit(c) for c in node.children)
        tag, value = node.tag, node.value
        if rng.random() < params.node_mutation_prob:
            choices = TAGS_BY_ARITY[ARITY[tag]]
            tag = choices[rng.integers(len(choices))]
            value = float(rng.uniform(-bound, bound)) if tag == "const" else 0.0
        if tag == node.tag and value == node.value and all(c is o for c, o in zip(children, node.children)):
            return node
        return Node(tag, children, value)

    return visit(tree)


def mutate(chrom: Chromosome, params: GpParams, current_rate: float, rng: np.random.Generator, dims) -> Chromosome:
    """Apply each mutation variant independently with probability ``current_rate / 2``."""
    x_tree, y_tree = chrom.x_tree, chrom.y_tree
    half = current_rate / 2.0
    if rng.random() < half:
        if rng.random() < 0.5:
            x_tree = _subtree_mutation(x_tree, params, rng, dims)
        else:
            y_tree = _subtree_mutation(y_tree, params, rng, dims)
    if rng.random() < half:
        x_tree = _point_mutation(x_tree, params, rng, dims)
        y_tree = _point_mutation(y_tree, params, rng, dims)
    if x_tree is chrom.x_tree and y_tree is chrom.y_tree:
        return chrom
    return Chromosome(x_tree, y_tree)


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


def _record(state: RunState) -> GenerationRecord:
    valid = [c.fitness.mi for c in state.population if c.fitness.valid]
    best = state.best_ever.fitness
    return GenerationRecord(
        generation=state.generation,
        best_mi=best.mi if best.valid else 0.0,
        mean_mi=float(np.mean(valid)) if valid else 0.0,
        mutation_rate=state.current_mutation_rate,
        stall_counter=state.stall_counter,
    )


def initialize(params: GpParams, dims, rng: np.random.Generator, evaluator: FitnessEvaluator) -> RunState:
    """Ramped half-and-half over depths 2..init_max_height, doubled then truncated."""
    tiers = list(range(min(2, params.init_max_height), params.init_max_height + 1))
    pool = []
    for i in range(2 * params.population_size):
        height = tiers[i % len(tiers)]
        method = "full" if (i // len(tiers)) % 2 == 0 else "grow"
        tx = random_tree(rng, height, dims, method)
        ty = random_tree(rng, height, dims, method)
        pool.append(Chromosome(tx, ty, id=i))
    evaluator.evaluate(pool, 0)
    population = rank_population(pool)[: params.population_size]
    state = RunState(
        generation=0,
        population=population,
        best_ever=population[0],
        current_mutation_rate=params.mutation_rate,
        rng=rng,
        reference_score=population[0].fitness.score,
        next_id=len(pool),
    )
    state.trace.append(_record(state))
    return state


def adapt_mutation_rate(state: RunState, params: GpParams) -> float:
    """Update stall counters from the latest best and return the new mutation rate.

    A gain of at least ``improvement_threshold`` over the best at the last
    significant improvement resets the rate; every ``stall_window`` flat
    generations raise it by ``stall_increment`` up to ``max_mutation_rate``.
    """
    best = state.best_ever.fitness.score
    gain = best - state.reference_score
    if gain >= params.improvement_threshold:
        state.reference_score = best
        state.current_mutation_rate = params.mutation_rate
        state.stall_counter = 0
        state.flat_generations = 0
    else:
        state.stall_counter += 1
        state.flat_generations += 1
        if state.stall_counter >= params.stall_window:
            state.current_mutation_rate = min(
                state.current_mutation_rate + params.stall_increment, params.max_mutation_rate
            )
            state.stall_counter = 0
    return state.current_mutation_rate


def should_stop(state: RunState, params: GpParams) -> bool:
    return stop_reason(state, params) is not None


def stop_reason(state: RunState, params: GpParams):
    if state.generation >= params.max_generations:
        return "max_generations"
    if state.flat_generations >= params.stop_patience:
        return "patience"
    return None


def step_generation(state: RunState, params: GpParams, evaluator: FitnessEvaluator, dims) -> RunState:
    """Breed, score and rank the next generation in place; returns ``state``."""
    ranked = state.population
    rng = state.rng
    M = params.population_size
    # elites keep their id and their previous fitness
    nxt = [replace(c) for c in ranked[: params.elite_count]]
    offspring = []
    n_children = M - len(nxt)
    while len(offspring) < n_children:
        a, b = select_pair(ranked, rng)
        for child in crossover(a, b, params, rng):
            offspring.append(mutate(child, params, state.current_mutation_rate, rng, dims))
    offspring = offspring[:n_children]
    for child in offspring:
        child.id = state.next_id
        state.next_id += 1
        child.fitness = None
        child.rank = None

    state.generation += 1
    evaluator.evaluate(offspring, state.generation)
    state.population = rank_population(nxt + offspring)
    top = state.population[0]
    if top.fitness.score > state.best_ever.fitness.score:
        state.best_ever = top
    adapt_mutation_rate(state, params)
    state.trace.append(_record(state))
    return state


@dataclass
class RunResult:
    best: Chromosome
    search_fitness: FitnessResult
    final_fitness: FitnessResult
    generations: int
    stop_reason: str
    trace: list


def register(
    sensed,
    reference,
    params: GpParams = GpParams(),
    plan: SamplePlan = SamplePlan(),
    bin_width: int = DEFAULT_BIN_WIDTH,
    seed: int = 0,
    threads: int = 1,
    callback=None,
) -> RunResult:
    """Evolve a sensed-to-reference transform maximising sampled MI.

    ``callback(state)`` is called after initialisation and after every
    generation. The winner's MI is recomputed on every sensed pixel.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0,)))
    evaluator = FitnessEvaluator(sensed, reference, seed, plan, bin_width, threads)
    try:
        state = initialize(params, sensed.dims, rng, evaluator)
        if callback:
            callback(state)
        while (reason := stop_reason(state, params)) is None:
            step_generation(state, params, evaluator, sensed.dims)
            if callback:
                callback(state)
    finally:
        evaluator.close()
    best = state.best_ever
    final = full_mutual_information(best, sensed, reference, bin_width)
    return RunResult(best, best.fitness, final, state.generation, reason, state.trace)


def tree_nodes(chrom: Chromosome):
    """All nodes of both trees, x-tree first (pre-order)."""
    yield from iter_preorder(chrom.x_tree)
    yield from iter_preorder(chrom.y_tree)
