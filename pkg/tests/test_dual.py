import numpy as np
import pytest

from infodynkin.chain import build_chain
from infodynkin.config import load_spec, parse_spec
from infodynkin.dual import (
    BudgetExceeded,
    MeasureTree,
    Splitting,
    dual_minimize,
    dual_values,
    enumerate_splittings,
    game_value_given_measure,
    tree_values,
)
from infodynkin.model import two_state_example
from infodynkin.simplex import SimplexGrid
from infodynkin.solver import complete_info_solve, dp_backward, dp_backward_tables, tabulate
from instances import DRIFTING, random_tables
from oracles import adapted_min_recursive, enumerate_fixed_trees, game_recursive, two_point_splits


def as_set(splits):
    return {(tuple(s.children), tuple(round(w, 12) for w in s.weights)) for s in splits}


def test_splittings_of_midpoint():
    g = SimplexGrid(2, 2)
    mid = g.node_of([0.5, 0.5])
    splits = enumerate_splittings(mid, g, 2)
    assert as_set(splits) == {((1,), (1.0,)), ((0, 2), (0.5, 0.5))}


def test_vertex_and_support_one_give_only_trivial():
    g = SimplexGrid(3, 4)
    for v in g.vertices:
        assert [s.trivial for s in enumerate_splittings(v, g)] == [True]
    assert len(enumerate_splittings(5, g, max_support=1)) == 1


def test_two_scenario_splittings_match_pair_oracle():
    g = SimplexGrid(2, 8)
    for node in range(9):
        ours = as_set(enumerate_splittings(node, g))
        ref = {(tuple(c for _, c in s), tuple(round(w, 12) for w, _ in s)) for s in two_point_splits(8, node)}
        assert ours == ref


def test_three_scenario_splittings_preserve_the_mean():
    g = SimplexGrid(3, 4)
    for node in range(len(g)):
        splits = enumerate_splittings(node, g, max_support=4)
        assert splits[0].trivial
        assert len(as_set(splits)) == len(splits)
        for s in splits:
            s.check(g, node)
            assert len(s.children) <= 3


@pytest.fixture(scope="module")
def example4():
    spec = two_state_example()
    chain = build_chain(spec, 0.1, 0.25)
    return spec, chain, SimplexGrid(2, 8), tabulate(spec, chain)


def test_constant_tree_at_vertex_is_complete_information(example4):
    spec, chain, g, tables = example4
    for i, v in enumerate(g.vertices):
        assert game_value_given_measure(spec, chain, MeasureTree(g, chain.n_steps, v)) == complete_info_solve(spec, chain, i)[0, 0]


def test_nonrevealing_and_revealing_trees(example4):
    spec, chain, g, tables = example4
    p_node = 1  # p_1 = 1/8 < 1/7
    p = g.nodes[p_node, 0]
    const = game_value_given_measure(None, chain, MeasureTree(g, chain.n_steps, p_node), tables=tables)
    assert const == pytest.approx(max(2 - 3 * p, 1.5 + p / 2), abs=1e-12) and const == pytest.approx(2 - 3 * p)
    for r in range(1, 8):
        q = g.nodes[r, 0]
        reveal = MeasureTree(g, chain.n_steps, r, {(0, None, r): Splitting((q, 1 - q), (8, 0))})
        assert game_value_given_measure(None, chain, reveal, tables=tables) == pytest.approx(2 - q, abs=1e-12)


def test_tree_value_matches_plain_recursion():
    spec = parse_spec(DRIFTING)
    chain = build_chain(spec, 0.5, 0.25)
    g = SimplexGrid(2, 6)
    tables = random_tables(chain, 2, np.random.default_rng(11))
    rng = np.random.default_rng(12)
    tree = MeasureTree(g, chain.n_steps, 3)
    for k in range(chain.n_steps):
        for s in range(chain.n_space):
            for node in range(len(g)):
                opts = enumerate_splittings(node, g)
                tree.splits[(k, s, node)] = opts[rng.integers(len(opts))]
    W, _ = tree_values(tables, chain, tree)
    split = lambda k, s, n: list(zip(tree.splitting(k, s, n).weights, tree.splitting(k, s, n).children))
    memo = {}
    for s in range(chain.n_space):
        ref = game_recursive(tables.stop2, tables.stop1, tables.terminal, chain.probs, chain.targets, g.nodes, split, 0, s, 3, memo)
        assert W[0][s, 3] == pytest.approx(ref, abs=1e-12)


def test_dual_at_vertex_returns_trivial_tree(example4):
    spec, chain, g, tables = example4
    value, tree = dual_minimize(spec, chain, g, g.vertices[0])
    assert value == 1.0 and tree.splits == {}


def test_dual_equals_primal_on_example(example4):
    spec, chain, g, tables = example4
    primal = dp_backward(spec, chain, g).slice(0)[0]
    for r in range(len(g)):
        value, tree = dual_minimize(spec, chain, g, r)
        assert value == pytest.approx(primal[r], abs=1e-9)
        assert game_value_given_measure(spec, chain, tree) == pytest.approx(value, abs=1e-12)


def test_random_tables_against_exhaustive_oracles():
    spec = parse_spec(DRIFTING)
    chain = build_chain(spec, 1.0, 0.5)
    g = SimplexGrid(2, 4)
    tables = random_tables(chain, 2, np.random.default_rng(21))
    s0 = chain.space_index([0.0])
    for root in range(5):
        adapted, _ = dual_minimize(None, chain, g, root, tables=tables)
        memo = {}
        ref = adapted_min_recursive(tables.stop2, tables.stop1, tables.terminal, chain.probs, chain.targets, 4, 0, s0, root, memo)
        # node index in the oracle counts p_1 units, matching the grid order
        assert adapted == pytest.approx(ref, abs=1e-12)
        fixed, tree = dual_minimize(None, chain, g, root, tables=tables, adapted=False)
        brute = np.inf
        for sched in enumerate_fixed_trees(4, chain.n_steps, root):
            split = lambda k, s, n: sched.get((k, n), [(1.0, n)])
            brute = min(brute, game_recursive(tables.stop2, tables.stop1, tables.terminal, chain.probs, chain.targets, g.nodes, split, 0, s0, root))
        assert fixed == pytest.approx(brute, abs=1e-12)
        assert game_value_given_measure(None, chain, tree, tables=tables) == pytest.approx(fixed, abs=1e-12)
        assert adapted <= fixed + 1e-12


def test_space_independent_trees_can_be_strictly_worse():
    chain = build_chain(parse_spec(DRIFTING), 1.0, 0.5)
    g = SimplexGrid(2, 4)
    rng = np.random.default_rng(0)
    random_tables(chain, 2, rng)
    tables = random_tables(chain, 2, rng)
    adapted, tree = dual_minimize(None, chain, g, 2, tables=tables)
    fixed, _ = dual_minimize(None, chain, g, 2, tables=tables, adapted=False)
    assert fixed - adapted > 1e-3
    assert tree.adapted
    assert adapted == pytest.approx(dp_backward_tables(tables, chain, g).slice(0)[chain.space_index([0.0]), 2], abs=1e-12)


def test_budget_exceeded_carries_best_so_far(example4):
    spec, chain, g, tables = example4
    with pytest.raises(BudgetExceeded) as exc:
        dual_minimize(spec, chain, g, 4, adapted=False, budget=50)
    assert exc.value.evaluated == 50 and np.isfinite(exc.value.best_value)
    assert game_value_given_measure(spec, chain, exc.value.best_tree) == pytest.approx(exc.value.best_value)


def test_minimum_below_random_trees_and_convex_in_root():
    spec = load_spec("noisy_2_3")
    chain = build_chain(spec, 0.5, 0.2)
    g = SimplexGrid(2, 8)
    tables = tabulate(spec, chain)
    W, _ = dual_values(tables, chain, g)
    s0 = chain.space_index([0.0])
    rng = np.random.default_rng(5)
    for _ in range(20):
        root = int(rng.integers(len(g)))
        tree = MeasureTree(g, chain.n_steps, root)
        for k in range(chain.n_steps):
            for node in range(len(g)):
                opts = enumerate_splittings(node, g)
                tree.splits[(k, None, node)] = opts[rng.integers(len(opts))]
        assert W[0][s0, root] <= game_value_given_measure(None, chain, tree, tables=tables) + 1e-12
    w = W[0][s0]
    for a in range(len(g)):
        for b in range(a + 2, len(g)):
            for m in range(a + 1, b):
                lam = (b - m) / (b - a)
                assert w[m] <= lam * w[a] + (1 - lam) * w[b] + 1e-12
    spread = max(tables.stop1.max(), tables.terminal.max()) - min(tables.stop2.min(), tables.terminal.min())
    K = spread / np.sqrt(2)
    for a in range(len(g)):
        for b in range(len(g)):
            assert abs(w[a] - w[b]) <= K * np.linalg.norm(g.nodes[a] - g.nodes[b]) + 1e-12


def test_tree_text_round_trip_and_martingale():
    spec = load_spec("noisy_2_3")
    chain = build_chain(spec, 0.5, 0.2)
    g = SimplexGrid(2, 8)
    _, tree = dual_minimize(spec, chain, g, 3)
    back = MeasureTree.from_text(tree.to_text())
    assert back.splits == tree.splits and back.root == tree.root and back.n_steps == tree.n_steps
    assert tree.martingale_error() <= 1e-12
    path = [chain.space_index([0.0])] * chain.n_steps
    law = tree.path_law(path)
    assert sum(law.values()) == pytest.approx(1.0, abs=1e-12)
    for k in range(chain.n_steps + 1):
        mean = sum(pr * g.nodes[p[k]] for p, pr in law.items())
        assert np.abs(mean - g.nodes[3]).max() <= 1e-12


def test_tree_grid_mismatch_rejected(example4):
    spec, chain, g, tables = example4
    with pytest.raises(ValueError):
        game_value_given_measure(spec, chain, MeasureTree(g, chain.n_steps + 1, 0))


def test_branch_times_restrict_splitting(example4):
    spec, chain, g, tables = example4
    only_start, tree = dual_minimize(spec, chain, g, 4, branch_times=[0])
    assert all(k == 0 for k, _, _ in tree.splits)
    none, _ = dual_minimize(spec, chain, g, 4, branch_times=[])
    full, _ = dual_minimize(spec, chain, g, 4)
    assert full <= only_start <= none
