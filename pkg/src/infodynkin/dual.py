"""Belief-splitting trees and the game value under a fixed splitting schedule.

A ``MeasureTree`` is a Markov chain for the public belief on the simplex
grid.  At each step ``k < M`` the current belief node is split into children
(a mean-preserving random move), then both players may stop.  At the horizon
the belief is revealed: it jumps to vertex ``e_i`` with probability ``q_i``,
which does not change expected payoffs because the terminal payoff is linear
in the belief.  Minimizing over trees gives the value of the game.

Splittings may depend on the spatial node as well as the belief node.  The
randomization is mean-preserving given the past, so the belief stays a
martingale and its terminal value is independent of the future noise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .chain import ChainModel, step_expectation
from .model import GameSpec
from .simplex import SimplexGrid
from .solver import PayoffTables, linear_in_p, tabulate


class BudgetExceeded(RuntimeError):
    """Raised when exhaustive enumeration would evaluate more trees than allowed.

    Attributes:
        best_value: Best value among the trees evaluated so far (``inf`` if none).
        best_tree: The corresponding tree, or ``None``.
        evaluated: Number of trees evaluated before stopping.
    """

    def __init__(self, budget: int, best_value: float, best_tree, evaluated: int):
        super().__init__(f"enumeration budget of {budget} trees exceeded; best value so far {best_value!r}")
        self.best_value = best_value
        self.best_tree = best_tree
        self.evaluated = evaluated


@dataclass(frozen=True)
class Splitting:
    """A split of a parent node into ``children`` with probabilities ``weights``."""

    weights: tuple[float, ...]
    children: tuple[int, ...]

    @property
    def trivial(self) -> bool:
        return len(self.children) == 1

    def mean(self, pgrid: SimplexGrid) -> np.ndarray:
        return np.asarray(self.weights) @ pgrid.nodes[list(self.children)]

    def check(self, pgrid: SimplexGrid, parent: int, tol: float = 1e-12) -> None:
        w = np.asarray(self.weights)
        if (w < 0).any() or abs(w.sum() - 1.0) > tol:
            raise ValueError(f"splitting weights {self.weights} are not a probability vector")
        if len(self.children) > pgrid.n_scenarios:
            raise ValueError("splitting support exceeds the number of scenarios")
        if np.abs(self.mean(pgrid) - pgrid.nodes[parent]).max() > tol:
            raise ValueError(f"splitting of node {parent} does not preserve the mean")


def trivial_splitting(node: int) -> Splitting:
    return Splitting((1.0,), (int(node),))


@lru_cache(maxsize=16)
def _splitting_table(n_scenarios: int, mesh: int, max_support: int) -> tuple[tuple[Splitting, ...], ...]:
    grid = SimplexGrid(n_scenarios, mesh)
    n = len(grid)
    found: list[list[Splitting]] = [[trivial_splitting(k)] for k in range(n)]
    nodes = grid.nodes
    for m in range(2, min(max_support, n_scenarios) + 1):
        for support in itertools.combinations(range(n), m):
            P = nodes[list(support)]
            if np.linalg.matrix_rank(P) < m:
                continue
            lam = nodes @ np.linalg.pinv(P)
            resid = np.abs(lam @ P - nodes).max(axis=1)
            hit = np.flatnonzero((resid < 1e-12) & (lam > 1e-13).all(axis=1))
            for k in hit:
                w = lam[k] / lam[k].sum()
                found[k].append(Splitting(tuple(float(x) for x in w), support))
    return tuple(tuple(s) for s in found)


def enumerate_splittings(node: int, pgrid: SimplexGrid, max_support: int | None = None) -> list[Splitting]:
    """All splittings of ``node`` into grid nodes with at most ``max_support`` children.

    Supports are affinely independent sets containing the parent in the
    relative interior of their hull, so weights are unique and positive.
    Larger supports are redundant: any split with more than ``I`` children is
    a mixture of splits with at most ``I`` (Caratheodory), and the value of a
    mixture is the mixture of values.  ``max_support`` is therefore capped at
    ``I``.  The trivial splitting comes first.
    """
    m = pgrid.n_scenarios if max_support is None else max(1, max_support)
    return list(_splitting_table(pgrid.n_scenarios, pgrid.mesh, min(m, pgrid.n_scenarios))[node])


def _split_arrays(pgrid: SimplexGrid, max_support: int):
    """Per node: children ``(n_splits, J)`` and weights ``(n_splits, J)``, padded with zero weight."""
    J = min(max_support, pgrid.n_scenarios)
    out = []
    for node in range(len(pgrid)):
        splits = enumerate_splittings(node, pgrid, J)
        ch = np.full((len(splits), J), node, dtype=np.int64)
        w = np.zeros((len(splits), J))
        for r, s in enumerate(splits):
            ch[r, :len(s.children)] = s.children
            w[r, :len(s.weights)] = s.weights
        out.append((splits, ch, w))
    return out


@dataclass
class MeasureTree:
    """Belief-splitting schedule on a simplex grid.

    ``splits`` maps ``(k, s, node)`` to a ``Splitting``; ``s = None`` applies
    to every spatial node.  Unlisted states keep their belief (trivial split).
    """

    pgrid: SimplexGrid
    n_steps: int
    root: int
    splits: dict = field(default_factory=dict)

    def splitting(self, k: int, s: int, node: int) -> Splitting:
        sp = self.splits.get((k, s, node))
        if sp is None:
            sp = self.splits.get((k, None, node))
        return sp if sp is not None else trivial_splitting(node)

    @property
    def adapted(self) -> bool:
        """Whether any splitting depends on the spatial node."""
        return any(key[1] is not None for key in self.splits)

    def dense(self, k: int, n_space: int) -> tuple[np.ndarray, np.ndarray]:
        """Children and weights at step ``k``, shape ``(n_space, n_nodes, J)``."""
        n = len(self.pgrid)
        J = max([1] + [len(sp.children) for key, sp in self.splits.items() if key[0] == k])
        ch = np.broadcast_to(np.arange(n)[None, :, None], (n_space, n, J)).copy()
        w = np.zeros((n_space, n, J))
        w[:, :, 0] = 1.0
        for (kk, s, node), sp in sorted(self.splits.items(), key=lambda kv: kv[0][1] is not None):
            if kk != k:
                continue
            rows = slice(None) if s is None else s
            m = len(sp.children)
            ch[rows, node, :] = node
            ch[rows, node, :m] = sp.children
            w[rows, node, :] = 0.0
            w[rows, node, :m] = sp.weights
        return ch, w

    def martingale_error(self) -> float:
        """Largest ``|sum_j w_j q_j - p|`` over all stored splittings."""
        worst = 0.0
        for (_, _, node), sp in self.splits.items():
            worst = max(worst, float(np.abs(sp.mean(self.pgrid) - self.pgrid.nodes[node]).max()))
        return worst

    def path_law(self, space_path=None) -> dict[tuple[int, ...], float]:
        """Law of the belief path ``(node_0, ..., node_M)`` given a spatial path.

        ``node_0`` is the root and ``node_{k+1}`` the child drawn at step ``k``.
        ``space_path`` (length ``M``) is needed only for adapted trees.
        """
        law = {(self.root,): 1.0}
        for k in range(self.n_steps):
            s = None if space_path is None else int(space_path[k])
            nxt: dict[tuple[int, ...], float] = {}
            for path, pr in law.items():
                sp = self.splitting(k, s, path[-1]) if s is not None else self.splits.get((k, None, path[-1]), trivial_splitting(path[-1]))
                for w, c in zip(sp.weights, sp.children):
                    if w > 0:
                        key = path + (c,)
                        nxt[key] = nxt.get(key, 0.0) + pr * w
            law = nxt
        return law

    def to_text(self) -> str:
        """Plain-text form; floats use ``repr`` so ``from_text`` round-trips exactly."""
        lines = [
            f"tree n_scenarios={self.pgrid.n_scenarios} mesh={self.pgrid.mesh} n_steps={self.n_steps} root={self.root}",
            "# split <t_index> <space_index|*> <node> : <weight>@<child> ...",
        ]
        for (k, s, node) in sorted(self.splits, key=lambda key: (key[0], -1 if key[1] is None else key[1], key[2])):
            sp = self.splits[(k, s, node)]
            body = " ".join(f"{float(w)!r}@{int(c)}" for w, c in zip(sp.weights, sp.children))
            lines.append(f"split {k} {'*' if s is None else s} {node} : {body}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MeasureTree":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        head = dict(item.split("=") for item in lines[0].split()[1:])
        pgrid = SimplexGrid(int(head["n_scenarios"]), int(head["mesh"]))
        tree = cls(pgrid, int(head["n_steps"]), int(head["root"]))
        for ln in lines[1:]:
            left, right = ln.split(":")
            _, k, s, node = left.split()
            pairs = [item.split("@") for item in right.split()]
            tree.splits[(int(k), None if s == "*" else int(s), int(node))] = Splitting(
                tuple(float(w) for w, _ in pairs), tuple(int(c) for _, c in pairs)
            )
        return tree


def _start_index(chain: ChainModel, x0) -> int:
    if x0 is None:
        centre = np.array([(a[0] + a[-1]) / 2 for a in chain.x_axes])
        return chain.space_index(centre)
    return chain.space_index(x0)


def tree_values(tables: PayoffTables, chain: ChainModel, tree: MeasureTree):
    """Values of the complete-observation game on (space node, belief node) under ``tree``.

    Returns ``(W, U)``: ``W[k]`` is the value before the step-``k`` split and
    ``U[k]`` the value after it (for ``k < M``); ``W[M]`` is ``<g, q>``.
    """
    if tree.n_steps != chain.n_steps:
        raise ValueError(f"tree has {tree.n_steps} steps but the chain has {chain.n_steps}")
    nodes = tree.pgrid.nodes
    M = chain.n_steps
    W = [None] * (M + 1)
    U = [None] * M
    W[M] = linear_in_p(tables.terminal, nodes)
    rows = np.arange(chain.n_space)[:, None]
    for k in range(M - 1, -1, -1):
        cont = step_expectation(chain, k, W[k + 1])
        fbar, hbar = linear_in_p(tables.stop2[k], nodes), linear_in_p(tables.stop1[k], nodes)
        U[k] = np.minimum(hbar, np.maximum(fbar, cont))
        ch, w = tree.dense(k, chain.n_space)
        acc = w[..., 0] * U[k][rows, ch[..., 0]]
        for j in range(1, ch.shape[2]):
            acc = acc + w[..., j] * U[k][rows, ch[..., j]]
        W[k] = acc
    return W, U


def game_value_given_measure(spec: GameSpec | None, chain: ChainModel, tree: MeasureTree, x0=None, tables: PayoffTables | None = None) -> float:
    """Value at ``(t_0, x0, root)`` of the stopping game where the belief follows ``tree``.

    Both players observe the space node and the belief; payoffs are
    ``<q, f>``, ``<q, h>`` and ``<q, g>`` at the current belief ``q``.
    ``x0`` defaults to the grid node nearest the centre of the box.
    """
    tables = tables if tables is not None else tabulate(spec, chain)
    W, _ = tree_values(tables, chain, tree)
    return float(W[0][_start_index(chain, x0), tree.root])


def _pick(cand: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Column 0 is the trivial split; keep it unless another split is clearly better.
    best = cand.argmin(axis=1)
    vmin = cand[np.arange(len(cand)), best]
    keep = cand[:, 0] <= vmin + 1e-12 * (1.0 + np.abs(vmin))
    best = np.where(keep, 0, best)
    return cand[np.arange(len(cand)), best], best


def dual_values(
    tables: PayoffTables,
    chain: ChainModel,
    pgrid: SimplexGrid,
    max_support: int | None = None,
    branch_times=None,
) -> tuple[list[np.ndarray], MeasureTree]:
    """Minimum over space-adapted splitting schedules, for every start state at once.

    Backward induction: ``W_k(s, p) = min over splits of sum_j w_j U_k(s, q_j)``
    with ``U_k`` the clipped continuation at the child belief.  Returns the
    pre-split values per step and a tree holding an optimal split for every
    ``(k, s, node)`` (root set to node 0; callers re-root as needed).
    """
    I = pgrid.n_scenarios
    J = I if max_support is None else min(max_support, I)
    M = chain.n_steps
    allowed = set(range(M)) if branch_times is None else set(branch_times)
    table = _split_arrays(pgrid, J)
    nodes = pgrid.nodes
    W = [None] * (M + 1)
    W[M] = linear_in_p(tables.terminal, nodes)
    tree = MeasureTree(pgrid, M, 0)
    for k in range(M - 1, -1, -1):
        cont = step_expectation(chain, k, W[k + 1])
        fbar, hbar = linear_in_p(tables.stop2[k], nodes), linear_in_p(tables.stop1[k], nodes)
        U = np.minimum(hbar, np.maximum(fbar, cont))
        if k not in allowed:
            W[k] = U
            continue
        Wk = np.empty_like(U)
        for node, (splits, ch, w) in enumerate(table):
            cand = w[None, :, 0] * U[:, ch[:, 0]]
            for j in range(1, ch.shape[1]):
                cand = cand + w[None, :, j] * U[:, ch[:, j]]
            Wk[:, node], choice = _pick(cand)
            if choice[0] and (choice == choice[0]).all():
                tree.splits[(k, None, node)] = splits[choice[0]]
                continue
            for s in np.flatnonzero(choice):
                tree.splits[(k, int(s), node)] = splits[choice[s]]
        W[k] = Wk
    return W, tree


def _exhaustive(tables, chain, pgrid, root, s0, max_support, allowed, budget):
    M = chain.n_steps
    options = {}

    def opts(k, node):
        if k not in allowed:
            return [trivial_splitting(node)]
        key = (k, node)
        if key not in options:
            options[key] = enumerate_splittings(node, pgrid, max_support)
        return options[key]

    best = [np.inf, None]
    count = [0]

    def rec(k, reachable, splits):
        if k == M:
            count[0] += 1
            if count[0] > budget:
                raise BudgetExceeded(budget, best[0], best[1], count[0] - 1)
            tree = MeasureTree(pgrid, M, root, dict(splits))
            W, _ = tree_values(tables, chain, tree)
            v = float(W[0][s0, root])
            if v < best[0] - 1e-15:
                best[0], best[1] = v, tree
            return
        ordered = sorted(reachable)
        for combo in itertools.product(*(opts(k, n) for n in ordered)):
            nxt = set()
            new = dict(splits)
            for n, sp in zip(ordered, combo):
                nxt.update(sp.children)
                if not sp.trivial:
                    new[(k, None, n)] = sp
            rec(k + 1, nxt, new)

    rec(0, {root}, {})
    return best[0], best[1], count[0]


def dual_minimize(
    spec: GameSpec | None,
    chain: ChainModel,
    pgrid: SimplexGrid,
    root,
    x0=None,
    max_support: int | None = None,
    branch_times=None,
    adapted: bool = True,
    budget: int = 10**6,
    tables: PayoffTables | None = None,
) -> tuple[float, MeasureTree]:
    """Minimize the game value over grid-supported splitting trees.

    Args:
        root: Root belief, as a node index or a probability vector on the grid.
        x0: Start point; defaults to the node nearest the box centre.
        max_support: Largest number of children per split (capped at ``I``).
        branch_times: Step indices where splitting is allowed (default: all).
        adapted: If true, splits may depend on the spatial node and the
            minimum is found by backward induction.  If false, splits depend
            on ``(k, node)`` only and every such tree reachable from the root
            is evaluated; this can be far more expensive and in general gives
            a larger value when the state is random.
        budget: Cap on the number of trees evaluated when ``adapted`` is false.

    Returns:
        ``(value, tree)`` with ``tree`` an optimal tree rooted at ``root``.

    Raises:
        BudgetExceeded: Exhaustive search hit the budget; the exception
            carries the best tree seen.
    """
    tables = tables if tables is not None else tabulate(spec, chain)
    r = int(root) if np.ndim(root) == 0 else pgrid.node_of(root)
    s0 = _start_index(chain, x0)
    if adapted:
        W, tree = dual_values(tables, chain, pgrid, max_support, branch_times)
        tree.root = r
        return float(W[0][s0, r]), _prune(tree, s0)
    allowed = set(range(chain.n_steps)) if branch_times is None else set(branch_times)
    m = pgrid.n_scenarios if max_support is None else max_support
    value, tree, _ = _exhaustive(tables, chain, pgrid, r, s0, m, allowed, budget)
    return value, tree


def _prune(tree: MeasureTree, s0: int) -> MeasureTree:
    """Drop split entries that cannot be reached from ``(0, s0, root)``.

    Reachability is over-approximated by ignoring which spatial nodes the
    chain can reach, so only the belief dimension is pruned.
    """
    reach = {tree.root}
    keep = {}
    for k in range(tree.n_steps):
        nxt = set()
        for (kk, s, node), sp in tree.splits.items():
            if kk == k and node in reach:
                keep[(kk, s, node)] = sp
                nxt.update(sp.children)
        reach |= nxt
    return MeasureTree(tree.pgrid, tree.n_steps, tree.root, keep)
