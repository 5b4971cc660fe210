"""The informed player's strategy and the uninformed player's best response to it.

The informed player follows a splitting tree conditioned on the true
scenario and stops as soon as the post-split state enters the region
``D = {V >= <h, p> - tol}``.  The uninformed player sees time, space and the
current belief node; its best response is found by backward induction.
"""

from __future__ import annotations

import configparser
import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import ChainModel, step_expectation
from .dual import MeasureTree, Splitting, _start_index, dual_minimize
from .model import GameSpec
from .solver import PayoffTables, ValueField, linear_in_p, tabulate


@dataclass
class StoppingRegion:
    """``mask[k, s, node]`` flags the states where the informed player stops, for ``k < M``."""

    mask: np.ndarray
    tol: float

    def contains(self, k: int, s: int, node: int) -> bool:
        return bool(self.mask[k, s, node])

    def to_csv(self, pgrid) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_index", "space_index", "node"] + [f"p_{i + 1}" for i in range(pgrid.n_scenarios)] + ["stop"])
        for k, s, n in np.ndindex(*self.mask.shape):
            w.writerow([k, s, n] + [repr(float(q)) for q in pgrid.nodes[n]] + [int(self.mask[k, s, n])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, shape: tuple[int, int, int], tol: float) -> "StoppingRegion":
        mask = np.zeros(shape, dtype=bool)
        for row in list(csv.reader(io.StringIO(text)))[1:]:
            mask[int(row[0]), int(row[1]), int(row[2])] = row[-1] == "1"
        return cls(mask, tol)


def default_region_tol(tables: PayoffTables) -> float:
    lo = min(tables.stop2.min(), tables.terminal.min())
    hi = max(tables.stop1.max(), tables.terminal.max())
    return 1e-9 * (1.0 + float(hi - lo))


def extract_region(field_: ValueField, spec: GameSpec | None = None, tol: float | None = None) -> StoppingRegion:
    """Flag every ``(k, s, node)`` with ``k < M`` and ``V >= <h, p> - tol``.

    The horizon slice is left out: the game ends there with ``g`` whatever the
    players do.
    """
    tol = default_region_tol(field_.tables) if tol is None else tol
    M = field_.chain.n_steps
    mask = np.zeros((M, field_.chain.n_space, len(field_.pgrid)), dtype=bool)
    for k in range(M):
        _, hbar = field_.obstacles(k)
        mask[k] = field_.slice(k) >= hbar - tol
    return StoppingRegion(mask, tol)


def conditional_measure(tree: MeasureTree, scenario: int) -> MeasureTree:
    """The tree conditioned on ending at vertex ``e_scenario``.

    Each weight ``w_j`` of a split of ``p`` into ``q_j`` becomes
    ``w_j q_j[i] / p[i]`` (children reached with probability zero are
    dropped).  If the root gives the scenario probability zero the tree is
    returned unchanged.
    """
    nodes = tree.pgrid.nodes
    if nodes[tree.root, scenario] <= 0:
        return MeasureTree(tree.pgrid, tree.n_steps, tree.root, dict(tree.splits))
    out = {}
    for key, sp in tree.splits.items():
        pi = nodes[key[2], scenario]
        if pi <= 0:
            out[key] = sp
            continue
        pairs = [(float(w * nodes[c, scenario] / pi), int(c)) for w, c in zip(sp.weights, sp.children)]
        pairs = [(w, c) for w, c in pairs if w > 0]
        total = sum(w for w, _ in pairs)
        if len(pairs) > 1:
            out[key] = Splitting(tuple(w / total for w, _ in pairs), tuple(c for _, c in pairs))
        elif pairs[0][1] != key[2]:
            out[key] = Splitting((1.0,), (pairs[0][1],))
    return MeasureTree(tree.pgrid, tree.n_steps, tree.root, out)


@dataclass
class InformedStrategy:
    """Stopping region plus the base splitting tree and its per-scenario conditionals."""

    region: StoppingRegion
    base: MeasureTree
    trees: list[MeasureTree]
    start: int
    tables: PayoffTables | None = None
    value: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def root_belief(self) -> np.ndarray:
        return self.base.pgrid.nodes[self.base.root]


def build_strategy(field_: ValueField, root, x0=None, tol: float | None = None, tree: MeasureTree | None = None) -> InformedStrategy:
    """Assemble the informed strategy at ``(t_0, x0, root)`` from a fully retained field.

    The base tree is an optimal splitting tree from ``dual_minimize`` unless
    one is supplied.
    """
    chain, pgrid = field_.chain, field_.pgrid
    region = extract_region(field_, tol=tol)
    r = int(root) if np.ndim(root) == 0 else pgrid.node_of(root)
    if tree is None:
        _, tree = dual_minimize(None, chain, pgrid, r, x0=x0, tables=field_.tables)
    trees = [conditional_measure(tree, i) for i in range(pgrid.n_scenarios)]
    s0 = _start_index(chain, x0)
    return InformedStrategy(region, tree, trees, s0, field_.tables, float(field_.slice(0)[s0, r]))


def informed_stop_rule(strategy: InformedStrategy, scenario: int):
    """Decision function ``(k, s, node) -> stop?`` for the informed player in ``scenario``.

    The rule itself is the region test; the randomization enters through the
    belief node, which is drawn from ``strategy.trees[scenario]``.  The
    returned function carries that tree as its ``tree`` attribute.
    """
    mask = strategy.region.mask

    def rule(k, s, node):
        return mask[k, s, node]

    rule.tree = strategy.trees[scenario]
    return rule


def _weights_matrix(strategy: InformedStrategy, weights) -> np.ndarray:
    # Row q of the result is the vector r(q) with r_i = w_i q_i / p_i (or w_i when p_i = 0).
    nodes = strategy.base.pgrid.nodes
    p = strategy.root_belief
    w = p if weights is None else np.asarray(weights, dtype=float)
    R = np.empty_like(nodes)
    for i in range(nodes.shape[1]):
        R[:, i] = w[i] * nodes[:, i] / p[i] if p[i] > 0 else w[i]
    return R


def _rule_grid(rule, k: int, n_space: int, n_nodes: int) -> np.ndarray:
    if rule is None:
        return np.zeros((n_space, n_nodes), dtype=bool)
    if isinstance(rule, np.ndarray):
        return rule[k].astype(bool)
    S, N = np.meshgrid(np.arange(n_space), np.arange(n_nodes), indexing="ij")
    return np.broadcast_to(np.asarray(rule(k, S, N), dtype=bool), (n_space, n_nodes))


def _respond(tables, chain, strategy, weights, rule):
    R = _weights_matrix(strategy, weights)
    tree, mask = strategy.base, strategy.region.mask
    M = chain.n_steps
    rows = np.arange(chain.n_space)[:, None]
    W = linear_in_p(tables.terminal, R)
    choice = np.zeros(mask.shape, dtype=bool)
    for k in range(M - 1, -1, -1):
        cont = step_expectation(chain, k, W)
        fbar, hbar = linear_in_p(tables.stop2[k], R), linear_in_p(tables.stop1[k], R)
        if isinstance(rule, str):
            stop2 = fbar >= cont
        else:
            stop2 = _rule_grid(rule, k, chain.n_space, R.shape[0])
        U = np.where(mask[k], hbar, np.where(stop2, fbar, cont))
        choice[k] = stop2 & ~mask[k]
        ch, w = tree.dense(k, chain.n_space)
        acc = w[..., 0] * U[rows, ch[..., 0]]
        for j in range(1, ch.shape[2]):
            acc = acc + w[..., j] * U[rows, ch[..., j]]
        W = acc
    return float(W[strategy.start, tree.root]), choice


def best_response_value(spec: GameSpec | None, chain: ChainModel, strategy: InformedStrategy, weights=None, return_rule: bool = False):
    """Largest payoff the uninformed player can get against ``strategy``.

    The uninformed player may condition on time, space and the public belief
    node after each split.  ``weights`` are the scenario probabilities used to
    average payoffs (default: the root belief).  With ``return_rule`` the
    maximizing rule is returned as a boolean array ``(M, n_space, n_nodes)``.
    """
    tables = strategy.tables if spec is None else tabulate(spec, chain)
    value, rule = _respond(tables, chain, strategy, weights, "best")
    return (value, rule) if return_rule else value


def rule_value(spec: GameSpec | None, chain: ChainModel, strategy: InformedStrategy, rule, weights=None) -> float:
    """Exact expected payoff when the uninformed player follows ``rule``.

    ``rule`` is a boolean array ``(M, n_space, n_nodes)`` or a vectorized
    function ``(k, s, node) -> stop?``; ``None`` never stops.
    """
    tables = strategy.tables if spec is None else tabulate(spec, chain)
    return _respond(tables, chain, strategy, weights, rule)[0]


def save_strategy(strategy: InformedStrategy, directory) -> None:
    """Write ``region.csv``, one tree file per scenario, ``base_tree.txt`` and ``strategy.cfg``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    pgrid = strategy.base.pgrid
    (d / "region.csv").write_text(strategy.region.to_csv(pgrid))
    (d / "base_tree.txt").write_text(strategy.base.to_text())
    for i, tree in enumerate(strategy.trees):
        (d / f"tree_scenario_{i + 1}.txt").write_text(tree.to_text())
    cp = configparser.ConfigParser()
    cp["strategy"] = {
        "n_scenarios": str(pgrid.n_scenarios),
        "mesh": str(pgrid.mesh),
        "n_steps": str(strategy.base.n_steps),
        "n_space": str(strategy.region.mask.shape[1]),
        "root": str(strategy.base.root),
        "start_index": str(strategy.start),
        "region_tol": repr(strategy.region.tol),
        "value": repr(strategy.value),
    }
    for k, v in strategy.meta.items():
        cp["strategy"][k] = str(v)
    with open(d / "strategy.cfg", "w") as fh:
        cp.write(fh)


def load_strategy(directory) -> InformedStrategy:
    d = Path(directory)
    cp = configparser.ConfigParser()
    cp.read(d / "strategy.cfg")
    meta = cp["strategy"]
    shape = (int(meta["n_steps"]), int(meta["n_space"]), 0)
    base = MeasureTree.from_text((d / "base_tree.txt").read_text())
    shape = shape[:2] + (len(base.pgrid),)
    region = StoppingRegion.from_csv((d / "region.csv").read_text(), shape, float(meta["region_tol"]))
    trees = [MeasureTree.from_text((d / f"tree_scenario_{i + 1}.txt").read_text()) for i in range(base.pgrid.n_scenarios)]
    value = None if meta["value"] == "None" else float(meta["value"])
    return InformedStrategy(region, base, trees, int(meta["start_index"]), None, value)
