"""Monte Carlo play of the informed strategy against uninformed stopping rules.

Uninformed rules are vectorized functions ``rule(k, s, node) -> bool`` over
arrays of time index, space index and public belief node, or boolean arrays
of shape ``(M, n_space, n_nodes)``.  At each step the belief is split first,
then the informed player decides, then the uninformed one; a simultaneous
stop counts as the informed player stopping.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chain import ChainModel, transition
from .model import GameSpec, StopKind, StopOutcome
from .solver import PayoffTables, tabulate
from .strategy import InformedStrategy, rule_value

CHUNK = 10_000


@dataclass
class EpisodeRecord:
    scenario: int
    space_path: list[int]
    tree_path: list[int]
    outcome: StopOutcome
    payoff: float


@dataclass
class SimResult:
    """Estimates from ``run_episodes``.

    ``per_scenario[i]`` is ``(mean, count)``; ``total`` is the estimate of the
    belief-weighted payoff and ``ci`` its 95% interval (the raw range of
    episode values when fewer than 1000 episodes were run).
    """

    per_scenario: dict
    total: float
    ci: tuple[float, float]
    sd: float
    n: int
    records: list = field(default_factory=list)

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "scenario", "stop_time", "kind", "payoff"])
        for e, rec in enumerate(self.records):
            w.writerow([e, rec.scenario + 1, repr(float(rec.outcome.time)), rec.outcome.kind.name, repr(float(rec.payoff))])
        return buf.getvalue()


def _rule_lookup(rule, M: int, n_space: int, n_nodes: int):
    if rule is None:
        return lambda k, s, n: np.zeros(len(s), dtype=bool)
    if isinstance(rule, np.ndarray):
        if rule.shape != (M, n_space, n_nodes):
            raise ValueError(f"rule array has shape {rule.shape}, expected {(M, n_space, n_nodes)}")
        return lambda k, s, n: rule[k, s, n]

    def call(k, s, n):
        out = np.asarray(rule(k, s, n))
        if out.shape != s.shape or out.dtype != bool:
            raise ValueError("uninformed rule must return one boolean per queried state")
        return out

    return call


class _TreeSampler:
    def __init__(self, tree, n_space: int):
        self.tree = tree
        self.n_space = n_space
        self.cache = {}

    def step(self, k: int, s: np.ndarray, node: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if k not in self.cache:
            ch, w = self.tree.dense(k, self.n_space)
            self.cache[k] = (ch, np.cumsum(w, axis=2))
        ch, cum = self.cache[k]
        c = cum[s, node]
        u = rng.random(len(s)) * c[:, -1]
        j = np.minimum((u[:, None] >= c).sum(axis=1), c.shape[1] - 1)
        return ch[s, node, j]


def _play(tables: PayoffTables, chain: ChainModel, strategy: InformedStrategy, lookup, scenario: int,
          n: int, rng: np.random.Generator, sampler: _TreeSampler, keep_paths: bool):
    M = chain.n_steps
    s = np.full(n, strategy.start, dtype=np.int64)
    node = np.full(n, strategy.base.root, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    pay = np.empty(n)
    kind = np.full(n, StopKind.BOTH_AT_HORIZON.value, dtype=object)
    when = np.full(n, M, dtype=np.int64)
    where = np.empty(n, dtype=np.int64)
    spaths, tpaths = ([[x] for x in s.tolist()], [[x] for x in node.tolist()]) if keep_paths else (None, None)
    mask = strategy.region.mask
    for k in range(M):
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            break
        node[idx] = sampler.step(k, s[idx], node[idx], rng)
        if keep_paths:
            for e in idx:
                tpaths[e].append(int(node[e]))
        p1 = mask[k, s[idx], node[idx]]
        p2 = lookup(k, s[idx], node[idx])
        first1 = idx[p1]
        first2 = idx[~p1 & p2]
        pay[first1] = tables.stop1[k, s[first1], scenario]
        pay[first2] = tables.stop2[k, s[first2], scenario]
        kind[first1] = StopKind.PLAYER1_FIRST_OR_TIE.value
        kind[first2] = StopKind.PLAYER2_FIRST.value
        stopped = np.concatenate([first1, first2])
        when[stopped] = k
        where[stopped] = s[stopped]
        alive[stopped] = False
        idx = np.flatnonzero(alive)
        s[idx] = transition(chain, k, s[idx], rng)
        if keep_paths:
            for e in idx:
                spaths[e].append(int(s[e]))
    idx = np.flatnonzero(alive)
    pay[idx] = tables.terminal[s[idx], scenario]
    where[idx] = s[idx]
    records = []
    if keep_paths:
        for e in range(n):
            out = StopOutcome(StopKind(kind[e]), float(chain.t_nodes[when[e]]), scenario)
            records.append(EpisodeRecord(scenario, spaths[e], tpaths[e], out, float(pay[e])))
    return pay, records, where


def run_episodes(
    spec: GameSpec | None,
    chain: ChainModel,
    informed: InformedStrategy,
    uninformed,
    n: int,
    seed: int,
    weights=None,
    scenarios: str = "all",
    workers: int = 1,
    log: bool = False,
) -> SimResult:
    """Simulate ``n`` episodes and estimate the weighted payoff.

    With ``scenarios="draw"`` each episode draws its scenario with
    probability ``p_i`` and the estimate is the plain sample mean.  With
    ``scenarios="all"`` (default) each episode plays every scenario with
    positive weight, each on its own path, and scores ``sum_i p_i payoff_i``;
    this is unbiased with smaller variance and makes deterministic instances
    exact for any ``n``.

    Episodes are split into chunks of ``CHUNK``; chunk ``c`` uses the ``c``-th
    child of ``SeedSequence(seed)``, so results do not depend on ``workers``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    tables = informed.tables if spec is None else tabulate(spec, chain)
    pgrid = informed.base.pgrid
    I = pgrid.n_scenarios
    p = informed.root_belief if weights is None else np.asarray(weights, dtype=float)
    lookup = _rule_lookup(uninformed, chain.n_steps, chain.n_space, len(pgrid))
    samplers = [_TreeSampler(t, chain.n_space) for t in informed.trees]
    active = [i for i in range(I) if p[i] > 0]
    sizes = [min(CHUNK, n - c) for c in range(0, n, CHUNK)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def chunk(c):
        m = sizes[c]
        rngs = [np.random.default_rng(s) for s in seeds[c].spawn(I + 1)]
        recs = []
        per = {}
        if scenarios == "all":
            total = np.zeros(m)
            for i in active:
                pay, r, _ = _play(tables, chain, informed, lookup, i, m, rngs[i], samplers[i], log)
                total = total + p[i] * pay
                per[i] = pay
                recs.extend(r)
            return total, per, recs
        if scenarios != "draw":
            raise ValueError(f"unknown scenario mode {scenarios!r}")
        draw = rngs[I].choice(I, size=m, p=p / p.sum())
        total = np.empty(m)
        for i in active:
            sel = np.flatnonzero(draw == i)
            if len(sel):
                pay, r, _ = _play(tables, chain, informed, lookup, i, len(sel), rngs[i], samplers[i], log)
                total[sel] = pay
                per[i] = pay
                recs.extend(r)
        return total, per, recs

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(chunk, range(len(sizes))))
    else:
        parts = [chunk(c) for c in range(len(sizes))]

    values = np.concatenate([part[0] for part in parts])
    mean = math.fsum(values) / n
    sd = math.sqrt(math.fsum((values - mean) ** 2) / (n - 1)) if n > 1 else 0.0
    if n >= 1000:
        half = 1.96 * sd / math.sqrt(n)
        ci = (mean - half, mean + half)
    else:
        ci = (float(values.min()), float(values.max()))
    per_scenario = {}
    for i in active:
        pays = np.concatenate([part[1][i] for part in parts if i in part[1]] or [np.empty(0)])
        per_scenario[i] = (math.fsum(pays) / len(pays) if len(pays) else math.nan, len(pays))
    records = [r for part in parts for r in part[2]]
    return SimResult(per_scenario, mean, ci, sd, n, records)


def time_threshold_rule(k_stop: int):
    """Uninformed rule that stops at the first step ``k >= k_stop``."""
    def rule(k, s, node):
        return np.full(np.shape(s), k >= k_stop, dtype=bool)
    return rule


def never_stop(k, s, node):
    return np.zeros(np.shape(s), dtype=bool)


def time_threshold_family(chain: ChainModel) -> dict:
    """``{"stop_at_k": rule}`` for every step ``k < M``."""
    return {f"stop_at_{k}": time_threshold_rule(k) for k in range(chain.n_steps)}


@dataclass
class ScanRow:
    rule: str
    estimate: float
    ci: tuple[float, float]
    is_max: bool = False


def exploitability_scan(
    spec: GameSpec | None,
    chain: ChainModel,
    informed: InformedStrategy,
    rules: dict,
    seed: int = 0,
    n: int = 10_000,
    method: str = "mc",
) -> list[ScanRow]:
    """Payoff of each uninformed rule against ``informed``; the largest is flagged.

    ``method="exact"`` evaluates each rule by backward induction (zero-width
    interval); ``"mc"`` simulates ``n`` episodes per rule with seed ``seed``.
    """
    rows = []
    for name, rule in rules.items():
        if method == "exact":
            v = rule_value(spec, chain, informed, rule)
            rows.append(ScanRow(name, v, (v, v)))
        elif method == "mc":
            res = run_episodes(spec, chain, informed, rule, n, seed)
            rows.append(ScanRow(name, res.total, res.ci))
        else:
            raise ValueError(f"unknown method {method!r}")
    if rows:
        best = max(range(len(rows)), key=lambda r: rows[r].estimate)
        rows[best].is_max = True
    return rows


def scan_csv(rows: list[ScanRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rule", "estimate", "ci_low", "ci_high", "is_max"])
    for r in rows:
        w.writerow([r.rule, repr(float(r.estimate)), repr(float(r.ci[0])), repr(float(r.ci[1])), int(r.is_max)])
    return buf.getvalue()
