"""Backward induction for the value of the game on the (time, space, belief) lattice.

Each step computes the continuation ``E[V_{k+1}(X', p)]``, clips it between
the obstacles ``<f(t_k, x), p>`` and ``<h(t_k, x), p>``, then replaces every
spatial slice by its convex envelope in ``p``.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chain import ChainModel, step_expectation
from .model import GameSpec, SpecError, evaluate_batch
from .simplex import SimplexGrid, envelope_values, lambda_min_all


@dataclass(frozen=True)
class PayoffTables:
    """Payoffs sampled on the chain grid.

    ``stop2[k, s, i]`` and ``stop1[k, s, i]`` hold ``f_i`` and ``h_i`` at
    ``(t_k, x_s)`` for ``k = 0..M``; ``terminal[s, i]`` holds ``g_i(x_s)``.
    """

    stop2: np.ndarray
    stop1: np.ndarray
    terminal: np.ndarray

    def __post_init__(self):
        if self.stop2.shape != self.stop1.shape or self.stop2.shape[1:] != self.terminal.shape:
            raise SpecError("payoff tables have inconsistent shapes")
        bad = self.stop2 > self.stop1
        if bad.any():
            k, s, i = np.argwhere(bad)[0]
            raise SpecError(f"stop2 > stop1 at t_index={k}, space_index={s}, scenario={i}")

    @property
    def n_scenarios(self) -> int:
        return self.terminal.shape[1]

    def scenario(self, i: int) -> "PayoffTables":
        return PayoffTables(self.stop2[..., i:i + 1], self.stop1[..., i:i + 1], self.terminal[:, i:i + 1])

    def restrict(self, keep) -> "PayoffTables":
        keep = list(keep)
        return PayoffTables(self.stop2[..., keep], self.stop1[..., keep], self.terminal[:, keep])


def tabulate(spec: GameSpec, chain: ChainModel) -> PayoffTables:
    X = chain.x_nodes
    M = chain.n_steps
    F = np.empty((M + 1, len(X), spec.n_scenarios))
    H = np.empty_like(F)
    G = np.empty((len(X), spec.n_scenarios))
    for i in range(spec.n_scenarios):
        for k, t in enumerate(chain.t_nodes):
            F[k, :, i] = evaluate_batch(spec.stop2_payoff[i], float(t), X)
            H[k, :, i] = evaluate_batch(spec.stop1_payoff[i], float(t), X)
        G[:, i] = evaluate_batch(spec.terminal_payoff[i], None, X)
    if not (np.isfinite(F).all() and np.isfinite(H).all() and np.isfinite(G).all()):
        raise SpecError("payoffs are not finite on the chain grid")
    return PayoffTables(F, H, G)


def linear_in_p(values: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """``<values[s, :], p>`` for every space index ``s`` and belief node ``p``.

    Accumulated scenario by scenario so a vertex ``e_i`` picks out column ``i``
    exactly.
    """
    out = values[:, 0:1] * nodes[None, :, 0]
    for i in range(1, nodes.shape[1]):
        out = out + values[:, i:i + 1] * nodes[None, :, i]
    return out


def obstacle_clip(cont, fbar, hbar):
    """``min(hbar, max(fbar, cont))``: the value of the one-step stopping game.

    Raises:
        SpecError: If ``fbar > hbar`` anywhere.
    """
    cont, fbar, hbar = (np.asarray(a, dtype=float) for a in (cont, fbar, hbar))
    if np.any(fbar > hbar):
        raise SpecError("lower obstacle exceeds upper obstacle")
    out = np.minimum(hbar, np.maximum(fbar, cont))
    return float(out) if out.ndim == 0 else out


@dataclass
class ValueField:
    """Solved values; ``slices[k]`` has shape ``(n_space, n_nodes)`` or is ``None`` if not kept."""

    chain: ChainModel
    pgrid: SimplexGrid
    tables: PayoffTables
    slices: list
    spec: GameSpec | None = None

    @property
    def full(self) -> bool:
        return all(s is not None for s in self.slices)

    def slice(self, k: int) -> np.ndarray:
        s = self.slices[k]
        if s is None:
            raise ValueError(f"slice {k} was not retained; solve with keep_full=True")
        return s

    def value(self, k: int, s: int, node: int) -> float:
        return float(self.slice(k)[s, node])

    def obstacles(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        nodes = self.pgrid.nodes
        return linear_in_p(self.tables.stop2[k], nodes), linear_in_p(self.tables.stop1[k], nodes)

    def to_csv(self) -> str:
        """Long format ``t, x_1.., p_1.., value`` over the retained slices."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.chain.x_nodes.shape[1]
        I = self.pgrid.n_scenarios
        w.writerow(["t"] + [f"x_{j + 1}" for j in range(d)] + [f"p_{i + 1}" for i in range(I)] + ["value"])
        pstr = [[repr(float(q)) for q in p] for p in self.pgrid.nodes]
        for k, sl in enumerate(self.slices):
            if sl is None:
                continue
            t = repr(float(self.chain.t_nodes[k]))
            for s, x in enumerate(self.chain.x_nodes):
                xs = [repr(float(v)) for v in x]
                for n in range(len(self.pgrid)):
                    w.writerow([t] + xs + pstr[n] + [repr(float(sl[s, n]))])
        return buf.getvalue()


def terminal_slice(spec: GameSpec | None, chain: ChainModel, pgrid: SimplexGrid, tables: PayoffTables | None = None):
    """``<g(x), p>`` at every (space, belief) node."""
    tables = tables if tables is not None else tabulate(spec, chain)
    return linear_in_p(tables.terminal, pgrid.nodes)


def _envelope_rows(pgrid: SimplexGrid, rows: np.ndarray, workers: int) -> np.ndarray:
    if workers > 1 and len(rows) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return np.array(list(pool.map(lambda r: envelope_values(pgrid, r), rows)))
    return np.array([envelope_values(pgrid, r) for r in rows])


def dp_backward_tables(
    tables: PayoffTables,
    chain: ChainModel,
    pgrid: SimplexGrid,
    keep_full: bool = False,
    convexify: bool = True,
    workers: int = 1,
) -> ValueField:
    """Backward induction from payoff tables; see ``dp_backward``."""
    if tables.n_scenarios != pgrid.n_scenarios:
        raise ValueError("payoff tables and simplex grid disagree on the number of scenarios")
    M = chain.n_steps
    nodes = pgrid.nodes
    V = linear_in_p(tables.terminal, nodes)
    slices: list = [None] * (M + 1)
    slices[M] = V
    for k in range(M - 1, -1, -1):
        cont = step_expectation(chain, k, V)
        clipped = obstacle_clip(cont, linear_in_p(tables.stop2[k], nodes), linear_in_p(tables.stop1[k], nodes))
        V = _envelope_rows(pgrid, clipped, workers) if convexify else clipped
        slices[k] = V
        if not keep_full and k + 1 < M:
            slices[k + 1] = None
    if not keep_full:
        slices[M] = None if M > 0 else slices[M]
    return ValueField(chain, pgrid, tables, slices)


def dp_backward(spec: GameSpec, chain: ChainModel, pgrid: SimplexGrid, keep_full: bool = False, workers: int = 1) -> ValueField:
    """Solve the game on ``chain`` x ``pgrid``.

    With ``keep_full=False`` only the time-0 slice is retained.
    """
    if spec.n_scenarios != pgrid.n_scenarios:
        raise ValueError("spec and simplex grid disagree on the number of scenarios")
    field_ = dp_backward_tables(tabulate(spec, chain), chain, pgrid, keep_full, workers=workers)
    field_.spec = spec
    return field_


def complete_info_solve(spec: GameSpec | None, chain: ChainModel, scenario: int, tables: PayoffTables | None = None) -> np.ndarray:
    """Values of the ordinary Dynkin game for one scenario, shape ``(M + 1, n_space)``."""
    tables = tables if tables is not None else tabulate(spec, chain)
    col = tables.scenario(scenario)
    M = chain.n_steps
    out = np.empty((M + 1, chain.n_space))
    V = col.terminal.copy()
    out[M] = V[:, 0]
    for k in range(M - 1, -1, -1):
        V = obstacle_clip(step_expectation(chain, k, V), col.stop2[k], col.stop1[k])
        out[k] = V[:, 0]
    return out


# ---------------------------------------------------------------------------
# Discrete viscosity checks
# ---------------------------------------------------------------------------


@dataclass
class ResidualReport:
    """Worst violation per category (positive numbers are violations)."""

    upper_obstacle: float = 0.0
    lower_obstacle: float = 0.0
    generator: float = 0.0
    convexity: float = 0.0
    tol: float = 1e-8
    flagged: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return max(self.upper_obstacle, self.lower_obstacle, self.generator, self.convexity) <= 0.0

    def lines(self) -> list[str]:
        return [
            f"upper obstacle (h - V >= -tol): worst excess {self.upper_obstacle:.3e}",
            f"lower obstacle (V - f >= -tol): worst excess {self.lower_obstacle:.3e}",
            f"generator (|V - cont| <= tol*dt where no constraint binds): worst excess {self.generator:.3e}",
            f"convexity (lambda_min >= -tol): worst excess {self.convexity:.3e}",
            "status: " + ("pass" if self.ok else "FAIL"),
        ]


def viscosity_residual_check(field_: ValueField, tol: float = 1e-8) -> ResidualReport:
    """Discrete sub/supersolution checks on every stored time step before the horizon.

    Categories, reported as the worst amount by which the condition fails
    (``<= 0`` means it holds):

    * upper obstacle: ``<h, p> - V >= -tol``;
    * lower obstacle: ``V - <f, p> >= -tol``;
    * generator: where ``V`` lies strictly inside the obstacles and the
      envelope did not lower it (``V >= clip - tol``), ``|V - cont| <= tol*dt``;
    * convexity: ``lambda_min_discrete >= -tol``.

    ``flagged`` maps each category to the ``(k, s, node)`` triples failing it.
    """
    chain, pgrid = field_.chain, field_.pgrid
    rep = ResidualReport(tol=tol, upper_obstacle=-np.inf, lower_obstacle=-np.inf, generator=-np.inf, convexity=-np.inf)
    flagged = {"upper": [], "lower": [], "generator": [], "convexity": []}
    dt = chain.dt
    for k in range(chain.n_steps):
        V = field_.slice(k)
        fbar, hbar = field_.obstacles(k)
        cont = step_expectation(chain, k, field_.slice(k + 1))
        clip = np.minimum(hbar, np.maximum(fbar, cont))
        up = (V - hbar) - tol
        lo = (fbar - V) - tol
        inside = (V > fbar + tol) & (V < hbar - tol) & (V >= clip - tol)
        gen = np.where(inside, np.abs(V - cont) - tol * dt, -np.inf)
        lam = lambda_min_all(pgrid, V)
        cvx = np.where(np.isfinite(lam), -lam - tol, -np.inf)
        for name, arr in (("upper", up), ("lower", lo), ("generator", gen), ("convexity", cvx)):
            worst = float(arr.max(initial=-np.inf))
            attr = {"upper": "upper_obstacle", "lower": "lower_obstacle", "generator": "generator", "convexity": "convexity"}[name]
            setattr(rep, attr, max(getattr(rep, attr), worst))
            for s, n in np.argwhere(arr > 0):
                flagged[name].append((k, int(s), int(n)))
    rep.flagged = flagged
    return rep


def difference_quotients(field_: ValueField) -> tuple[float, float]:
    """Largest finite-difference quotient of ``V`` in ``p`` and in ``x`` over retained slices."""
    pgrid, chain = field_.pgrid, field_.chain
    qp = qx = 0.0
    step_p = np.sqrt(2.0) / pgrid.mesh
    shape = chain.shape
    for sl in field_.slices:
        if sl is None:
            continue
        for d, (j, k) in enumerate(pgrid.directions):
            nb = pgrid.neighbors[:, d]
            ok = nb >= 0
            if ok.any():
                qp = max(qp, float(np.abs(sl[:, nb[ok]] - sl[:, ok]).max() / step_p))
        grid = sl.reshape(shape + (len(pgrid),))
        for j, h in enumerate(chain.dx):
            if shape[j] > 1:
                qx = max(qx, float(np.abs(np.diff(grid, axis=j)).max() / h))
    return qp, qx
