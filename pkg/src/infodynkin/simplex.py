"""Uniform grids on the probability simplex and convex analysis in the belief variable.

Nodes are the points ``n / N`` with ``n`` a vector of non-negative integers
summing to ``N``, listed in lexicographic order of ``n``.  For two scenarios
this puts the nodes in increasing order of ``p_1``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


class SimplexGrid:
    """Nodes ``{0, 1/N, ..., 1}^I`` on the simplex, with tangent-direction neighbours.

    Attributes:
        n_scenarios: ``I``.
        mesh: ``N``.
        counts: Integer coordinates, shape ``(n_nodes, I)``.
        nodes: Probability vectors, shape ``(n_nodes, I)``.
        directions: Ordered pairs ``(j, k)`` naming the tangent direction ``e_j - e_k``.
        neighbors: ``neighbors[node, d]`` is the node one step along
            ``directions[d]``, or ``-1`` when that step leaves the simplex.
    """

    def __init__(self, n_scenarios: int, mesh: int):
        if n_scenarios < 1 or mesh < 1:
            raise ValueError("n_scenarios and mesh must be positive")
        self.n_scenarios = n_scenarios
        self.mesh = mesh
        self.counts = np.array(sorted(_compositions(mesh, n_scenarios)), dtype=np.int64)
        self.nodes = self.counts / mesh
        self.index = {tuple(c): k for k, c in enumerate(self.counts.tolist())}
        self.vertices = np.array(
            [self.index[tuple(mesh if j == i else 0 for j in range(n_scenarios))] for i in range(n_scenarios)]
        )
        self.is_vertex = np.zeros(len(self.counts), dtype=bool)
        self.is_vertex[self.vertices] = True
        self.directions = [(j, k) for j in range(n_scenarios) for k in range(n_scenarios) if j != k]
        self.neighbors = np.full((len(self.counts), len(self.directions)), -1, dtype=np.int64)
        for node, c in enumerate(self.counts.tolist()):
            for d, (j, k) in enumerate(self.directions):
                if c[k] > 0:
                    nb = list(c)
                    nb[j] += 1
                    nb[k] -= 1
                    self.neighbors[node, d] = self.index[tuple(nb)]
        assert len(self.counts) == comb(mesh + n_scenarios - 1, n_scenarios - 1)

    def __len__(self) -> int:
        return len(self.counts)

    def __repr__(self) -> str:
        return f"SimplexGrid(n_scenarios={self.n_scenarios}, mesh={self.mesh})"

    def node_of(self, p) -> int:
        """Index of the node equal to ``p`` (which must lie on the grid)."""
        c = np.rint(np.asarray(p, dtype=float) * self.mesh).astype(np.int64)
        if abs(c.sum() - self.mesh) or not np.allclose(c / self.mesh, p, atol=1e-9):
            raise ValueError(f"{p} is not a node of {self!r}")
        return self.index[tuple(c.tolist())]

    def face(self, keep) -> np.ndarray:
        """Indices of the nodes whose support lies inside the scenario subset ``keep``."""
        drop = [i for i in range(self.n_scenarios) if i not in set(keep)]
        return np.flatnonzero((self.counts[:, drop] == 0).all(axis=1))


@dataclass
class SimplexFunction:
    """A scalar value per node of ``grid``."""

    grid: SimplexGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.grid),):
            raise ValueError(f"expected {len(self.grid)} values, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("simplex function values must be finite")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"p_{i + 1}" for i in range(self.grid.n_scenarios)] + ["value"])
        for p, v in zip(self.grid.nodes, self.values):
            w.writerow([repr(float(q)) for q in p] + [repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, mesh: int) -> "SimplexFunction":
        rows = list(csv.reader(io.StringIO(text)))
        n = len(rows[0]) - 1
        grid = SimplexGrid(n, mesh)
        values = np.full(len(grid), np.nan)
        for row in rows[1:]:
            values[grid.node_of([float(v) for v in row[:n]])] = float(row[n])
        return cls(grid, values)


# ---------------------------------------------------------------------------
# Convex envelope
# ---------------------------------------------------------------------------


def _lower_hull_two(values: np.ndarray) -> list[int]:
    # Monotone chain on (k, v_k) with integer abscissae; collinear points are dropped.
    hull: list[int] = []
    for k in range(len(values)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (b - a) * (values[k] - values[a]) - (values[b] - values[a]) * (k - a)
            if cross <= 0.0:
                hull.pop()
            else:
                break
        hull.append(k)
    return hull


def _envelope_two(values: np.ndarray, want_slopes: bool):
    n = len(values) - 1
    hull = _lower_hull_two(values)
    env = values.copy()
    slopes = np.empty((len(values), 2)) if want_slopes else None
    for a, b in zip(hull[:-1], hull[1:]):
        ks = np.arange(a + 1, b)
        env[ks] = ((b - ks) * values[a] + (ks - a) * values[b]) / (b - a)
        if want_slopes:
            # affine v = alpha + beta * p_1, written as <phat, p> with p_2 = 1 - p_1
            beta = (values[b] - values[a]) * n / (b - a)
            alpha = values[a] - beta * a / n
            slopes[a:b + 1] = (alpha + beta, alpha)
    if want_slopes and len(hull) == 1:
        slopes[:] = (values[0], values[0])
    np.minimum(env, values, out=env)
    return env, slopes


def _reduced(grid: SimplexGrid) -> np.ndarray:
    return grid.nodes[:, :-1]


def _envelope_hull(grid: SimplexGrid, values: np.ndarray, want_slopes: bool):
    q = _reduced(grid)
    span = float(values.max() - values.min())
    apex = np.append(q.mean(axis=0), values.max() + span + 1.0)
    pts = np.vstack([np.column_stack([q, values]), apex])
    hull = ConvexHull(pts)
    eq = hull.equations
    lower = eq[eq[:, -2] < -1e-12]
    # plane: n_q . q + n_v v + off = 0  ->  v = -(n_q . q + off) / n_v
    coef = -lower[:, :-2] / lower[:, -2:-1]
    off = -lower[:, -1] / lower[:, -2]
    planes = q @ coef.T + off
    best = planes.argmax(axis=1)
    env = planes[np.arange(len(values)), best]
    env = np.minimum(env, values)
    env[grid.is_vertex] = values[grid.is_vertex]
    slopes = None
    if want_slopes:
        c, o = coef[best], off[best]
        slopes = np.column_stack([c + o[:, None], o])
    return env, slopes


def _envelope_lp(grid: SimplexGrid, values: np.ndarray, want_slopes: bool):
    P = grid.nodes
    env = values.copy()
    slopes = np.empty_like(P) if want_slopes else None
    for k in range(len(values)):
        res = linprog(values, A_eq=P.T, b_eq=P[k], bounds=(0, None), method="highs")
        if res.status != 0:
            raise RuntimeError(f"envelope LP failed at node {k}: {res.message}")
        support = np.flatnonzero(res.x > 1e-9)
        # re-solve the barycentric weights on the active support to shed solver tolerance
        A = np.vstack([P[support].T, np.ones(len(support))])
        lam, *_ = np.linalg.lstsq(A, np.append(P[k], 1.0), rcond=None)
        if (lam >= -1e-12).all() and np.allclose(A @ lam, np.append(P[k], 1.0), atol=1e-12):
            env[k] = min(values[k], float(lam @ values[support]))
        else:
            env[k] = min(values[k], float(res.fun))
        if want_slopes:
            slopes[k] = res.eqlin.marginals
    env[grid.is_vertex] = values[grid.is_vertex]
    return env, slopes


def envelope_values(grid: SimplexGrid, values, method: str = "auto", want_slopes: bool = False):
    """Convex envelope of nodal values; optionally also one supporting slope per node.

    Methods: ``"chain"`` (monotone chain, two scenarios only), ``"hull"``
    (lower facets of the lifted point cloud via Qhull) and ``"lp"`` (one
    linear program per node).  ``"auto"`` picks ``chain`` for ``I = 2`` and
    ``hull`` otherwise, falling back to ``lp`` if Qhull fails.

    The slope ``phat`` of node ``k`` satisfies ``<phat, p_m> <= v_m`` for all
    nodes ``m`` and ``<phat, p_k> = env_k``.
    """
    values = np.asarray(values, dtype=float)
    if not np.isfinite(values).all():
        raise ValueError("envelope input must be finite")
    I = grid.n_scenarios
    if I == 1:
        return values.copy(), (values[:, None].copy() if want_slopes else None)
    if method == "auto":
        method = "chain" if I == 2 else "hull"
    if method == "chain":
        if I != 2:
            raise ValueError("the monotone chain method needs exactly two scenarios")
        env, slopes = _envelope_two(values, want_slopes)
    elif method == "hull":
        try:
            env, slopes = _envelope_hull(grid, values, want_slopes)
        except QhullError:
            env, slopes = _envelope_lp(grid, values, want_slopes)
    elif method == "lp":
        env, slopes = _envelope_lp(grid, values, want_slopes)
    else:
        raise ValueError(f"unknown envelope method {method!r}")
    return (env, slopes) if want_slopes else env


def convex_envelope(fun: SimplexFunction, method: str = "auto") -> SimplexFunction:
    """Largest convex function below ``fun`` on the node set."""
    return SimplexFunction(fun.grid, envelope_values(fun.grid, fun.values, method))


def supporting_slopes(fun: SimplexFunction, method: str = "auto") -> np.ndarray:
    """One supporting slope per node of the envelope of ``fun``, shape ``(n_nodes, I)``."""
    return envelope_values(fun.grid, fun.values, method, want_slopes=True)[1]


def lambda_min_discrete(fun: SimplexFunction, node: int) -> float:
    """Smallest normalized second difference of ``fun`` along tangent directions at ``node``.

    For the direction ``z = e_j - e_k`` and step ``h = 1/N`` the quotient is
    ``(v(p + h z) + v(p - h z) - 2 v(p)) / (h^2 |z|^2)``, which reproduces
    ``<A z, z> / |z|^2`` for quadratics with Hessian ``A``.  Returns ``inf``
    when no direction has both neighbours on the grid.
    """
    grid = fun.grid
    v = fun.values
    h2 = 2.0 / grid.mesh**2
    best = np.inf
    nb = grid.neighbors[node]
    for d, (j, k) in enumerate(grid.directions):
        if j > k:
            continue
        fwd = nb[d]
        back = nb[grid.directions.index((k, j))]
        if fwd < 0 or back < 0:
            continue
        best = min(best, (v[fwd] + v[back] - 2.0 * v[node]) / h2)
    return float(best)


def lambda_min_all(grid: SimplexGrid, values: np.ndarray) -> np.ndarray:
    """``lambda_min_discrete`` at every node for values of shape ``(..., n_nodes)``."""
    values = np.asarray(values, dtype=float)
    h2 = 2.0 / grid.mesh**2
    out = np.full(values.shape, np.inf)
    for d, (j, k) in enumerate(grid.directions):
        if j > k:
            continue
        fwd = grid.neighbors[:, d]
        back = grid.neighbors[:, grid.directions.index((k, j))]
        ok = (fwd >= 0) & (back >= 0)
        sd = (values[..., fwd[ok]] + values[..., back[ok]] - 2.0 * values[..., ok]) / h2
        out[..., ok] = np.minimum(out[..., ok], sd)
    return out


# ---------------------------------------------------------------------------
# Conjugation
# ---------------------------------------------------------------------------


def fenchel_conjugate(fun: SimplexFunction, phat) -> float | np.ndarray:
    """``max_p <phat, p> - fun(p)`` over grid nodes; ``phat`` may be one vector or a stack."""
    phat = np.asarray(phat, dtype=float)
    vals = phat @ fun.grid.nodes.T - fun.values
    return vals.max(axis=-1) if phat.ndim > 1 else float(vals.max())


def biconjugate(fun: SimplexFunction, phat_grid) -> SimplexFunction:
    """``p -> max_phat <phat, p> - fun*(phat)`` over the finite slope set ``phat_grid``."""
    phat_grid = np.atleast_2d(np.asarray(phat_grid, dtype=float))
    conj = fenchel_conjugate(fun, phat_grid)
    vals = (fun.grid.nodes @ phat_grid.T - conj).max(axis=1)
    return SimplexFunction(fun.grid, vals)
