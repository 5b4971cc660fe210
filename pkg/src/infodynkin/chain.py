"""Locally consistent Markov-chain approximation of the state diffusion.

The chain lives on a uniform tensor grid over the truncated box and moves at
most one node along one coordinate per step.  For coordinate ``j`` with drift
``b_j`` and variance ``A_jj = (a a^T)_jj`` the up/down probabilities are::

    dt / dx_j**2 * (A_jj / 2 + dx_j * max(+-b_j, 0))

so the increment has mean ``b dt`` exactly and variance ``A dt + O(dt dx)``.
Mass that would leave the box stays on the boundary node.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .model import GameSpec, SpecError


class CFLError(ValueError):
    """Raised when the time step makes some transition probability negative."""

    def __init__(self, dt: float, max_dt: float):
        super().__init__(f"time step {dt:.6g} violates the CFL bound; largest admissible step is {max_dt:.6g}")
        self.dt = dt
        self.max_dt = max_dt


@dataclass(frozen=True)
class ChainModel:
    """Explicit transition stencils on a space-time grid.

    Attributes:
        x_axes: Grid coordinates per spatial dimension.
        x_nodes: Flattened node coordinates, shape ``(n_space, d)`` (row-major).
        t_nodes: Time grid ``t_0 = 0 < ... < t_M = T``.
        dt: Time step.
        dx: Spacing per coordinate (``nan`` for a degenerate axis).
        targets: ``targets[k, s, m]`` is the destination of stencil slot ``m``.
        probs: Matching transition probabilities.
        drift, var: Drift and diagonal variance the stencil was built from,
            shape ``(M, n_space, d)``; kept for the moment audit.
        folded: ``True`` where boundary folding moved probability mass.
    """

    x_axes: tuple[np.ndarray, ...]
    x_nodes: np.ndarray
    t_nodes: np.ndarray
    dt: float
    dx: tuple[float, ...]
    targets: np.ndarray
    probs: np.ndarray
    drift: np.ndarray
    var: np.ndarray
    folded: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.t_nodes) - 1

    @property
    def n_space(self) -> int:
        return len(self.x_nodes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.x_axes)

    def space_index(self, x) -> int:
        """Index of the grid node nearest to ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return int(np.argmin(((self.x_nodes - x) ** 2).sum(axis=1)))

    def stencil_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_index", "space_index", "target", "prob"])
        for k in range(self.n_steps):
            for s in range(self.n_space):
                for m in range(self.targets.shape[2]):
                    if self.probs[k, s, m] > 0:
                        w.writerow([k, s, int(self.targets[k, s, m]), repr(float(self.probs[k, s, m]))])
        return buf.getvalue()


def _axis(lo: float, hi: float, dx: float) -> tuple[np.ndarray, float]:
    if lo == hi:
        return np.array([lo]), math.nan
    n = max(1, math.ceil((hi - lo) / dx - 1e-9))
    return np.linspace(lo, hi, n + 1), (hi - lo) / n


def _coef(fn, t: float, X: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    try:
        out = np.asarray(fn(t, X), dtype=float)
        if out.shape == (len(X),) + shape:
            return out
    except Exception:
        pass
    return np.array([np.asarray(fn(t, x), dtype=float).reshape(shape) for x in X])


def admissible_dt(drift: np.ndarray, var: np.ndarray, dx: tuple[float, ...]) -> float:
    """Largest time step keeping every stay-probability non-negative."""
    rate = np.zeros(drift.shape[:-1])
    for j, h in enumerate(dx):
        if math.isnan(h):
            continue
        rate = rate + var[..., j] / h**2 + np.abs(drift[..., j]) / h
    worst = float(rate.max(initial=0.0))
    return math.inf if worst == 0.0 else 1.0 / worst


def build_chain(spec: GameSpec, dx, dt: float, n_steps: int | None = None) -> ChainModel:
    """Build the transition stencils for ``spec`` on spacing ``dx`` and step ``dt``.

    The number of time steps is ``ceil(T / dt)`` (or ``n_steps`` when given),
    so the realized step never exceeds the requested one.  Spatial spacing is
    likewise rounded down to divide the box evenly.

    Raises:
        CFLError: If ``dt`` is too large for a non-negative stencil.
        SpecError: If ``a a^T`` has off-diagonal entries (unsupported) or
            ``d > 2``.
    """
    d = spec.dim_x
    if d > 2:
        raise SpecError("only dim_x <= 2 is supported")
    dxs = np.broadcast_to(np.asarray(dx, dtype=float), (d,))
    axes, spacings = zip(*(_axis(lo, hi, h) for lo, hi, h in zip(spec.x_lo, spec.x_hi, dxs)))
    if n_steps is None:
        n_steps = max(1, math.ceil(spec.horizon / dt - 1e-9))
    t_nodes = np.linspace(0.0, spec.horizon, n_steps + 1)
    step = spec.horizon / n_steps
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    n_space = len(X)

    drift = np.empty((n_steps, n_space, d))
    var = np.empty((n_steps, n_space, d))
    for k in range(n_steps):
        drift[k] = _coef(spec.drift, float(t_nodes[k]), X, (d,))
        a = _coef(spec.vol, float(t_nodes[k]), X, (d, d))
        A = a @ np.swapaxes(a, -1, -2)
        off = A - np.einsum("...jj->...j", A)[..., None] * np.eye(d)
        if np.abs(off).max(initial=0.0) > 1e-14:
            raise SpecError("correlated diffusion coefficients are not supported")
        var[k] = np.einsum("...jj->...j", A)

    max_dt = admissible_dt(drift, var, spacings)
    if step > max_dt * (1 + 1e-12):
        raise CFLError(step, max_dt)

    shape = tuple(len(a) for a in axes)
    strides = [int(np.prod(shape[j + 1:])) for j in range(d)]
    idx = np.arange(n_space)
    multi = np.stack(np.unravel_index(idx, shape), axis=-1)
    S = 2 * d + 1
    targets = np.empty((n_steps, n_space, S), dtype=np.int64)
    probs = np.zeros((n_steps, n_space, S))
    folded = np.zeros((n_steps, n_space), dtype=bool)
    targets[:, :, 0] = idx
    stay = np.ones((n_steps, n_space))
    for j in range(d):
        h = spacings[j]
        if math.isnan(h):
            up = down = np.zeros((n_steps, n_space))
        else:
            scale = step / h**2
            up = scale * (var[..., j] / 2 + h * np.maximum(drift[..., j], 0.0))
            down = scale * (var[..., j] / 2 + h * np.maximum(-drift[..., j], 0.0))
        for m, (move, sign) in enumerate(((up, 1), (down, -1))):
            slot = 1 + 2 * j + m
            dest = multi[:, j] + sign
            inside = (dest >= 0) & (dest < shape[j])
            targets[:, :, slot] = np.where(inside, idx + sign * strides[j], idx)
            probs[:, :, slot] = move
            folded |= (~inside)[None, :] & (move > 0)
            stay = stay - move
    probs[:, :, 0] = np.maximum(stay, 0.0)
    return ChainModel(
        x_axes=tuple(axes),
        x_nodes=X,
        t_nodes=t_nodes,
        dt=step,
        dx=tuple(spacings),
        targets=targets,
        probs=probs,
        drift=drift,
        var=var,
        folded=folded,
    )


def step_expectation(chain: ChainModel, t_index: int, values: np.ndarray) -> np.ndarray:
    """One-step conditional expectation ``E[v(X_{k+1}) | X_k = x]`` at every node.

    ``values`` has the spatial index first and may carry trailing axes (for
    instance one column per belief node).  The stencil slots are accumulated
    in a fixed order, so a column gives bit-identical results whether it is
    passed alone or inside a wider array.
    """
    values = np.asarray(values, dtype=float)
    tgt = chain.targets[t_index]
    pr = chain.probs[t_index].reshape(tgt.shape + (1,) * (values.ndim - 1))
    out = pr[:, 0] * values[tgt[:, 0]]
    for m in range(1, tgt.shape[1]):
        out = out + pr[:, m] * values[tgt[:, m]]
    return out


def sample_path(chain: ChainModel, start_index: int, seed) -> np.ndarray:
    """One path of space indices over ``t_nodes``, reproducible under ``seed``."""
    rng = np.random.default_rng(seed)
    return sample_paths(chain, start_index, 1, rng)[0]


def sample_paths(chain: ChainModel, start_index: int, n: int, rng: np.random.Generator, t_start: int = 0) -> np.ndarray:
    paths = np.empty((n, chain.n_steps + 1 - t_start), dtype=np.int64)
    paths[:, 0] = start_index
    for k in range(t_start, chain.n_steps):
        paths[:, k + 1 - t_start] = transition(chain, k, paths[:, k - t_start], rng)
    return paths


def transition(chain: ChainModel, k: int, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw the next space index for each current index in ``s``."""
    cum = np.cumsum(chain.probs[k, s], axis=1)
    u = rng.random(len(s)) * cum[:, -1]
    slot = (u[:, None] >= cum).sum(axis=1)
    slot = np.minimum(slot, cum.shape[1] - 1)
    return chain.targets[k, s, slot]


@dataclass
class MomentAudit:
    mean_error: float
    var_error: float
    cov_error: float
    bound: float
    interior_rows: int
    boundary_rows: int

    @property
    def ok(self) -> bool:
        return max(self.mean_error, self.var_error, self.cov_error) <= self.bound


def moment_audit(chain: ChainModel, c: float | None = None) -> MomentAudit:
    """Compare the increment moments with ``b dt`` and ``A dt`` on all unfolded rows.

    The tolerance is ``1e-10 + c * dt * dx`` with ``c = 2 max|b|`` by default,
    which bounds the upwinding bias ``dt dx |b| - dt^2 b^2`` under the CFL
    condition.
    """
    d = chain.x_nodes.shape[1]
    disp = chain.x_nodes[chain.targets] - chain.x_nodes[None, :, None, :]
    w = chain.probs[..., None]
    mean = (w * disp).sum(axis=2)
    second = np.einsum("ksm,ksmj,ksml->ksjl", chain.probs, disp, disp)
    cov = second - mean[..., :, None] * mean[..., None, :]
    interior = ~chain.folded
    dt = chain.dt
    dxmax = max((h for h in chain.dx if not math.isnan(h)), default=0.0)
    if c is None:
        c = 2.0 * float(np.abs(chain.drift).max(initial=0.0))
    bound = 1e-10 + c * dt * dxmax
    mean_err = np.abs(mean - chain.drift * dt)[interior]
    var_diag = np.einsum("ksjj->ksj", cov)
    var_err = np.abs(var_diag - chain.var * dt)[interior]
    off = cov - var_diag[..., None] * np.eye(d)
    cov_err = np.abs(off)[interior]
    return MomentAudit(
        mean_error=float(mean_err.max(initial=0.0)),
        var_error=float(var_err.max(initial=0.0)),
        cov_error=float(cov_err.max(initial=0.0)),
        bound=bound,
        interior_rows=int(interior.sum()),
        boundary_rows=int((~interior).sum()),
    )
