"""Game specifications, payoff families and the stop-outcome payoff rule.

A game is a Dynkin game on a diffusion ``dX = b(t, X) dt + a(t, X) dB`` with
``I`` payoff scenarios.  For scenario ``i``:

* ``f_i(t, x)`` is paid when Player 2 (maximizer, uninformed) stops first,
* ``h_i(t, x)`` is paid when Player 1 (minimizer, informed) stops first or
  both stop together,
* ``g_i(x)`` is paid when nobody stops before the horizon.

Scenario indices are 0-based throughout the Python API.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

StopPayoff = Callable[[float, np.ndarray], float]
TerminalPayoff = Callable[[np.ndarray], float]


class SpecError(ValueError):
    """Raised when a game specification is malformed or breaks the payoff ordering."""


# ---------------------------------------------------------------------------
# Payoff families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Poly:
    """Payoff ``const + t_coef*t + sum_j lin_j x_j + sum_j quad_j x_j**2``.

    Covers the affine-in-time, space-independent payoffs of the two-state
    example as well as quadratic-in-space payoffs.  Works on a single point
    ``x`` of shape ``(d,)`` or on a batch of shape ``(n, d)``.
    """

    const: float = 0.0
    t_coef: float = 0.0
    lin: tuple[float, ...] = ()
    quad: tuple[float, ...] = ()

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        val = self.const + self.t_coef * np.asarray(t, dtype=float)
        if self.lin:
            val = val + x @ np.asarray(self.lin, dtype=float)
        if self.quad:
            val = val + (x * x) @ np.asarray(self.quad, dtype=float)
        if x.ndim > 1:
            return np.broadcast_to(val, x.shape[:-1]).astype(float)
        return float(val)

    def of_x(self, x):
        """Evaluate with the time coefficient ignored (terminal payoffs)."""
        return Poly(self.const, 0.0, self.lin, self.quad)(0.0, x)


class Table:
    """Tabulated payoff on a tensor grid with multilinear interpolation.

    ``axes`` are the grid coordinates, time first for early-exercise payoffs
    (``with_time=True``) and space only for terminal payoffs.  Queries outside
    the grid are clamped onto it.
    """

    def __init__(self, axes: Sequence[Sequence[float]], values, with_time: bool = True):
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        self.values = np.asarray(values, dtype=float)
        self.with_time = with_time
        shape = tuple(len(a) for a in self.axes)
        if self.values.shape != shape:
            raise SpecError(f"table values have shape {self.values.shape}, axes imply {shape}")
        # singleton axes break RegularGridInterpolator; duplicate them
        axes_ok, vals = [], self.values
        for k, a in enumerate(self.axes):
            if len(a) == 1:
                a = np.array([a[0], a[0] + 1.0])
                vals = np.concatenate([vals, vals], axis=k)
            axes_ok.append(a)
        self._lo = np.array([a[0] for a in self.axes])
        self._hi = np.array([a[-1] for a in self.axes])
        self._interp = RegularGridInterpolator(tuple(axes_ok), vals, method="linear")

    def _query(self, pts):
        pts = np.clip(pts, self._lo, self._hi)
        return self._interp(pts)

    def __call__(self, *args):
        if self.with_time:
            t, x = args
            x = np.atleast_1d(np.asarray(x, dtype=float))
            batch = x.ndim > 1
            xs = x.reshape(-1, x.shape[-1])
            ts = np.broadcast_to(np.asarray(t, dtype=float), (len(xs),))
            out = self._query(np.column_stack([ts, xs]))
        else:
            (x,) = args
            x = np.atleast_1d(np.asarray(x, dtype=float))
            batch = x.ndim > 1
            out = self._query(x.reshape(-1, x.shape[-1]))
        return out if batch else float(out[0])

    @classmethod
    def from_csv(cls, path, with_time: bool = True) -> "Table":
        """Load a long-format CSV (coordinate columns then ``value``) on a full tensor grid."""
        data = np.genfromtxt(path, delimiter=",", names=True)
        names = data.dtype.names
        coords = [np.unique(data[n]) for n in names[:-1]]
        values = np.full(tuple(len(c) for c in coords), np.nan)
        idx = tuple(np.searchsorted(c, data[n]) for c, n in zip(coords, names[:-1]))
        values[idx] = data[names[-1]]
        if np.isnan(values).any():
            raise SpecError(f"{path}: table does not cover a full tensor grid")
        return cls(coords, values, with_time=with_time)


@dataclass(frozen=True)
class AffineDrift:
    """Drift ``b_j(t, x) = const_j + slope_j * x_j``."""

    const: tuple[float, ...]
    slope: tuple[float, ...] = ()

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        b = np.broadcast_to(np.asarray(self.const, dtype=float), x.shape).copy()
        if self.slope:
            b = b + np.asarray(self.slope, dtype=float) * x
        return b


@dataclass(frozen=True)
class DiagonalVol:
    """Constant diagonal volatility matrix ``a = diag(scale)``."""

    scale: tuple[float, ...]

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        a = np.diag(np.asarray(self.scale, dtype=float))
        if x.ndim > 1:
            return np.broadcast_to(a, x.shape[:-1] + a.shape).copy()
        return a


# ---------------------------------------------------------------------------
# Specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GameSpec:
    """Immutable description of a game with one-sided information.

    Attributes:
        dim_x: Spatial dimension ``d``.
        n_scenarios: Number of payoff scenarios ``I``.
        horizon: Terminal time ``T``.
        drift: ``b(t, x)`` returning a length-``d`` vector.
        vol: ``a(t, x)`` returning a ``d x d`` matrix.
        stop2_payoff: ``f_i(t, x)``, paid when Player 2 stops first.
        stop1_payoff: ``h_i(t, x)``, paid when Player 1 stops first or on ties.
        terminal_payoff: ``g_i(x)``, paid at the horizon.
        x_lo, x_hi: Spatial truncation box.
        name: Free-form label used in reports.
    """

    dim_x: int
    n_scenarios: int
    horizon: float
    drift: Callable
    vol: Callable
    stop2_payoff: tuple[StopPayoff, ...]
    stop1_payoff: tuple[StopPayoff, ...]
    terminal_payoff: tuple[TerminalPayoff, ...]
    x_lo: tuple[float, ...]
    x_hi: tuple[float, ...]
    name: str = "game"

    def __post_init__(self):
        if self.dim_x < 1 or self.n_scenarios < 1:
            raise SpecError("dim_x and n_scenarios must be positive")
        if not self.horizon > 0:
            raise SpecError("horizon must be positive")
        for label, fams in (
            ("stop2_payoff", self.stop2_payoff),
            ("stop1_payoff", self.stop1_payoff),
            ("terminal_payoff", self.terminal_payoff),
        ):
            if len(fams) != self.n_scenarios:
                raise SpecError(f"{label} has {len(fams)} entries, expected {self.n_scenarios}")
        object.__setattr__(self, "x_lo", tuple(float(v) for v in np.broadcast_to(self.x_lo, (self.dim_x,))))
        object.__setattr__(self, "x_hi", tuple(float(v) for v in np.broadcast_to(self.x_hi, (self.dim_x,))))
        if any(lo > hi for lo, hi in zip(self.x_lo, self.x_hi)):
            raise SpecError("x_lo must not exceed x_hi")


def two_state_example() -> GameSpec:
    """The deterministic two-scenario game on ``[0, 1]`` with ``a = b = 0``.

    Scenario 0: ``f = 2t - 1``, ``h = 2t + 1``, ``g = 2``.
    Scenario 1: ``f = 2 - t``, ``h = 3 - t``, ``g = 3/2``.
    """
    return GameSpec(
        dim_x=1,
        n_scenarios=2,
        horizon=1.0,
        drift=AffineDrift((0.0,)),
        vol=DiagonalVol((0.0,)),
        stop2_payoff=(Poly(-1.0, 2.0), Poly(2.0, -1.0)),
        stop1_payoff=(Poly(1.0, 2.0), Poly(3.0, -1.0)),
        terminal_payoff=(Poly(2.0).of_x, Poly(1.5).of_x),
        x_lo=(0.0,),
        x_hi=(0.0,),
        name="two_state_example",
    )


# ---------------------------------------------------------------------------
# Stop outcomes
# ---------------------------------------------------------------------------


class StopKind(enum.Enum):
    PLAYER2_FIRST = "player2_first"
    PLAYER1_FIRST_OR_TIE = "player1_first_or_tie"
    BOTH_AT_HORIZON = "both_at_horizon"


@dataclass(frozen=True)
class StopOutcome:
    kind: StopKind
    time: float
    scenario: int


def payoff(spec: GameSpec, outcome: StopOutcome, x_at_stop) -> float:
    """Payoff of a realized stop, with ties before the horizon paying ``h_i``."""
    i = outcome.scenario
    if not 0 <= i < spec.n_scenarios:
        raise SpecError(f"scenario {i} out of range for I={spec.n_scenarios}")
    t = float(outcome.time)
    if not 0.0 <= t <= spec.horizon:
        raise ValueError(f"stop time {t} outside [0, {spec.horizon}]")
    x = np.asarray(x_at_stop, dtype=float).reshape(spec.dim_x)
    if outcome.kind is StopKind.BOTH_AT_HORIZON:
        if t != spec.horizon:
            raise ValueError("BOTH_AT_HORIZON outcome must carry time == horizon")
        return float(spec.terminal_payoff[i](x))
    if t >= spec.horizon:
        raise ValueError("early-stop outcomes must occur strictly before the horizon")
    if outcome.kind is StopKind.PLAYER2_FIRST:
        return float(spec.stop2_payoff[i](t, x))
    return float(spec.stop1_payoff[i](t, x))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class Violation:
    kind: str
    scenario: int
    t: float | None
    x: tuple[float, ...]
    amount: float


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    lipschitz: dict[str, float] = field(default_factory=dict)
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        lines = [f"violations: {len(self.violations)}"]
        kinds: dict[str, int] = {}
        for v in self.violations:
            kinds[v.kind] = kinds.get(v.kind, 0) + 1
        lines += [f"  {k}: {n}" for k, n in sorted(kinds.items())]
        lines += [f"warning: {w}" for w in self.warnings]
        lines += [f"lipschitz {k}: {v:.6g}" for k, v in sorted(self.lipschitz.items())]
        return "\n".join(lines)


def sample_axes(spec: GameSpec, density: int) -> tuple[np.ndarray, list[np.ndarray]]:
    ts = np.linspace(0.0, spec.horizon, max(density, 2))
    xs = [
        np.array([lo]) if lo == hi else np.linspace(lo, hi, max(density, 2))
        for lo, hi in zip(spec.x_lo, spec.x_hi)
    ]
    return ts, xs


def evaluate_batch(fn, t, X: np.ndarray) -> np.ndarray:
    """Evaluate a payoff on a batch of points, falling back to a loop for scalar-only callables."""
    try:
        out = np.asarray(fn(X) if t is None else fn(t, X), dtype=float)
        if out.shape == (len(X),):
            return out
    except Exception:
        pass
    if t is None:
        return np.array([float(fn(x)) for x in X])
    return np.array([float(fn(t, x)) for x in X])


def _lipschitz(values: np.ndarray, axes: list[np.ndarray]) -> float:
    best = 0.0
    for k, ax in enumerate(axes):
        if len(ax) < 2:
            continue
        d = np.abs(np.diff(values, axis=k)) / np.diff(ax).reshape([-1 if j == k else 1 for j in range(values.ndim)])
        best = max(best, float(d.max()))
    return best


def validate_spec(spec: GameSpec, sample_density: int = 21, boundary_threshold: float = 0.1) -> ValidationReport:
    """Check the payoff ordering, finiteness and regularity of ``spec`` on a sample grid.

    Ordering breaches (``f > h`` or ``g`` outside ``[f(T), h(T)]``) are
    reported as violations.  Lipschitz moduli are estimated from
    finite-difference quotients, and a warning is issued when a payoff still
    varies noticeably near the edge of the truncated domain.

    Raises:
        SpecError: If any payoff evaluates to a non-finite number; the
            message names the offending ``(t, x, i)``.
    """
    ts, xs = sample_axes(spec, sample_density)
    mesh = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1)
    shape_x = mesh.shape[:-1]
    X = mesh.reshape(-1, spec.dim_x)
    report = ValidationReport()

    def check_finite(vals, label, i, t):
        bad = ~np.isfinite(vals)
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise SpecError(f"{label}[{i}] is not finite at t={t}, x={tuple(X[j])}")

    F = np.empty((len(ts), len(X), spec.n_scenarios))
    H = np.empty_like(F)
    G = np.empty((len(X), spec.n_scenarios))
    for i in range(spec.n_scenarios):
        for k, t in enumerate(ts):
            F[k, :, i] = evaluate_batch(spec.stop2_payoff[i], float(t), X)
            check_finite(F[k, :, i], "stop2_payoff", i, t)
            H[k, :, i] = evaluate_batch(spec.stop1_payoff[i], float(t), X)
            check_finite(H[k, :, i], "stop1_payoff", i, t)
        G[:, i] = evaluate_batch(spec.terminal_payoff[i], None, X)
        check_finite(G[:, i], "terminal_payoff", i, spec.horizon)

    for i in range(spec.n_scenarios):
        for k, j in zip(*np.nonzero(F[:, :, i] > H[:, :, i])):
            report.violations.append(
                Violation("stop2 > stop1", i, float(ts[k]), tuple(X[j]), float(F[k, j, i] - H[k, j, i]))
            )
        for j in np.flatnonzero(F[-1, :, i] > G[:, i]):
            report.violations.append(
                Violation("stop2(T) > terminal", i, spec.horizon, tuple(X[j]), float(F[-1, j, i] - G[j, i]))
            )
        for j in np.flatnonzero(G[:, i] > H[-1, :, i]):
            report.violations.append(
                Violation("terminal > stop1(T)", i, spec.horizon, tuple(X[j]), float(G[j, i] - H[-1, j, i]))
            )

    axes_tx = [ts] + xs
    for label, arr in (("stop2", F), ("stop1", H)):
        for i in range(spec.n_scenarios):
            vals = arr[:, :, i].reshape((len(ts),) + shape_x)
            key = f"{label}[{i}]"
            report.lipschitz[key] = _lipschitz(vals, axes_tx)
            report.bounds[key] = (float(vals.min()), float(vals.max()))
            _boundary_warning(report, key, vals, axis_offset=1, threshold=boundary_threshold)
    for i in range(spec.n_scenarios):
        vals = G[:, i].reshape(shape_x)
        key = f"terminal[{i}]"
        report.lipschitz[key] = _lipschitz(vals, xs)
        report.bounds[key] = (float(vals.min()), float(vals.max()))
        _boundary_warning(report, key, vals, axis_offset=0, threshold=boundary_threshold)
    return report


def _boundary_warning(report, key, vals, axis_offset, threshold):
    span = float(vals.max() - vals.min())
    if span == 0.0:
        return
    for k in range(axis_offset, vals.ndim):
        n = vals.shape[k]
        if n < 2:
            continue
        lo = np.abs(np.take(vals, 0, axis=k) - np.take(vals, 1, axis=k)).max()
        hi = np.abs(np.take(vals, n - 1, axis=k) - np.take(vals, n - 2, axis=k)).max()
        if max(lo, hi) > threshold * span:
            report.warnings.append(
                f"{key} varies by {max(lo, hi):.3g} next to the spatial boundary "
                f"(> {threshold:.0%} of its range {span:.3g}); widen x_lo/x_hi"
            )


def payoff_range(spec: GameSpec, sample_density: int = 11) -> float:
    """Spread between the smallest and largest sampled payoff."""
    rep = validate_spec(spec, sample_density)
    lo = min(b[0] for b in rep.bounds.values())
    hi = max(b[1] for b in rep.bounds.values())
    return hi - lo if math.isfinite(hi - lo) else 0.0
