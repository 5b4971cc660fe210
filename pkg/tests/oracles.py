"""Brute-force reference computations, written without the package's numerical kernels."""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def chord_envelope(values) -> np.ndarray:
    """Two-scenario envelope: at node k, the minimum over all chords a <= k <= b."""
    v = [float(x) for x in values]
    n = len(v)
    out = []
    for k in range(n):
        best = v[k]
        for a in range(k + 1):
            for b in range(k, n):
                if a == b:
                    continue
                lam = (b - k) / (b - a)
                best = min(best, lam * v[a] + (1 - lam) * v[b])
        out.append(best)
    return np.array(out)


def simplex_nodes(n_scenarios: int, mesh: int) -> list[tuple[int, ...]]:
    return sorted(c for c in itertools.product(range(mesh + 1), repeat=n_scenarios) if sum(c) == mesh)


def subset_envelope(nodes, values) -> np.ndarray:
    """Envelope by searching every support of size <= I (three scenarios, coarse meshes)."""
    P = np.asarray(nodes, dtype=float)
    v = np.asarray(values, dtype=float)
    n, I = P.shape
    out = v.copy()
    for m in range(2, I + 1):
        for sup in itertools.combinations(range(n), m):
            A = P[list(sup)].T
            for k in range(n):
                lam, *_ = np.linalg.lstsq(A, P[k], rcond=None)
                if np.abs(A @ lam - P[k]).max() < 1e-12 and (lam >= -1e-14).all():
                    out[k] = min(out[k], float(lam @ v[list(sup)]))
    return out


def chain_moments_1d(b: float, a: float, dx: float, dt: float):
    """Hand-solved upwind probabilities for a 1-d interior node: (up, stay, down)."""
    up = dt / dx**2 * (a * a / 2 + dx * max(b, 0.0))
    down = dt / dx**2 * (a * a / 2 + dx * max(-b, 0.0))
    return up, 1 - up - down, down


def conjugate(nodes, values, phat) -> float:
    return max(float(np.dot(phat, p)) - float(v) for p, v in zip(np.asarray(nodes, dtype=float), values))


# ---------------------------------------------------------------------------
# Game under a splitting schedule, by plain recursion
# ---------------------------------------------------------------------------


def game_recursive(F, H, G, probs, targets, nodes, split, k, s, node, memo=None):
    """Value before the step-``k`` split at space ``s`` and belief ``node``.

    ``split(k, s, node)`` returns a list of ``(weight, child)``.  ``probs``
    and ``targets`` are the chain stencils, ``F, H, G`` the payoff tables.
    """
    memo = {} if memo is None else memo
    M = len(probs)
    key = (k, s, node)
    if key in memo:
        return memo[key]
    if k == M:
        val = sum(q * g for q, g in zip(nodes[node], G[s]))
    else:
        val = 0.0
        for w, c in split(k, s, node):
            q = nodes[c]
            cont = sum(pr * game_recursive(F, H, G, probs, targets, nodes, split, k + 1, int(t), c, memo)
                       for pr, t in zip(probs[k][s], targets[k][s]) if pr > 0)
            f = sum(qi * fi for qi, fi in zip(q, F[k][s]))
            h = sum(qi * hi for qi, hi in zip(q, H[k][s]))
            val += w * min(h, max(f, cont))
    memo[key] = val
    return val


def two_point_splits(mesh: int, node: int) -> list[list[tuple[float, int]]]:
    """Every split of node ``node`` (index = number of p_1 units) of a two-scenario grid."""
    out = [[(1.0, node)]]
    for a in range(node):
        for b in range(node + 1, mesh + 1):
            out.append([(Fraction(b - node, b - a), a), (Fraction(node - a, b - a), b)])
    return [[(float(w), c) for w, c in s] for s in out]


def adapted_min_recursive(F, H, G, probs, targets, mesh, k, s, node, memo):
    """Minimum over space-dependent splitting schedules, two scenarios, by recursion."""
    M = len(probs)
    key = (k, s, node)
    if key in memo:
        return memo[key]
    q = lambda n: (n / mesh, 1 - n / mesh)
    if k == M:
        val = sum(a * b for a, b in zip(q(node), G[s]))
    else:
        val = np.inf
        for split in two_point_splits(mesh, node):
            acc = 0.0
            for w, c in split:
                cont = sum(pr * adapted_min_recursive(F, H, G, probs, targets, mesh, k + 1, int(t), c, memo)
                           for pr, t in zip(probs[k][s], targets[k][s]) if pr > 0)
                f = sum(a * b for a, b in zip(q(c), F[k][s]))
                h = sum(a * b for a, b in zip(q(c), H[k][s]))
                acc += w * min(h, max(f, cont))
            val = min(val, acc)
    memo[key] = val
    return val


def enumerate_fixed_trees(mesh: int, n_steps: int, root: int):
    """Every space-independent schedule ``{(k, node): split}`` for two scenarios, without recursion.

    The schedule assigns a split to every (step, node) pair; pairs that are
    unreachable from the root do not affect the value, so distinct schedules
    that agree on reachable pairs are yielded once.
    """
    splits = {n: two_point_splits(mesh, n) for n in range(mesh + 1)}
    seen = set()
    keys = [(k, n) for k in range(n_steps) for n in range(mesh + 1)]
    for combo in itertools.product(*(range(len(splits[n])) for _, n in keys)):
        choice = dict(zip(keys, combo))
        reach = {root}
        sig = []
        for k in range(n_steps):
            nxt = set()
            for n in sorted(reach):
                sig.append((k, n, choice[(k, n)]))
                nxt.update(c for _, c in splits[n][choice[(k, n)]])
            reach = nxt
        sig = tuple(sig)
        if sig in seen:
            continue
        seen.add(sig)
        yield {(k, n): splits[n][i] for k, n, i in sig}
