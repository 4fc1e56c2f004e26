"""Small built-in environments used by the benchmarks, demos and CLI."""
from __future__ import annotations

from collections import deque

import numpy as np

from .mdp import TabularMdp, random_mdp

__all__ = ["single_state", "bandit", "chain", "gridworld", "zero_cost", "BUILTIN_ENVS", "make_env"]


def single_state(costs=(0.2, 0.5, 0.8), discount: float = 0.5) -> TabularMdp:
    costs = np.asarray(costs, dtype=float)
    A = costs.size
    return TabularMdp(np.ones((1, A, 1)), costs[None, :], discount, np.ones(1))


def bandit(gap: float = 0.5, discount: float = 0.5) -> TabularMdp:
    """Two-armed member of the bandit family: costs (0.5 - gap/2, 0.5 + gap/2)."""
    if not 0.0 <= gap <= 1.0:
        raise ValueError("gap must lie in [0, 1]")
    return single_state((0.5 - gap / 2, 0.5 + gap / 2), discount)


def chain(n: int = 6, discount: float = 0.5, slip: float = 0.1, step_cost: float = 0.1) -> TabularMdp:
    """N-chain with actions (left, right).

    The left end costs 1 per step, the right end is free, interior states
    cost ``step_cost``. Each move goes the other way with probability ``slip``.
    """
    if n < 2:
        raise ValueError("chain needs at least two states")
    P = np.zeros((n, 2, n))
    for s in range(n):
        left, right = max(s - 1, 0), min(s + 1, n - 1)
        P[s, 0, left] += 1.0 - slip
        P[s, 0, right] += slip
        P[s, 1, right] += 1.0 - slip
        P[s, 1, left] += slip
    r = np.full((n, 2), step_cost)
    r[0, :] = 1.0
    r[n - 1, :] = 0.0
    return TabularMdp(P, r, discount, np.full(n, 1.0 / n))


_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right


def _reachable(free: np.ndarray, goal) -> bool:
    seen = {goal}
    todo = deque([goal])
    while todo:
        i, j = todo.popleft()
        for di, dj in _MOVES:
            nxt = (i + di, j + dj)
            if 0 <= nxt[0] < free.shape[0] and 0 <= nxt[1] < free.shape[1] and free[nxt] and nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    return len(seen) == int(free.sum())


def gridworld(size: int = 5, discount: float = 0.9, seed: int = 1, num_walls: int = 3,
              slip: float = 0.1) -> TabularMdp:
    """``size`` x ``size`` grid with a free absorbing goal in the far corner.

    Every non-goal step costs 1. The seed places ``num_walls`` wall cells
    (keeping the goal reachable from every free cell). With probability
    ``slip`` the agent moves in a uniformly random direction instead.
    Bumping into a wall or the border leaves the agent in place.
    The initial distribution is uniform over free cells.
    """
    rng = np.random.default_rng(seed)
    goal = (size - 1, size - 1)
    candidates = [(i, j) for i in range(size) for j in range(size) if (i, j) not in (goal, (0, 0))]
    for _ in range(1000):
        free = np.ones((size, size), dtype=bool)
        picks = rng.choice(len(candidates), size=min(num_walls, len(candidates)), replace=False)
        for p in picks:
            free[candidates[p]] = False
        if _reachable(free, goal):
            break
    else:  # pragma: no cover - practically unreachable for small wall counts
        raise RuntimeError("could not place walls with a connected layout")

    cells = [(i, j) for i in range(size) for j in range(size) if free[i, j]]
    index = {c: k for k, c in enumerate(cells)}
    S, A = len(cells), len(_MOVES)
    P = np.zeros((S, A, S))
    r = np.ones((S, A))
    for c, s in index.items():
        if c == goal:
            P[s, :, s] = 1.0
            r[s, :] = 0.0
            continue
        dest = []
        for di, dj in _MOVES:
            n = (c[0] + di, c[1] + dj)
            ok = 0 <= n[0] < size and 0 <= n[1] < size and free[n]
            dest.append(index[n] if ok else s)
        for a in range(A):
            P[s, a, dest[a]] += 1.0 - slip
            for b in range(A):
                P[s, a, dest[b]] += slip / A
    return TabularMdp(P, r, discount, np.full(S, 1.0 / S))


def zero_cost(num_states: int = 4, num_actions: int = 3, discount: float = 0.5, seed: int = 0) -> TabularMdp:
    base = random_mdp(num_states, num_actions, discount, seed)
    return TabularMdp(base.transitions, np.zeros_like(base.rewards), discount, base.initial_dist)


def _random(S: int = 5, A: int = 3, gamma: float = 0.5, seed: int = 7) -> TabularMdp:
    return random_mdp(S, A, gamma, seed)


BUILTIN_ENVS = {
    "random": _random,
    "single_state": single_state,
    "bandit": bandit,
    "chain": chain,
    "gridworld": gridworld,
    "zero_cost": zero_cost,
}


def make_env(name: str, **params) -> TabularMdp:
    try:
        factory = BUILTIN_ENVS[name]
    except KeyError:
        raise ValueError(f"unknown builtin environment {name!r}; choose from {sorted(BUILTIN_ENVS)}") from None
    return factory(**params)
