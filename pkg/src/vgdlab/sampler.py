"""On-policy action-value sampling with geometric stopping.

One episode yields one record.  Starting from ``s_0 ~ rho0`` the policy is
followed; at every step the current state is accepted with probability
``1 - gamma`` (so the accepted state is distributed as the occupancy
measure).  At the accepted state an action is drawn uniformly, then the
policy is followed again, stopping after each step with probability
``1 - gamma``.  The summed cost, multiplied by ``A``, is an unbiased
estimate of ``Q(s, a)`` for the uniformly drawn action.

Random streams come from the Philox counter-based generator keyed by
``(seed, stream)``, so a dataset is reproducible on any platform.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import TOL
from .mdp import TabularMdp, check_policy, occupancy, policy_evaluation
from .policy_space import ActionNorm, BregmanDivergence

__all__ = [
    "SampleRecord",
    "Dataset",
    "RunawayEpisodeError",
    "make_rng",
    "rollout_once",
    "build_dataset",
    "empirical_gradient",
    "empirical_objective",
    "exact_objective",
    "episode_length_bound",
]


class RunawayEpisodeError(RuntimeError):
    """An episode exceeded the hard step cap."""


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent Philox stream ``stream`` of the base ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True)
class SampleRecord:
    state: int
    action: int
    scaled_return: float
    episode_len: int
    num_actions: int

    @property
    def q_hat(self) -> np.ndarray:
        q = np.zeros(self.num_actions)
        q[self.action] = self.scaled_return
        return q


@dataclass(frozen=True)
class Dataset:
    """``N`` i.i.d. records drawn under one policy, stored column-wise."""

    states: np.ndarray
    actions: np.ndarray
    scaled_returns: np.ndarray
    episode_lens: np.ndarray
    num_actions: int
    horizon: float
    policy_id: Optional[int] = None

    def __len__(self) -> int:
        return int(self.states.size)

    @property
    def records(self) -> list:
        return [SampleRecord(int(s), int(a), float(q), int(t), self.num_actions)
                for s, a, q, t in zip(self.states, self.actions, self.scaled_returns, self.episode_lens)]

    @property
    def q_hat(self) -> np.ndarray:
        q = np.zeros((len(self), self.num_actions))
        q[np.arange(len(self)), self.actions] = self.scaled_returns
        return q

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state", "action", "scaled_return", "episode_len"])
            for s, a, q, t in zip(self.states, self.actions, self.scaled_returns, self.episode_lens):
                w.writerow([int(s), int(a), repr(float(q)), int(t)])

    @classmethod
    def from_csv(cls, path, num_actions: int, horizon: float, policy_id=None) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            np.array([int(r["state"]) for r in rows], dtype=int),
            np.array([int(r["action"]) for r in rows], dtype=int),
            np.array([float(r["scaled_return"]) for r in rows]),
            np.array([int(r["episode_len"]) for r in rows], dtype=int),
            num_actions, horizon, policy_id,
        )


def rollout_once(mdp: TabularMdp, policy, rng: np.random.Generator,
                 max_steps: int = TOL.max_episode_steps) -> SampleRecord:
    """One episode of the estimator, step by step."""
    pi = check_policy(mdp, policy)
    S, A, gamma = mdp.num_states, mdp.num_actions, mdp.discount
    s = int(rng.choice(S, p=mdp.initial_dist))
    steps = 0
    while rng.random() >= 1.0 - gamma:
        a = int(rng.choice(A, p=pi[s]))
        s = int(rng.choice(S, p=mdp.transitions[s, a]))
        steps += 1
        if steps > max_steps:
            raise RunawayEpisodeError(f"no acceptance within {max_steps} steps")
    accepted, a0 = s, int(rng.integers(A))
    a, total = a0, 0.0
    while True:
        total += mdp.rewards[s, a]
        steps += 1
        if steps > max_steps:
            raise RunawayEpisodeError(f"episode exceeded {max_steps} steps")
        if rng.random() < 1.0 - gamma:
            break
        s = int(rng.choice(S, p=mdp.transitions[s, a]))
        a = int(rng.choice(A, p=pi[s]))
    return SampleRecord(accepted, a0, A * total, steps, A)


def _categorical(rng, cum_rows: np.ndarray) -> np.ndarray:
    u = rng.random(cum_rows.shape[0])
    idx = (cum_rows < u[:, None]).sum(axis=1)
    return np.minimum(idx, cum_rows.shape[1] - 1)


def build_dataset(mdp: TabularMdp, policy, n: int, rng: np.random.Generator,
                  policy_id=None, max_steps: int = TOL.max_episode_steps) -> Dataset:
    """``n`` independent episodes simulated together (same law as :func:`rollout_once`)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    pi = check_policy(mdp, policy)
    S, A, gamma = mdp.num_states, mdp.num_actions, mdp.discount
    cum_pi = np.cumsum(pi, axis=1)
    cum_P = np.cumsum(mdp.transitions, axis=2)
    cum_rho = np.cumsum(mdp.initial_dist)[None, :]

    s = _categorical(rng, np.broadcast_to(cum_rho, (n, S)))
    steps = np.zeros(n, dtype=np.int64)
    # phase 1: walk until acceptance
    waiting = np.arange(n)
    while waiting.size:
        go_on = rng.random(waiting.size) >= 1.0 - gamma
        waiting = waiting[go_on]
        if not waiting.size:
            break
        sw = s[waiting]
        a = _categorical(rng, cum_pi[sw])
        s[waiting] = _categorical(rng, cum_P[sw, a])
        steps[waiting] += 1
        if steps[waiting].max() > max_steps:
            raise RunawayEpisodeError(f"no acceptance within {max_steps} steps")
    accepted = s.copy()
    a0 = rng.integers(A, size=n)
    # phase 2: uniform first action, then the policy, stopping w.p. 1 - gamma
    a = a0.copy()
    total = np.zeros(n)
    live = np.arange(n)
    while live.size:
        total[live] += mdp.rewards[s[live], a[live]]
        steps[live] += 1
        if steps[live].max() > max_steps:
            raise RunawayEpisodeError(f"episode exceeded {max_steps} steps")
        live = live[rng.random(live.size) >= 1.0 - gamma]
        if not live.size:
            break
        s[live] = _categorical(rng, cum_P[s[live], a[live]])
        a[live] = _categorical(rng, cum_pi[s[live]])
    return Dataset(accepted, a0, A * total, steps, A, mdp.horizon, policy_id)


def empirical_gradient(dataset: Dataset, num_states: int):
    """State-decomposed surrogate: ``G[s] = (H/N) sum_{i: s_i = s} q_hat_i`` and weights ``n_s/N``.

    With these, ``<G, pi> + sum_s w_s Div(pi_s, base_s)/eta`` equals the
    empirical objective, so the exact-mode oracles apply unchanged.
    """
    N = len(dataset)
    G = np.zeros((num_states, dataset.num_actions))
    np.add.at(G, (dataset.states, dataset.actions), dataset.scaled_returns)
    G *= dataset.horizon / N
    w = np.bincount(dataset.states, minlength=num_states) / N
    return G, w


def _divergence(div):
    if isinstance(div, BregmanDivergence):
        return div.per_state
    norm = ActionNorm.parse(div)
    return lambda u, v: 0.5 * norm.norm(np.asarray(u) - np.asarray(v)) ** 2


def empirical_objective(dataset: Dataset, candidate, base, eta: float, norm_or_div=ActionNorm.L1) -> float:
    """``(H/N) sum_i <q_hat_i, pi_{s_i}> + (1/eta)(1/N) sum_i Div(pi_{s_i}, base_{s_i})``.

    A norm means ``Div = 1/2 ||.||^2`` in that action norm.
    """
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    cand = np.asarray(candidate, dtype=float)
    base = np.asarray(base, dtype=float)
    s = dataset.states
    lin = dataset.horizon * np.mean(dataset.scaled_returns * cand[s, dataset.actions])
    reg = np.mean(_divergence(norm_or_div)(cand[s], base[s])) / eta
    return float(lin + reg)


def exact_objective(mdp: TabularMdp, candidate, base, eta: float, norm_or_div=ActionNorm.L1) -> float:
    """Population version ``E_{s~mu^base}[<H Q^base_s, pi_s> + Div(pi_s, base_s)/eta]``."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    cand = check_policy(mdp, candidate)
    mu = occupancy(mdp, base).mu
    q = policy_evaluation(mdp, base).q
    per = mdp.horizon * np.einsum("sa,sa->s", q, cand) + _divergence(norm_or_div)(cand, base) / eta
    return float(mu @ per)


def episode_length_bound(discount: float, n: int, K: int, delta: float) -> float:
    """``2H log(2 n K / delta)``: all ``n K`` episodes are shorter w.p. ``1 - delta``."""
    return 2.0 / (1.0 - discount) * math.log(2.0 * n * K / delta)
