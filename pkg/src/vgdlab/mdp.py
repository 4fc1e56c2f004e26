"""Finite discounted MDPs with exact (dense) policy evaluation.

Rewards are per-step *costs* in [0, 1]; every quantity here is minimized.
A policy is a plain ``(S, A)`` float array whose rows are distributions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TOL

__all__ = [
    "TabularMdp",
    "EvalResult",
    "OccupancyMeasure",
    "InvalidMdpError",
    "InvalidPolicyError",
    "NumericalError",
    "check_policy",
    "uniform_policy",
    "policy_evaluation",
    "occupancy",
    "policy_gradient",
    "value_difference",
    "random_mdp",
    "load_mdp",
    "save_mdp",
    "mdp_from_dict",
    "mdp_to_dict",
]


class InvalidMdpError(ValueError):
    """An MDP violates one of its structural invariants."""


class InvalidPolicyError(ValueError):
    pass


class NumericalError(RuntimeError):
    """Internal error: a solve that cannot fail in exact arithmetic did."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_distribution(x: np.ndarray, what: str, tol: float = TOL.prob_sum) -> None:
    if np.any(~np.isfinite(x)):
        raise InvalidMdpError(f"{what} contains non-finite entries")
    if np.any(x < 0):
        raise InvalidMdpError(f"{what} has negative entries")
    sums = x.sum(axis=-1)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise InvalidMdpError(f"{what} row {idx} sums to {float(sums[idx]):.15g}, not 1")


@dataclass(frozen=True)
class TabularMdp:
    transitions: np.ndarray   # (S, A, S)
    rewards: np.ndarray       # (S, A) costs in [0, 1]
    discount: float
    initial_dist: np.ndarray  # (S,)

    def __post_init__(self):
        P = _frozen(self.transitions)
        r = _frozen(self.rewards)
        rho = _frozen(self.initial_dist)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "initial_dist", rho)
        object.__setattr__(self, "discount", float(self.discount))
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidMdpError(f"transitions must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise InvalidMdpError("need at least one state and one action")
        if S > TOL.max_states:
            raise InvalidMdpError(f"S={S} exceeds the dense-solve cap {TOL.max_states}")
        if r.shape != (S, A):
            raise InvalidMdpError(f"rewards must have shape {(S, A)}, got {r.shape}")
        if rho.shape != (S,):
            raise InvalidMdpError(f"initial_dist must have shape {(S,)}, got {rho.shape}")
        if not 0.0 < self.discount < 1.0:
            raise InvalidMdpError(f"discount must lie in (0, 1), got {self.discount}")
        if np.any(~np.isfinite(r)) or r.min() < 0.0 or r.max() > 1.0:
            raise InvalidMdpError("rewards (costs) must lie in [0, 1]")
        _check_distribution(P, "transitions")
        _check_distribution(rho, "initial_dist")

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def horizon(self) -> float:
        """Effective horizon H = 1/(1-gamma)."""
        return 1.0 / (1.0 - self.discount)


@dataclass(frozen=True)
class EvalResult:
    v: np.ndarray
    q: np.ndarray
    scalar_value: float


@dataclass(frozen=True)
class OccupancyMeasure:
    mu: np.ndarray
    start_dist: np.ndarray


def check_policy(mdp: TabularMdp, policy, tol: float = TOL.prob_sum) -> np.ndarray:
    """Return ``policy`` as a float array after validating shape and rows."""
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (mdp.num_states, mdp.num_actions):
        raise InvalidPolicyError(
            f"policy shape {pi.shape} does not match MDP {(mdp.num_states, mdp.num_actions)}")
    if np.any(pi < -tol) or np.any(np.abs(pi.sum(axis=1) - 1.0) > tol):
        raise InvalidPolicyError("policy rows must be distributions")
    return pi


def uniform_policy(num_states: int, num_actions: int) -> np.ndarray:
    return np.full((num_states, num_actions), 1.0 / num_actions)


def _state_transition(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    return np.einsum("sa,sat->st", pi, mdp.transitions)


def policy_evaluation(mdp: TabularMdp, policy) -> EvalResult:
    """Exact V and Q of ``policy`` via one dense solve of (I - gamma P_pi) V = r_pi."""
    pi = check_policy(mdp, policy)
    S, gamma = mdp.num_states, mdp.discount
    P_pi = _state_transition(mdp, pi)
    r_pi = np.einsum("sa,sa->s", pi, mdp.rewards)
    try:
        v = np.linalg.solve(np.eye(S) - gamma * P_pi, r_pi)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - impossible for gamma < 1
        raise NumericalError("singular Bellman system") from exc
    q = mdp.rewards + gamma * mdp.transitions @ v
    residual = np.max(np.abs(v - np.einsum("sa,sa->s", pi, q)), initial=0.0)
    if residual > TOL.bellman_residual:
        raise NumericalError(f"Bellman residual {residual:.3e} exceeds tolerance")
    return EvalResult(v=v, q=q, scalar_value=float(mdp.initial_dist @ v))


def occupancy(mdp: TabularMdp, policy, start=None) -> OccupancyMeasure:
    """Discounted state occupancy (1-gamma) sum_t gamma^t Pr(s_t = s) from ``start``."""
    pi = check_policy(mdp, policy)
    rho = mdp.initial_dist if start is None else np.asarray(start, dtype=float)
    if rho.shape != (mdp.num_states,):
        raise InvalidMdpError(f"start distribution must have shape {(mdp.num_states,)}")
    _check_distribution(rho, "start distribution")
    P_pi = _state_transition(mdp, pi)
    gamma = mdp.discount
    mu = (1.0 - gamma) * np.linalg.solve(np.eye(mdp.num_states) - gamma * P_pi.T, rho)
    # Exact mu is >= (1-gamma) rho entrywise; clear rounding noise below that floor.
    mu = np.maximum(mu, (1.0 - gamma) * rho)
    if abs(mu.sum() - 1.0) > TOL.occupancy_sum:
        raise NumericalError(f"occupancy sums to {mu.sum():.15g}")
    return OccupancyMeasure(mu=mu, start_dist=rho.copy())


def policy_gradient(mdp: TabularMdp, policy) -> np.ndarray:
    """G[s, a] = H mu(s) Q[s, a], the gradient of V_rho0 in the direct parametrization."""
    ev = policy_evaluation(mdp, policy)
    mu = occupancy(mdp, policy).mu
    return mdp.horizon * mu[:, None] * ev.q


def value_difference(mdp: TabularMdp, pi, pi_tilde, rho=None) -> float:
    """H E_{s~mu^pi_rho} <Q^{pi~}_s, pi~_s - pi_s>, checked against V_rho(pi~) - V_rho(pi)."""
    pi = check_policy(mdp, pi)
    pi_tilde = check_policy(mdp, pi_tilde)
    rho = mdp.initial_dist if rho is None else np.asarray(rho, dtype=float)
    mu = occupancy(mdp, pi, rho).mu
    ev_t = policy_evaluation(mdp, pi_tilde)
    ev = policy_evaluation(mdp, pi)
    diff = mdp.horizon * float(mu @ np.einsum("sa,sa->s", ev_t.q, pi_tilde - pi))
    direct = float(rho @ (ev_t.v - ev.v))
    if abs(diff - direct) > TOL.value_difference:
        raise NumericalError(f"value-difference identity off by {abs(diff - direct):.3e}")
    return diff


def random_mdp(num_states: int, num_actions: int, discount: float, seed: int) -> TabularMdp:
    """Dirichlet(1,...,1) transition rows, U[0,1] costs, uniform initial distribution."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    P /= P.sum(axis=-1, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=(num_states, num_actions))
    rho = np.full(num_states, 1.0 / num_states)
    return TabularMdp(P, r, discount, rho)


def mdp_to_dict(mdp: TabularMdp) -> dict:
    return {
        "S": mdp.num_states,
        "A": mdp.num_actions,
        "gamma": mdp.discount,
        "rho0": mdp.initial_dist.tolist(),
        "rewards": mdp.rewards.tolist(),
        "transitions": mdp.transitions.tolist(),
    }


def mdp_from_dict(data: dict) -> TabularMdp:
    """Build an MDP from the documented JSON schema.

    ``reward_kind`` is optional: ``"cost"`` (default) takes ``rewards`` as costs,
    ``"reward"`` converts rewards in [0, 1] to costs ``1 - r``.
    """
    try:
        S, A = int(data["S"]), int(data["A"])
        P = np.asarray(data["transitions"], dtype=float)
        r = np.asarray(data["rewards"], dtype=float)
        gamma = float(data["gamma"])
        rho = np.asarray(data["rho0"], dtype=float)
    except KeyError as exc:
        raise InvalidMdpError(f"MDP document is missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise InvalidMdpError(f"malformed MDP document: {exc}") from None
    kind = data.get("reward_kind", "cost")
    if kind == "reward":
        r = 1.0 - r
    elif kind != "cost":
        raise InvalidMdpError(f"unknown reward_kind {kind!r}")
    if P.shape != (S, A, S) or r.shape != (S, A) or rho.shape != (S,):
        raise InvalidMdpError(
            f"declared S={S}, A={A} disagree with table shapes {P.shape}, {r.shape}, {rho.shape}")
    return TabularMdp(P, r, gamma, rho)


def save_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp_to_dict(mdp), indent=1))


def load_mdp(path) -> TabularMdp:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidMdpError(f"{path}: not valid JSON ({exc})") from None
    return mdp_from_dict(data)
