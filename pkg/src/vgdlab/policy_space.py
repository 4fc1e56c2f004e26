"""Policy classes, action norms and the per-state oracles used by every algorithm.

A policy class is a product over states of convex hulls of finitely many
vertices in the action simplex, optionally mixed with the uniform action
distribution at rate ``explore_eps`` (the exploratory wrap).  All oracles
decompose over states.

When a state's vertices are distinct unit vectors (a face of the simplex:
the full simplex or a restricted action set) the prox and projection
subproblems are solved exactly.  For general vertex hulls an iterative
inner solver is used and its optimality gap is reported.
"""
from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linprog, minimize_scalar

from .config import TOL

__all__ = [
    "ActionNorm",
    "WeightedNorm",
    "BregmanDivergence",
    "PolicyClass",
    "InvalidClassError",
    "NotInClassError",
    "wrap_eps_greedy",
    "linear_minimization",
    "lmo_indices",
    "prox_step",
    "project",
    "contains",
    "dual_weighted_norm",
    "infty_one_norm",
    "project_simplex",
    "full_simplex",
    "restricted_class",
    "top_k_class",
    "random_vertex_class",
    "random_member",
    "uniform_member",
    "load_class",
    "save_class",
]


class InvalidClassError(ValueError):
    pass


class NotInClassError(ValueError):
    pass


class ActionNorm(enum.Enum):
    L1 = "L1"
    L2 = "L2"

    @classmethod
    def parse(cls, value) -> "ActionNorm":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown action norm {value!r}; use L1 or L2") from None

    def norm(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self is ActionNorm.L1:
            return np.abs(v).sum(axis=-1)
        return np.sqrt((v * v).sum(axis=-1))

    def dual(self, v) -> np.ndarray:
        """Dual norm along the last axis (L1 -> max-abs, L2 -> L2)."""
        v = np.asarray(v, dtype=float)
        if self is ActionNorm.L1:
            return np.abs(v).max(axis=-1, initial=0.0)
        return np.sqrt((v * v).sum(axis=-1))


@dataclass(frozen=True)
class WeightedNorm:
    """``||U||_{L2(mu),o} = sqrt(sum_s mu(s) ||U_s||_o^2)``."""

    weights: np.ndarray
    action_norm: ActionNorm = ActionNorm.L1

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0):
            raise ValueError("weights must be a nonnegative vector")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "action_norm", ActionNorm.parse(self.action_norm))

    def __call__(self, u) -> float:
        rows = self.action_norm.norm(u)
        return float(np.sqrt(self.weights @ (rows * rows)))

    def dual(self, W) -> float:
        return dual_weighted_norm(W, self.weights, self.action_norm)

    def with_action_norm(self, action_norm) -> "WeightedNorm":
        return WeightedNorm(self.weights, action_norm)


def dual_weighted_norm(w, weights, norm) -> float:
    """Dual of the weighted norm: ``sqrt(sum_s ||W_s||_*^2 / mu(s))``.

    For ``W = mu o G`` this equals ``sqrt(E_mu ||G_s||_*^2)``.
    """
    norm = ActionNorm.parse(norm)
    mu = np.asarray(weights, dtype=float)
    rows = norm.dual(w)
    zero = mu <= 0
    if np.any(rows[zero] > 0):
        raise ValueError("dual norm is infinite: weight 0 on a state with nonzero entries")
    return float(np.sqrt(np.sum(rows[~zero] ** 2 / mu[~zero])))


def infty_one_norm(delta) -> float:
    """``max_s ||delta_s||_1``."""
    delta = np.asarray(delta, dtype=float)
    return float(np.abs(delta).sum(axis=-1).max(initial=0.0))


@dataclass(frozen=True)
class BregmanDivergence:
    """Bregman divergence of a per-state regularizer, averaged under state weights.

    Only the Euclidean regularizer ``R(p) = 1/2 ||p||_2^2`` is built in, for
    which ``B(u, v) = 1/2 ||u - v||_2^2``.
    """

    kind: str = "euclidean"

    def __post_init__(self):
        if self.kind != "euclidean":
            raise ValueError(f"unsupported regularizer {self.kind!r}")

    def per_state(self, u, v) -> np.ndarray:
        d = np.asarray(u, dtype=float) - np.asarray(v, dtype=float)
        return 0.5 * (d * d).sum(axis=-1)

    def __call__(self, u, v, weights=None) -> float:
        per = self.per_state(u, v)
        if weights is None:
            return float(per.sum())
        return float(np.asarray(weights, dtype=float) @ per)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex (sort based)."""
    v = np.asarray(v, dtype=float)
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    theta = css[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def _face_support(vertices: np.ndarray):
    """Action indices if the vertices are distinct unit vectors, else None."""
    if not np.all((vertices == 0.0) | (vertices == 1.0)):
        return None
    if not np.all(vertices.sum(axis=1) == 1.0):
        return None
    idx = vertices.argmax(axis=1)
    if len(set(idx.tolist())) != len(idx):
        return None
    return np.sort(idx)


@dataclass(frozen=True)
class PolicyClass:
    """Product of per-state vertex hulls, mixed with uniform at rate ``explore_eps``.

    ``per_state_vertices[s]`` holds the *unwrapped* vertices of state ``s`` as
    an ``(m_s, A)`` array; :meth:`vertices` returns the wrapped ones.
    """

    per_state_vertices: tuple
    explore_eps: float = 0.0
    _supports: tuple = field(init=False, repr=False, compare=False)
    _wrapped: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        verts = []
        for s, vs in enumerate(self.per_state_vertices):
            vs = np.array(vs, dtype=float)
            if vs.ndim != 2 or vs.shape[0] == 0:
                raise InvalidClassError(f"state {s}: need a nonempty (m, A) vertex array")
            if np.any(vs < -TOL.prob_sum) or np.any(np.abs(vs.sum(axis=1) - 1.0) > TOL.prob_sum):
                raise InvalidClassError(f"state {s}: vertices must lie in the simplex")
            vs.setflags(write=False)
            verts.append(vs)
        if not verts:
            raise InvalidClassError("a policy class needs at least one state")
        A = verts[0].shape[1]
        if any(v.shape[1] != A for v in verts):
            raise InvalidClassError("all states must share the action count")
        eps = float(self.explore_eps)
        if not 0.0 <= eps < 1.0:
            raise InvalidClassError(f"explore_eps must lie in [0, 1), got {eps}")
        object.__setattr__(self, "per_state_vertices", tuple(verts))
        object.__setattr__(self, "explore_eps", eps)
        object.__setattr__(self, "_supports", tuple(_face_support(v) for v in verts))
        wrapped = []
        for v in verts:
            w = (1.0 - eps) * v + eps / A if eps > 0 else v.copy()
            w.setflags(write=False)
            wrapped.append(w)
        object.__setattr__(self, "_wrapped", tuple(wrapped))

    @property
    def num_states(self) -> int:
        return len(self.per_state_vertices)

    @property
    def num_actions(self) -> int:
        return self.per_state_vertices[0].shape[1]

    def vertices(self, s: int) -> np.ndarray:
        """Wrapped vertices of state ``s``."""
        return self._wrapped[s]

    def support(self, s: int):
        """Actions spanned by state ``s`` when its hull is a simplex face, else None."""
        return self._supports[s]

    @property
    def is_face_class(self) -> bool:
        return all(sup is not None for sup in self._supports)


def wrap_eps_greedy(cls: PolicyClass, eps: float) -> PolicyClass:
    """Replace every member ``pi`` by ``(1 - eps) pi + eps u``.

    Wrapping twice composes: the result has rate ``1 - (1 - e1)(1 - e2)``.
    """
    eps = float(eps)
    if not 0.0 <= eps < 1.0:
        raise InvalidClassError(f"eps must lie in [0, 1), got {eps}")
    if eps == 0.0:
        return cls
    total = 1.0 - (1.0 - cls.explore_eps) * (1.0 - eps)
    return PolicyClass(cls.per_state_vertices, total)


def _check_shape(cls: PolicyClass, arr, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.shape != (cls.num_states, cls.num_actions):
        raise ValueError(f"{what} has shape {arr.shape}, expected {(cls.num_states, cls.num_actions)}")
    return arr


# ----------------------------------------------------------------------------
# Linear minimization
# ----------------------------------------------------------------------------

def lmo_indices(cls: PolicyClass, cost, weights=None) -> np.ndarray:
    """Per-state index of the best vertex (lowest index on ties, 0 where weight is 0)."""
    cost = _check_shape(cls, cost, "cost")
    idx = np.zeros(cls.num_states, dtype=int)
    for s in range(cls.num_states):
        if weights is not None and weights[s] <= 0:
            continue
        # Ordering over wrapped vertices equals ordering over the unwrapped ones.
        idx[s] = int(np.argmin(cls.per_state_vertices[s] @ cost[s]))
    return idx


def linear_minimization(cls: PolicyClass, cost, weights=None) -> np.ndarray:
    """Member minimizing ``sum_s mu(s) <C_s, pi_s>`` (vertex per state)."""
    idx = lmo_indices(cls, cost, weights)
    return np.stack([cls.vertices(s)[i] for s, i in enumerate(idx)])


# ----------------------------------------------------------------------------
# Membership
# ----------------------------------------------------------------------------

def _hull_distance_inf(W: np.ndarray, x: np.ndarray) -> float:
    """min over lambda in simplex of ||W^T lambda - x||_inf (small LP)."""
    m, A = W.shape
    if m == 1:
        return float(np.abs(W[0] - x).max())
    # variables: lambda (m), t
    c = np.zeros(m + 1)
    c[-1] = 1.0
    A_ub = np.block([[W.T, -np.ones((A, 1))], [-W.T, -np.ones((A, 1))]])
    b_ub = np.concatenate([x, -x])
    A_eq = np.concatenate([np.ones(m), [0.0]])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (m + 1), method="highs")
    if res.status != 0:  # pragma: no cover
        raise RuntimeError(f"membership LP failed: {res.message}")
    return float(res.x[-1])


def _state_contains(cls: PolicyClass, s: int, x: np.ndarray, tol: float) -> bool:
    if abs(x.sum() - 1.0) > tol or np.any(x < -tol):
        return False
    sup = cls.support(s)
    if sup is not None:
        lo = cls.explore_eps / cls.num_actions
        off = np.ones(cls.num_actions, dtype=bool)
        off[sup] = False
        return bool(np.all(x[sup] >= lo - tol) and np.all(np.abs(x[off] - lo) <= tol))
    return _hull_distance_inf(cls.vertices(s), x) <= tol


def contains(cls: PolicyClass, policy, tol: float = TOL.membership) -> bool:
    """Whether every row of ``policy`` lies in its state's (wrapped) hull."""
    policy = _check_shape(cls, policy, "policy")
    return all(_state_contains(cls, s, policy[s], tol) for s in range(cls.num_states))


def _require_member(cls: PolicyClass, policy, what: str = "policy") -> np.ndarray:
    policy = _check_shape(cls, policy, what)
    for s in range(cls.num_states):
        if not _state_contains(cls, s, policy[s], TOL.membership):
            raise NotInClassError(f"{what} row {s} is not in the policy class")
    return policy


# ----------------------------------------------------------------------------
# Per-state subproblems
# ----------------------------------------------------------------------------

def _face_project_l2(cls: PolicyClass, s: int, y: np.ndarray) -> np.ndarray:
    A = cls.num_actions
    eps = cls.explore_eps
    lo = eps / A
    sup = cls.support(s)
    x = np.full(A, lo)
    p = project_simplex((y[sup] - lo) / (1.0 - eps))
    x[sup] = lo + (1.0 - eps) * p
    return x


def _hull_project_l2(W: np.ndarray, y: np.ndarray, gap_tol: float, max_iter: int = 200_000):
    """Accelerated projected gradient on lambda; stops on the Frank-Wolfe gap.

    Returns the projection and the final FW gap of ``1/2 ||W^T lam - y||^2``.
    """
    m = W.shape[0]
    if m == 1:
        return W[0].copy(), 0.0
    L = float(np.linalg.eigvalsh(W @ W.T).max())
    lam = np.full(m, 1.0 / m)
    z = lam.copy()
    t = 1.0
    gap = np.inf
    for _ in range(max_iter):
        g_lam = W @ (W.T @ lam - y)
        gap = float(g_lam @ lam - g_lam.min())
        if gap <= gap_tol:
            break
        g = W @ (W.T @ z - y)
        nxt = project_simplex(z - g / L)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = nxt + ((t - 1.0) / t_next) * (nxt - lam)
        lam, t = nxt, t_next
    else:
        warnings.warn(f"inner projection stopped at gap {gap:.2e} > {gap_tol:.2e}", RuntimeWarning)
    return W.T @ lam, max(gap, 0.0)


def _face_prox_l1(cls: PolicyClass, s: int, c: np.ndarray, b: np.ndarray, kappa: float) -> np.ndarray:
    """Exact minimizer of <c, x> + (kappa/2) ||x - b||_1^2 over a wrapped simplex face.

    Mass m moves from the most expensive actions to the cheapest one; the
    objective in m is -gain(m) + 2 kappa m^2 with gain piecewise linear and
    concave, so the optimum is found by walking the breakpoints.
    """
    lo = cls.explore_eps / cls.num_actions
    sup = cls.support(s)
    cheapest = sup[int(np.argmin(c[sup]))]
    donors = [a for a in sup[np.argsort(-c[sup], kind="stable")] if a != cheapest]
    x = b.copy()
    moved = 0.0
    for a in donors:
        slope = c[a] - c[cheapest]
        cap = max(b[a] - lo, 0.0)
        if slope <= 4.0 * kappa * moved:
            break
        take = min(slope / (4.0 * kappa) - moved, cap)
        x[a] -= take
        moved += take
        if take < cap:
            break
    x[cheapest] += moved
    return x


def _l1_ball_lp(W: np.ndarray, c: np.ndarray, b: np.ndarray, t: float):
    """min <c, W^T lam> s.t. ||W^T lam - b||_1 <= t, lam in simplex."""
    m, A = W.shape
    # variables: lam (m), d (A)
    obj = np.concatenate([W @ c, np.zeros(A)])
    A_ub = np.block([
        [W.T, -np.eye(A)],
        [-W.T, -np.eye(A)],
        [np.zeros((1, m)), np.ones((1, A))],
    ])
    b_ub = np.concatenate([b, -b, [t]])
    A_eq = np.concatenate([np.ones(m), np.zeros(A)])[None, :]
    res = linprog(obj, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (m + A), method="highs")
    if res.status != 0:  # pragma: no cover
        raise RuntimeError(f"L1 prox LP failed: {res.message}")
    return float(res.fun), W.T @ res.x[:m]


def _hull_prox_l1(W: np.ndarray, c: np.ndarray, b: np.ndarray, kappa: float, tol: float):
    """1-D convex search over the L1 radius t, with an LP for each radius."""
    t_max = float(np.abs(W - b).sum(axis=1).max())

    def F(t):
        return _l1_ball_lp(W, c, b, t)[0] + 0.5 * kappa * t * t

    lip = 0.5 * float(np.ptp(c)) + kappa * t_max
    xatol = tol / max(lip, 1.0)
    cands = [0.0, t_max]
    if t_max > 0:
        res = minimize_scalar(F, bounds=(0.0, t_max), method="bounded",
                              options={"xatol": max(xatol, 1e-12), "maxiter": 500})
        cands.append(float(res.x))
    vals = [F(t) for t in cands]
    best = cands[int(np.argmin(vals))]
    x = _l1_ball_lp(W, c, b, best)[1]
    return x, lip * max(xatol, 1e-12) + 1e-9


def _state_prox(cls, s, c, b, w, eta, norm, tol):
    if not np.any(c):
        return b.copy(), 0.0
    if w <= 0:
        return cls.vertices(s)[int(np.argmin(cls.per_state_vertices[s] @ c))].copy(), 0.0
    kappa = w / eta
    sup = cls.support(s)
    if norm is ActionNorm.L2:
        y = b - c / kappa
        if sup is not None:
            return _face_project_l2(cls, s, y), 0.0
        # projection gap g translates to prox objective gap kappa * g
        x, gap = _hull_project_l2(cls.vertices(s), y, tol / kappa)
        return x, kappa * gap
    if sup is not None:
        return _face_prox_l1(cls, s, c, b, kappa), 0.0
    return _hull_prox_l1(cls.vertices(s), c, b, kappa, tol)


def prox_step(cls: PolicyClass, base, grad, weights, step: float, norm=ActionNorm.L1,
              inner_tol: float = TOL.inner, *, return_error: bool = False, check: bool = True):
    """Minimize ``sum_s [<G_s, pi_s> + mu(s)/(2 eta) ||pi_s - base_s||^2]`` over the class.

    ``grad`` is the (already state-weighted) gradient, e.g. ``H mu o Q``.
    With ``return_error`` the summed per-state suboptimality bound is returned too.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    norm = ActionNorm.parse(norm)
    base = _require_member(cls, base, "base") if check else _check_shape(cls, base, "base")
    grad = _check_shape(cls, grad, "grad")
    weights = np.asarray(weights, dtype=float)
    S = cls.num_states
    out = np.empty_like(base)
    err = 0.0
    for s in range(S):
        out[s], e = _state_prox(cls, s, grad[s], base[s], weights[s], step, norm, inner_tol / S)
        err += e
    return (out, err) if return_error else out


def _hull_project_l1(W: np.ndarray, y: np.ndarray) -> np.ndarray:
    m, A = W.shape
    obj = np.concatenate([np.zeros(m), np.ones(A)])
    A_ub = np.block([[W.T, -np.eye(A)], [-W.T, -np.eye(A)]])
    b_ub = np.concatenate([y, -y])
    A_eq = np.concatenate([np.ones(m), np.zeros(A)])[None, :]
    res = linprog(obj, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (m + A), method="highs")
    if res.status != 0:  # pragma: no cover
        raise RuntimeError(f"L1 projection LP failed: {res.message}")
    return W.T @ res.x[:m]


def project(cls: PolicyClass, policy, weights=None, norm=ActionNorm.L1,
            inner_tol: float = TOL.inner, *, return_error: bool = False):
    """Nearest member in the squared weighted norm (decomposes over states).

    Rows already inside the class are returned unchanged.
    """
    norm = ActionNorm.parse(norm)
    policy = _check_shape(cls, policy, "policy")
    S = cls.num_states
    w = np.ones(S) if weights is None else np.asarray(weights, dtype=float)
    out = policy.copy()
    err = 0.0
    for s in range(S):
        y = policy[s]
        if _state_contains(cls, s, y, TOL.membership):
            continue
        sup = cls.support(s)
        if norm is ActionNorm.L2:
            if sup is not None:
                out[s] = _face_project_l2(cls, s, y)
            else:
                out[s], gap = _hull_project_l2(cls.vertices(s), y, inner_tol / S)
                err += w[s] * gap
        else:
            out[s] = _hull_project_l1(cls.vertices(s), y)
    return (out, err) if return_error else out


# ----------------------------------------------------------------------------
# Constructors and sampling
# ----------------------------------------------------------------------------

def full_simplex(num_states: int, num_actions: int) -> PolicyClass:
    eye = np.eye(num_actions)
    return PolicyClass(tuple(eye for _ in range(num_states)))


def restricted_class(allowed: Sequence[Sequence[int]], num_actions: int) -> PolicyClass:
    """Deterministic-action vertices: state ``s`` may use the actions ``allowed[s]``."""
    eye = np.eye(num_actions)
    return PolicyClass(tuple(eye[sorted(set(int(a) for a in acts))] for acts in allowed))


def top_k_class(scores, k: int) -> PolicyClass:
    """Keep the ``k`` lowest-score (cost) actions in every state, ties to lower index."""
    scores = np.asarray(scores, dtype=float)
    if not 1 <= k <= scores.shape[1]:
        raise InvalidClassError(f"k must lie in [1, {scores.shape[1]}]")
    allowed = [np.argsort(row, kind="stable")[:k] for row in scores]
    return restricted_class(allowed, scores.shape[1])


def random_vertex_class(num_states: int, num_actions: int, num_vertices: int, seed: int) -> PolicyClass:
    """``num_vertices`` Dirichlet(1) vertices per state."""
    rng = np.random.default_rng(seed)
    verts = []
    for _ in range(num_states):
        v = rng.dirichlet(np.ones(num_actions), size=num_vertices)
        verts.append(v / v.sum(axis=1, keepdims=True))
    return PolicyClass(tuple(verts))


def random_member(cls: PolicyClass, rng) -> np.ndarray:
    """Random member: Dirichlet(1) mixture of each state's wrapped vertices."""
    rows = []
    for s in range(cls.num_states):
        W = cls.vertices(s)
        lam = rng.dirichlet(np.ones(W.shape[0]))
        row = lam @ W
        rows.append(row / row.sum())
    return np.stack(rows)


def uniform_member(cls: PolicyClass) -> np.ndarray:
    """Vertex average in every state."""
    return np.stack([cls.vertices(s).mean(axis=0) for s in range(cls.num_states)])


def class_to_dict(cls: PolicyClass) -> dict:
    return {
        "A": cls.num_actions,
        "explore_eps": cls.explore_eps,
        "vertices": [v.tolist() for v in cls.per_state_vertices],
    }


def class_from_dict(data: dict) -> PolicyClass:
    try:
        verts = tuple(np.asarray(v, dtype=float) for v in data["vertices"])
    except KeyError:
        raise InvalidClassError("class document is missing field 'vertices'") from None
    cls = PolicyClass(verts, float(data.get("explore_eps", 0.0)))
    if "A" in data and int(data["A"]) != cls.num_actions:
        raise InvalidClassError("declared A disagrees with vertex arrays")
    return cls


def save_class(cls: PolicyClass, path) -> None:
    Path(path).write_text(json.dumps(class_to_dict(cls), indent=1))


def load_class(path) -> PolicyClass:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidClassError(f"{path}: not valid JSON ({exc})") from None
    return class_from_dict(data)
