"""Structural quantities: VGD gradient term and ratio, completeness, coverage.

Everything is exact given the probe sets: the max over the class inside the
VGD gradient term is a linear minimization, and class optima come from
policy iteration over vertex products.  Certificates are empirical in the
sense that they only speak for the probes they were computed on.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import policy_space as ps
from .config import TOL
from .mdp import TabularMdp, occupancy, policy_evaluation, policy_gradient
from .optim import VgdParams

__all__ = [
    "ClassOptimum",
    "VgdTrace",
    "EpsGreedyReport",
    "class_optimum",
    "grad_vgd",
    "vgd_trace",
    "vgd_certificate",
    "completeness_error",
    "d_infty",
    "vgd_from_structure",
    "epsgreedy_vgd_check",
    "random_probes",
]


@dataclass(frozen=True)
class ClassOptimum:
    value: float          # V*(class) from rho0
    policy: np.ndarray    # optimal vertex-product policy
    v: np.ndarray         # its state values
    vertex_index: np.ndarray


def class_optimum(mdp: TabularMdp, cls: ps.PolicyClass, max_iter: int = 10_000) -> ClassOptimum:
    """Policy iteration whose per-state actions are the class's (wrapped) vertices.

    Because the class is a product over states, one vertex-product policy is
    optimal from every state simultaneously, and it is optimal over the
    convex hull as well.
    """
    S = mdp.num_states
    idx = np.zeros(S, dtype=int)
    for _ in range(max_iter):
        pi = np.stack([cls.vertices(s)[i] for s, i in enumerate(idx)])
        ev = policy_evaluation(mdp, pi)
        new = idx.copy()
        for s in range(S):
            vals = cls.vertices(s) @ ev.q[s]
            best = int(np.argmin(vals))
            # switch only on strict improvement so the iteration cannot cycle
            if vals[best] < vals[idx[s]] - 1e-12 * (1.0 + abs(vals[idx[s]])):
                new[s] = best
        if np.array_equal(new, idx):
            return ClassOptimum(ev.scalar_value, pi, ev.v, idx)
        idx = new
    raise RuntimeError("policy iteration did not converge")  # pragma: no cover


def grad_vgd(mdp: TabularMdp, policy, cls: ps.PolicyClass) -> float:
    """``max_{pi~ in class} <grad V(pi), pi - pi~>``, via one linear minimization."""
    pi = np.asarray(policy, dtype=float)
    G = policy_gradient(mdp, pi)
    best = ps.linear_minimization(cls, G)
    return float(np.sum(G * (pi - best)))


def random_probes(cls: ps.PolicyClass, n: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return [ps.random_member(cls, rng) for _ in range(n)]


@dataclass
class VgdTrace:
    grad_vgd: list = field(default_factory=list)
    subopt: list = field(default_factory=list)
    nu: list = field(default_factory=list)
    floor: float = math.nan

    def __len__(self) -> int:
        return len(self.grad_vgd)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "grad_vgd", "subopt", "nu_k"])
        for k, (g, s, n) in enumerate(zip(self.grad_vgd, self.subopt, self.nu), start=1):
            w.writerow([k, repr(g), repr(s), repr(n)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def vgd_trace(mdp: TabularMdp, policies: Sequence, cls: ps.PolicyClass, v_floor: Optional[float] = None,
              floor: str = "class_optimum") -> VgdTrace:
    """Ratio trace ``nu_k = (V(pi_k) - floor) / grad_vgd(pi_k)``.

    ``floor="class_optimum"`` uses the exact class optimum (default);
    ``floor="min_achieved"`` uses the smallest value reached by ``policies``.
    An explicit ``v_floor`` overrides both.
    """
    values = [policy_evaluation(mdp, p).scalar_value for p in policies]
    if v_floor is None:
        if floor == "class_optimum":
            v_floor = class_optimum(mdp, cls).value
        elif floor == "min_achieved":
            v_floor = min(values)
        else:
            raise ValueError(f"unknown floor convention {floor!r}")
    tr = VgdTrace(floor=float(v_floor))
    for p, v in zip(policies, values):
        g = grad_vgd(mdp, p, cls)
        sub = v - v_floor
        tr.grad_vgd.append(g)
        tr.subopt.append(sub)
        tr.nu.append(sub / g if g > TOL.ratio_floor else math.nan)
    return tr


def vgd_certificate(mdp: TabularMdp, cls: ps.PolicyClass, probe_policies: Sequence, v_star: float,
                    nu_cap: Optional[float] = None) -> VgdParams:
    """Empirical VGD parameters on ``probe_policies``.

    Without a cap: the smallest ``nu >= 1`` with ``eps_vgd = 0``.  With a cap:
    ``nu = min(needed, cap)`` and the smallest ``eps_vgd`` that makes every
    probe satisfy ``V - v* <= nu grad_vgd + eps_vgd``.
    """
    if len(probe_policies) == 0:
        raise ValueError("empty probe set")
    subs, grads = [], []
    for p in probe_policies:
        subs.append(policy_evaluation(mdp, p).scalar_value - v_star)
        grads.append(grad_vgd(mdp, p, cls))
    subs, grads = np.array(subs), np.array(grads)
    needed = 1.0
    tie = TOL.optimal_gap * max(1.0, abs(v_star))
    for s, g in zip(subs, grads):
        if s <= tie:
            continue
        needed = max(needed, s / g if g > TOL.ratio_floor else math.inf)
    if nu_cap is None:
        return VgdParams(float(needed), 0.0)
    nu = max(1.0, min(needed, float(nu_cap)))
    eps = float(np.max(subs - nu * grads, initial=0.0))
    return VgdParams(nu, max(eps, 0.0))


def _completeness_gaps(mdp: TabularMdp, cls: ps.PolicyClass, policy) -> float:
    ev = policy_evaluation(mdp, policy)
    mu = occupancy(mdp, policy).mu
    greedy = ev.q.min(axis=1)
    in_class = np.array([float(np.min(cls.vertices(s) @ ev.q[s])) for s in range(mdp.num_states)])
    return float(mu @ (in_class - greedy))


def completeness_error(mdp: TabularMdp, cls: ps.PolicyClass, probe_policies: Sequence) -> float:
    """Largest loss, over probes, of the best in-class improvement vs. the greedy one.

    For each probe this is ``E_mu[<Q_s, pi_s - greedy_s>] - max_{pi+ in class} E_mu[<Q_s, pi_s - pi+_s>]``
    which simplifies to ``E_mu[min_class <Q_s, .> - min_a Q_{s,a}]``.
    """
    if len(probe_policies) == 0:
        return 0.0
    return max(_completeness_gaps(mdp, cls, p) for p in probe_policies)


def d_infty(mdp: TabularMdp, cls: ps.PolicyClass) -> float:
    """``max_s mu*(s) / rho0(s)`` for the class-optimal policy (``inf`` if uncovered)."""
    star = class_optimum(mdp, cls)
    mu = occupancy(mdp, star.policy).mu
    rho = mdp.initial_dist
    if np.any((rho <= 0) & (mu > 0)):
        return math.inf
    pos = rho > 0
    return float(np.max(mu[pos] / rho[pos]))


def vgd_from_structure(mdp: TabularMdp, cls: ps.PolicyClass, probe_policies: Optional[Sequence] = None,
                       n_probes: int = 256, seed: int = 0) -> VgdParams:
    """``(nu, eps_vgd) = (H D_inf, eps(class) H^2 D_inf)``.

    ``eps(class)`` is the completeness error over ``probe_policies``
    (default: ``n_probes`` random members).
    """
    D = d_infty(mdp, cls)
    if not math.isfinite(D):
        raise ValueError("distribution-mismatch coefficient is infinite")
    if probe_policies is None:
        probe_policies = random_probes(cls, n_probes, seed)
    eps_cls = max(completeness_error(mdp, cls, probe_policies), 0.0)
    H = mdp.horizon
    return VgdParams(max(1.0, H * D), eps_cls * H * H * D)


@dataclass
class EpsGreedyReport:
    eps: float
    params: VgdParams            # certified on the unwrapped class
    wrapped_eps_vgd: float       # eps_vgd + 12 nu H^2 A eps
    v_star_wrapped: float
    violations: list             # indices of wrapped probes that break the inequality
    max_slack_used: float        # max over probes of LHS - (nu grad + eps_vgd_wrapped)

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_text(self) -> str:
        return "\n".join([
            f"eps              {self.eps}",
            f"nu               {self.params.nu!r}",
            f"eps_vgd          {self.params.eps_floor!r}",
            f"eps_vgd_wrapped  {self.wrapped_eps_vgd!r}",
            f"V*(wrapped)      {self.v_star_wrapped!r}",
            f"violations       {len(self.violations)}",
            f"max_margin       {self.max_slack_used!r}",
        ])


def epsgreedy_vgd_check(mdp: TabularMdp, cls: ps.PolicyClass, eps: float,
                        params: Optional[VgdParams] = None, probe_policies: Optional[Sequence] = None,
                        n_probes: int = 500, seed: int = 0, tol: float = 1e-9) -> EpsGreedyReport:
    """Check the wrapped class against ``(nu, eps_vgd + 12 nu H^2 A eps)`` on wrapped probes.

    Without ``params`` the class is first certified on the unwrapped probes.
    """
    if probe_policies is None:
        probe_policies = random_probes(cls, n_probes, seed)
    if params is None:
        params = vgd_certificate(mdp, cls, probe_policies, class_optimum(mdp, cls).value)
    H, A = mdp.horizon, mdp.num_actions
    wrapped_cls = ps.wrap_eps_greedy(cls, eps)
    wrapped_eps = params.eps_floor + 12.0 * params.nu * H * H * A * eps
    v_star = class_optimum(mdp, wrapped_cls).value
    violations = []
    worst = -math.inf
    for i, p in enumerate(probe_policies):
        q = (1.0 - eps) * np.asarray(p) + eps / A
        lhs = policy_evaluation(mdp, q).scalar_value - v_star
        margin = lhs - (params.nu * grad_vgd(mdp, q, wrapped_cls) + wrapped_eps)
        worst = max(worst, margin)
        if margin > tol:
            violations.append(i)
    return EpsGreedyReport(float(eps), params, wrapped_eps, v_star, violations, worst)
