"""Constrained first-order methods over an abstract problem interface.

A :class:`FirstOrderProblem` bundles a gradient oracle, a point-dependent
local norm and a feasible set exposing a linear-minimization oracle and a
squared-norm prox oracle.  Two feasible sets ship here: :class:`PolicySet`
(any :class:`~vgdlab.policy_space.PolicyClass`) and :class:`Box`.

The ``*_bound`` functions evaluate the right-hand sides of the matching
convergence guarantees; ``measure_*`` helpers estimate the constants that
go into them from sampled points.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import policy_space as ps
from .config import TOL

__all__ = [
    "EuclideanNorm",
    "Box",
    "PolicySet",
    "FirstOrderProblem",
    "VgdParams",
    "IterateTrace",
    "constrained_steepest_descent",
    "steepest_descent_magnitude",
    "frank_wolfe",
    "da_frank_wolfe",
    "bregman_proximal_point",
    "stationarity_certificate",
    "vgd_schedule",
    "csd_bound",
    "stationarity_bound",
    "fw_bound",
    "fw_bound_closed",
    "dafw_bound",
    "dafw_bound_closed",
    "bregman_bound",
    "measure_smoothness",
    "measure_vgd",
]


@dataclass(frozen=True)
class EuclideanNorm:
    """Plain Euclidean norm on flattened arrays (self-dual)."""

    def __call__(self, u) -> float:
        return float(np.linalg.norm(np.ravel(u)))

    def dual(self, w) -> float:
        return float(np.linalg.norm(np.ravel(w)))


class Box:
    """Axis-aligned box ``[lo, hi]`` with Euclidean geometry."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
            raise ValueError("need lo <= hi with matching shapes")

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return x.shape == self.lo.shape and bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def lmo(self, grad) -> np.ndarray:
        return np.where(np.asarray(grad) < 0, self.hi, self.lo)

    def prox(self, x, grad, eta, norm, tol=0.0):
        return np.clip(x - eta * np.asarray(grad), self.lo, self.hi), 0.0

    def project(self, y, norm, tol=0.0):
        return np.clip(y, self.lo, self.hi), 0.0

    def diameter(self, norm=None) -> float:
        return float(np.linalg.norm(self.hi - self.lo))


class PolicySet:
    """Feasible-set adapter for a policy class.

    Gradients are taken to be already state-weighted (``H mu o Q`` style);
    local norms must be :class:`~vgdlab.policy_space.WeightedNorm`.
    """

    def __init__(self, cls: ps.PolicyClass):
        self.cls = cls

    def contains(self, x) -> bool:
        return ps.contains(self.cls, x)

    def lmo(self, grad) -> np.ndarray:
        return ps.linear_minimization(self.cls, grad)

    def prox(self, x, grad, eta, norm, tol=TOL.inner):
        return ps.prox_step(self.cls, x, grad, norm.weights, eta, norm.action_norm, tol,
                            return_error=True, check=False)

    def project(self, y, norm, tol=TOL.inner):
        return ps.project(self.cls, y, norm.weights, norm.action_norm, tol, return_error=True)

    def diameter(self, norm) -> float:
        """Exact ``max ||x - y||`` under a weighted norm (attained at vertex pairs)."""
        per = np.array([
            max((float(norm.action_norm.norm(u - v)) for u in self.cls.vertices(s) for v in self.cls.vertices(s)),
                default=0.0)
            for s in range(self.cls.num_states)
        ])
        return float(np.sqrt(norm.weights @ per**2))


@dataclass
class FirstOrderProblem:
    gradient: Callable[[np.ndarray], np.ndarray]
    local_norm_at: Callable[[np.ndarray], object]
    feasible_set: object
    objective: Optional[Callable[[np.ndarray], float]] = None

    def f(self, x) -> float:
        return float(self.objective(x)) if self.objective is not None else math.nan


@dataclass(frozen=True)
class VgdParams:
    nu: float = 1.0
    eps_floor: float = 0.0

    def __post_init__(self):
        if not self.nu >= 1.0:
            raise ValueError(f"nu must be >= 1, got {self.nu}")
        if not self.eps_floor >= 0.0:
            raise ValueError(f"eps_floor must be >= 0, got {self.eps_floor}")


@dataclass
class IterateTrace:
    """Per-iterate records ``k = 1 .. K+1``.

    ``diag`` is the steepest-descent magnitude at ``x_k`` (prox methods) or
    the FW gap at ``x_k`` (FW methods). ``inner_err`` is the reported error of
    the inner solve that produced the step from ``x_k``.
    """

    kind: str
    points: list = field(default_factory=list)
    f: list = field(default_factory=list)
    diag: list = field(default_factory=list)
    inner_err: list = field(default_factory=list)
    lmo_err: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    def record(self, x, fx, diag, err, lmo_err=0.0):
        self.points.append(np.array(x, copy=True))
        self.f.append(float(fx))
        self.diag.append(float(diag))
        self.inner_err.append(float(err))
        self.lmo_err.append(float(lmo_err))

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "f", "gap_or_magnitude", "inner_err"])
        for k, (fx, d, e) in enumerate(zip(self.f, self.diag, self.inner_err), start=1):
            w.writerow([k, repr(fx), repr(d), repr(e)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _check_start(problem: FirstOrderProblem, x1):
    x1 = np.array(x1, dtype=float)
    if not problem.feasible_set.contains(x1):
        raise ValueError("initial point is not feasible")
    return x1


def _euclidean_version(norm):
    if isinstance(norm, ps.WeightedNorm):
        return norm.with_action_norm(ps.ActionNorm.L2)
    return norm


def _magnitude(g, x, y, eta, norm) -> float:
    d = (x - y) / eta
    return float(np.sum(g * d)) - 0.5 * norm(d) ** 2


def _prox_iterations(problem, x1, eta, K, step_tol, kind, norm_map=lambda n: n):
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if K < 0:
        raise ValueError("K must be nonnegative")
    x = _check_start(problem, x1)
    fs = problem.feasible_set
    trace = IterateTrace(kind)
    for k in range(K + 1):
        g = problem.gradient(x)
        norm = norm_map(problem.local_norm_at(x))
        y, err = fs.prox(x, g, eta, norm, step_tol)
        trace.record(x, problem.f(x), max(_magnitude(g, x, y, eta, norm), 0.0), err)
        if k < K:
            trace.steps.append(eta)
            x = y
    return trace


def constrained_steepest_descent(problem: FirstOrderProblem, x1, eta: float, K: int,
                                 step_tol: float = TOL.inner) -> IterateTrace:
    """``x_{k+1} = argmin_x <grad f(x_k), x> + ||x - x_k||_{x_k}^2 / (2 eta)`` (to ``step_tol``).

    The step size should satisfy ``eta <= 1/beta``; this is not checked.
    """
    return _prox_iterations(problem, x1, eta, K, step_tol, "magnitude")


def bregman_proximal_point(problem: FirstOrderProblem, x1, eta: float, K: int,
                           step_tol: float = TOL.inner,
                           divergence: ps.BregmanDivergence = ps.BregmanDivergence()) -> IterateTrace:
    """Bregman proximal point with the Euclidean regularizer under local weights.

    ``B_{R_x}(y, x) = 1/2 ||y - x||^2_{L2(mu_x),2}``, so each step is the
    Euclidean prox step and the trace equals constrained steepest descent
    run with the L2 local norm.
    """
    if divergence.kind != "euclidean":  # pragma: no cover - guarded by BregmanDivergence
        raise ValueError("only the Euclidean regularizer is supported")
    return _prox_iterations(problem, x1, eta, K, step_tol, "magnitude", _euclidean_version)


def steepest_descent_magnitude(problem: FirstOrderProblem, x, eta: float,
                               inner_tol: float = TOL.inner) -> float:
    """``max_{g in (x - X)/eta} <grad f(x), g> - 1/2 ||g||_x^2``, via one prox solve."""
    x = np.asarray(x, dtype=float)
    g = problem.gradient(x)
    norm = problem.local_norm_at(x)
    y, _ = problem.feasible_set.prox(x, g, eta, norm, inner_tol)
    return max(_magnitude(g, x, y, eta, norm), 0.0)


def vgd_schedule(nu: float) -> Callable[[int], float]:
    """``eta_k = 2 nu / (k + 2)`` for ``k = 1, 2, ...``."""
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    return lambda k: 2.0 * nu / (k + 2)


def _step(schedule, k: int) -> float:
    eta = float(schedule(k) if callable(schedule) else schedule[k - 1])
    if not eta > 0 or not math.isfinite(eta):
        raise ValueError(f"step size eta_{k} = {eta} is outside (0, 1]")
    if eta > 1.0:
        warnings.warn("step size > 1 clamped to 1", RuntimeWarning, stacklevel=3)
        eta = 1.0
    return eta


def _fw_iterations(problem, x1, schedule, K, project_tol=None):
    if K < 0:
        raise ValueError("K must be nonnegative")
    x = _check_start(problem, x1)
    fs = problem.feasible_set
    trace = IterateTrace("fw_gap")
    for k in range(1, K + 2):
        g = problem.gradient(x)
        xt = fs.lmo(g)
        gap = float(np.sum(g * (x - xt)))
        if k == K + 1:
            trace.record(x, problem.f(x), gap, 0.0)
            break
        eta = _step(schedule, k)
        z = (1.0 - eta) * x + eta * xt
        err = 0.0
        if project_tol is not None:
            z, err = fs.project(z, problem.local_norm_at(x), project_tol)
        trace.record(x, problem.f(x), gap, err)
        trace.steps.append(eta)
        x = z
    return trace


def frank_wolfe(problem: FirstOrderProblem, x1, step_schedule, lmo_tol: float = 0.0, K: int = 0) -> IterateTrace:
    """FW with ``x_{k+1} = (1 - eta_k) x_k + eta_k x~_{k+1}``.

    ``step_schedule`` is a callable ``k -> eta_k`` (``k`` from 1) or a sequence.
    The built-in oracles are exact, so ``lmo_tol`` is only echoed for bounds.
    """
    return _fw_iterations(problem, x1, step_schedule, K)


def da_frank_wolfe(problem: FirstOrderProblem, x1, step_schedule, lmo_tol: float = 0.0,
                   prox_tol: float = 0.0, K: int = 0) -> IterateTrace:
    """FW whose convex combination is re-projected in the squared local norm.

    Points already feasible are kept as they are, so on a convex feasible set
    with ``prox_tol = 0`` this reproduces :func:`frank_wolfe` exactly.
    """
    return _fw_iterations(problem, x1, step_schedule, K, project_tol=prox_tol)


def stationarity_certificate(problem: FirstOrderProblem, trace: IterateTrace) -> float:
    """``min_k max_y <grad f(x_k), x_k - y>`` over the recorded iterates."""
    if not trace.points:
        raise ValueError("empty trace")
    best = math.inf
    for x in trace.points:
        g = problem.gradient(x)
        best = min(best, float(np.sum(g * (x - problem.feasible_set.lmo(g)))))
    return best


# ----------------------------------------------------------------------------
# Right-hand sides of the convergence guarantees
# ----------------------------------------------------------------------------

def _ge1(v: float) -> float:
    return max(1.0, float(v))


def csd_bound(K: int, eta: float, nu: float, M: float, D: float, eps: float = 0.0,
              eps_vgd: float = 0.0) -> float:
    """``8 (nu M D)^2 / (eta K) + 4 nu M D sqrt(eps/eta) + eps_vgd`` (nu, M, D floored at 1)."""
    c = _ge1(nu) * _ge1(M) * _ge1(D)
    return 8.0 * c * c / (eta * K) + 4.0 * c * math.sqrt(max(eps, 0.0) / eta) + eps_vgd


def stationarity_bound(E1: float, eta: float, K: int, D: float, eps: float = 0.0) -> float:
    a = E1 / (eta * K) + eps / eta
    return 2.0 * _ge1(D) * max(a, math.sqrt(a))


def fw_bound(steps: Sequence[float], nu: float, beta: float, D: float, E1: float,
             eps: float = 0.0, eps_vgd: float = 0.0) -> float:
    """General FW guarantee for an arbitrary step sequence (applied recursively)."""
    nu = _ge1(nu)
    E = E1
    for eta in steps:
        E = (1.0 - eta / nu) * E + 0.5 * (eta * eta * beta * D * D + 2.0 * eta * eps)
    return E + eps_vgd


def fw_bound_closed(K: int, nu: float, beta: float, D: float, E1: float,
                    eps: float = 0.0, eps_vgd: float = 0.0) -> float:
    nu = _ge1(nu)
    return (E1 + 2.0 * nu * nu * beta * D * D) / (K + 2) + 2.0 * nu * eps + eps_vgd


def dafw_bound(steps: Sequence[float], nu: float, beta: float, D: float, M: float, E1: float,
               eps: float = 0.0, eps_tilde: float = 0.0, eps_vgd: float = 0.0) -> float:
    """General doubly-approximate FW guarantee for an arbitrary step sequence.

    The cross term is ``beta eta D sqrt(eps_tilde)``, keeping the diameter factor
    that bounds ``||x~ - x_k||``.
    """
    nu, M, D = _ge1(nu), _ge1(M), _ge1(D)
    r = math.sqrt(max(eps_tilde, 0.0))
    E = E1
    for eta in steps:
        E = (1.0 - eta / nu) * E + 0.5 * (
            eta * eta * beta * D * D + 2.0 * eta * (eps + beta * D * r) + eps_tilde * (2.0 * M + beta))
    return E + eps_vgd


def dafw_bound_closed(K: int, nu: float, beta: float, D: float, M: float,
                      eps: float = 0.0, eps_tilde: float = 0.0, eps_vgd: float = 0.0) -> float:
    nu, M, D = _ge1(nu), _ge1(M), _ge1(D)
    return ((2.0 * nu * nu + 1.0) * beta * D * D / (K + 2)
            + 2.0 * nu * (eps + beta * math.sqrt(max(eps_tilde, 0.0)))
            + eps_tilde * (M + beta) * K + eps_vgd)


def bregman_bound(K: int, eta: float, nu: float, M: float, D: float, L: float = 1.0,
                  eps: float = 0.0, eps_vgd: float = 0.0, const: float = 8.0) -> float:
    """Bregman proximal guarantee with an explicit leading constant.

    ``const * (nu^2 L^2 c1^2/(eta K) + nu L D sqrt(eps) + c1 sqrt(L^3 D / eta) eps^(1/4)) + eps_vgd``
    with ``c1 = D + eta M``.
    """
    nu, M, D = _ge1(nu), _ge1(M), _ge1(D)
    c1 = D + eta * M
    eps = max(eps, 0.0)
    return const * (nu * nu * L * L * c1 * c1 / (eta * K) + nu * L * D * math.sqrt(eps)
                    + c1 * math.sqrt(L ** 3 * D / eta) * eps ** 0.25) + eps_vgd


# ----------------------------------------------------------------------------
# Measured constants
# ----------------------------------------------------------------------------

def measure_smoothness(problem: FirstOrderProblem, pairs, norm_at=None) -> float:
    """``max 2 |f(y) - f(x) - <grad f(x), y - x>| / ||y - x||_x^2`` over ``pairs``.

    ``norm_at`` overrides the problem's local norm (e.g. a global norm).
    """
    norm_at = norm_at or problem.local_norm_at
    beta = 0.0
    for x, y in pairs:
        d = np.asarray(y) - np.asarray(x)
        n = norm_at(x)(d)
        if n <= 1e-12:
            continue
        rem = problem.f(y) - problem.f(x) - float(np.sum(problem.gradient(x) * d))
        beta = max(beta, 2.0 * abs(rem) / n**2)
    return beta


def measure_vgd(problem: FirstOrderProblem, points, f_star: float) -> VgdParams:
    """Smallest ``nu >= 1`` with ``f(x) - f* <= nu max_y <grad f(x), x - y>`` on ``points``."""
    nu = 1.0
    for x in points:
        g = problem.gradient(x)
        gap = float(np.sum(g * (x - problem.feasible_set.lmo(g))))
        sub = problem.f(x) - f_star
        if sub <= TOL.optimal_gap * max(1.0, abs(f_star)):
            continue
        nu = max(nu, sub / gap if gap > TOL.ratio_floor else math.inf)
    return VgdParams(nu, 0.0)
