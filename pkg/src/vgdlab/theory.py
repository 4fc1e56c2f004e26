"""Compare exact-mode runs against their convergence guarantees.

Constants are measured on the run itself:

* ``nu``: the VGD certificate over the iterates plus random class members,
  against the exact optimum of the class the iterates live in;
* ``beta``: the largest second-order remainder ratio over consecutive
  iterate pairs and over (iterate, random member) pairs, in the local norm;
* ``M``: the largest local dual norm of the gradient along the run;
* ``D``: the largest local diameter of the class along the run;
* ``eps``: the largest recorded inner-solve error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import policy_space as ps
from .config import TOL
from .algos import RunResult, policy_problem
from .envs import bandit, chain, gridworld, single_state, _random
from .mdp import TabularMdp
from .optim import PolicySet, bregman_bound, csd_bound, dafw_bound, measure_smoothness
from .vgd import class_optimum, random_probes, vgd_certificate

__all__ = ["TheoremCheck", "check_run", "cpi_bound", "BENCHMARKS", "benchmark"]


@dataclass(frozen=True)
class TheoremCheck:
    algorithm: str
    K: int
    subopt: float
    rhs: float
    nu: float
    beta: float
    M: float
    D: float
    eps: float
    step: float
    step_ok: bool  # the step-size premise (eta <= 1/beta, or 1/(2 beta) for the Bregman form)

    @property
    def passed(self) -> bool:
        return self.subopt <= self.rhs + TOL.bound_slack * max(1.0, abs(self.rhs))

    def row(self) -> str:
        return (f"{self.algorithm:6s} K={self.K:4d} subopt={self.subopt:.4e} rhs={self.rhs:.4e} "
                f"nu={self.nu:.3f} beta={self.beta:.3e} M={self.M:.3f} D={self.D:.3f} "
                f"eps={self.eps:.1e} step_ok={self.step_ok}")


def cpi_bound(K: int, nu: float, H: float, eps: float = 0.0, eps_vgd: float = 0.0) -> float:
    """``8 (2 nu^2 + 1) H^3 / K + 2 nu eps + eps_vgd``."""
    return 8.0 * (2.0 * nu * nu + 1.0) * H**3 / K + 2.0 * nu * eps + eps_vgd


def check_run(mdp: TabularMdp, result: RunResult, n_probes: int = 32, seed: int = 0) -> TheoremCheck:
    """Evaluate the guarantee matching ``result.config.algorithm`` with measured constants."""
    cfg = result.config
    K = cfg.K
    if K < 1:
        raise ValueError("need at least one iteration")
    cls = result.class_used
    star = class_optimum(mdp, cls).value
    subopt = result.values[-1] - star
    pts = result.policies
    probes = random_probes(cls, n_probes, seed)
    nu = vgd_certificate(mdp, cls, pts + probes, star).nu
    if cfg.algorithm == "CPI":
        rhs = cpi_bound(K, result.nu, mdp.horizon)
        return TheoremCheck("CPI", K, subopt, rhs, result.nu, math.nan, math.nan, math.nan, 0.0,
                            result.steps[0], True)

    problem = policy_problem(mdp, cls, cfg.norm)
    pairs = list(zip(pts[:-1], pts[1:]))
    pairs += [(pts[i], probes[i % len(probes)]) for i in range(0, len(pts), max(1, len(pts) // 16))]
    beta = measure_smoothness(problem, pairs)
    fs = PolicySet(cls)
    M = max(problem.local_norm_at(p).dual(problem.gradient(p)) for p in pts)
    D = max(fs.diameter(problem.local_norm_at(p)) for p in pts)
    eps = max(result.inner_err)

    if cfg.algorithm == "SDPO":
        rhs = csd_bound(K, result.eta, nu, M, D, eps)
        step_ok = result.eta * beta <= 1.0
        step = result.eta
    elif cfg.algorithm == "PMD":
        rhs = bregman_bound(K, result.eta, nu, M, D, 1.0, eps)
        step_ok = 2.0 * result.eta * beta <= 1.0
        step = result.eta
    else:  # DACPI
        E1 = result.values[0] - star
        rhs = dafw_bound(result.steps, nu, beta, D, M, E1, 0.0, eps)
        step_ok = True
        step = result.steps[0]
    return TheoremCheck(cfg.algorithm, K, subopt, rhs, nu, beta, M, D, eps, step, step_ok)


# Shipped benchmark suite: name -> (MDP, full-simplex class).
BENCHMARKS = {
    "single_state": lambda: single_state(),
    "bandit": lambda: bandit(),
    "chain": lambda: chain(),
    "gridworld": lambda: gridworld(),
    "random": lambda: _random(),
}


def benchmark(name: str):
    mdp = BENCHMARKS[name]()
    return mdp, ps.full_simplex(mdp.num_states, mdp.num_actions)
