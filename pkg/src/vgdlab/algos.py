"""SDPO, CPI, DA-CPI and PMD on tabular MDPs, in exact and sampled mode.

Exact mode uses the true gradient ``H mu^k o Q^k`` and weights ``mu^k``.
Sampled mode draws a fresh dataset per oracle call and uses the
state-decomposed empirical surrogate from :mod:`vgdlab.sampler`; the same
policy-space oracles then solve it.  Every algorithm returns its last
iterate.

In exact mode the iterations coincide with the generic methods of
:mod:`vgdlab.optim` applied to :func:`policy_problem` (steepest descent
for SDPO/PMD, Frank-Wolfe for CPI, doubly-approximate Frank-Wolfe for
DA-CPI); the test suite checks this trace for trace.
"""
from __future__ import annotations

import csv
import io
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import policy_space as ps
from .config import TOL
from .mdp import TabularMdp, occupancy, policy_evaluation
from .optim import FirstOrderProblem, PolicySet
from .sampler import build_dataset, empirical_gradient, make_rng

__all__ = [
    "ALGORITHMS",
    "AlgoConfig",
    "RunResult",
    "run",
    "run_sdpo",
    "run_pmd",
    "run_cpi",
    "run_dacpi",
    "unwrap_exploration",
    "unwrap_value_loss",
    "sdpo_tuning",
    "pmd_tuning",
    "dacpi_explore_eps",
    "policy_problem",
    "EXPLORE_EPS_CAP",
]

ALGORITHMS = ("SDPO", "CPI", "DACPI", "PMD")
EXPLORE_EPS_CAP = 0.5  # tuned exploration rates are capped here (the formulas can exceed 1)

_DEFAULT_NORM = {"SDPO": ps.ActionNorm.L1, "DACPI": ps.ActionNorm.L1, "PMD": ps.ActionNorm.L2,
                 "CPI": ps.ActionNorm.L1}


def sdpo_tuning(H: float, A: int, K: int):
    """``eps_expl = H^2 / K^(2/3)`` (capped), ``eta = sqrt(eps_expl) / (2 H^3 sqrt(A))``."""
    eps = min(H * H / max(K, 1) ** (2.0 / 3.0), EXPLORE_EPS_CAP)
    return math.sqrt(eps) / (2.0 * H**3 * math.sqrt(A)), eps


def pmd_tuning(H: float, A: int, K: int):
    """``eps_expl = K^(-2/3)`` (capped), ``eta = sqrt(eps_expl) / (2 H^3 A^(3/2))``."""
    eps = min(max(K, 1) ** (-2.0 / 3.0), EXPLORE_EPS_CAP)
    return math.sqrt(eps) / (2.0 * H**3 * A**1.5), eps


def dacpi_explore_eps(K: int, inner_tol: float) -> float:
    """``(1/K + sqrt(eps) + eps K)^(2/3)`` (capped)."""
    K = max(K, 1)
    return min((1.0 / K + math.sqrt(inner_tol) + inner_tol * K) ** (2.0 / 3.0), EXPLORE_EPS_CAP)


@dataclass(frozen=True)
class AlgoConfig:
    algorithm: str = "SDPO"
    K: int = 64
    action_norm: Optional[str] = None     # default per algorithm
    eta: Optional[float] = None           # SDPO/PMD step; None = tuned
    explore_eps: Optional[float] = None   # None = tuned (ignored by CPI)
    schedule: str = "vgd"                 # CPI/DACPI: "vgd" (2 nu/(k+2)) or "greedy"
    nu: Optional[float] = None            # None = measured on a probe pre-pass
    mode: str = "exact"                   # "exact" or "sampled"
    n_samples: int = 1000
    inner_tol: float = TOL.inner
    seed: int = 0
    init: str = "uniform"                 # "uniform" or "random"
    timing: bool = False

    def __post_init__(self):
        alg = str(self.algorithm).upper().replace("-", "")
        object.__setattr__(self, "algorithm", alg)
        if alg not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.action_norm is not None:
            object.__setattr__(self, "action_norm", ps.ActionNorm.parse(self.action_norm).value)
        if int(self.K) < 0:
            raise ValueError("K must be nonnegative")
        if self.eta is not None and not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.explore_eps is not None and not 0.0 <= self.explore_eps < 1.0:
            raise ValueError("explore_eps must lie in [0, 1)")
        if self.nu is not None and not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.mode not in ("exact", "sampled"):
            raise ValueError("mode must be 'exact' or 'sampled'")
        if self.schedule not in ("vgd", "greedy"):
            raise ValueError("schedule must be 'vgd' or 'greedy'")
        if self.init not in ("uniform", "random"):
            raise ValueError("init must be 'uniform' or 'random'")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")

    @property
    def norm(self) -> ps.ActionNorm:
        return ps.ActionNorm.parse(self.action_norm or _DEFAULT_NORM[self.algorithm])

    @classmethod
    def from_dict(cls, data: dict) -> "AlgoConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown algorithm config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    config: AlgoConfig
    final_policy: np.ndarray
    policies: list
    values: list
    grad_vgd: list
    inner_err: list
    steps: list
    class_used: ps.PolicyClass
    eta: Optional[float] = None
    explore_eps: float = 0.0
    nu: Optional[float] = None
    wall_ms: Optional[list] = None
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.values)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "V", "grad_vgd", "inner_err", "wall_ms"])
        for i, (v, g, e) in enumerate(zip(self.values, self.grad_vgd, self.inner_err)):
            ms = "" if self.wall_ms is None else f"{self.wall_ms[i]:.3f}"
            w.writerow([i + 1, repr(v), repr(g), repr(e), ms])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


# ----------------------------------------------------------------------------
# Shared machinery
# ----------------------------------------------------------------------------

class _Exact:
    """Exact oracles at one policy, computed once."""

    def __init__(self, mdp: TabularMdp, pi: np.ndarray):
        self.ev = policy_evaluation(mdp, pi)
        self.mu = occupancy(mdp, pi).mu
        self.G = mdp.horizon * self.mu[:, None] * self.ev.q


def policy_problem(mdp: TabularMdp, cls: ps.PolicyClass, norm=ps.ActionNorm.L1) -> FirstOrderProblem:
    """``V_rho0`` over ``cls`` with the local norm ``||.||_{L2(mu^pi), norm}``."""
    norm = ps.ActionNorm.parse(norm)
    cache = {}

    def oracle(pi):
        key = np.asarray(pi).tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = _Exact(mdp, np.asarray(pi, dtype=float))
        return cache[key]

    return FirstOrderProblem(
        gradient=lambda pi: oracle(pi).G,
        local_norm_at=lambda pi: ps.WeightedNorm(oracle(pi).mu, norm),
        feasible_set=PolicySet(cls),
        objective=lambda pi: oracle(pi).ev.scalar_value,
    )


def _initial_policy(cls: ps.PolicyClass, cfg: AlgoConfig) -> np.ndarray:
    if cfg.init == "random":
        return ps.random_member(cls, make_rng(cfg.seed, 0))
    return ps.uniform_member(cls)


def _estimate(mdp, cfg, pi, ex, k, j):
    """Gradient surrogate and state weights for oracle call ``j`` of iteration ``k``."""
    if cfg.mode == "exact":
        return ex.G, ex.mu
    data = build_dataset(mdp, pi, cfg.n_samples, make_rng(cfg.seed, 1 + 2 * (k - 1) + j), policy_id=k)
    return empirical_gradient(data, mdp.num_states)


def _gvgd(cls, pi, G) -> float:
    return float(np.sum(G * (pi - ps.linear_minimization(cls, G))))


class _Recorder:
    def __init__(self, timing: bool):
        self.policies, self.values, self.grad_vgd, self.inner_err, self.steps = [], [], [], [], []
        self.wall_ms = [] if timing else None
        self._t = time.perf_counter()

    def record(self, cls, pi, ex):
        self.policies.append(pi.copy())
        self.values.append(ex.ev.scalar_value)
        self.grad_vgd.append(_gvgd(cls, pi, ex.G))
        if self.wall_ms is not None:
            now = time.perf_counter()
            self.wall_ms.append(1000.0 * (now - self._t))
            self._t = now

    def result(self, cfg, cls, **kw) -> RunResult:
        self.inner_err.append(0.0)
        return RunResult(cfg, self.policies[-1], self.policies, self.values, self.grad_vgd,
                         self.inner_err, self.steps, cls, wall_ms=self.wall_ms, **kw)


def _resolve_nu(mdp, cls, cfg) -> float:
    if cfg.nu is not None:
        return float(cfg.nu)
    from .vgd import class_optimum, random_probes, vgd_certificate

    probes = random_probes(cls, 64, cfg.seed)
    nu = vgd_certificate(mdp, cls, probes, class_optimum(mdp, cls).value).nu
    if not math.isfinite(nu):
        warnings.warn("VGD pre-pass found no finite nu; steps will be clamped to 1", RuntimeWarning)
    return nu


def _clamped(eta: float, k: int) -> float:
    if eta > 1.0:
        warnings.warn("step size > 1 clamped to 1", RuntimeWarning, stacklevel=3)
        return 1.0
    return eta


# ----------------------------------------------------------------------------
# Algorithms
# ----------------------------------------------------------------------------

def _run_prox(mdp, cls, cfg, tuning) -> RunResult:
    A, H, K = mdp.num_actions, mdp.horizon, cfg.K
    eta_t, eps_t = tuning(H, A, K)
    eta = cfg.eta if cfg.eta is not None else eta_t
    eps = cfg.explore_eps if cfg.explore_eps is not None else eps_t
    wcls = ps.wrap_eps_greedy(cls, eps)
    pi = _initial_policy(wcls, cfg)
    rec = _Recorder(cfg.timing)
    for k in range(1, K + 2):
        ex = _Exact(mdp, pi)
        rec.record(wcls, pi, ex)
        if k == K + 1:
            break
        G, w = _estimate(mdp, cfg, pi, ex, k, 0)
        pi, err = ps.prox_step(wcls, pi, G, w, eta, cfg.norm, cfg.inner_tol, return_error=True, check=False)
        rec.inner_err.append(err)
        rec.steps.append(eta)
    return rec.result(cfg, wcls, eta=eta, explore_eps=wcls.explore_eps)


def run_sdpo(mdp: TabularMdp, cls: ps.PolicyClass, cfg: AlgoConfig) -> RunResult:
    """Steepest descent policy optimization (L1 by default)."""
    if cfg.algorithm not in ("SDPO", "PMD"):
        raise ValueError(f"run_sdpo got a {cfg.algorithm} config")
    tuning = pmd_tuning if cfg.algorithm == "PMD" else sdpo_tuning
    return _run_prox(mdp, cls, cfg, tuning)


def run_pmd(mdp: TabularMdp, cls: ps.PolicyClass, cfg: AlgoConfig) -> RunResult:
    """Policy mirror descent with the Euclidean regularizer.

    With ``B = 1/2 ||.||_2^2`` this is exactly SDPO under the L2 action norm,
    so it runs through :func:`run_sdpo` with PMD's default tuning.
    """
    if cfg.algorithm != "PMD":
        raise ValueError(f"run_pmd got a {cfg.algorithm} config")
    if cfg.norm is not ps.ActionNorm.L2:
        raise ValueError("PMD is implemented for the Euclidean regularizer (L2) only")
    return run_sdpo(mdp, cls, cfg)


def run_cpi(mdp: TabularMdp, cls: ps.PolicyClass, cfg: AlgoConfig) -> RunResult:
    """Conservative policy iteration: LMO then an exact convex combination.

    The class is used as given (``explore_eps`` of the config is ignored).
    With ``schedule="greedy"`` the step minimizes the smoothness upper bound
    ``eta g + H^3 eta^2 d^2`` where ``g`` is the measured advantage
    ``<G, pi~ - pi>`` and ``d = ||pi~ - pi||_{inf,1}``.
    """
    if cfg.algorithm != "CPI":
        raise ValueError(f"run_cpi got a {cfg.algorithm} config")
    H, K = mdp.horizon, cfg.K
    nu = _resolve_nu(mdp, cls, cfg) if cfg.schedule == "vgd" else None
    pi = _initial_policy(cls, cfg)
    rec = _Recorder(cfg.timing)
    for k in range(1, K + 2):
        ex = _Exact(mdp, pi)
        rec.record(cls, pi, ex)
        if k == K + 1:
            break
        G, w = _estimate(mdp, cfg, pi, ex, k, 0)
        target = ps.linear_minimization(cls, G, w)
        if cfg.schedule == "vgd":
            eta = _clamped(2.0 * nu / (k + 2), k)
        else:
            g = float(np.sum(G * (target - pi)))
            d = ps.infty_one_norm(target - pi)
            eta = min(1.0, -g / (2.0 * H**3 * d * d)) if g < 0 and d > 0 else 0.0
        pi = (1.0 - eta) * pi + eta * target
        rec.inner_err.append(0.0)
        rec.steps.append(eta)
    return rec.result(cfg, cls, nu=nu)


def run_dacpi(mdp: TabularMdp, cls: ps.PolicyClass, cfg: AlgoConfig) -> RunResult:
    """Doubly-approximate CPI over the exploratory class.

    The convex combination is re-projected into the wrapped class in the
    ``mu^k``-weighted squared action norm.  Sampled mode uses a second,
    independent dataset for the projection weights.
    """
    if cfg.algorithm != "DACPI":
        raise ValueError(f"run_dacpi got a {cfg.algorithm} config")
    K = cfg.K
    eps = cfg.explore_eps if cfg.explore_eps is not None else dacpi_explore_eps(K, cfg.inner_tol)
    wcls = ps.wrap_eps_greedy(cls, eps)
    nu = _resolve_nu(mdp, wcls, cfg) if cfg.schedule == "vgd" else None
    H = mdp.horizon
    pi = _initial_policy(wcls, cfg)
    rec = _Recorder(cfg.timing)
    for k in range(1, K + 2):
        ex = _Exact(mdp, pi)
        rec.record(wcls, pi, ex)
        if k == K + 1:
            break
        G, w = _estimate(mdp, cfg, pi, ex, k, 0)
        target = ps.linear_minimization(wcls, G, w)
        if cfg.schedule == "vgd":
            eta = _clamped(2.0 * nu / (k + 2), k)
        else:
            g = float(np.sum(G * (target - pi)))
            d = ps.infty_one_norm(target - pi)
            eta = min(1.0, -g / (2.0 * H**3 * d * d)) if g < 0 and d > 0 else 0.0
        z = (1.0 - eta) * pi + eta * target
        _, w2 = _estimate(mdp, cfg, pi, ex, k, 1)
        pi, err = ps.project(wcls, z, w2, cfg.norm, cfg.inner_tol, return_error=True)
        rec.inner_err.append(err)
        rec.steps.append(eta)
    return rec.result(cfg, wcls, nu=nu, explore_eps=wcls.explore_eps)


_RUNNERS = {"SDPO": run_sdpo, "PMD": run_pmd, "CPI": run_cpi, "DACPI": run_dacpi}


def run(mdp: TabularMdp, cls: ps.PolicyClass, cfg: AlgoConfig) -> RunResult:
    """Dispatch on ``cfg.algorithm``."""
    return _RUNNERS[cfg.algorithm](mdp, cls, cfg)


def unwrap_exploration(policy, cls: ps.PolicyClass, eps: float) -> np.ndarray:
    """Invert the exploratory wrap: ``(pi - eps u) / (1 - eps)``, checked against ``cls``."""
    eps = float(eps)
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    pi = np.asarray(policy, dtype=float)
    if eps == 0.0:
        return pi.copy()
    raw = (pi - eps / pi.shape[1]) / (1.0 - eps)
    if not ps.contains(cls, raw, TOL.membership):
        raise ps.NotInClassError("policy is not the exploratory wrap of a class member")
    return ps.project(cls, raw, None, ps.ActionNorm.L2)


def unwrap_value_loss(mdp: TabularMdp, wrapped, unwrapped) -> float:
    """``|V(wrapped) - V(unwrapped)|``."""
    return abs(policy_evaluation(mdp, wrapped).scalar_value - policy_evaluation(mdp, unwrapped).scalar_value)
