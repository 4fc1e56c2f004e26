"""Property battery run by ``vgdlab check``.

Each check takes an MDP and a generator and returns a :class:`CheckResult`.
Relative comparisons fall back to absolute ones near zero, so an all-zero
cost MDP passes every check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import policy_space as ps
from .config import TOL
from .mdp import TabularMdp, occupancy, policy_evaluation, policy_gradient, value_difference
from .sampler import build_dataset

__all__ = ["CheckResult", "PROPERTIES", "run_battery", "sampler_audit", "SamplerAudit"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rand_policy(rng, S, A, floor=0.0):
    p = rng.dirichlet(np.ones(A), size=S)
    return (1.0 - floor * A) * p + floor if floor else p


def bellman_residual(mdp, rng, n=20):
    worst = 0.0
    for _ in range(n):
        pi = _rand_policy(rng, mdp.num_states, mdp.num_actions)
        ev = policy_evaluation(mdp, pi)
        target = mdp.rewards + mdp.discount * mdp.transitions @ np.einsum("sa,sa->s", pi, ev.q)
        worst = max(worst, float(np.abs(ev.q - target).max()))
    return worst <= TOL.bellman_residual, f"max residual {worst:.2e}"


def value_bounds(mdp, rng, n=20):
    H = mdp.horizon
    lo, hi = math.inf, -math.inf
    for _ in range(n):
        q = policy_evaluation(mdp, _rand_policy(rng, mdp.num_states, mdp.num_actions)).q
        lo, hi = min(lo, q.min()), max(hi, q.max())
    ok = lo >= -1e-12 and hi <= H + 1e-12
    return ok, f"Q range [{lo:.3g}, {hi:.3g}] within [0, {H:.3g}]"


def occupancy_floor(mdp, rng, n=20):
    worst = math.inf
    for _ in range(n):
        mu = occupancy(mdp, _rand_policy(rng, mdp.num_states, mdp.num_actions)).mu
        worst = min(worst, float(np.min(mu - (1.0 - mdp.discount) * mdp.initial_dist)))
    return worst >= -1e-12, f"min mu - (1-gamma) rho0 = {worst:.2e}"


def value_difference_identity(mdp, rng, n=50):
    S, A = mdp.num_states, mdp.num_actions
    worst = 0.0
    for _ in range(n):
        a, b = _rand_policy(rng, S, A), _rand_policy(rng, S, A)
        d = value_difference(mdp, a, b)
        direct = policy_evaluation(mdp, b).scalar_value - policy_evaluation(mdp, a).scalar_value
        worst = max(worst, abs(d - direct))
    return worst <= TOL.value_difference, f"max deviation {worst:.2e}"


def gradient_fd(mdp, rng, n=20):
    S, A = mdp.num_states, mdp.num_actions
    h = TOL.fd_step
    pi = _rand_policy(rng, S, A, floor=0.05)
    G = policy_gradient(mdp, pi)
    worst = 0.0
    for _ in range(n):
        d = _rand_policy(rng, S, A) - pi
        fd = (policy_evaluation(mdp, pi + h * d).scalar_value
              - policy_evaluation(mdp, pi - h * d).scalar_value) / (2 * h)
        an = float(np.sum(G * d))
        scale = max(abs(an), 1e-6)
        worst = max(worst, abs(fd - an) / scale)
    return worst <= TOL.fd_relative, f"max relative error {worst:.2e}"


def _remainders(mdp, rng, n, eps):
    S, A, H = mdp.num_states, mdp.num_actions, mdp.horizon
    out = []
    for _ in range(n):
        pi = _rand_policy(rng, S, A, floor=eps)
        other = _rand_policy(rng, S, A)
        if rng.random() < 0.3:  # include deterministic targets
            other = np.eye(A)[rng.integers(A, size=S)]
        mu = occupancy(mdp, pi).mu
        rem = abs(policy_evaluation(mdp, other).scalar_value - policy_evaluation(mdp, pi).scalar_value
                  - float(np.sum(policy_gradient(mdp, pi) * (other - pi))))
        out.append((pi, other, mu, rem, H))
    return out


def local_smoothness(mdp, rng, n=100):
    A = mdp.num_actions
    bad = 0
    for pi, other, mu, rem, H in _remainders(mdp, rng, n, eps=0.02):
        e = float(pi.min())
        d = other - pi
        b1 = H**3 / math.sqrt(e) * ps.WeightedNorm(mu, "L1")(d) ** 2
        b2 = A * H**3 / math.sqrt(e) * ps.WeightedNorm(mu, "L2")(d) ** 2
        bad += rem > b1 + 1e-12 or rem > b2 + 1e-12
    return bad == 0, f"{bad} violations over {n} pairs (L1 and L2 forms)"


def global_smoothness(mdp, rng, n=100):
    bad = 0
    for pi, other, mu, rem, H in _remainders(mdp, rng, n, eps=0.0):
        bad += rem > H**3 * ps.infty_one_norm(other - pi) ** 2 + 1e-12
    return bad == 0, f"{bad} violations over {n} pairs"


def duality(mdp, rng, n=100):
    S, A = mdp.num_states, mdp.num_actions
    worst = -math.inf
    align = 0.0
    for _ in range(n):
        mu = rng.dirichlet(np.ones(S))
        for kind in ("L1", "L2"):
            norm = ps.WeightedNorm(mu, kind)
            x, y = rng.normal(size=(S, A)), rng.normal(size=(S, A))
            worst = max(worst, float(np.sum(x * y)) - norm(x) * norm.dual(y))
            # aligned pair: x_s proportional to dual direction of y_s scaled by 1/mu
            dual_rows = ps.ActionNorm.parse(kind).dual(y)
            if kind == "L1":
                xs = np.zeros_like(y)
                xs[np.arange(S), np.abs(y).argmax(1)] = np.sign(y[np.arange(S), np.abs(y).argmax(1)])
            else:
                xs = y / np.maximum(dual_rows[:, None], 1e-300)
            xs *= (dual_rows / mu)[:, None]
            align = max(align, abs(float(np.sum(xs * y)) - norm(xs) * norm.dual(y))
                        / max(1.0, norm(xs) * norm.dual(y)))
    ok = worst <= TOL.duality and align <= 1e-10
    return ok, f"max <x,y> - |x||y|* = {worst:.2e}, alignment error {align:.1e}"


def lipschitz(mdp, rng, n=20):
    bad = 0
    H = mdp.horizon
    for _ in range(n):
        pi = _rand_policy(rng, mdp.num_states, mdp.num_actions)
        q = policy_evaluation(mdp, pi).q
        mu = occupancy(mdp, pi).mu
        G = policy_gradient(mdp, pi)
        for kind in ("L1", "L2"):
            an = ps.ActionNorm.parse(kind)
            lhs = ps.dual_weighted_norm(G, mu, an)
            bad += lhs > H * float(an.dual(q).max()) + 1e-10
    return bad == 0, f"{bad} violations"


@dataclass(frozen=True)
class SamplerAudit:
    n: int
    tv: float
    tv_limit: float
    max_z: float
    z_limit: float
    cells: int
    q99_len: float
    len_bound: float
    ks_excess: float

    @property
    def passed(self) -> bool:
        return (self.tv <= self.tv_limit and self.max_z <= self.z_limit
                and self.q99_len <= self.len_bound and self.ks_excess <= 0.01)

    def rows(self):
        return [
            ("accepted_state_tv", self.tv, self.tv_limit, self.tv <= self.tv_limit),
            ("max_abs_z_qhat", self.max_z, self.z_limit, self.max_z <= self.z_limit),
            ("episode_len_q99", self.q99_len, self.len_bound, self.q99_len <= self.len_bound),
            ("episode_len_ks_excess", self.ks_excess, 0.01, self.ks_excess <= 0.01),
        ]


def sampler_audit(mdp: TabularMdp, policy, n: int, rng, min_visits: int = 300, K: int = 1,
                  delta: float = 0.01, tv_limit: float | None = None) -> SamplerAudit:
    """Statistics of ``n`` draws against exact occupancy and Q.

    The TV limit defaults to 0.01 at 10^6 draws and scales like ``1/sqrt(n)``.
    Episode lengths are compared with the sum of two Geometric(1 - gamma)
    variables (one-sided CDF excess) and with ``2H log(2 n K / delta)``.
    """
    S, A, gamma = mdp.num_states, mdp.num_actions, mdp.discount
    data = build_dataset(mdp, policy, n, rng)
    mu = occupancy(mdp, policy).mu
    q = policy_evaluation(mdp, policy).q
    emp = np.bincount(data.states, minlength=S) / n
    tv = 0.5 * float(np.abs(emp - mu).sum())
    if tv_limit is None:
        tv_limit = 0.01 * math.sqrt(1e6 / n) if n < 1e6 else 0.01
    max_z, cells = 0.0, 0
    for s in range(S):
        for a in range(A):
            sel = (data.states == s) & (data.actions == a)
            m = int(sel.sum())
            if m < min_visits:
                continue
            vals = data.scaled_returns[sel] / A   # q_hat[a] given action a, importance factor removed
            se = vals.std(ddof=1) / math.sqrt(m)
            cells += 1
            if se == 0.0:
                z = 0.0 if abs(vals.mean() - q[s, a]) <= 1e-12 else math.inf
            else:
                z = abs(vals.mean() - q[s, a]) / se
            max_z = max(max_z, z)
    lens = np.sort(data.episode_lens)
    H = mdp.horizon
    bound = 2.0 * H * math.log(2.0 * n * K / delta)
    # Reference CDF of G1 + G2, G_i ~ Geometric(1 - gamma) on {1, 2, ...}
    t = np.arange(1, int(lens.max()) + 1)
    p = 1.0 - gamma
    ref_cdf = 1.0 - gamma ** t - t * p * gamma ** (t - 1)
    emp_cdf = np.searchsorted(lens, t, side="right") / n
    ks_excess = float(np.max(ref_cdf - emp_cdf, initial=0.0))
    return SamplerAudit(n, tv, tv_limit, max_z, 4.0, cells, float(np.quantile(lens, 0.99)), bound, ks_excess)


def sampler_check(mdp, rng, n=20_000):
    pi = _rand_policy(rng, mdp.num_states, mdp.num_actions)
    audit = sampler_audit(mdp, pi, n, rng)
    return audit.passed, (f"TV {audit.tv:.4f} (limit {audit.tv_limit:.4f}), max |z| {audit.max_z:.2f} "
                          f"over {audit.cells} cells, q99 len {audit.q99_len:.0f} <= {audit.len_bound:.1f}")


PROPERTIES = {
    "bellman-residual": bellman_residual,
    "q-range": value_bounds,
    "occupancy-floor": occupancy_floor,
    "value-difference": value_difference_identity,
    "gradient-vs-fd": gradient_fd,
    "local-smoothness": local_smoothness,
    "global-smoothness": global_smoothness,
    "weighted-duality": duality,
    "local-lipschitz": lipschitz,
    "sampler-unbiasedness": sampler_check,
}


def run_battery(mdp: TabularMdp, seed: int = 0, label: str = "") -> list:
    rng = np.random.default_rng(seed)
    out = []
    for name, fn in PROPERTIES.items():
        try:
            ok, detail = fn(mdp, rng)
        except Exception as exc:  # a crashing property is a failing property
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(f"{label}{name}", bool(ok), detail))
    return out
