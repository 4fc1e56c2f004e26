"""Numerical tolerances shared by the library, the CLI checks and the tests."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    prob_sum: float = 1e-12          # stochastic rows / distributions sum to 1
    bellman_residual: float = 1e-10  # policy evaluation fixed point, max norm
    occupancy_sum: float = 1e-10
    value_difference: float = 1e-9
    membership: float = 1e-8         # policy-class membership tests
    inner: float = 1e-8              # default inner-solver tolerance
    fd_relative: float = 1e-4        # gradient vs. central finite differences
    fd_step: float = 1e-5
    duality: float = 1e-10
    ratio_floor: float = 1e-12       # grad-VGD below this leaves nu_k undefined
    optimal_gap: float = 1e-12       # relative suboptimality treated as optimal (rounding)
    bound_slack: float = 1e-10       # rounding allowance when comparing to a bound
    max_states: int = 10_000         # dense-solve desk-scale cap
    max_episode_steps: int = 1_000_000


TOL = Tolerances()
