"""Closed-form incentive analysis of the verification game.

A strategic prover that trains only a fraction ``rho`` of its task gambles on
passing the probabilistic audit. These functions evaluate the prover's
expected payoff and payoff rate under a pass-probability model, check the
three conditions under which full honesty is the profit-maximizing strategy,
and compute the penalty ratio that provably suffices to enforce them.

The worst-case pass-probability model is ``k(rho) = (1 - kappa + kappa*rho)
** alpha`` where ``kappa`` is the per-audit detection probability (1 when
seeds are public, 1/2 in the flag game's worst case) and ``alpha`` the number
of audited stages.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np


class UndefinedRateError(ZeroDivisionError):
    """Payoff rate is undefined at rho = 0 (no time is spent)."""


@dataclass(frozen=True)
class IncentiveParams:
    """Economic parameters of one prover-verifier pairing.

    ``alpha`` counts audited stages for the analysis; a committee of g_v
    verifiers auditing alpha stages each acts like a single verifier with
    g_v * alpha (stage-selection overlap is negligible for alpha << S).
    """

    task_reward: float
    block_reward: float
    training_cost: float
    training_time: float
    gamma: float
    kappa: float
    alpha: int

    def __post_init__(self):
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError("kappa must be in (0, 1]")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if min(self.task_reward, self.block_reward, self.training_cost) < 0:
            raise ValueError("rewards and costs must be non-negative")
        if self.training_time <= 0:
            raise ValueError("training time must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


def q_upper_bound(rho: float, kappa: float, alpha: int) -> float:
    """Best-case pass probability of any strategy that cheats on a (1-rho) share."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must be in [0, 1]")
    if not 0.0 < kappa <= 1.0:
        raise ValueError("kappa must be in (0, 1]")
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    return (1.0 - kappa + kappa * rho) ** alpha


QModel = Callable[[float], float]


def _default_q(params: IncentiveParams) -> QModel:
    return lambda rho: q_upper_bound(rho, params.kappa, params.alpha)


def payoff(params: IncentiveParams, rho: float, q_model: QModel | None = None) -> float:
    """Expected payoff of training a rho share of the task honestly.

    Passing pays the task reward plus the accrued share of block rewards;
    getting caught forfeits ``gamma * task_reward``; the training cost of the
    honest share is sunk either way.
    """
    q = (q_model or _default_q(params))(rho)
    gain = params.task_reward + rho * params.block_reward - rho * params.training_cost
    loss = -params.gamma * params.task_reward - rho * params.training_cost
    return q * gain + (1.0 - q) * loss


def payoff_rate(params: IncentiveParams, rho: float, q_model: QModel | None = None) -> float:
    """Expected payoff per unit time; undefined at rho = 0."""
    if rho <= 0.0:
        raise UndefinedRateError("payoff rate is defined on rho in (0, 1]")
    return payoff(params, rho, q_model) / (rho * params.training_time)


HONEST_PROFIT = "honest-profit"        # u(1) > 0
DISHONEST_LOSS = "dishonest-loss"      # u(0) < 0
RATE_DOMINANCE = "rate-dominance"      # v(rho) < v(1) on (0, 1)


@dataclass(frozen=True)
class HonestConditionReport:
    holds: bool
    violated: tuple[str, ...]
    witness_rho: float | None = None


def check_honest_conditions(
    params: IncentiveParams,
    q_model: QModel | None = None,
    grid_points: int = 999,
) -> HonestConditionReport:
    """Check the three full-honesty conditions under a pass-probability model.

    Evaluates the rate-dominance condition on a uniform grid over (0, 1) and
    reports the first violating rho as a witness.
    """
    q_model = q_model or _default_q(params)
    violated: list[str] = []
    witness = None

    if not payoff(params, 1.0, q_model) > 0:
        violated.append(HONEST_PROFIT)
    # Boundary convention: when q(0) = 0 a fully dishonest prover never gets
    # paid, so u(0) = 0 at gamma = 0 still leaves cheating pointless and the
    # condition is treated as satisfied (no penalty needed under certain
    # detection).
    u0 = payoff(params, 0.0, q_model)
    if not (u0 < 0 or (u0 == 0.0 and q_model(0.0) == 0.0)):
        violated.append(DISHONEST_LOSS)

    v_honest = payoff_rate(params, 1.0, q_model)
    for i in range(1, grid_points + 1):
        rho = i / (grid_points + 1)
        if not payoff_rate(params, rho, q_model) < v_honest:
            violated.append(RATE_DOMINANCE)
            witness = rho
            break

    return HonestConditionReport(
        holds=not violated, violated=tuple(violated), witness_rho=witness
    )


def gamma_sufficient(kappa: float, alpha: int) -> float:
    """Penalty ratio that guarantees full honesty (given honest profitability).

    Equals ``(1-kappa)**alpha / (1 - (1-kappa)**alpha)``; for kappa = 1/2
    this is ``1 / (2**alpha - 1)``, and for kappa = 1 no penalty is needed.
    The guarantee is proven for alpha >= 2; smaller alpha still yields the
    value but emits a warning.
    """
    if not 0.0 < kappa <= 1.0:
        raise ValueError("kappa must be in (0, 1]")
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    if alpha < 2:
        warnings.warn(
            "sufficiency is only guaranteed for alpha >= 2", stacklevel=2
        )
    miss = (1.0 - kappa) ** alpha
    return miss / (1.0 - miss)


@dataclass(frozen=True)
class MonotonicityEvidence:
    """Grid certificate that the required-penalty curve decreases in rho."""

    kappa: float
    alpha: int
    grid: np.ndarray
    values: np.ndarray
    non_increasing: bool
    sup_value: float
    sup_matches_zero_limit: bool


def required_gamma_curve(rho: np.ndarray, kappa: float, alpha: int) -> np.ndarray:
    """Penalty ratio needed at each rho: (k(rho) - rho) / (1 - k(rho))."""
    k = (1.0 - kappa + kappa * rho) ** alpha
    return (k - rho) / (1.0 - k)


def monotonicity_certificate(
    kappa: float, alpha: int, grid_points: int = 999, tol: float = 1e-12
) -> MonotonicityEvidence:
    """Numerically certify that the required-penalty curve is non-increasing.

    Evaluates the curve on a dense open grid and compares its supremum with
    the rho -> 0 limit, which is exactly the sufficient penalty ratio.
    """
    if alpha < 2:
        warnings.warn("monotonicity is only guaranteed for alpha >= 2", stacklevel=2)
    grid = np.arange(1, grid_points + 1) / (grid_points + 1)
    values = required_gamma_curve(grid, kappa, alpha)
    diffs = np.diff(values)
    non_increasing = bool(np.all(diffs <= tol))
    limit = gamma_sufficient(kappa, alpha)
    sup_value = float(np.max(values))
    return MonotonicityEvidence(
        kappa=kappa,
        alpha=alpha,
        grid=grid,
        values=values,
        non_increasing=non_increasing,
        sup_value=sup_value,
        sup_matches_zero_limit=sup_value <= limit + tol,
    )
