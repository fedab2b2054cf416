"""Coupled strategy/incentive updates on two timescales.

The strategy moves fast: ``x_{k+1} = (1-gamma_k) x_k + gamma_k f(x_k, p_k)``
where ``f`` is one of the pluggable learning rules (inner equilibrium, best
response, or a regularized gradient step). The incentive moves slowly toward
the current externality: ``p_{k+1} = (1-beta_k) p_k + beta_k e(x_k)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import games
from .errors import ConvergenceError, InvalidArgumentError, SpecError
from .games import AtomicGame, NonAtomicGame

CONSECUTIVE_HITS = 10


@dataclass(frozen=True)
class StepSchedule:
    """Polynomially decaying step sizes gamma_k = gamma0 (k+offset)^-a etc.

    Requires 0.5 < a < b <= 1 so that both step sums diverge, squares are
    summable, and the incentive timescale is asymptotically negligible.
    """

    a: float = 0.6
    b: float = 0.9
    gamma0: float = 1.0
    beta0: float = 1.0
    offset: int = 2

    def __post_init__(self):
        if not (0.5 < self.a < self.b <= 1.0):
            raise SpecError(f"need 0.5 < a < b <= 1, got a={self.a}, b={self.b}")
        if self.gamma0 <= 0 or self.beta0 <= 0:
            raise SpecError("step scale factors must be positive")
        if int(self.offset) < 1 or self.offset != int(self.offset):
            raise SpecError("offset must be a positive integer")
        # decreasing in k, so checking k = 0 pins the whole sequence in (0, 1)
        if not (0.0 < self.gamma(0) < 1.0 and 0.0 < self.beta(0) < 1.0):
            raise SpecError("step sizes must lie in (0, 1) for all k >= 0")

    def gamma(self, k: int) -> float:
        return self.gamma0 * (k + self.offset) ** (-self.a)

    def beta(self, k: int) -> float:
        return self.beta0 * (k + self.offset) ** (-self.b)

    def assumption_report(self) -> dict:
        """Symbolic check of the admissible-family conditions from the exponents."""
        report = {
            "gamma_sum_diverges": self.a <= 1.0,
            "beta_sum_diverges": self.b <= 1.0,
            "squares_summable": 2.0 * self.a > 1.0 and 2.0 * self.b > 1.0,
            "ratio_vanishes": self.b > self.a,
            "steps_in_unit_interval": 0.0 < self.gamma(0) < 1.0 and 0.0 < self.beta(0) < 1.0,
        }
        report["passed"] = all(report.values())
        return report


@dataclass(frozen=True)
class StrategyUpdateRule:
    variant: str = "equilibrium"  # equilibrium | best_response | gradient
    eta: Optional[float] = None
    regularizer: str = "quadratic"  # quadratic | entropy

    def __post_init__(self):
        if self.variant not in ("equilibrium", "best_response", "gradient"):
            raise SpecError(f"unknown strategy rule {self.variant!r}")
        if self.regularizer not in ("quadratic", "entropy"):
            raise SpecError(f"unknown regularizer {self.regularizer!r}")
        if self.eta is not None and self.eta <= 0:
            raise SpecError("inner step size eta must be positive")


@dataclass(frozen=True)
class RunConfig:
    schedule: StepSchedule = field(default_factory=StepSchedule)
    rule: StrategyUpdateRule = field(default_factory=StrategyUpdateRule)
    max_iterations: int = 10000
    convergence_tol: float = 1e-6
    record_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise SpecError("max_iterations must be >= 1")
        if self.convergence_tol <= 0:
            raise SpecError("convergence_tol must be positive")
        if self.record_every < 1:
            raise SpecError("record_every must be >= 1")


@dataclass
class TrajectoryRecord:
    """Time-indexed iterates with fixed-point residual diagnostics."""

    ks: list = field(default_factory=list)
    xs: list = field(default_factory=list)
    ps: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    social_costs: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def append(self, k, x, p, residual, social_cost):
        if self.ks and k <= self.ks[-1]:
            raise InvalidArgumentError("iteration indices must be strictly increasing")
        self.ks.append(int(k))
        self.xs.append(np.array(x, dtype=float))
        self.ps.append(np.array(p, dtype=float))
        self.residuals.append(float(residual))
        self.social_costs.append(float(social_cost))

    @property
    def final_x(self) -> np.ndarray:
        return self.xs[-1]

    @property
    def final_p(self) -> np.ndarray:
        return self.ps[-1]

    @property
    def final_residual(self) -> float:
        return self.residuals[-1]

    def summary(self) -> dict:
        return {
            "final_x": [float(v) for v in self.final_x],
            "final_p": [float(v) for v in self.final_p],
            "final_residual": self.final_residual,
            "final_social_cost": self.social_costs[-1],
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def to_csv(self, path):
        nx, np_ = self.xs[0].size, self.ps[0].size
        header = (["k", "residual", "social_cost"]
                  + [f"x{i}" for i in range(nx)] + [f"p{i}" for i in range(np_)])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k, r, c, x, p in zip(self.ks, self.residuals, self.social_costs,
                                     self.xs, self.ps):
                row = [str(k), f"{r:.17g}", f"{c:.17g}"]
                row += [f"{v:.17g}" for v in x] + [f"{v:.17g}" for v in p]
                writer.writerow(row)

    def to_json_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


# ---------------------------------------------------------------------------
# Rule evaluation
# ---------------------------------------------------------------------------

def estimate_gradient_lipschitz(game, seed: int = 0, samples: int = 32) -> float:
    """Crude sampled bound on the Lipschitz constant of the cost-gradient map."""
    rng = np.random.default_rng(seed)
    if isinstance(game, AtomicGame):
        grad = game.loss_grad
        draw = lambda: game.project(rng.standard_normal(game.n_players) * 2.0)
    else:
        grad = game.action_cost
        draw = lambda: game.random_point(rng)
    best = 0.0
    for _ in range(samples):
        x, y = draw(), draw()
        d = np.linalg.norm(x - y)
        if d > 1e-12:
            best = max(best, float(np.linalg.norm(np.asarray(grad(x)) - np.asarray(grad(y))) / d))
    return max(best, 1e-12)


def resolve_eta(game, rule: StrategyUpdateRule) -> float:
    if rule.eta is not None:
        return rule.eta
    if isinstance(game, AtomicGame) and game.lipschitz_bound:
        return 0.9 / game.lipschitz_bound
    return 0.9 / estimate_gradient_lipschitz(game)


def strategy_target(game, x, p, rule: StrategyUpdateRule):
    """The new-strategy term f(x, p) for the configured learning rule."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if isinstance(game, AtomicGame):
        if rule.variant == "equilibrium":
            return games.solve_equilibrium_atomic(game, p, x0=x)
        if rule.variant == "best_response":
            return games.best_response_atomic(game, x, p)
        if rule.regularizer == "entropy":
            raise InvalidArgumentError("entropy regularizer needs a simplex strategy space")
        eta = resolve_eta(game, rule)
        return game.project(x - eta * (game.loss_grad(x) + p))
    if isinstance(game, NonAtomicGame):
        if rule.variant == "equilibrium":
            return games.solve_equilibrium_nonatomic(game, p, x0=x)
        if rule.variant == "best_response":
            return games.best_response_nonatomic(game, x, p)
        eta = resolve_eta(game, rule)
        if rule.regularizer == "entropy":
            return games.logit_response(game, x, p, eta)
        c = np.asarray(game.action_cost(x), float) + p
        return game.project(x - eta * c)
    raise InvalidArgumentError(f"unsupported game type {type(game).__name__}")


def externality(game, x):
    if isinstance(game, AtomicGame):
        return games.externality_atomic(game, x)
    if isinstance(game, NonAtomicGame):
        return games.externality_nonatomic(game, x)
    raise InvalidArgumentError(f"unsupported game type {type(game).__name__}")


def step_strategy(game, x, p, rule: StrategyUpdateRule, gamma: float):
    if not (0.0 < gamma < 1.0):
        raise InvalidArgumentError("gamma must lie in (0, 1)")
    return (1.0 - gamma) * np.asarray(x, float) + gamma * strategy_target(game, x, p, rule)


def step_incentive(game, x, p, beta: float):
    if not (0.0 < beta < 1.0):
        raise InvalidArgumentError("beta must lie in (0, 1)")
    return (1.0 - beta) * np.asarray(p, float) + beta * externality(game, x)


def fixed_point_residual(game, x, p, rule: StrategyUpdateRule) -> float:
    f = strategy_target(game, x, p, rule)
    e = externality(game, x)
    return float(np.max(np.abs(f - np.asarray(x, float)))
                 + np.max(np.abs(e - np.asarray(p, float))))


def run_coupled(game, x0, p0, config: RunConfig,
                raise_on_failure: bool = False) -> TrajectoryRecord:
    """Iterate the coupled updates until the fixed-point residual settles.

    Stops once the residual stays below ``convergence_tol`` for ten
    consecutive recorded iterations, or the iteration budget runs out. On
    budget exhaustion the (non-converged) trajectory is still returned unless
    ``raise_on_failure`` is set.
    """
    x = np.asarray(x0, dtype=float)
    p = np.asarray(p0, dtype=float)
    if isinstance(game, NonAtomicGame):
        game.check_feasible(x)
    elif not game.is_feasible(x):
        raise InvalidArgumentError("x0 is infeasible")
    rule = config.rule
    if rule.variant == "gradient" and rule.eta is None:
        rule = replace(rule, eta=resolve_eta(game, rule))
    record = TrajectoryRecord()
    sched = config.schedule
    hits = 0
    k = 0
    for k in range(config.max_iterations):
        f = strategy_target(game, x, p, rule)
        e = externality(game, x)
        if k % config.record_every == 0:
            residual = float(np.max(np.abs(f - x)) + np.max(np.abs(e - p)))
            record.append(k, x, p, residual, game.social(x))
            hits = hits + 1 if residual <= config.convergence_tol else 0
            if hits >= CONSECUTIVE_HITS:
                record.converged = True
                record.iterations = k
                return record
        x = (1.0 - sched.gamma(k)) * x + sched.gamma(k) * f
        p = (1.0 - sched.beta(k)) * p + sched.beta(k) * e
    residual = fixed_point_residual(game, x, p, rule)
    record.append(config.max_iterations, x, p, residual, game.social(x))
    record.iterations = config.max_iterations
    record.converged = residual <= config.convergence_tol
    if not record.converged and raise_on_failure:
        raise ConvergenceError("coupled dynamics exhausted the iteration budget",
                               best=(x, p), trajectory=record)
    return record
