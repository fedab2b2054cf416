"""Atomic and non-atomic games: costs, externalities, certification.

An atomic game has finitely many players, each choosing a scalar strategy in a
closed interval. A non-atomic game has populations of infinitesimal players
distributing mass over finite action sets. The system operator charges a
marginal payment per unit of strategy (atomic) or a per-action payment
(non-atomic); the externality of a strategy is the gap between its marginal
effect on the social cost and on the player's own cost.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import numdiff
from .errors import ConvergenceError, EvaluationError, InvalidArgumentError, SpecError

DEFAULT_CERT_TOL = 1e-6
MASS_TOL = 1e-8

Array = np.ndarray
VectorOracle = Callable[[Array], Array]
ScalarOracle = Callable[[Array], float]


def _as_vector(v, name: str) -> Array:
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def project_interval(x: Array, lower: Array, upper: Array) -> Array:
    return np.minimum(np.maximum(x, lower), upper)


def project_simplex(v: Array, mass: float = 1.0) -> Array:
    """Euclidean projection onto the scaled simplex {y >= 0, sum(y) = mass}."""
    v = np.asarray(v, dtype=float)
    if mass <= 0:
        raise InvalidArgumentError("simplex mass must be positive")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - mass
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u * idx > css)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass(frozen=True)
class AtomicGame:
    """Oracle-backed atomic game.

    ``loss(x)`` returns the vector of player costs, ``loss_grad(x)`` the
    own-strategy partials (d loss_i / d x_i). ``equilibrium`` and
    ``best_response`` are optional closed forms; numeric fallbacks are used
    when absent. Immutable; all operations are pure.
    """

    lower: Array
    upper: Array
    loss: VectorOracle
    loss_grad: VectorOracle
    social: ScalarOracle
    social_grad: VectorOracle
    equilibrium: Optional[Callable[[Array], Array]] = None
    best_response: Optional[Callable[[Array, Array], Array]] = None
    lipschitz_bound: Optional[float] = None

    def __post_init__(self):
        lower = _as_vector(self.lower, "lower")
        upper = _as_vector(self.upper, "upper")
        if lower.shape != upper.shape:
            raise SpecError("strategy bounds must have matching shapes")
        if np.any(lower > upper):
            raise SpecError("every strategy interval needs lower <= upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n_players(self) -> int:
        return self.lower.size

    def project(self, x: Array) -> Array:
        return project_interval(np.asarray(x, dtype=float), self.lower, self.upper)

    def is_feasible(self, x: Array, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(x.shape == self.lower.shape
                    and np.all(x >= self.lower - tol)
                    and np.all(x <= self.upper + tol))

    def initial_point(self, rng: np.random.Generator | None = None) -> Array:
        rng = rng or np.random.default_rng(0)
        x = rng.standard_normal(self.n_players)
        return self.project(x)


@dataclass(frozen=True)
class NonAtomicGame:
    """Oracle-backed non-atomic game over a product of mass-scaled simplexes.

    Strategy distributions are stored flat: the block of population ``i``
    occupies ``slices[i]`` and sums to ``masses[i]``. ``action_cost`` returns
    the flat vector of per-action costs.
    """

    masses: Array
    action_counts: tuple
    action_cost: VectorOracle
    social: ScalarOracle
    social_grad: VectorOracle
    equilibrium: Optional[Callable[[Array], Array]] = None

    def __post_init__(self):
        masses = _as_vector(self.masses, "masses")
        counts = tuple(int(c) for c in self.action_counts)
        if np.any(masses <= 0):
            raise SpecError("population masses must be strictly positive")
        if len(counts) != masses.size or any(c < 1 for c in counts):
            raise SpecError("need one action count >= 1 per population")
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "action_counts", counts)

    @property
    def n_populations(self) -> int:
        return self.masses.size

    @property
    def dim(self) -> int:
        return sum(self.action_counts)

    @property
    def slices(self) -> list:
        out, start = [], 0
        for c in self.action_counts:
            out.append(slice(start, start + c))
            start += c
        return out

    def project(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for s, m in zip(self.slices, self.masses):
            out[s] = project_simplex(x[s], m)
        return out

    def is_feasible(self, x: Array, tol: float = MASS_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,) or np.any(x < -tol):
            return False
        for s, m in zip(self.slices, self.masses):
            if abs(x[s].sum() - m) > max(tol, tol * m):
                return False
        return True

    def check_feasible(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if not self.is_feasible(x):
            raise InvalidArgumentError("strategy distribution violates mass/nonnegativity")
        return x

    def uniform_point(self) -> Array:
        parts = [np.full(c, m / c) for c, m in zip(self.action_counts, self.masses)]
        return np.concatenate(parts)

    def random_point(self, rng: np.random.Generator) -> Array:
        parts = []
        for c, m in zip(self.action_counts, self.masses):
            g = rng.exponential(size=c)
            parts.append(m * g / g.sum())
        return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Costs and externalities
# ---------------------------------------------------------------------------

def total_cost_atomic(game: AtomicGame, x: Array, p: Array, i: int) -> float:
    x = _as_vector(x, "x")
    p = _as_vector(p, "p")
    if x.size != game.n_players or p.size != game.n_players:
        raise InvalidArgumentError("x and p must have one entry per player")
    if not 0 <= i < game.n_players:
        raise InvalidArgumentError(f"player index {i} out of range")
    return float(game.loss(x)[i] + p[i] * x[i])


def total_cost_nonatomic(game: NonAtomicGame, x: Array, p: Array, i: int, j: int) -> float:
    x = game.check_feasible(x)
    p = _as_vector(p, "p")
    if p.size != game.dim:
        raise InvalidArgumentError("p must have one entry per (population, action)")
    if not 0 <= i < game.n_populations or not 0 <= j < game.action_counts[i]:
        raise InvalidArgumentError(f"invalid (population, action) index ({i}, {j})")
    k = game.slices[i].start + j
    return float(game.action_cost(x)[k] + p[k])


def _checked(values: Array, what: str) -> Array:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise EvaluationError(f"{what} oracle returned non-finite values")
    return values


def externality_atomic(game: AtomicGame, x: Array) -> Array:
    """Per-player gap between marginal social cost and own marginal cost."""
    x = np.asarray(x, dtype=float)
    return _checked(game.social_grad(x), "social gradient") - _checked(game.loss_grad(x), "loss gradient")


def externality_nonatomic(game: NonAtomicGame, x: Array) -> Array:
    x = np.asarray(x, dtype=float)
    return _checked(game.social_grad(x), "social gradient") - _checked(game.action_cost(x), "action cost")


# ---------------------------------------------------------------------------
# Equilibrium / optimality certification
# ---------------------------------------------------------------------------

def certify_nash_atomic(game: AtomicGame, x: Array, p: Array, tol: float = DEFAULT_CERT_TOL):
    """Projected-gradient residual of the equilibrium variational inequality.

    Returns ``(ok, residual)`` with residual in the sup norm.
    """
    x = _as_vector(x, "x")
    p = _as_vector(p, "p")
    if x.size != game.n_players or p.size != game.n_players:
        raise InvalidArgumentError("dimension mismatch in certify_nash_atomic")
    g = game.loss_grad(x) + p
    residual = float(np.max(np.abs(x - game.project(x - g))))
    return residual <= tol, residual


def certify_nash_nonatomic(game: NonAtomicGame, x: Array, p: Array, tol: float = DEFAULT_CERT_TOL):
    """Checks that every action carrying mass is within tol of minimal cost."""
    x = game.check_feasible(x)
    c = np.asarray(game.action_cost(x), float) + _as_vector(p, "p")
    residual = 0.0
    for s, m in zip(game.slices, game.masses):
        cs = c[s]
        cmin = cs.min()
        active = x[s] > tol * m
        if np.any(active):
            residual = max(residual, float(cs[active].max() - cmin))
    return residual <= tol, residual


def projected_gradient_residual(grad: Array, x: Array, project) -> float:
    return float(np.max(np.abs(x - project(x - grad))))


def certify_social_optimum(game, x: Array, tol: float = DEFAULT_CERT_TOL):
    """First-order certificate for a candidate social-cost minimizer."""
    x = np.asarray(x, dtype=float)
    residual = projected_gradient_residual(np.asarray(game.social_grad(x), float), x, game.project)
    return residual <= tol, residual


def social_optimum(game, tol: float = 1e-8, max_iter: int = 20000) -> Array:
    """Minimize the social cost by projected gradient descent with backtracking."""
    if isinstance(game, NonAtomicGame):
        x = game.uniform_point()
    else:
        lo = np.where(np.isfinite(game.lower), game.lower, 0.0)
        hi = np.where(np.isfinite(game.upper), game.upper, 0.0)
        x = game.project(0.5 * (lo + hi))
    step = 1.0
    fx = float(game.social(x))
    for _ in range(max_iter):
        g = np.asarray(game.social_grad(x), float)
        if projected_gradient_residual(g, x, game.project) <= tol:
            return x
        t = step
        for _ in range(60):
            cand = game.project(x - t * g)
            fc = float(game.social(cand))
            d = cand - x
            if fc <= fx + float(g @ d) + 0.5 / t * float(d @ d) + 1e-15:
                break
            t *= 0.5
        else:
            raise ConvergenceError("backtracking failed in social_optimum", best=x)
        x, fx = cand, fc
        step = min(t * 2.0, 1e8)
    raise ConvergenceError("social_optimum did not reach tolerance", best=x)


# ---------------------------------------------------------------------------
# Best responses and equilibrium solvers
# ---------------------------------------------------------------------------

def best_response_atomic(game: AtomicGame, x: Array, p: Array) -> Array:
    if game.best_response is not None:
        return game.project(np.asarray(game.best_response(x, p), float))
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(game.n_players):
        def c_i(y, i=i):
            z = x.copy()
            z[i] = y
            return float(game.loss(z)[i] + p[i] * y)

        lo, hi = game.lower[i], game.upper[i]
        if np.isfinite(lo) and np.isfinite(hi):
            res = minimize_scalar(c_i, bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-12})
        else:
            # two-point bracket: scipy expands it downhill automatically
            res = minimize_scalar(c_i, bracket=(x[i] - 1.0, x[i] + 1.0))
        out[i] = np.clip(res.x, lo, hi)
    return out


def best_response_nonatomic(game: NonAtomicGame, x: Array, p: Array) -> Array:
    """All mass on a minimal-cost action per population (ties: lowest index)."""
    c = np.asarray(game.action_cost(x), float) + np.asarray(p, float)
    out = np.zeros(game.dim)
    for s, m in zip(game.slices, game.masses):
        out[s.start + int(np.argmin(c[s]))] = m
    return out


def logit_response(game: NonAtomicGame, x: Array, p: Array, temperature: float) -> Array:
    """Perturbed (entropy-regularized) best response."""
    if temperature <= 0:
        raise InvalidArgumentError("logit temperature must be positive")
    c = np.asarray(game.action_cost(x), float) + np.asarray(p, float)
    out = np.empty(game.dim)
    for s, m in zip(game.slices, game.masses):
        z = -c[s] / temperature
        z -= z.max()
        w = np.exp(z)
        out[s] = m * w / w.sum()
    return out


def solve_equilibrium_atomic(game: AtomicGame, p: Array, tol: float = 1e-10,
                             x0: Array | None = None, max_iter: int = 5000) -> Array:
    if game.equilibrium is not None:
        return np.asarray(game.equilibrium(np.asarray(p, float)), float)
    p = np.asarray(p, float)
    x = game.project(np.zeros(game.n_players) if x0 is None else np.asarray(x0, float))
    eta = 1.0
    _, res = certify_nash_atomic(game, x, p, tol)
    for _ in range(max_iter):
        if res <= tol:
            return x
        cand = game.project(x - eta * (np.asarray(game.loss_grad(x), float) + p))
        _, res_c = certify_nash_atomic(game, cand, p, tol)
        if res_c <= res:
            x, res = cand, res_c
        else:
            eta *= 0.5
            if eta < 1e-12:
                f = best_response_atomic(game, x, p)
                x = 0.5 * x + 0.5 * f
                _, res = certify_nash_atomic(game, x, p, tol)
                eta = 1.0
    raise ConvergenceError("atomic equilibrium iteration stalled", best=x)


def solve_equilibrium_nonatomic(game: NonAtomicGame, p: Array, tol: float = 1e-10,
                                x0: Array | None = None, max_iter: int = 200000) -> Array:
    """Projected fixed-point iteration on x = Proj(x - eta (c(x) + p)).

    The step is halved whenever the equilibrium-certificate residual stops
    improving; if it underflows, one averaged best-response step restarts the
    search. Linear convergence for strongly monotone cost maps.
    """
    if game.equilibrium is not None:
        return np.asarray(game.equilibrium(np.asarray(p, float)), float)
    p = np.asarray(p, float)
    x = game.uniform_point() if x0 is None else game.project(np.asarray(x0, float))
    eta = 1.0
    ok, res = certify_nash_nonatomic(game, x, p, tol)
    for k in range(max_iter):
        if res <= tol:
            return x
        cand = game.project(x - eta * (np.asarray(game.action_cost(x), float) + p))
        _, res_c = certify_nash_nonatomic(game, cand, p, tol)
        if res_c <= res:
            x, res = cand, res_c
        else:
            eta *= 0.5
            if eta < 1e-12:
                f = best_response_nonatomic(game, x, p)
                x = x + (2.0 / (k + 3.0)) * (f - x)
                _, res = certify_nash_nonatomic(game, x, p, tol)
                eta = 1.0
    raise ConvergenceError("non-atomic equilibrium iteration stalled", best=x)
