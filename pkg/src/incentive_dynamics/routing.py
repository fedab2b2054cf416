"""Non-atomic routing games with edge tolls.

Tolled Wardrop equilibria are computed by minimizing the Beckmann potential
over the route-flow polytope with a Frank-Wolfe scheme; the system optimum
minimizes total latency cost with the same machinery. Marginal-cost tolls
``w_a * l_a'(w_a)`` make the two coincide.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .dynamics import RunConfig, TrajectoryRecord, resolve_eta
from .errors import (ConvergenceError, InconsistencyError, InvalidArgumentError,
                     SpecError)
from .games import NonAtomicGame, project_simplex

DEFAULT_GAP_TOL = 1e-10
MAX_PATH_NODES = 12


@dataclass(frozen=True)
class LatencyFunction:
    """Polynomial latency with nonnegative coefficients (ascending order)."""

    coeffs: tuple

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if not coeffs:
            raise SpecError("latency polynomial needs at least one coefficient")
        if any(c < 0 for c in coeffs):
            raise SpecError("latency coefficients must be nonnegative")
        object.__setattr__(self, "coeffs", coeffs)

    def value(self, w):
        return np.polynomial.polynomial.polyval(w, self.coeffs)

    def deriv(self, w):
        c = np.polynomial.polynomial.polyder(self.coeffs)
        return np.polynomial.polynomial.polyval(w, c) if c.size else np.zeros_like(np.asarray(w, float))

    def second_deriv(self, w):
        c = np.polynomial.polynomial.polyder(self.coeffs, 2)
        return np.polynomial.polynomial.polyval(w, c) if c.size else np.zeros_like(np.asarray(w, float))

    def integral(self, w):
        c = np.polynomial.polynomial.polyint(self.coeffs)
        return np.polynomial.polynomial.polyval(w, c)

    def strictly_increasing_on(self, hi: float, grid: int = 33) -> bool:
        ws = np.linspace(0.0, hi, grid)
        return bool(np.all(self.deriv(ws) > 0))


def affine_latency(c0: float, c1: float) -> LatencyFunction:
    return LatencyFunction((c0, c1))


@dataclass(frozen=True)
class OdPair:
    origin: object
    destination: object
    demand: float
    routes: tuple  # tuple of edge-index tuples


@dataclass(frozen=True)
class RoutingNetwork:
    nodes: tuple
    edges: tuple  # (tail, head, LatencyFunction)
    od_pairs: tuple
    relax_monotonicity: bool = False

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple((t, h, lat) for (t, h, lat) in self.edges)
        ods = tuple(self.od_pairs)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "od_pairs", ods)
        node_set = set(nodes)
        for t, h, _ in edges:
            if t not in node_set or h not in node_set:
                raise SpecError(f"edge ({t}, {h}) references unknown nodes")
        if not ods:
            raise SpecError("network needs at least one OD pair")
        total_demand = 0.0
        for od in ods:
            if od.demand <= 0:
                raise SpecError("OD demands must be strictly positive")
            if not od.routes:
                raise SpecError("every OD pair needs at least one route")
            total_demand += od.demand
            for route in od.routes:
                self._check_route(route, od)
        for _, _, lat in edges:
            if not lat.strictly_increasing_on(total_demand):
                if not self.relax_monotonicity:
                    raise SpecError("edge latencies must be strictly increasing; "
                                    "set relax_monotonicity for boundary cases")
            ws = np.linspace(0.0, total_demand, 33)
            if np.any(lat.second_deriv(ws) < 0):
                raise SpecError("edge latencies must be convex")
        inc = np.zeros((len(edges), sum(len(od.routes) for od in ods)))
        col = 0
        for od in ods:
            for route in od.routes:
                for a in route:
                    inc[a, col] += 1.0
                col += 1
        object.__setattr__(self, "incidence", inc)

    def _check_route(self, route, od: OdPair):
        if not route:
            raise SpecError("routes must contain at least one edge")
        current = od.origin
        for a in route:
            if not 0 <= a < len(self.edges):
                raise SpecError(f"route references unknown edge index {a}")
            tail, head, _ = self.edges[a]
            if tail != current:
                raise SpecError(f"route {route} is not a contiguous path from {od.origin}")
            current = head
        if current != od.destination:
            raise SpecError(f"route {route} does not end at {od.destination}")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_routes(self) -> int:
        return self.incidence.shape[1]

    @property
    def route_slices(self) -> list:
        out, start = [], 0
        for od in self.od_pairs:
            out.append(slice(start, start + len(od.routes)))
            start += len(od.routes)
        return out

    @property
    def demands(self) -> np.ndarray:
        return np.array([od.demand for od in self.od_pairs])

    def latency(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return np.array([lat.value(wa) for (_, _, lat), wa in zip(self.edges, w)])

    def latency_deriv(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return np.array([lat.deriv(wa) for (_, _, lat), wa in zip(self.edges, w)])

    def latency_second_deriv(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return np.array([lat.second_deriv(wa) for (_, _, lat), wa in zip(self.edges, w)])

    def check_route_flow(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_routes,):
            raise InvalidArgumentError("route flow has wrong length")
        if np.any(x < -1e-9):
            raise InvalidArgumentError("route flows must be nonnegative")
        for s, od in zip(self.route_slices, self.od_pairs):
            if abs(x[s].sum() - od.demand) > 1e-7 * max(1.0, od.demand):
                raise InvalidArgumentError("route flow violates an OD demand")
        return x

    def uniform_route_flow(self) -> np.ndarray:
        x = np.empty(self.n_routes)
        for s, od in zip(self.route_slices, self.od_pairs):
            x[s] = od.demand / len(od.routes)
        return x


def route_to_edge_flow(net: RoutingNetwork, x) -> np.ndarray:
    return net.incidence @ net.check_route_flow(x)


def route_tolls(net: RoutingNetwork, edge_tolls) -> np.ndarray:
    return net.incidence.T @ np.asarray(edge_tolls, dtype=float)


def route_costs(net: RoutingNetwork, w, edge_tolls=None) -> np.ndarray:
    c_edge = net.latency(w)
    if edge_tolls is not None:
        c_edge = c_edge + np.asarray(edge_tolls, dtype=float)
    return net.incidence.T @ c_edge


def beckmann_potential(net: RoutingNetwork, w, edge_tolls) -> float:
    w = np.asarray(w, dtype=float)
    integrals = sum(lat.integral(wa) for (_, _, lat), wa in zip(net.edges, w))
    return float(integrals + np.asarray(edge_tolls, float) @ w)


def total_latency_cost(net: RoutingNetwork, w) -> float:
    w = np.asarray(w, dtype=float)
    return float(w @ net.latency(w))


def edge_externality(net: RoutingNetwork, w) -> np.ndarray:
    """Marginal-cost toll per edge: w_a * l_a'(w_a)."""
    w = np.asarray(w, dtype=float)
    return w * net.latency_deriv(w)


# ---------------------------------------------------------------------------
# Convex flow programs (Frank-Wolfe with vertex-exchange steps)
# ---------------------------------------------------------------------------

def _exact_line_search(deriv, hi=1.0):
    """Minimizer of a convex scalar objective on [0, hi] via its derivative."""
    d0 = deriv(0.0)
    if d0 >= 0.0:
        return 0.0
    d1 = deriv(hi)
    if d1 <= 0.0:
        return hi
    return float(brentq(deriv, 0.0, hi, xtol=1e-15, rtol=8.9e-16))


def _solve_flow_program(net, edge_cost, objective, tol, x0, max_iter):
    """Minimize a convex separable edge objective over the route-flow polytope.

    ``edge_cost(w)`` must be the gradient of ``objective`` in edge flows.
    Each iteration combines the classic all-or-nothing direction with a
    per-OD vertex-exchange direction (mass shifted from the costliest active
    route to the cheapest route), whichever descends faster; the exchange
    steps restore fast convergence where plain Frank-Wolfe zigzags. Stops at
    relative duality gap <= tol.
    """
    inc = net.incidence
    x = net.uniform_route_flow() if x0 is None else net.check_route_flow(np.asarray(x0, float)).copy()
    w = inc @ x
    slices = net.route_slices
    demands = net.demands
    gap = np.inf
    for it in range(max_iter):
        c_edge = edge_cost(w)
        c_route = inc.T @ c_edge
        fw = np.zeros_like(x)
        gap = 0.0
        for s, m in zip(slices, demands):
            j = int(np.argmin(c_route[s]))
            fw[s.start + j] = m
            gap += float(c_route[s] @ x[s] - m * c_route[s][j])
        obj = objective(w)
        if gap <= tol * max(1.0, abs(obj)):
            return x, w, gap, it
        d_fw = fw - x
        d_ex = np.zeros_like(x)
        for s in slices:
            cs = c_route[s]
            best = int(np.argmin(cs))
            active = np.nonzero(x[s] > 0.0)[0]
            worst = int(active[np.argmax(cs[active])])
            if worst != best and cs[worst] > cs[best]:
                shift = x[s.start + worst]
                d_ex[s.start + worst] -= shift
                d_ex[s.start + best] += shift
        d = d_ex if float(c_route @ d_ex) < 0.0 else d_fw
        dw = inc @ d
        t = _exact_line_search(lambda t: float(dw @ edge_cost(w + t * dw)))
        if t <= 0.0:
            # exchange direction stalled on a kink; fall back to the FW vertex
            d = d_fw
            dw = inc @ d
            t = _exact_line_search(lambda t: float(dw @ edge_cost(w + t * dw)))
            if t <= 0.0:
                return x, w, gap, it
        x = np.maximum(x + t * d, 0.0)
        for s, m in zip(slices, demands):
            x[s] *= m / x[s].sum()
        w = inc @ x
    raise ConvergenceError("flow program did not close the duality gap",
                           best=(x, w), gap=gap)


def wardrop_equilibrium(net: RoutingNetwork, edge_tolls, tol: float = DEFAULT_GAP_TOL,
                        x0=None, max_iter: int = 200000):
    """Tolled user equilibrium; returns (route_flow, edge_flow).

    The edge flow is the unique Beckmann minimizer; the route flow is one of
    possibly many consistent decompositions.
    """
    p = np.asarray(edge_tolls, dtype=float)
    if p.shape != (net.n_edges,):
        raise InvalidArgumentError("edge toll vector has wrong length")
    cost = lambda w: net.latency(w) + p
    obj = lambda w: beckmann_potential(net, w, p)
    x, w, _, _ = _solve_flow_program(net, cost, obj, tol, x0, max_iter)
    return x, w


def system_optimum(net: RoutingNetwork, tol: float = DEFAULT_GAP_TOL,
                   x0=None, max_iter: int = 200000):
    """Total-latency-minimizing flow; returns (route_flow, edge_flow)."""
    cost = lambda w: net.latency(w) + w * net.latency_deriv(w)
    obj = lambda w: total_latency_cost(net, w)
    x, w, _, _ = _solve_flow_program(net, cost, obj, tol, x0, max_iter)
    return x, w


def optimal_edge_tolls(net: RoutingNetwork, tol: float = 1e-8) -> np.ndarray:
    """Marginal-cost tolls at the system optimum, cross-checked in equilibrium."""
    _, w_opt = system_optimum(net, tol=min(tol, DEFAULT_GAP_TOL))
    p = edge_externality(net, w_opt)
    _, w_eq = wardrop_equilibrium(net, p)
    if np.max(np.abs(w_eq - w_opt)) > max(tol, 1e-7):
        raise InconsistencyError(
            "tolled equilibrium does not reproduce the system optimum "
            f"(deviation {np.max(np.abs(w_eq - w_opt)):.3g})")
    return p


def nondegeneracy_check(net: RoutingNetwork, edge_tolls, tol: float = 1e-6,
                        n_starts: int = 8, seed: int = 0) -> str:
    """Do all minimum-cost routes carry flow at the tolled equilibrium?

    Returns "pass", "fail", or "indeterminate". Route-flow minimizers can be
    non-unique, so zero flow in one decomposition is inconclusive; several
    warm starts are probed before giving up.
    """
    rng = np.random.default_rng(seed)
    solutions = [wardrop_equilibrium(net, edge_tolls)[0]]
    for _ in range(n_starts - 1):
        x0 = np.empty(net.n_routes)
        for s, od in zip(net.route_slices, net.od_pairs):
            g = rng.exponential(size=len(od.routes))
            x0[s] = od.demand * g / g.sum()
        solutions.append(wardrop_equilibrium(net, edge_tolls, x0=x0)[0])

    def verdict(x):
        c = route_costs(net, net.incidence @ x, edge_tolls)
        for s in net.route_slices:
            cmin = c[s].min()
            min_cost = c[s] <= cmin + tol
            if np.any(min_cost & (x[s] <= tol)):
                return False
        return True

    if any(verdict(x) for x in solutions):
        return "pass"
    spread = max(float(np.max(np.abs(a - b)))
                 for a in solutions for b in solutions)
    return "fail" if spread <= tol else "indeterminate"


def delta_matrix(net: RoutingNetwork, w_opt) -> np.ndarray:
    """Diagonal certificate weights 1 / (l' + w l'') at the optimal flow."""
    w = np.asarray(w_opt, dtype=float)
    denom = net.latency_deriv(w) + w * net.latency_second_deriv(w)
    if np.any(denom <= 0):
        raise InvalidArgumentError(
            "nonpositive certificate denominator; latencies must be strictly "
            "increasing and convex at the optimum")
    return np.diag(1.0 / denom)


def flow_monotonicity_check(net: RoutingNetwork, p, p2, tol: float = DEFAULT_GAP_TOL) -> float:
    """(p - p') . (w*(p) - w*(p')); nonpositive for monotone latencies."""
    _, w1 = wardrop_equilibrium(net, p, tol=tol)
    _, w2 = wardrop_equilibrium(net, p2, tol=tol)
    diff = np.asarray(p, float) - np.asarray(p2, float)
    return float(diff @ (w1 - w2))


# ---------------------------------------------------------------------------
# Coupled toll adaptation
# ---------------------------------------------------------------------------

def _route_target(net: RoutingNetwork, x, w, edge_tolls, rule, eta):
    c = route_costs(net, w, edge_tolls)
    if rule.variant == "equilibrium":
        return wardrop_equilibrium(net, edge_tolls, x0=x)[0]
    if rule.variant == "best_response":
        out = np.zeros_like(x)
        for s, od in zip(net.route_slices, net.od_pairs):
            out[s.start + int(np.argmin(c[s]))] = od.demand
        return out
    out = np.empty_like(x)
    if rule.regularizer == "entropy":
        for s, od in zip(net.route_slices, net.od_pairs):
            z = -c[s] / eta
            z -= z.max()
            ez = np.exp(z)
            out[s] = od.demand * ez / ez.sum()
        return out
    for s, od in zip(net.route_slices, net.od_pairs):
        out[s] = project_simplex(x[s] - eta * c[s], od.demand)
    return out


def run_toll_adaptation(net: RoutingNetwork, x0, p0, config: RunConfig,
                        raise_on_failure: bool = False) -> TrajectoryRecord:
    """Coupled route-flow and edge-toll updates.

    The strategy residual is measured in edge flows (route decompositions of
    the same edge flow are interchangeable); the incentive residual compares
    the tolls with the marginal-cost externality of the current flow.
    """
    x = net.check_route_flow(np.asarray(x0, dtype=float)).copy()
    p = np.asarray(p0, dtype=float).copy()
    if p.shape != (net.n_edges,):
        raise InvalidArgumentError("edge toll vector has wrong length")
    rule = config.rule
    eta = None
    if rule.variant == "gradient":
        eta = rule.eta if rule.eta is not None else 0.9 / max(
            float(np.max(net.latency_deriv(np.full(net.n_edges, net.demands.sum()))))
            * net.incidence.shape[0], 1e-12)
    sched = config.schedule
    record = TrajectoryRecord()
    hits = 0
    w = net.incidence @ x
    for k in range(config.max_iterations):
        f = _route_target(net, x, w, p, rule, eta)
        e = edge_externality(net, w)
        if k % config.record_every == 0:
            residual = float(np.max(np.abs(net.incidence @ f - w)) + np.max(np.abs(e - p)))
            record.append(k, x, p, residual, total_latency_cost(net, w))
            hits = hits + 1 if residual <= config.convergence_tol else 0
            if hits >= 10:
                record.converged = True
                record.iterations = k
                return record
        x = (1.0 - sched.gamma(k)) * x + sched.gamma(k) * f
        p = (1.0 - sched.beta(k)) * p + sched.beta(k) * e
        w = net.incidence @ x
    f = _route_target(net, x, w, p, rule, eta)
    e = edge_externality(net, w)
    residual = float(np.max(np.abs(net.incidence @ f - w)) + np.max(np.abs(e - p)))
    record.append(config.max_iterations, x, p, residual, total_latency_cost(net, w))
    record.iterations = config.max_iterations
    record.converged = residual <= config.convergence_tol
    if not record.converged and raise_on_failure:
        raise ConvergenceError("toll adaptation exhausted the iteration budget",
                               best=(x, p), trajectory=record)
    return record


# ---------------------------------------------------------------------------
# Adapters and helpers
# ---------------------------------------------------------------------------

def nonatomic_view(net: RoutingNetwork) -> NonAtomicGame:
    """Route-level view of the routing game (per-route incentives)."""
    return NonAtomicGame(
        masses=net.demands,
        action_counts=tuple(len(od.routes) for od in net.od_pairs),
        action_cost=lambda x: route_costs(net, net.incidence @ np.asarray(x, float)),
        social=lambda x: total_latency_cost(net, net.incidence @ np.asarray(x, float)),
        social_grad=lambda x: net.incidence.T @ (
            net.latency(net.incidence @ np.asarray(x, float))
            + (net.incidence @ np.asarray(x, float))
            * net.latency_deriv(net.incidence @ np.asarray(x, float))),
    )


def certify_wardrop(net: RoutingNetwork, x, edge_tolls, tol: float = 1e-6):
    from .games import certify_nash_nonatomic
    return certify_nash_nonatomic(nonatomic_view(net), x, route_tolls(net, edge_tolls), tol)


def all_simple_paths(nodes, edges, origin, destination) -> list:
    """All simple directed paths as edge-index tuples (small networks only)."""
    if len(tuple(nodes)) > MAX_PATH_NODES:
        raise InvalidArgumentError(
            f"path enumeration is limited to {MAX_PATH_NODES} nodes")
    out_edges = {}
    for idx, (t, h, *_) in enumerate(edges):
        out_edges.setdefault(t, []).append((idx, h))
    paths = []

    def dfs(node, visited, prefix):
        if node == destination:
            paths.append(tuple(prefix))
            return
        for idx, nxt in out_edges.get(node, []):
            if nxt not in visited:
                dfs(nxt, visited | {nxt}, prefix + [idx])

    dfs(origin, {origin}, [])
    return sorted(paths)


# ---------------------------------------------------------------------------
# Builtin fixtures
# ---------------------------------------------------------------------------

def two_link_network() -> RoutingNetwork:
    """Two parallel unit-slope links shared by one unit of demand."""
    lat = LatencyFunction((0.0, 1.0))
    return RoutingNetwork(
        nodes=("S", "D"),
        edges=((("S"), ("D"), lat), (("S"), ("D"), lat)),
        od_pairs=(OdPair("S", "D", 1.0, ((0,), (1,))),),
    )


def pigou_network() -> RoutingNetwork:
    """Pigou's example: l1(w) = w against a constant l2 = 1."""
    return RoutingNetwork(
        nodes=("S", "D"),
        edges=(("S", "D", LatencyFunction((0.0, 1.0))),
               ("S", "D", LatencyFunction((1.0,)))),
        od_pairs=(OdPair("S", "D", 1.0, ((0,), (1,))),),
        relax_monotonicity=True,
    )


def braess_network() -> RoutingNetwork:
    """Four-node Braess network with a mildly congestible bridge."""
    edges = (
        ("s", "a", LatencyFunction((0.0, 1.0))),      # 0: s -> a
        ("a", "t", LatencyFunction((1.0,))),          # 1: a -> t
        ("s", "b", LatencyFunction((1.0,))),          # 2: s -> b
        ("b", "t", LatencyFunction((0.0, 1.0))),      # 3: b -> t
        ("a", "b", LatencyFunction((0.25, 0.01))),    # 4: bridge
    )
    return RoutingNetwork(
        nodes=("s", "a", "b", "t"),
        edges=edges,
        od_pairs=(OdPair("s", "t", 1.0, ((0, 1), (2, 3), (0, 4, 3))),),
        relax_monotonicity=True,
    )


FIXTURES = {
    "two_link": (two_link_network, "two parallel unit-slope links, unit demand"),
    "pigou": (pigou_network, "Pigou's example: linear link vs constant link"),
    "braess": (braess_network, "four-node Braess network with a congestible bridge"),
}


def load_fixture(name: str) -> RoutingNetwork:
    try:
        return FIXTURES[name][0]()
    except KeyError:
        raise InvalidArgumentError(f"unknown fixture {name!r}") from None


def network_from_json(data: dict) -> RoutingNetwork:
    nodes = tuple(data["nodes"])
    edges = tuple((e["tail"], e["head"], LatencyFunction(tuple(e["poly"])))
                  for e in data["edges"])
    ods = tuple(OdPair(od["o"], od["d"], float(od["demand"]),
                       tuple(tuple(r) for r in od["routes"]))
                for od in data["od"])
    return RoutingNetwork(nodes=nodes, edges=edges, od_pairs=ods,
                          relax_monotonicity=bool(data.get("relax_monotonicity", False)))
