import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incentive_dynamics import numdiff, routing
from incentive_dynamics.dynamics import RunConfig, StrategyUpdateRule
from incentive_dynamics.errors import (ConvergenceError, InvalidArgumentError,
                                       SpecError)
from incentive_dynamics.routing import (LatencyFunction, OdPair,
                                        RoutingNetwork, all_simple_paths,
                                        braess_network, delta_matrix,
                                        edge_externality,
                                        flow_monotonicity_check, load_fixture,
                                        network_from_json, nonatomic_view,
                                        optimal_edge_tolls, pigou_network,
                                        route_costs, route_to_edge_flow,
                                        run_toll_adaptation, system_optimum,
                                        total_latency_cost, two_link_network,
                                        wardrop_equilibrium)


def random_route_flow(net, rng):
    x = np.empty(net.n_routes)
    for s, od in zip(net.route_slices, net.od_pairs):
        g = rng.exponential(size=len(od.routes))
        x[s] = od.demand * g / g.sum()
    return x


# ---------------------------------------------------------------------------
# latency functions
# ---------------------------------------------------------------------------

def test_latency_polynomial_values():
    lat = LatencyFunction((1.0, 0.0, 0.0, 0.0, 1.0))  # 1 + w^4
    assert lat.value(1.0) == pytest.approx(2.0)
    assert lat.deriv(1.0) == pytest.approx(4.0)
    assert lat.second_deriv(1.0) == pytest.approx(12.0)
    assert lat.integral(1.0) == pytest.approx(1.2)


def test_latency_rejects_negative_coefficients():
    with pytest.raises(SpecError):
        LatencyFunction((1.0, -0.5))
    with pytest.raises(SpecError):
        LatencyFunction(())


def test_constant_latency_needs_relaxed_validation():
    lat_const = LatencyFunction((1.0,))
    with pytest.raises(SpecError):
        RoutingNetwork(nodes=("S", "D"),
                       edges=(("S", "D", lat_const),),
                       od_pairs=(OdPair("S", "D", 1.0, ((0,),)),))
    net = RoutingNetwork(nodes=("S", "D"), edges=(("S", "D", lat_const),),
                         od_pairs=(OdPair("S", "D", 1.0, ((0,),)),),
                         relax_monotonicity=True)
    assert net.n_edges == 1


def test_network_route_validation():
    lat = LatencyFunction((0.0, 1.0))
    with pytest.raises(SpecError):  # not contiguous
        RoutingNetwork(nodes=("a", "b", "c"),
                       edges=(("a", "b", lat), ("a", "c", lat)),
                       od_pairs=(OdPair("a", "c", 1.0, ((0, 1),)),))
    with pytest.raises(SpecError):  # wrong destination
        RoutingNetwork(nodes=("a", "b", "c"),
                       edges=(("a", "b", lat),),
                       od_pairs=(OdPair("a", "c", 1.0, ((0,),)),))
    with pytest.raises(SpecError):  # nonpositive demand
        RoutingNetwork(nodes=("a", "b"), edges=(("a", "b", lat),),
                       od_pairs=(OdPair("a", "b", 0.0, ((0,),)),))


# ---------------------------------------------------------------------------
# flows
# ---------------------------------------------------------------------------

def test_route_to_edge_flow_single_route():
    lat = LatencyFunction((0.0, 1.0))
    net = RoutingNetwork(nodes=("a", "b", "c"),
                         edges=(("a", "b", lat), ("b", "c", lat)),
                         od_pairs=(OdPair("a", "c", 1.0, ((0, 1),)),))
    np.testing.assert_allclose(route_to_edge_flow(net, [1.0]), [1.0, 1.0])


def test_route_to_edge_flow_two_link():
    net = two_link_network()
    np.testing.assert_allclose(route_to_edge_flow(net, [0.3, 0.7]), [0.3, 0.7])


def test_route_to_edge_flow_braess_incidence():
    net = braess_network()
    x = np.array([0.5, 0.5, 0.0])
    # routes: (0,1), (2,3), (0,4,3)
    expect = np.array([0.5, 0.5, 0.5, 0.5, 0.0])
    np.testing.assert_allclose(route_to_edge_flow(net, x), expect)
    inc = np.zeros((5, 3))
    for col, route in enumerate(net.od_pairs[0].routes):
        for a in route:
            inc[a, col] = 1.0
    np.testing.assert_allclose(net.incidence, inc)


def test_route_to_edge_flow_rejects_infeasible():
    net = two_link_network()
    with pytest.raises(InvalidArgumentError):
        route_to_edge_flow(net, [0.3, 0.3])
    with pytest.raises(InvalidArgumentError):
        route_to_edge_flow(net, [-0.1, 1.1])


# ---------------------------------------------------------------------------
# equilibrium and optimum
# ---------------------------------------------------------------------------

def test_wardrop_two_link():
    net = two_link_network()
    _, w = wardrop_equilibrium(net, np.zeros(2))
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-9)
    _, w = wardrop_equilibrium(net, np.array([2.0, 0.0]))
    np.testing.assert_allclose(w, [0.0, 1.0], atol=1e-9)


def test_wardrop_pigou_untolled():
    net = pigou_network()
    _, w = wardrop_equilibrium(net, np.zeros(2))
    np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-9)


def test_wardrop_certificate():
    rng = np.random.default_rng(5)
    for name in ("two_link", "pigou", "braess"):
        net = load_fixture(name)
        for _ in range(5):
            p = rng.uniform(-1, 2, net.n_edges)
            x, w = wardrop_equilibrium(net, p)
            view = nonatomic_view(net)
            ok, resid = __import__("incentive_dynamics.games", fromlist=["x"]) \
                .certify_nash_nonatomic(view, x, net.incidence.T @ p, 1e-8)
            assert ok, (name, p, resid)


def test_system_optimum_values():
    pigou = pigou_network()
    _, w = system_optimum(pigou)
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-9)
    assert total_latency_cost(pigou, w) == pytest.approx(0.75, abs=1e-9)
    two = two_link_network()
    _, w2 = system_optimum(two)
    np.testing.assert_allclose(w2, [0.5, 0.5], atol=1e-9)
    assert total_latency_cost(two, w2) == pytest.approx(0.5, abs=1e-9)


def test_system_optimum_single_route():
    lat = LatencyFunction((0.0, 1.0))
    net = RoutingNetwork(nodes=("a", "b"), edges=(("a", "b", lat),),
                         od_pairs=(OdPair("a", "b", 2.0, ((0,),)),))
    _, w = system_optimum(net)
    np.testing.assert_allclose(w, [2.0], atol=1e-12)


# ---------------------------------------------------------------------------
# externality and tolls
# ---------------------------------------------------------------------------

def test_edge_externality_values():
    net = pigou_network()
    np.testing.assert_allclose(edge_externality(net, np.zeros(2)), np.zeros(2))
    np.testing.assert_allclose(edge_externality(net, np.array([0.5, 0.5])),
                               [0.5, 0.0], atol=1e-12)


def test_optimal_edge_tolls_fixtures():
    np.testing.assert_allclose(optimal_edge_tolls(pigou_network()),
                               [0.5, 0.0], atol=1e-8)
    np.testing.assert_allclose(optimal_edge_tolls(two_link_network()),
                               [0.5, 0.5], atol=1e-8)


def test_optimal_edge_tolls_reproduce_optimum():
    for name in ("two_link", "pigou", "braess"):
        net = load_fixture(name)
        p = optimal_edge_tolls(net)
        _, w_opt = system_optimum(net)
        np.testing.assert_allclose(p, w_opt * net.latency_deriv(w_opt),
                                   atol=1e-10)
        _, w_eq = wardrop_equilibrium(net, p)
        np.testing.assert_allclose(w_eq, w_opt, atol=1e-6)


def test_nondegeneracy_two_link():
    net = two_link_network()
    assert routing.nondegeneracy_check(net, np.array([0.5, 0.5])) == "pass"


def test_nondegeneracy_dominated_route_does_not_block():
    # second link strictly dominated at its whole flow range
    lat1 = LatencyFunction((0.0, 1.0))
    lat2 = LatencyFunction((5.0, 1.0))
    net = RoutingNetwork(nodes=("S", "D"),
                         edges=(("S", "D", lat1), ("S", "D", lat2)),
                         od_pairs=(OdPair("S", "D", 1.0, ((0,), (1,))),))
    assert routing.nondegeneracy_check(net, np.zeros(2)) == "pass"


def test_delta_matrix_values():
    pigou = pigou_network()
    with pytest.raises(InvalidArgumentError):
        delta_matrix(pigou, np.array([0.5, 0.5]))  # constant link has zero slope
    two = two_link_network()
    np.testing.assert_allclose(delta_matrix(two, np.array([0.5, 0.5])),
                               np.eye(2), atol=1e-12)
    quartic = RoutingNetwork(
        nodes=("S", "D"),
        edges=(("S", "D", LatencyFunction((1.0, 0.0, 0.0, 0.0, 1.0))),),
        od_pairs=(OdPair("S", "D", 1.0, ((0,),)),),
        relax_monotonicity=True)  # quartic slope vanishes at w = 0
    np.testing.assert_allclose(delta_matrix(quartic, np.array([1.0])),
                               [[1.0 / 16.0]], atol=1e-12)
    affine = RoutingNetwork(
        nodes=("S", "D"), edges=(("S", "D", LatencyFunction((3.0, 2.0))),),
        od_pairs=(OdPair("S", "D", 1.0, ((0,),)),))
    np.testing.assert_allclose(delta_matrix(affine, np.array([0.77])),
                               [[0.5]], atol=1e-12)


# ---------------------------------------------------------------------------
# adaptation
# ---------------------------------------------------------------------------

def test_toll_adaptation_starts_at_optimum():
    net = two_link_network()
    p = np.array([0.5, 0.5])
    x = np.array([0.5, 0.5])
    cfg = RunConfig(max_iterations=50, convergence_tol=1e-6)
    rec = run_toll_adaptation(net, x, p, cfg)
    assert rec.converged and rec.residuals[0] <= 1e-6


def test_toll_adaptation_pigou():
    net = pigou_network()
    cfg = RunConfig(max_iterations=4000, convergence_tol=1e-4)
    rec = run_toll_adaptation(net, net.uniform_route_flow(), np.zeros(2), cfg)
    assert rec.converged
    np.testing.assert_allclose(rec.final_p, [0.5, 0.0], atol=1e-3)


def test_toll_adaptation_two_link():
    net = two_link_network()
    cfg = RunConfig(max_iterations=4000, convergence_tol=1e-4)
    rec = run_toll_adaptation(net, net.uniform_route_flow(), np.zeros(2), cfg)
    assert rec.converged
    np.testing.assert_allclose(rec.final_p, [0.5, 0.5], atol=1e-3)


def test_toll_adaptation_route_flow_stays_feasible():
    net = braess_network()
    cfg = RunConfig(max_iterations=200, convergence_tol=1e-12,
                    rule=StrategyUpdateRule("best_response"))
    rec = run_toll_adaptation(net, net.uniform_route_flow(),
                              np.zeros(net.n_edges), cfg)
    for x in rec.xs:
        net.check_route_flow(x)


# ---------------------------------------------------------------------------
# lemmas
# ---------------------------------------------------------------------------

def test_monotonicity_values():
    net = two_link_network()
    assert flow_monotonicity_check(net, np.zeros(2), np.zeros(2)) == pytest.approx(0.0, abs=1e-9)
    val = flow_monotonicity_check(net, np.array([1.0, 0.0]), np.zeros(2))
    assert val == pytest.approx(-0.5, abs=1e-8)


def test_social_cost_identity_random_flows():
    rng = np.random.default_rng(11)
    for name in ("two_link", "pigou", "braess"):
        net = load_fixture(name)
        view = nonatomic_view(net)
        for _ in range(10):
            x = random_route_flow(net, rng)
            w = route_to_edge_flow(net, x)
            lhs = float(x @ view.action_cost(x))
            rhs = total_latency_cost(net, w)
            assert lhs == pytest.approx(rhs, abs=1e-10)


def test_route_externality_aggregation():
    rng = np.random.default_rng(13)
    for name in ("two_link", "pigou", "braess"):
        net = load_fixture(name)
        view = nonatomic_view(net)
        x = random_route_flow(net, rng)
        w = route_to_edge_flow(net, x)
        fd = numdiff.central_gradient(view.social, x) - view.action_cost(x)
        expect = net.incidence.T @ (w * net.latency_deriv(w))
        np.testing.assert_allclose(fd, expect, rtol=1e-5, atol=1e-5)


# ---------------------------------------------------------------------------
# helpers, fixtures, serialization
# ---------------------------------------------------------------------------

def test_all_simple_paths_braess():
    net = braess_network()
    paths = all_simple_paths(net.nodes, net.edges, "s", "t")
    assert sorted(paths) == sorted([(0, 1), (2, 3), (0, 4, 3)])


def test_all_simple_paths_node_limit():
    nodes = tuple(range(13))
    with pytest.raises(InvalidArgumentError):
        all_simple_paths(nodes, (), 0, 12)


def test_load_fixture_unknown():
    with pytest.raises(InvalidArgumentError):
        load_fixture("mystery")


def test_network_from_json():
    data = {
        "nodes": ["S", "D"],
        "edges": [{"tail": "S", "head": "D", "poly": [0.0, 1.0]},
                  {"tail": "S", "head": "D", "poly": [0.0, 1.0]}],
        "od": [{"o": "S", "d": "D", "demand": 1.0, "routes": [[0], [1]]}],
    }
    net = network_from_json(data)
    _, w = wardrop_equilibrium(net, np.zeros(2))
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-9)


@given(st.floats(-1, 2), st.floats(-1, 2))
@settings(max_examples=30, deadline=None)
def test_monotonicity_property_two_link(p1, p2):
    net = two_link_network()
    val = flow_monotonicity_check(net, np.array([p1, p2]), np.array([p2, p1]))
    assert val <= 1e-8
