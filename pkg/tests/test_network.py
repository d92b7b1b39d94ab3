import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from savsim import kernels
from savsim.network import (Link, NetworkError, Node, Skims, TravelTimeProfile, build_network,
                            free_flow_profile, grid_city, profile_from_traversals, read_network, shortest_path,
                            update_travel_times, write_network)


def two_node(length=100.0, lanes=1):
    return build_network([Node("a", 0, 0), Node("b", length, 0)],
                         [Link("ab", "a", "b", length, 10.0, 600.0, lanes)])


def test_storage_from_length():
    assert two_node(100.0).storage[0] == 13
    assert two_node(5.0).storage[0] == 1
    assert two_node(100.0, lanes=2).storage[0] == 26


def test_dangling_node_rejected():
    with pytest.raises(NetworkError, match="unknown node 'Z'"):
        build_network([Node("a", 0, 0)], [Link("x", "Z", "a", 10, 1, 1)])


@pytest.mark.parametrize("field,value", [("length", 0.0), ("free_speed", -1.0), ("flow_capacity", 0.0)])
def test_nonpositive_attributes_rejected(field, value):
    kw = dict(id="ab", from_node="a", to_node="b", length=10.0, free_speed=1.0, flow_capacity=1.0)
    kw[field] = value
    with pytest.raises(NetworkError):
        build_network([Node("a", 0, 0), Node("b", 1, 0)], [Link(**kw)])


def triangle():
    # A->B->C is faster than the direct A->C
    nodes = [Node("S", -100, 0), Node("A", 0, 0), Node("B", 100, 100), Node("C", 200, 0), Node("T", 300, 0)]
    links = [Link("sa", "S", "A", 100, 10, 900), Link("ab", "A", "B", 141, 14.1, 900),
             Link("bc", "B", "C", 141, 14.1, 900), Link("ac", "A", "C", 200, 5, 900),
             Link("ct", "C", "T", 100, 10, 900)]
    return build_network(nodes, links)


def test_same_link_is_zero_path():
    net = triangle()
    p = shortest_path(net, free_flow_profile(net), 0, 0, 100)
    assert p.links == () and p.travel_time == 0 and p.distance == 0


def test_triangle_prefers_two_link_detour():
    net = triangle()
    p = shortest_path(net, free_flow_profile(net), net.link_index["sa"], net.link_index["ct"], 0)
    ids = [net.links[l].id for l in p.links]
    assert ids == ["ab", "bc", "ct"]
    assert p.travel_time == 10 + 10 + 10
    assert p.distance == pytest.approx(141 + 141 + 100)


def test_isolated_component_unreachable():
    nodes = [Node("a", 0, 0), Node("b", 1, 0), Node("c", 5, 0), Node("d", 6, 0)]
    links = [Link("ab", "a", "b", 10, 1, 1), Link("cd", "c", "d", 10, 1, 1)]
    net = build_network(nodes, links)
    p = shortest_path(net, free_flow_profile(net), 0, 1, 0)
    assert not p.reachable


def test_update_travel_times_examples():
    net = two_node(50.0)  # free flow 5 s
    assert np.allclose(update_travel_times(net, []).times, 5.0)
    ev = [(0, "link_enter", -1, 0, 0), (10, "link_leave", -1, 0, 0),
          (5, "link_enter", -1, 1, 0), (25, "link_leave", -1, 1, 0)]
    prof = update_travel_times(net, sorted(ev))
    assert prof.times[0, 0] == pytest.approx(15.0)
    fast = [(0, "link_enter", -1, 0, 0), (4, "link_leave", -1, 0, 0)]
    assert update_travel_times(net, fast).times[0, 0] == pytest.approx(5.0)


def test_leave_without_enter_is_rejected():
    net = two_node()
    with pytest.raises(ValueError, match="without link_enter"):
        update_travel_times(net, [(3, "link_leave", -1, 0, 0)])


def test_network_files_roundtrip(tmp_path):
    nodes, links = grid_city(3, 100.0)
    net = build_network(nodes, links)
    write_network(net, tmp_path)
    back = read_network(tmp_path)
    assert [l.id for l in back.links] == [l.id for l in net.links]
    assert np.array_equal(back.storage, net.storage)


def test_missing_network_file_named(tmp_path):
    with pytest.raises(NetworkError, match="nodes.csv"):
        read_network(tmp_path)


# --------------------------------------------------------------------------
# router optimality against exhaustive path enumeration

@st.composite
def random_instance(draw):
    n = draw(st.integers(3, 8))
    m = draw(st.integers(n, 3 * n))
    nodes = [Node(f"v{i}", float(i * 10), float((i * 7) % 5)) for i in range(n)]
    links = []
    bins = 3
    times = []
    for k in range(m):
        a = draw(st.integers(0, n - 1))
        b = draw(st.integers(0, n - 1).filter(lambda x, a=a: x != a))
        length = draw(st.integers(10, 300))
        links.append(Link(f"e{k}", f"v{a}", f"v{b}", float(length), 10.0, 600.0))
        base = max(1.0, length / 10.0)
        # nondecreasing bin costs keep the profile FIFO
        incs = draw(st.lists(st.integers(0, 40), min_size=bins - 1, max_size=bins - 1))
        times.append(np.concatenate([[base], base + np.cumsum(incs)]))
    net = build_network(nodes, links)
    prof = TravelTimeProfile(np.array(times, dtype=float), net.free_flow_time.copy(), 60)
    o = draw(st.integers(0, m - 1))
    d = draw(st.integers(0, m - 1))
    t0 = draw(st.integers(0, 150))
    return net, prof, o, d, t0


def enumerate_best(net, prof, o, d, t0):
    """Minimum arrival over all simple link paths, evaluating each link at entry time."""
    costs = prof.int_costs()
    start, goal = int(net.link_to[o]), int(net.link_from[d])
    best = math.inf
    out = {}
    for k in range(net.n_links):
        out.setdefault(int(net.link_from[k]), []).append(k)

    def dfs(node, t, seen):
        nonlocal best
        if node == goal:
            best = min(best, t + costs[d, prof.bin_of(t)] - t0)
        for k in out.get(node, []):
            v = int(net.link_to[k])
            if v in seen:
                continue
            dfs(v, t + costs[k, prof.bin_of(t)], seen | {v})

    if o == d:
        return 0
    dfs(start, t0, {start})
    return best


@settings(max_examples=300, deadline=None)
@given(random_instance())
def test_router_matches_exhaustive_enumeration(inst):
    net, prof, o, d, t0 = inst
    p = shortest_path(net, prof, o, d, t0)
    expect = enumerate_best(net, prof, o, d, t0)
    if math.isinf(expect):
        assert not p.reachable
    else:
        assert p.reachable and p.travel_time == expect
        # continuity: consecutive links share a node
        chain = [o] + list(p.links)
        for a, b in zip(chain, chain[1:]):
            assert net.link_to[a] == net.link_from[b]
        assert p.distance == pytest.approx(sum(net.length[l] for l in p.links))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 8000), st.integers(0, 400)),
                max_size=40))
def test_profile_never_below_free_flow(trav):
    nodes, links = grid_city(2, 100.0)
    net = build_network(nodes, links)
    events = []
    for veh, (link, t, dur) in enumerate(trav):
        events.append((t, "link_enter", -1, veh, link))
        events.append((t + dur, "link_leave", -1, veh, link))
    events.sort(key=lambda e: (e[0], e[1] == "link_leave"))
    prof = update_travel_times(net, events)
    assert (prof.times >= net.free_flow_time[:, None] - 1e-12).all()
    direct = profile_from_traversals(net, [t[0] for t in trav], [t[1] for t in trav],
                                     [t[2] for t in trav])
    assert np.allclose(direct.times, prof.times)


def test_all_pairs_backends_agree():
    nodes, links = grid_city(6, 250.0)
    net = build_network(nodes, links)
    rng = np.random.default_rng(3)
    cost = rng.integers(1, 60, size=net.n_links).astype(np.int64)
    out_ptr, out_links = net.csr("sav")
    a = kernels._all_pairs_dijkstra(out_ptr, out_links, net.link_to, net.length_m, cost)
    b = kernels._all_pairs_floyd(out_ptr, out_links, net.link_to, net.length_m, cost)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_skims_direct_equals_matrix_leg():
    nodes, links = grid_city(5, 300.0)
    net = build_network(nodes, links)
    prof = free_flow_profile(net)
    sk = Skims(net, prof, margin=2)
    pairs = [(0, 17), (3, 40), (12, 12), (55, 2)]
    direct = [sk.direct(a, b, 0) for a, b in pairs]
    matrix = [sk.leg(a, b, 0) for a, b in pairs]
    assert direct == matrix
    route = sk.route(0, 17, 0)
    assert sum(int(prof.int_costs()[l, 0]) + 2 for l in route) == matrix[0][0]
