from collections import defaultdict

import pytest
from hypothesis import given, settings, strategies as st

from savsim.mobsim import MobsimParams, SavService, run_day, teleport_time
from savsim.network import Link, Node, Skims, build_network, free_flow_profile, grid_city
from savsim.population import Activity, Leg, Person, Plan
from savsim.savfleet import DispatchParams


def person(i, car=True):
    return Person(f"p{i}", 35, "f", 2, "employed", car)


def line(n_links=4, length=100.0, speed=10.0, capacity=3600.0, lanes=1):
    nodes = [Node(f"n{i}", i * length, 0.0) for i in range(n_links + 1)]
    links = [Link(f"l{i}", f"n{i}", f"n{i + 1}", length, speed, capacity, lanes) for i in range(n_links)]
    return build_network(nodes, links)


def commute(o, d, mode, t, route=None):
    return Plan([Activity("home", o, t), Activity("work", d, None)], [Leg(mode, route)])


def test_teleport_examples():
    p = MobsimParams()
    assert teleport_time("walk", 0.0, p) == 0
    assert teleport_time("walk", 1000.0, p) == 970
    assert teleport_time("pt", 5000.0, p) == 1270


def test_single_walker_triple():
    net = line()
    res = run_day(net, [person(0, False)], [commute(0, 3, "walk", 100)], free_flow_profile(net))
    kinds = [r[1] for r in res.events.rows if r[1] != "act_start"]
    assert kinds == ["act_end", "depart", "person_arrives"]
    arrive = res.events.rows[-2]
    assert arrive[1] == "person_arrives"
    assert arrive[0] == 100 + teleport_time("walk", net.beeline(0, 3), MobsimParams())


def test_same_link_trip_is_instant():
    net = line()
    res = run_day(net, [person(0)], [commute(2, 2, "car", 50)], free_flow_profile(net))
    assert [r[0] for r in res.events.rows if r[1] == "person_arrives"] == [50]


def test_car_free_flow_timing():
    net = line()  # 10 s per link
    res = run_day(net, [person(0)], [commute(0, 3, "car", 0, (1, 2, 3))], free_flow_profile(net))
    arr = [r[0] for r in res.events.rows if r[1] == "person_arrives"]
    assert arr == [30]
    assert res.experiences[0].legs[0].in_vehicle_time == 30


def test_simultaneous_entries_spaced_by_capacity():
    net = line(capacity=3600.0)
    persons = [person(0), person(1)]
    plans = [commute(0, 3, "car", 0, (1, 2, 3)), commute(0, 3, "car", 0, (1, 2, 3))]
    res = run_day(net, persons, plans, free_flow_profile(net))
    leaves = [r[0] for r in res.events.rows if r[1] == "link_leave" and r[4] == 1]
    assert len(leaves) == 2 and leaves[1] - leaves[0] >= 1


def test_storage_blocks_upstream():
    # a 5 m link holds one vehicle; slow exit keeps it occupied
    nodes = [Node("a", 0, 0), Node("b", 100, 0), Node("c", 105, 0), Node("d", 205, 0)]
    links = [Link("in", "a", "b", 100, 10, 3600), Link("tiny", "b", "c", 5, 0.05, 3600),
             Link("out", "c", "d", 100, 10, 3600)]
    net = build_network(nodes, links)
    assert net.storage[1] == 1
    persons = [person(i) for i in range(3)]
    plans = [commute(0, 2, "car", 0, (1, 2)) for _ in persons]
    res = run_day(net, persons, plans, free_flow_profile(net))
    check_link_occupancy(res, net)
    enters = [r[0] for r in res.events.rows if r[1] == "link_enter" and r[4] == 1]
    assert enters[1] >= enters[0] + 100  # second waits for the first to leave


def check_link_occupancy(res, net, rate=1.0):
    occ = defaultdict(int)
    for r in res.events.rows:
        if r[1] == "link_enter":
            occ[r[4]] += 1
            assert occ[r[4]] <= max(1, int(net.storage[r[4]] * rate + 1e-9))
        elif r[1] == "link_leave":
            occ[r[4]] -= 1
            assert occ[r[4]] >= 0


def random_day(seed, n=60, rate=1.0):
    import numpy as np
    rng = np.random.default_rng(seed)
    nodes, links = grid_city(4, 200.0, local_capacity=300.0, arterial_capacity=600.0)
    net = build_network(nodes, links)
    prof = free_flow_profile(net)
    persons, plans = [], []
    for i in range(n):
        o, d = (int(x) for x in rng.integers(0, net.n_links, 2))
        persons.append(person(i))
        plans.append(commute(o, d, "car", int(rng.integers(0, 600))))
    return net, run_day(net, persons, plans, prof, params=MobsimParams(sample_rate=rate))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_queue_invariants(seed):
    net, res = random_day(seed)
    check_link_occupancy(res, net)
    entered, left = defaultdict(list), defaultdict(list)
    exits = defaultdict(list)
    for r in res.events.rows:
        if r[1] == "link_enter":
            entered[r[4]].append(r[3])
        elif r[1] == "link_leave":
            left[r[4]].append(r[3])
            exits[r[4]].append(r[0])
    # FIFO per link and conservation
    for link, vs in left.items():
        assert vs == entered[link][:len(vs)]
    assert sum(map(len, entered.values())) == sum(map(len, left.values()))
    # flow: at most floor(cap * w) + 1 exits in any window of w seconds
    for link, ts in exits.items():
        cap_s = net.flow_capacity[link] / 3600.0
        for i in range(len(ts)):
            for j in range(i, len(ts)):
                assert j - i + 1 <= int(cap_s * (ts[j] - ts[i])) + 1


def test_sampled_storage_scales():
    net, res = random_day(5, rate=0.5)
    check_link_occupancy(res, net, rate=0.5)


def test_determinism_bytes():
    _, a = random_day(11)
    _, b = random_day(11)
    assert a.events.to_csv_text() == b.events.to_csv_text()


# --------------------------------------------------------------------------
# SAV

def sav_setup(fleet=1, depots=None, ridesharing=True):
    nodes, links = grid_city(5, 300.0)
    net = build_network(nodes, links)
    prof = free_flow_profile(net)
    skims = Skims(net, prof)
    svc = SavService(fleet, 4, depots or [0], DispatchParams(), ridesharing=ridesharing)
    return net, prof, skims, svc


def test_idle_vehicle_starts_immediately_and_stops_60s():
    net, prof, skims, svc = sav_setup()
    res = run_day(net, [person(0, False)], [commute(20, 35, "sav", 100)], prof, skims, service=svc)
    rows = res.events.rows
    sub = next(r for r in rows if r[1] == "request_submitted")
    starts = [r for r in rows if r[1] == "task_start" and r[0] > 0]
    assert starts[0][0] == sub[0] and starts[0][6] == "task=drive;purpose=service"
    stops = [r for r in rows if r[1] in ("task_start", "task_end") and r[6] == "task=stop"]
    for a, b in zip(stops[::2], stops[1::2]):
        assert b[0] - a[0] == 60
    pick = next(r for r in rows if r[1] == "passenger_pickup")
    drop = next(r for r in rows if r[1] == "passenger_dropoff")
    req = res.requests[0]
    assert req.status == "completed"
    assert pick[0] == req.pickup_time and drop[0] == req.dropoff_time
    assert drop[0] - pick[0] <= svc.dispatch.max_ride(req.tau_d)


def test_diversion_waits_for_link_boundary():
    net, prof, skims, svc = sav_setup(depots=[0])
    persons = [person(0, False), person(1, False)]
    plans = [commute(60, 70, "sav", 0), commute(net.link_index["n0_1-n0_2"], 70, "sav", 5)]
    res = run_day(net, persons, plans, prof, skims, service=svc)
    rows = res.events.rows
    sav = len(persons)
    moves = [r for r in rows if r[3] == sav and r[1] in ("link_enter", "link_leave")]
    t_second = 5
    before = [r for r in moves if r[0] <= t_second]
    on_link = before[-1][4]
    assert before[-1][1] == "link_enter"
    nxt = next(r for r in moves if r[0] > t_second)
    # the link in progress is completed before any change of route
    assert nxt[1] == "link_leave" and nxt[4] == on_link
    for a, b in zip(moves, moves[1:]):
        if a[1] == "link_leave" and b[1] == "link_enter":
            assert net.link_to[a[4]] == net.link_from[b[4]]
    assert all(r.status == "completed" for r in res.requests)


def test_rejected_request_walks():
    net, prof, skims, svc = sav_setup(depots=[0])
    svc.dispatch = DispatchParams(max_wait=1)
    res = run_day(net, [person(0, False)], [commute(70, 75, "sav", 0)], prof, skims, service=svc)
    kinds = [r[1] for r in res.events.rows]
    assert "request_rejected" in kinds and "passenger_pickup" not in kinds
    leg = res.experiences[0].legs[0]
    assert leg.mode == "walk" and leg.rejected
    arr = next(r for r in res.events.rows if r[1] == "person_arrives")
    assert arr[6] == "mode=walk"


def test_sav_run_is_deterministic():
    def go():
        net, prof, skims, svc = sav_setup(fleet=3, depots=[0, 30, 60])
        import numpy as np
        rng = np.random.default_rng(2)
        persons, plans = [], []
        for i in range(25):
            o, d = (int(x) for x in rng.integers(0, net.n_links, 2))
            persons.append(person(i, False))
            plans.append(commute(o, d, "sav", int(rng.integers(0, 1800))))
        return run_day(net, persons, plans, prof, skims, service=svc).events.to_csv_text()
    assert go() == go()
