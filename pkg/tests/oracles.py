"""Independent reference implementations used by the unit and acceptance tests.

Nothing here calls the compiled kernels: leg times come from scipy's
Dijkstra and schedules are recomputed from scratch for every candidate.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from savsim.network import build_network, grid_city
from savsim.savfleet import DispatchParams, Fleet, Request, Stop

STOP = 60
W = 900


def node_times(net, cost):
    # parallel links: keep the cheapest
    dense = np.full((net.n_nodes, net.n_nodes), np.inf)
    for k in range(net.n_links):
        a, b = net.link_from[k], net.link_to[k]
        dense[a, b] = min(dense[a, b], cost[k])
    dense[~np.isfinite(dense)] = 0
    return dijkstra(csr_matrix(dense), directed=True)


def make_leg(net, cost):
    d = node_times(net, cost)

    def leg(a, b):
        if a == b:
            return 0
        return int(d[net.link_to[a], net.link_from[b]]) + int(cost[b])
    return leg


def within_ride(ride, tau):
    # ride <= 1.3 tau, in exact integers
    return 10 * ride <= 13 * tau


@dataclass
class OVehicle:
    link: int
    start: int
    cap: int
    onboard: list = field(default_factory=list)  # request keys
    seq: list = field(default_factory=list)  # (link, "P"/"D", key)


@dataclass
class OReq:
    t_sub: int
    tau: int
    extended: bool
    pick: int | None = None  # fixed pickup time if onboard
    origin: int = -1
    dest: int = -1


def evaluate(veh: OVehicle, seq, reqs, leg):
    """Arrival per stop, pickup and dropoff times, and end of work."""
    t, here = veh.start, veh.link
    arr = []
    pick = {k: reqs[k].pick for k in veh.onboard}
    drop = {}
    for link, kind, key in seq:
        t += leg(here, link)
        arr.append(t)
        if kind == "P":
            pick[key] = t + STOP
        else:
            drop[key] = t
        t += STOP
        here = link
    return pick, drop, t


def occupancy_ok(veh, seq):
    occ = len(veh.onboard)
    if occ > veh.cap:
        return False
    for _, kind, _ in seq:
        occ += 1 if kind == "P" else -1
        if occ > veh.cap:
            return False
    return True


def brute_insertion(vehicles, reqs, new: OReq, leg, ridesharing=True, allow_ext=True):
    """Best (tier, dwork) insertion by exhaustive recompute; first in scan order wins."""
    best = None
    for v, veh in enumerate(vehicles):
        if not ridesharing and (veh.seq or veh.onboard):
            continue
        old_pick, old_drop, old_end = evaluate(veh, veh.seq, reqs, leg)
        n = len(veh.seq)
        for i in range(n + 1):
            for j in range(i, n + 1):
                seq = (veh.seq[:i] + [(new.origin, "P", "new")] + veh.seq[i:j]
                       + [(new.dest, "D", "new")] + veh.seq[j:])
                if not occupancy_ok(veh, seq):
                    continue
                all_reqs = dict(reqs)
                all_reqs["new"] = new
                pick, drop, end = evaluate(veh, seq, all_reqs, leg)
                if pick["new"] - new.t_sub > W:
                    continue
                ride = drop["new"] - pick["new"]
                if within_ride(ride, new.tau):
                    tier = 0
                elif allow_ext:
                    tier = 1
                else:
                    continue
                ok = True
                for k in old_drop:
                    r = reqs[k]
                    if r.pick is None and pick[k] > old_pick[k] and pick[k] > r.t_sub + W:
                        ok = False
                    nr, orr = drop[k] - pick[k], old_drop[k] - old_pick[k]
                    if not r.extended and nr > orr and not within_ride(nr, r.tau):
                        ok = False
                if not ok:
                    continue
                key = (tier, end - old_end)
                if best is None or key < best[0]:
                    best = (key, (v, i, j, end - old_end, tier, pick["new"], drop["new"]))
    return None if best is None else best[1]


# --------------------------------------------------------------------------
# random insertion instances

_NET = None


def small_network():
    global _NET
    if _NET is None:
        nodes, links = grid_city(4, 200.0)
        _NET = build_network(nodes, links)
    return _NET


def random_insertion_instance(rng: np.random.Generator):
    net = small_network()
    cost = rng.integers(5, 60, size=net.n_links).astype(np.int64)
    leg = make_leg(net, cost)
    now = 10_000
    cap = int(rng.choice([2, 4, 6]))
    n_veh = int(rng.integers(1, 4))
    n_req = int(rng.integers(0, 5))
    vehicles = [OVehicle(int(rng.integers(net.n_links)), now + int(rng.integers(0, 120)), cap)
                for _ in range(n_veh)]
    reqs = {}
    for k in range(n_req):
        v = vehicles[int(rng.integers(n_veh))]
        o, d = (int(x) for x in rng.integers(net.n_links, size=2))
        tau = max(1, leg(o, d))
        r = OReq(now - int(rng.integers(0, 700)), tau, bool(rng.random() < 0.15), origin=o, dest=d)
        reqs[k] = r
        onboard = rng.random() < 0.4 and len(v.onboard) < cap
        if onboard:
            r.pick = now - int(rng.integers(0, 300))
            v.onboard.append(k)
            pos = int(rng.integers(len(v.seq) + 1))
            v.seq.insert(pos, (d, "D", k))
        else:
            a = int(rng.integers(len(v.seq) + 1))
            v.seq.insert(a, (o, "P", k))
            b = int(rng.integers(a + 1, len(v.seq) + 1))
            v.seq.insert(b, (d, "D", k))
    for v in vehicles:
        if not occupancy_ok(v, v.seq):
            # drop the schedule rather than bias the generator
            for _, kind, key in v.seq:
                reqs.pop(key, None)
            v.seq, v.onboard = [], []
    o, d = (int(x) for x in rng.integers(net.n_links, size=2))
    new = OReq(now, max(1, leg(o, d)), False, origin=o, dest=d)
    ridesharing = bool(rng.random() < 0.85)
    return SimpleNamespace(net=net, cost=cost, leg=leg, now=now, vehicles=vehicles, reqs=reqs,
                           new=new, ridesharing=ridesharing)


def load_fleet(inst, params: DispatchParams):
    """Mirror an oracle instance into a :class:`Fleet` with consistent stop times."""
    vehicles, reqs = inst.vehicles, inst.reqs
    fleet = Fleet([v.link for v in vehicles], [v.cap for v in vehicles])
    objs = {}
    for k, r in reqs.items():
        o = Request(k, k, r.origin, r.dest, r.t_sub, r.tau, 0, extended=r.extended)
        objs[k] = o
    for vi, v in enumerate(vehicles):
        fleet.start_time[vi] = v.start
        fleet.onboard[vi] = [(objs[k], reqs[k].pick) for k in v.onboard]
        stops = []
        for link, kind, key in v.seq:
            s = Stop(link)
            (s.pickups if kind == "P" else s.dropoffs).append(objs[key])
            stops.append(s)
        fleet.stops[vi] = stops
        fleet._refresh(vi, params)
        t, here = v.start, v.link
        for k, (link, _, _) in enumerate(v.seq):
            t += inst.leg(here, link)
            fleet.stop_arr[vi, k] = t
            t += STOP
            here = link
    return fleet


def kernel_skims(inst):
    from savsim import kernels
    net = inst.net
    out_ptr, out_links = net.csr("sav")
    times, dists = kernels.all_pairs(out_ptr, out_links, net.link_to, net.length_m, inst.cost)
    return SimpleNamespace(network=net, at=lambda t: (times, dists, inst.cost))


# --------------------------------------------------------------------------
# transportation problem by enumeration

def brute_transport(supply, demand, cost):
    """Minimum cost over all integral plans shipping min(sum supply, sum demand)."""
    supply = [int(x) for x in supply]
    demand = [int(x) for x in demand]
    total = min(sum(supply), sum(demand))
    best = [None]

    def rec(a, residual, shipped, acc):
        if best[0] is not None and acc >= best[0]:
            return
        if a == len(supply):
            if shipped == total:
                best[0] = acc
            return
        for amounts in _splits(supply[a], residual):
            res2 = [r - x for r, x in zip(residual, amounts)]
            c = sum(int(cost[a][b]) * x for b, x in enumerate(amounts))
            rec(a + 1, res2, shipped + sum(amounts), acc + c)

    rec(0, demand, 0, 0)
    return total, best[0]


def _splits(units, caps):
    """All vectors x with 0 <= x <= caps and sum(x) <= units."""
    ranges = [range(min(units, c) + 1) for c in caps]
    for x in itertools.product(*ranges):
        if sum(x) <= units:
            yield x
