"""Event-driven queue simulation of one day, with dynamically dispatched SAVs.

Cars and SAVs share the link queues.  A link holds vehicles in entry order;
the head may leave once its free-flow time has elapsed, the link's outflow
budget has a full unit, and the next link has free storage.  Walk and PT legs
are teleported.  Time is integer seconds; events at equal times are processed
in scheduling order, so a run is fully deterministic.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .events import EventStream
from .kernels import INF
from .network import shortest_path
from .savfleet import (CellGrid, DemandIndex, Dispatcher, DispatchParams, Fleet,
                       RebalanceParams, Request, rebalance, seed_fleet)
from .scoring import DAY, FareScheme, LegExperience, PlanExperience, fare

# heap item codes
_EXIT, _ACT_END, _TELEPORT, _STOP_END, _DEPART_RETRY, _REBALANCE = range(6)


@dataclass
class MobsimParams:
    sample_rate: float = 1.0
    walk_speed: float = 1.34
    pt_speed: float = 6.7
    pt_wait: int = 300
    beeline_factor: float = 1.3
    horizon: int = 36 * 3600

    def __post_init__(self):
        if not 0 < self.sample_rate <= 1:
            raise ValueError("sample_rate must be in (0, 1]")


def teleport_time(mode: str, beeline_m: float, params: MobsimParams) -> int:
    if mode == "walk":
        return int(round(beeline_m * params.beeline_factor / params.walk_speed))
    if mode == "pt":
        return int(round(beeline_m * params.beeline_factor / params.pt_speed)) + params.pt_wait
    raise ValueError(f"mode {mode!r} is not teleported")


def teleport_leg(network, mode: str, origin_link: int, dest_link: int, depart_time: int,
                 params: MobsimParams | None = None) -> int:
    """Arrival time of a walk or PT leg."""
    params = params or MobsimParams()
    return depart_time + teleport_time(mode, network.beeline(origin_link, dest_link), params)


@dataclass
class SavService:
    fleet_size: int
    capacity: int
    depots: list  # link indices
    dispatch: DispatchParams = field(default_factory=DispatchParams)
    rebalance: RebalanceParams | None = None
    ridesharing: bool = True


@dataclass
class DayResult:
    events: EventStream
    experiences: list  # PlanExperience per person
    requests: list  # Request
    n_stuck: int
    fleet: Fleet | None
    traversals: tuple = ((), (), ())  # completed link traversals: links, entry times, durations


class QueueSim:
    def __init__(self, network, persons, plans, profile, skims=None, params: MobsimParams | None = None,
                 service: SavService | None = None, prev_events=None, parking=None,
                 fares: FareScheme | None = None, grid: CellGrid | None = None, plan_skims=None):
        self.net = network
        self.persons = persons
        self.plans = plans
        self.profile = profile
        self.skims = skims  # direct-trip estimates
        self.plan_skims = plan_skims or skims  # what the dispatcher plans with
        self.p = params or MobsimParams()
        self.service = service
        self.fares = fares or FareScheme()
        self.parking = parking  # bool per link, None = everywhere
        r = self.p.sample_rate
        nl = network.n_links
        self.cap_s = [float(c) * r / 3600.0 for c in network.flow_capacity]
        self.bmax = [max(1.0, c) for c in self.cap_s]
        self.budget = list(self.bmax)
        self.blast = [0] * nl
        self.storage = [max(1, int(math.floor(s * r + 1e-9))) for s in network.storage]
        self.ff = [int(x) for x in network.free_flow_tt]
        self.length = [float(x) for x in network.length]
        xy = network.node_x[network.link_to], network.node_y[network.link_to]
        self.lx, self.ly = xy[0].tolist(), xy[1].tolist()
        self._det = {}
        self.l_from = network.link_from.tolist()
        self.l_to = network.link_to.tolist()
        self.queue = [deque() for _ in range(nl)]
        self.pending = [-1] * nl
        self.waiters = [[] for _ in range(nl)]
        self.blocked = [False] * nl
        self.heap = []
        self.seq = 0

        n_p = len(persons)
        n_v = service.fleet_size if service else 0
        self.n_p = n_p
        nveh = n_p + n_v
        self.v_route = [None] * nveh
        self.v_pos = [0] * nveh
        self.v_link = [-1] * nveh
        self.v_exit = [0] * nveh
        self.v_entered = [0] * nveh
        self.tr_link, self.tr_enter, self.tr_dur = [], [], []
        self.v_on_net = [False] * nveh

        self.events = EventStream([p.id for p in persons],
                                  [f"car_{p.id}" for p in persons] + [f"sav_{k}" for k in range(n_v)],
                                  [l.id for l in network.links])
        self.ev = self.events.rows

        # person state
        self.cur = [0] * n_p  # index of current activity, or of the leg being travelled
        self.act_start = [[] for _ in range(n_p)]
        self.act_end = [[] for _ in range(n_p)]
        self.legs = [[] for _ in range(n_p)]
        self.leg_depart = [0] * n_p
        self.leg_req = [None] * n_p
        self.done = [False] * n_p
        self.active = n_p
        self.requests = []

        self.fleet = None
        if service:
            if skims is None:
                raise ValueError("SAV service needs skims")
            self.fleet = Fleet(seed_fleet(n_v, service.depots), service.capacity)
            self.dispatcher = Dispatcher(self.fleet, service.dispatch, service.ridesharing)
            self.sav_state = ["stay"] * n_v
            self.sav_since = [0] * n_v
            self.sav_target = [-1] * n_v
            self.sav_reloc = [False] * n_v
            self.sav_stop = [None] * n_v
            self.grid = None
            self.demand = None
            if service.rebalance:
                self.grid = grid or CellGrid(network, service.rebalance.cell_size)
                self.demand = DemandIndex(self.grid, prev_events)
            self.sav_variant = "sav_shared" if service.ridesharing else "sav_individual"
            self._est_lo = self._est_hi = -1  # time window of the cached bin
            self._est = None
            for v in range(n_v):
                self.ev.append((0, "task_start", -1, n_p + v, int(self.fleet.start_link[v]), -1, "task=stay"))

    # -- plumbing ------------------------------------------------------------

    def push(self, t, code, a, b=0):
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, code, a, b))

    def schedule_exit(self, link, t):
        pend = self.pending[link]
        if pend < 0 or t < pend:
            self.pending[link] = t
            self.seq += 1
            heapq.heappush(self.heap, (t, self.seq, _EXIT, link, 0))

    def run(self) -> DayResult:
        for p, plan in enumerate(self.plans):
            self.act_start[p].append(0)
            if len(plan.activities) == 1:
                self._finish(p)
            else:
                self.push(int(plan.activities[0].end_time), _ACT_END, p)
        if self.service and self.service.rebalance:
            self.push(self.service.rebalance.interval, _REBALANCE, 0)
        heap = self.heap
        horizon = self.p.horizon
        t = 0
        while heap:
            t, _, code, a, b = heapq.heappop(heap)
            if t > horizon:
                t = horizon
                break
            if code == _EXIT:
                if self.pending[a] != t:
                    continue
                self.pending[a] = -1
                self._try_exit(a, t)
            elif code == _ACT_END:
                self._end_activity(a, t)
            elif code == _TELEPORT:
                self._arrive(a, t)
            elif code == _STOP_END:
                self._stop_end(a, t)
            elif code == _DEPART_RETRY:
                self._try_depart(a, t)
            elif code == _REBALANCE:
                self._rebalance(t)
        n_stuck = self._strand(t)
        experiences = [self._experience(p) for p in range(self.n_p)]
        return DayResult(self.events, experiences, self.requests, n_stuck, self.fleet,
                         (self.tr_link, self.tr_enter, self.tr_dur))

    # -- links -----------------------------------------------------------------

    def _try_exit(self, link, t):
        q = self.queue[link]
        if not q:
            return
        v_exit = self.v_exit
        cap_s = self.cap_s[link]
        b = self.budget[link] + cap_s * (t - self.blast[link])
        if b > self.bmax[link]:
            b = self.bmax[link]
        self.blast[link] = t
        n_p = self.n_p
        queue, storage = self.queue, self.storage
        ev = self.ev
        v_entered = self.v_entered
        tr_link, tr_enter, tr_dur = self.tr_link, self.tr_enter, self.tr_dur
        while q:
            veh = q[0]
            if v_exit[veh] > t:
                self.schedule_exit(link, v_exit[veh])
                break
            if b < 1.0 - 1e-9:
                self.schedule_exit(link, t + max(1, math.ceil((1.0 - b) / cap_s - 1e-9)))
                break
            if veh >= n_p:
                nxt = self._next_link(veh, link, t)
            else:
                route = self.v_route[veh]
                k = self.v_pos[veh] + 1
                nxt = route[k] if k < len(route) else -1
            if nxt >= 0 and len(queue[nxt]) >= storage[nxt]:
                if not self.blocked[link]:
                    self.blocked[link] = True
                    self.waiters[nxt].append(link)
                break
            q.popleft()
            b -= 1.0
            ev.append((t, "link_leave", -1, veh, link, -1, ""))
            tr_link.append(link)
            entered = v_entered[veh]
            tr_enter.append(entered)
            tr_dur.append(t - entered)
            if self.waiters[link]:
                self._wake(link, t)
            if nxt >= 0:
                self.v_pos[veh] += 1
                self._enter(veh, nxt, t)
            else:
                self.v_on_net[veh] = False
                self.budget[link] = b
                self._vehicle_arrived(veh, link, t)
        self.budget[link] = b

    def _wake(self, link, t):
        w = self.waiters[link]
        if not w:
            return
        self.waiters[link] = []
        for up in w:
            if up >= 0:
                self.blocked[up] = False
                self.schedule_exit(up, t)
            else:
                self.push(t, _DEPART_RETRY, -up - 1)

    def _enter(self, veh, link, t):
        q = self.queue[link]
        q.append(veh)
        self.v_link[veh] = link
        self.v_on_net[veh] = True
        ex = t + self.ff[link]
        self.v_exit[veh] = ex
        self.v_entered[veh] = t
        self.ev.append((t, "link_enter", -1, veh, link, -1, ""))
        if len(q) == 1:
            self.schedule_exit(link, ex)
        if veh >= self.n_p:
            self._sav_estimate(veh - self.n_p, link, t)

    def _next_link(self, veh, link, t):
        if veh >= self.n_p:
            self._sav_check_target(veh - self.n_p, link, t)
        route = self.v_route[veh]
        k = self.v_pos[veh] + 1
        return route[k] if k < len(route) else -1

    def _depart_vehicle(self, veh, origin, route, t):
        self.v_link[veh] = origin
        self.v_route[veh] = route
        self.v_pos[veh] = -1
        self._try_depart(veh, t)

    def _try_depart(self, veh, t):
        origin = self.v_link[veh]
        if veh >= self.n_p:
            self._sav_check_target(veh - self.n_p, origin, t)
        route = self.v_route[veh]
        if not route:
            self._vehicle_arrived(veh, origin, t)
            return
        first = route[0]
        if len(self.queue[first]) >= self.storage[first]:
            self.waiters[first].append(-veh - 1)
            return
        self.v_pos[veh] = 0
        self._enter(veh, first, t)

    def _vehicle_arrived(self, veh, link, t):
        if veh < self.n_p:
            self._arrive(veh, t)
        else:
            self._sav_arrived(veh - self.n_p, link, t)

    # -- persons -------------------------------------------------------------

    def _detail(self, key, value):
        d = self._det.get((key, value))
        if d is None:
            d = self._det[(key, value)] = f"{key}={value}"
        return d

    def _beeline(self, a, b):
        return math.hypot(self.lx[a] - self.lx[b], self.ly[a] - self.ly[b])

    def _end_activity(self, p, t):
        plan = self.plans[p]
        k = self.cur[p]
        acts = plan.activities
        self.ev.append((t, "act_end", p, -1, acts[k].link, -1, self._detail("type", acts[k].type)))
        self.act_end[p].append(t)
        leg = plan.legs[k]
        o, d = acts[k].link, acts[k + 1].link
        self.leg_depart[p] = t
        self.ev.append((t, "depart", p, -1, o, -1, self._detail("mode", leg.mode)))
        mode = leg.mode
        if o == d:
            self.legs[p].append(LegExperience(mode, 0.0))
            self._arrive(p, t, record=False, mode=mode)
        elif mode in ("walk", "pt"):
            self.push(t + teleport_time(mode, self._beeline(o, d), self.p), _TELEPORT, p)
        elif mode == "car":
            route = leg.route
            if not route or route[-1] != d or self.l_from[route[0]] != self.l_to[o]:
                path = shortest_path(self.net, self.profile, o, d, t, "car")
                route = path.links
                leg.route = route
            self._depart_vehicle(p, o, list(route), t)
        elif mode == "sav":
            self._submit(p, o, d, t)
        else:
            raise ValueError(f"unknown mode {mode!r}")

    def _arrive(self, p, t, record=True, mode=None):
        plan = self.plans[p]
        k = self.cur[p]
        leg = plan.legs[k]
        acts = plan.activities
        dest = acts[k + 1].link
        dep = self.leg_depart[p]
        if record:
            mode = leg.mode
            req = self.leg_req[p]
            if mode == "car":
                km = sum(map(self.length.__getitem__, leg.route)) / 1000.0
                park = True if self.parking is None else bool(self.parking[dest])
                self.legs[p].append(LegExperience("car", t - dep, cost=fare(self.fares, "car", km),
                                                  parking_available=park))
            elif mode == "sav" and req is not None and req.status != "rejected":
                wait = req.pickup_time - req.t_sub
                ride = req.dropoff_time - req.pickup_time
                excess = 0.0
                if req.extended:
                    excess = max(0.0, ride - self.service.dispatch.detour_factor * req.tau_d)
                cost = fare(self.fares, self.sav_variant, req.dist_d / 1000.0)
                self.legs[p].append(LegExperience("sav", ride, wait, excess, cost))
            elif mode == "sav":
                # rejected: walked instead
                self.legs[p].append(LegExperience("walk", t - dep, rejected=True))
                mode = "walk"
            else:
                km = self._beeline(acts[k].link, dest) * self.p.beeline_factor / 1000.0
                self.legs[p].append(LegExperience(mode, t - dep, cost=fare(self.fares, mode, km)))
            self.leg_req[p] = None
        self.ev.append((t, "person_arrives", p, -1, dest, -1, self._detail("mode", mode)))
        k += 1
        self.cur[p] = k
        self.act_start[p].append(t)
        self.ev.append((t, "act_start", p, -1, dest, -1, self._detail("type", acts[k].type)))
        if k == len(acts) - 1:
            self._finish(p)
        else:
            self.push(max(t, int(acts[k].end_time)), _ACT_END, p)

    def _finish(self, p):
        self.done[p] = True
        self.active -= 1

    def _experience(self, p) -> PlanExperience:
        acts = self.plans[p].activities
        starts, ends = self.act_start[p], self.act_end[p]
        stuck = not self.done[p]
        out = []
        n = len(acts)
        if n == 1:
            return PlanExperience([(acts[0].type, float(DAY))], [], stuck)
        performed = len(ends)
        for k in range(performed):
            out.append([acts[k].type, float(ends[k] - starts[k])])
        if not stuck:
            tail = max(0, DAY - starts[-1])
            if acts[0].type == acts[-1].type and out:
                out[0][1] += tail
            else:
                out.append([acts[-1].type, float(tail)])
        return PlanExperience([tuple(x) for x in out], list(self.legs[p]), stuck)

    def _strand(self, t) -> int:
        n = 0
        for p in range(self.n_p):
            if self.done[p]:
                continue
            n += 1
            veh, link = -1, -1
            if self.v_on_net[p]:
                veh, link = p, self.v_link[p]
            self.ev.append((t, "person_stuck", p, veh, link, -1, ""))
        if self.fleet is not None:
            for v in range(self.fleet.n):
                veh = self.n_p + v
                if self.v_on_net[veh]:
                    self.ev.append((t, "person_stuck", -1, veh, self.v_link[veh], -1, ""))
        return n

    # -- SAV service -----------------------------------------------------------

    def _submit(self, p, o, d, t):
        svc = self.service
        if svc is None:
            raise ValueError("SAV leg in a scenario without SAV service")
        tau, dist = self.skims.direct(o, d, t)
        req = Request(len(self.requests), p, o, d, t, tau, dist)
        self.requests.append(req)
        self.leg_req[p] = req
        self.ev.append((t, "request_submitted", p, -1, o, req.id, f"tau={tau};dist={dist}"))
        ins = self.dispatcher.submit(req, t, self.plan_skims)
        if ins is None:
            self.ev.append((t, "request_rejected", p, -1, o, req.id, ""))
            self.push(t + teleport_time("walk", self._beeline(o, d), self.p), _TELEPORT, p)
            return
        self.ev.append((t, "request_scheduled", p, self.n_p + ins.vehicle, o, req.id,
                        f"ext={int(ins.extended)}"))
        if self.sav_state[ins.vehicle] == "stay":
            v = ins.vehicle
            self.ev.append((t, "task_end", -1, self.n_p + v, int(self.fleet.start_link[v]), -1, "task=stay"))
            self._sav_next(v, t)

    def _sav_next(self, v, t):
        """Vehicle is free at its current link: start the next task."""
        f = self.fleet
        here = int(f.start_link[v])
        veh = self.n_p + v
        if f.stops[v]:
            if f.stops[v][0].link == here:
                self._begin_stop(v, t)
            else:
                self.sav_state[v] = "drive"
                self.sav_reloc[v] = False
                target = f.stops[v][0].link
                self.sav_target[v] = target
                self.ev.append((t, "task_start", -1, veh, here, -1, "task=drive;purpose=service"))
                self._depart_vehicle(veh, here, self.plan_skims.route(here, target, t), t)
        else:
            self.sav_state[v] = "stay"
            self.sav_since[v] = t
            f.set_position(v, here, t)
            self.ev.append((t, "task_start", -1, veh, here, -1, "task=stay"))

    def _sav_check_target(self, v, link, t):
        """Apply a pending diversion when the vehicle is at a link boundary."""
        stops = self.fleet.stops[v]
        if stops:
            want = stops[0].link
            if self.sav_reloc[v]:
                veh = self.n_p + v
                self.ev.append((t, "task_end", -1, veh, link, -1, "task=drive;purpose=relocation"))
                self.ev.append((t, "task_start", -1, veh, link, -1, "task=drive;purpose=service"))
                self.sav_reloc[v] = False
        else:
            want = self.sav_target[v]
        if want != self.sav_target[v] or self.v_route[self.n_p + v] is None:
            self.sav_target[v] = want
            self.v_route[self.n_p + v] = self.plan_skims.route(link, want, t)
            self.v_pos[self.n_p + v] = -1

    def _sav_estimate(self, v, link, t):
        if not self._est_lo <= t < self._est_hi:
            prof = self.profile
            b = prof.bin_of(t)
            self._est_lo = b * prof.bin_width
            self._est_hi = (b + 1) * prof.bin_width if b < prof.n_bins - 1 else INF
            times, _, cost = self.plan_skims.for_bin(b)
            self._est = (times, cost.tolist())
        times, cost = self._est
        est = t + cost[link]
        f = self.fleet
        f.start_link[v] = link
        f.start_time[v] = est
        stops = f.stops[v]
        if stops:
            nxt = stops[0].link
            if nxt == link:
                f.reestimate(v, est)
            else:
                tt = times[self.l_to[link], self.l_from[nxt]]
                if tt < INF:
                    f.reestimate(v, est + int(tt) + cost[nxt])

    def _sav_arrived(self, v, link, t):
        veh = self.n_p + v
        if self.sav_reloc[v]:
            self.ev.append((t, "task_end", -1, veh, link, -1, "task=drive;purpose=relocation"))
            self.sav_reloc[v] = False
            self.fleet.set_position(v, link, t)
            self._sav_next(v, t)
            return
        self.ev.append((t, "task_end", -1, veh, link, -1, "task=drive;purpose=service"))
        self.fleet.set_position(v, link, t)
        self._begin_stop(v, t)

    def _begin_stop(self, v, t):
        f = self.fleet
        veh = self.n_p + v
        dur = self.service.dispatch.stop_duration
        stop = f.begin_stop(v, t, self.service.dispatch)
        self.sav_state[v] = "stop"
        self.sav_stop[v] = stop
        self.ev.append((t, "task_start", -1, veh, stop.link, -1, "task=stop"))
        for r in stop.dropoffs:
            r.dropoff_time = t
            r.set_status("completed")
            self.ev.append((t, "passenger_dropoff", r.person, veh, stop.link, r.id, ""))
            self._arrive(r.person, t)
        self.push(t + dur, _STOP_END, v)

    def _stop_end(self, v, t):
        veh = self.n_p + v
        stop = self.sav_stop[v]
        self.sav_stop[v] = None
        self.ev.append((t, "task_end", -1, veh, stop.link, -1, "task=stop"))
        for r in stop.pickups:
            r.pickup_time = t
            r.set_status("picked_up")
            self.ev.append((t, "passenger_pickup", r.person, veh, stop.link, r.id, ""))
        self._sav_next(v, t)

    def _rebalance(self, t):
        rp = self.service.rebalance
        if self.active > 0:
            self.push(t + rp.interval, _REBALANCE, 0)
        f = self.fleet
        idle = [(v, int(f.start_link[v])) for v in range(f.n)
                if self.sav_state[v] == "stay" and t - self.sav_since[v] >= rp.idle_threshold
                and f.is_idle(v)]
        if not idle:
            return
        moves = rebalance(idle, self.demand.estimate(t, rp.horizon), self.grid)
        for v, target in moves:
            veh = self.n_p + v
            here = int(f.start_link[v])
            self.ev.append((t, "task_end", -1, veh, here, -1, "task=stay"))
            self.ev.append((t, "relocation_start", -1, veh, here, -1, f"target={self.net.links[target].id}"))
            self.ev.append((t, "task_start", -1, veh, here, -1, "task=drive;purpose=relocation"))
            self.sav_state[v] = "drive"
            self.sav_reloc[v] = True
            self.sav_target[v] = target
            self._depart_vehicle(veh, here, self.plan_skims.route(here, target, t), t)


def run_day(network, persons, plans, profile, skims=None, params=None, service=None,
            prev_events=None, parking=None, fares=None, grid=None, plan_skims=None) -> DayResult:
    return QueueSim(network, persons, plans, profile, skims, params, service, prev_events,
                    parking, fares, grid, plan_skims).run()
