"""SAV requests, vehicle schedules, insertion dispatch and rebalancing.

Vehicle schedules live in fixed-width numpy arrays owned by :class:`Fleet` so
the insertion scan can run as one compiled kernel over the whole fleet.  The
Python-side ``stops`` lists stay index-aligned with those arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

STATUS_ORDER = {"submitted": 0, "scheduled": 1, "picked_up": 2, "completed": 3, "rejected": 1}


class FleetError(ValueError):
    pass


@dataclass
class DispatchParams:
    detour_factor: float = 1.3
    max_wait: int = 900
    stop_duration: int = 60
    extended_detour: bool = True

    def __post_init__(self):
        if self.detour_factor < 1:
            raise FleetError("detour_factor must be >= 1")
        if self.max_wait <= 0:
            raise FleetError("max_wait must be > 0")

    def max_ride(self, tau_d: int) -> int:
        # integer rides: ride <= a * tau  <=>  ride <= floor(a * tau)
        return int(math.floor(self.detour_factor * tau_d + 1e-9))


@dataclass
class RebalanceParams:
    cell_size: float = 1000.0
    interval: int = 300
    idle_threshold: int = 600
    horizon: int = 3600

    def __post_init__(self):
        for name in ("cell_size", "interval", "idle_threshold", "horizon"):
            if getattr(self, name) <= 0:
                raise FleetError(f"{name} must be > 0")


@dataclass(eq=False)
class Request:
    id: int
    person: int
    origin: int
    destination: int
    t_sub: int
    tau_d: int
    dist_d: int  # metres
    status: str = "submitted"
    vehicle: int = -1
    extended: bool = False
    pickup_time: int = -1
    dropoff_time: int = -1

    def set_status(self, new: str):
        if new == "rejected" and self.status != "submitted":
            raise FleetError(f"request {self.id}: cannot reject from {self.status!r}")
        if STATUS_ORDER[new] <= STATUS_ORDER[self.status] or self.status == "rejected":
            raise FleetError(f"request {self.id}: {self.status!r} -> {new!r} is not forward")
        self.status = new


@dataclass(eq=False)
class Stop:
    link: int
    pickups: list = field(default_factory=list)
    dropoffs: list = field(default_factory=list)


@dataclass(frozen=True)
class Insertion:
    vehicle: int
    pickup_idx: int
    dropoff_idx: int
    dwork: int
    extended: bool
    pickup_time: int
    dropoff_time: int
    shift_mid: int
    shift_after: int


def seed_fleet(fleet_size: int, depots) -> list[int]:
    """Start links: an even split over depots, remainder to the lowest indices."""
    depots = list(depots)
    if not depots:
        raise FleetError("at least one depot is required")
    base, extra = divmod(fleet_size, len(depots))
    starts = []
    for k, link in enumerate(depots):
        starts.extend([link] * (base + (1 if k < extra else 0)))
    return starts


class Fleet:
    def __init__(self, start_links, capacity, max_stops: int = 8, max_requests: int = 8):
        n = len(start_links)
        self.n = n
        self.capacity = np.broadcast_to(np.asarray(capacity, dtype=np.int64), (n,)).copy()
        self.start_link = np.asarray(start_links, dtype=np.int64).copy()
        self.start_time = np.zeros(n, dtype=np.int64)
        self.start_occ = np.zeros(n, dtype=np.int64)
        self.n_stops = np.zeros(n, dtype=np.int64)
        self.n_req = np.zeros(n, dtype=np.int64)
        self.candidate = np.ones(n, dtype=np.bool_)
        self._alloc_stops(max_stops)
        self._alloc_requests(max_requests)
        self.stops: list[list[Stop]] = [[] for _ in range(n)]
        self.onboard: list[list[tuple]] = [[] for _ in range(n)]  # (request, pickup time)
        self._first_arr = {}  # v -> re-estimated first-stop arrival, applied lazily by sync()

    def _alloc_stops(self, width):
        old = getattr(self, "stop_link", None)
        self.stop_link = np.full((self.n, width), -1, dtype=np.int64)
        self.stop_arr = np.zeros((self.n, width), dtype=np.int64)
        self.stop_occ = np.zeros((self.n, width), dtype=np.int64)
        if old is not None:
            w = old.shape[1]
            self.stop_link[:, :w] = old
            self.stop_arr[:, :w] = self._old_arr
            self.stop_occ[:, :w] = self._old_occ
        self._old_arr = self._old_occ = None

    def _grow_stops(self):
        self._old_arr, self._old_occ = self.stop_arr, self.stop_occ
        self._alloc_stops(self.stop_link.shape[1] * 2)

    def _alloc_requests(self, width):
        self.rq_pick = np.full((self.n, width), -1, dtype=np.int64)
        self.rq_drop = np.full((self.n, width), -1, dtype=np.int64)
        self.rq_latest = np.zeros((self.n, width), dtype=np.int64)
        self.rq_pick_time = np.zeros((self.n, width), dtype=np.int64)
        self.rq_max_ride = np.zeros((self.n, width), dtype=np.int64)

    # -- derived per-vehicle arrays ---------------------------------------

    def _refresh(self, v: int, params: DispatchParams):
        stops = self.stops[v]
        n = len(stops)
        self.n_stops[v] = n
        occ = len(self.onboard[v])
        self.start_occ[v] = occ
        where_pick, where_drop = {}, {}
        stop_link, stop_occ = self.stop_link[v], self.stop_occ[v]
        for k, s in enumerate(stops):
            stop_link[k] = s.link
            occ += len(s.pickups) - len(s.dropoffs)
            stop_occ[k] = occ
            for r in s.pickups:
                where_pick[r] = k
            for r in s.dropoffs:
                where_drop[r] = k
        reqs = [r for r, _ in self.onboard[v]] + [r for s in stops for r in s.pickups]
        if len(reqs) > self.rq_pick.shape[1]:
            old = self.rq_pick.shape[1]
            saved = [a.copy() for a in (self.rq_pick, self.rq_drop, self.rq_latest,
                                        self.rq_pick_time, self.rq_max_ride)]
            self._alloc_requests(max(2 * old, len(reqs)))
            for dst, src in zip((self.rq_pick, self.rq_drop, self.rq_latest,
                                 self.rq_pick_time, self.rq_max_ride), saved):
                dst[:, :old] = src
        pick_times = dict(self.onboard[v])
        rq_pick, rq_drop, rq_latest = self.rq_pick[v], self.rq_drop[v], self.rq_latest[v]
        rq_pick_time, rq_max_ride = self.rq_pick_time[v], self.rq_max_ride[v]
        for k, r in enumerate(reqs):
            rq_pick[k] = where_pick.get(r, -1)
            rq_drop[k] = where_drop[r]
            rq_latest[k] = r.t_sub + params.max_wait
            rq_pick_time[k] = pick_times.get(r, 0)
            rq_max_ride[k] = -1 if r.extended else params.max_ride(r.tau_d)
        self.n_req[v] = len(reqs)

    # -- schedule mutation -------------------------------------------------

    def apply(self, ins: Insertion, req: Request, params: DispatchParams):
        v, i, j = ins.vehicle, ins.pickup_idx, ins.dropoff_idx
        self.sync(v)
        n = int(self.n_stops[v])
        while n + 2 > self.stop_link.shape[1]:
            self._grow_stops()
        arr = self.stop_arr[v, :n].tolist()
        mid = [a + ins.shift_mid for a in arr[i:j]] if j > i else []
        self.stop_arr[v, :n + 2] = (arr[:i] + [ins.pickup_time - params.stop_duration] + mid
                                    + [ins.dropoff_time] + [a + ins.shift_after for a in arr[j:]])
        stops = self.stops[v]
        stops.insert(j, Stop(req.destination, dropoffs=[req]))
        stops.insert(i, Stop(req.origin, pickups=[req]))
        req.vehicle = v
        req.extended = ins.extended
        self._refresh(v, params)

    def begin_stop(self, v: int, now: int, params: DispatchParams) -> Stop:
        """Vehicle reached its first planned stop: dropoffs leave now, pickups
        are committed for the end of the stop."""
        self.sync(v)
        stop = self.stops[v].pop(0)
        n = len(self.stops[v])
        planned = int(self.stop_arr[v, 0])
        self.stop_arr[v, :n] = self.stop_arr[v, 1:n + 1] + (now - planned)
        end = now + params.stop_duration
        dropped = set(stop.dropoffs)
        self.onboard[v] = [(r, t) for r, t in self.onboard[v] if r not in dropped]
        self.onboard[v].extend((r, end) for r in stop.pickups)
        self.start_link[v] = stop.link
        self.start_time[v] = end
        self._refresh(v, params)
        return stop

    def set_position(self, v: int, link: int, t: int):
        self.start_link[v] = link
        self.start_time[v] = t

    def reestimate(self, v: int, expected_first_arrival: int):
        if self.stops[v]:
            self._first_arr[v] = expected_first_arrival

    def sync(self, v: int | None = None):
        """Shift pending re-estimated plans (all vehicles, or just ``v``)."""
        pending = self._first_arr
        if not pending:
            return
        if v is None:
            idx = np.fromiter(pending.keys(), np.int64, len(pending))
            want = np.fromiter(pending.values(), np.int64, len(pending))
            self.stop_arr[idx] += (want - self.stop_arr[idx, 0])[:, None]
            pending.clear()
        elif v in pending:
            self.stop_arr[v] += pending.pop(v) - self.stop_arr[v, 0]

    def is_idle(self, v: int) -> bool:
        return not self.stops[v] and not self.onboard[v]


class Dispatcher:
    """Immediate-request insertion dispatcher ("first" cheapest insertion)."""

    def __init__(self, fleet: Fleet, params: DispatchParams, ridesharing: bool = True):
        self.fleet = fleet
        self.params = params
        self.ridesharing = ridesharing

    def find_best_insertion(self, req: Request, now: int, skims) -> Insertion | None:
        f = self.fleet
        f.sync()
        late = np.flatnonzero(f.start_time < now)
        if len(late):
            # a vehicle behind its estimate: push its whole plan to now
            lag = now - f.start_time[late]
            f.stop_arr[late] += lag[:, None]
            f.start_time[late] = now
        times, _, cost = skims.at(now)
        net = skims.network
        p = self.params
        res = kernels.insertion_scan(
            times, net.link_from, net.link_to, cost,
            f.candidate, f.capacity, f.start_link, f.start_time, f.start_occ,
            f.n_stops, f.stop_link, f.stop_arr, f.stop_occ,
            f.n_req, f.rq_pick, f.rq_drop, f.rq_latest, f.rq_pick_time, f.rq_max_ride,
            p.stop_duration, req.origin, req.destination, req.t_sub, p.max_wait,
            p.max_ride(req.tau_d), p.extended_detour, self.ridesharing)
        v, i, j, dwork, tier, pick, drop, d1, d2 = (int(x) for x in res)
        if v < 0:
            return None
        return Insertion(v, i, j, dwork, tier == 1, pick, drop, d1, d2)

    def submit(self, req: Request, now: int, skims) -> Insertion | None:
        """Schedule ``req`` on the best vehicle or reject it; never revisited."""
        if req.tau_d < 0:
            req.set_status("rejected")
            return None
        ins = self.find_best_insertion(req, now, skims)
        if ins is None:
            req.set_status("rejected")
            return None
        self.fleet.apply(ins, req, self.params)
        req.set_status("scheduled")
        return ins


# --------------------------------------------------------------------------
# explicit schedule checks (slow path, used for validation)

@dataclass
class ScheduleView:
    start_link: int
    start_time: int
    capacity: int
    onboard: list  # [(request, pickup time)]
    stops: list  # [Stop]


def schedule_times(view: ScheduleView, stops, leg_time, stop_duration: int):
    """Arrival time at every stop when driving ``stops`` without idling."""
    t, here, out = view.start_time, view.start_link, []
    for s in stops:
        leg = leg_time(here, s.link)
        if leg is None:
            return None
        t += leg
        out.append(t)
        t += stop_duration
        here = s.link
    return out


def feasible(view: ScheduleView, new_stops, req: Request, params: DispatchParams, leg_time,
             old_times: dict | None = None):
    """Check a candidate stop sequence containing ``req``'s pickup and dropoff.

    Returns ``(ok, extended)``.  Constraints of already scheduled requests only
    count as broken when the candidate makes the affected time worse than in
    ``old_times`` (request -> (pickup, dropoff)); accepted requests are never
    dropped.
    """
    occ = len(view.onboard)
    if occ > view.capacity:
        return False, False
    for s in new_stops:
        occ += len(s.pickups) - len(s.dropoffs)
        if occ > view.capacity:
            return False, False
    arr = schedule_times(view, new_stops, leg_time, params.stop_duration)
    if arr is None:
        return False, False
    pick = {r: t for r, t in view.onboard}
    drop = {}
    for t, s in zip(arr, new_stops):
        for r in s.pickups:
            pick[r] = t + params.stop_duration
        for r in s.dropoffs:
            drop[r] = t
    if pick[req] - req.t_sub > params.max_wait:
        return False, False
    extended = False
    if drop[req] - pick[req] > params.max_ride(req.tau_d):
        if not params.extended_detour:
            return False, False
        extended = True
    old_times = old_times or {}
    for r in drop:
        if r is req:
            continue
        old_p, old_d = old_times.get(r, (-math.inf, -math.inf))
        if r.pickup_time < 0 and r in pick and pick[r] > r.t_sub + params.max_wait and pick[r] > old_p:
            if r not in dict(view.onboard):
                return False, False
        ride = drop[r] - pick[r]
        if not r.extended and ride > params.max_ride(r.tau_d) and ride > old_d - old_p:
            return False, False
    return True, extended


# --------------------------------------------------------------------------
# demand estimation and rebalancing

class CellGrid:
    """Square cells over the network bounding box; links belong to the cell of
    their downstream node."""

    def __init__(self, network, cell_size: float = 1000.0, mode: str = "sav"):
        self.network = network
        self.cell_size = cell_size
        self.x0 = float(network.node_x.min())
        self.y0 = float(network.node_y.min())
        self.nx = int((network.node_x.max() - self.x0) // cell_size) + 1
        self.ny = int((network.node_y.max() - self.y0) // cell_size) + 1
        self.n_cells = self.nx * self.ny
        lx = network.node_x[network.link_to]
        ly = network.node_y[network.link_to]
        self.link_cell = self.cell_at(lx, ly)
        cx = self.x0 + (np.arange(self.n_cells) % self.nx + 0.5) * cell_size
        cy = self.y0 + (np.arange(self.n_cells) // self.nx + 0.5) * cell_size
        self.centroid = np.stack([cx, cy], axis=1)
        self.central_link = np.full(self.n_cells, -1, dtype=np.int64)
        best = np.full(self.n_cells, np.inf)
        for link in range(network.n_links):
            if mode not in network.links[link].modes:
                continue
            c = self.link_cell[link]
            d = math.hypot(lx[link] - cx[c], ly[link] - cy[c])
            if d < best[c] - 1e-9:
                best[c] = d
                self.central_link[c] = link

    def cell_at(self, x, y):
        cx = np.clip(((np.asarray(x) - self.x0) // self.cell_size).astype(np.int64), 0, self.nx - 1)
        cy = np.clip(((np.asarray(y) - self.y0) // self.cell_size).astype(np.int64), 0, self.ny - 1)
        return cy * self.nx + cx

    def distance_m(self, a, b) -> np.ndarray:
        d = self.centroid[np.asarray(a)][:, None, :] - self.centroid[np.asarray(b)][None, :, :]
        return np.rint(np.hypot(d[..., 0], d[..., 1])).astype(np.int64)


@dataclass
class DemandEstimate:
    counts: np.ndarray  # per cell


class DemandIndex:
    """Submission times and origin cells of a previous day's requests."""

    def __init__(self, grid: CellGrid, events=None):
        self.grid = grid
        times, cells = [], []
        for ev in events or ():
            if ev[1] == "request_submitted":
                times.append(ev[0])
                cells.append(grid.link_cell[ev[4]])
        order = np.argsort(np.asarray(times, dtype=np.int64), kind="stable")
        self.times = np.asarray(times, dtype=np.int64)[order]
        self.cells = np.asarray(cells, dtype=np.int64)[order]

    def estimate(self, now: int, horizon: int) -> DemandEstimate:
        lo = np.searchsorted(self.times, now, side="left")
        hi = np.searchsorted(self.times, now + horizon, side="left")
        return DemandEstimate(np.bincount(self.cells[lo:hi], minlength=self.grid.n_cells))


def estimate_demand(prev_events, now: int, params: RebalanceParams, grid: CellGrid) -> DemandEstimate:
    """Requests per cell submitted in ``[now, now + horizon)`` on the previous day."""
    return DemandIndex(grid, prev_events).estimate(now, params.horizon)


def rebalance(idle, demand: DemandEstimate, grid: CellGrid):
    """Relocation targets for idle vehicles.

    ``idle`` is a list of ``(vehicle, link)``.  Supplies are idle vehicles per
    cell, demands the per-cell deficits ``max(0, expected - idle in cell)``;
    the transportation problem ships as many units as possible at minimum
    total centroid distance.  Returns ``[(vehicle, target link)]`` for the
    vehicles that have to move.
    """
    if not idle:
        return []
    idle = sorted(idle)
    cells = grid.link_cell[np.array([l for _, l in idle], dtype=np.int64)]
    idle_per_cell = np.bincount(cells, minlength=grid.n_cells)
    deficit = np.maximum(0, demand.counts - idle_per_cell)
    deficit[grid.central_link < 0] = 0
    deficit = np.minimum(deficit, len(idle))
    src = np.flatnonzero(idle_per_cell)
    dst = np.flatnonzero(deficit)
    if len(dst) == 0:
        return []
    cost = grid.distance_m(src, dst)
    flow, _ = kernels.transport_min_cost_flow(idle_per_cell[src].astype(np.int64),
                                              deficit[dst].astype(np.int64), cost)
    by_cell = {}
    for (v, link), c in zip(idle, cells):
        by_cell.setdefault(int(c), []).append((v, link))
    moves = []
    for a, cs in enumerate(src):
        pool = by_cell[int(cs)]
        k = 0
        for b, cd in enumerate(dst):
            for _ in range(int(flow[a, b])):
                v, link = pool[k]
                k += 1
                target = int(grid.central_link[cd])
                if cd != cs and target != link:
                    moves.append((v, target))
    return moves
