"""Road network, experienced travel-time profiles and routing."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Iterable, Sequence

import numpy as np

from . import kernels

VEHICLE_LENGTH_M = 7.5
DEFAULT_BIN_WIDTH = 900
DEFAULT_N_BINS = 144  # 36 h


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    x: float
    y: float


@dataclass(frozen=True)
class Link:
    id: str
    from_node: str
    to_node: str
    length: float
    free_speed: float
    flow_capacity: float
    lanes: int = 1
    modes: frozenset = frozenset({"car", "sav"})


class Network:
    """Validated directed graph with array views used by the simulation.

    Links are addressed by integer index internally; ``link_index`` maps the
    external string ids.
    """

    def __init__(self, nodes: Sequence[Node], links: Sequence[Link]):
        self.nodes = list(nodes)
        self.links = list(links)
        self.node_index = {}
        for i, n in enumerate(self.nodes):
            if n.id in self.node_index:
                raise NetworkError(f"duplicate node id {n.id!r}")
            self.node_index[n.id] = i
        self.link_index = {}
        for i, l in enumerate(self.links):
            if l.id in self.link_index:
                raise NetworkError(f"duplicate link id {l.id!r}")
            for end in (l.from_node, l.to_node):
                if end not in self.node_index:
                    raise NetworkError(f"link {l.id!r} references unknown node {end!r}")
            if not l.length > 0:
                raise NetworkError(f"link {l.id!r}: length must be positive")
            if not l.free_speed > 0:
                raise NetworkError(f"link {l.id!r}: free speed must be positive")
            if not l.flow_capacity > 0:
                raise NetworkError(f"link {l.id!r}: flow capacity must be positive")
            if l.lanes < 1:
                raise NetworkError(f"link {l.id!r}: lanes must be >= 1")
            self.link_index[l.id] = i

        self.node_x = np.array([n.x for n in self.nodes], dtype=float)
        self.node_y = np.array([n.y for n in self.nodes], dtype=float)
        self.link_from = np.array([self.node_index[l.from_node] for l in self.links], dtype=np.int64)
        self.link_to = np.array([self.node_index[l.to_node] for l in self.links], dtype=np.int64)
        self.length = np.array([l.length for l in self.links], dtype=float)
        self.length_m = np.rint(self.length).astype(np.int64)
        self.free_speed = np.array([l.free_speed for l in self.links], dtype=float)
        self.flow_capacity = np.array([l.flow_capacity for l in self.links], dtype=float)
        self.lanes = np.array([l.lanes for l in self.links], dtype=np.int64)
        self.storage = np.maximum(
            1, np.floor(self.length * self.lanes / VEHICLE_LENGTH_M + 1e-9)).astype(np.int64)
        self.free_flow_time = self.length / self.free_speed
        # integer seconds actually needed to cross an empty link
        self.free_flow_tt = np.maximum(1, np.ceil(self.free_flow_time - 1e-9)).astype(np.int64)
        self._csr = {}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_links(self) -> int:
        return len(self.links)

    def allows(self, link: int, mode: str) -> bool:
        return mode in self.links[link].modes

    def csr(self, mode: str = "car"):
        """Outgoing-link adjacency (``out_ptr``, ``out_links``) for ``mode``."""
        if mode not in self._csr:
            ok = np.array([mode in l.modes for l in self.links], dtype=bool)
            idx = np.flatnonzero(ok)
            order = idx[np.lexsort((idx, self.link_from[idx]))]
            counts = np.bincount(self.link_from[order], minlength=self.n_nodes)
            out_ptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
            np.cumsum(counts, out=out_ptr[1:])
            self._csr[mode] = (out_ptr, order.astype(np.int64))
        return self._csr[mode]

    def link_xy(self, link: int) -> tuple[float, float]:
        """Coordinates of a link's downstream end, where activities sit."""
        n = self.link_to[link]
        return float(self.node_x[n]), float(self.node_y[n])

    def beeline(self, a: int, b: int) -> float:
        ax, ay = self.link_xy(a)
        bx, by = self.link_xy(b)
        return math.hypot(ax - bx, ay - by)


def build_network(nodes: Iterable[Node], links: Iterable[Link]) -> Network:
    return Network(list(nodes), list(links))


# --------------------------------------------------------------------------
# files

def write_network(network: Network, directory) -> None:
    directory = FsPath(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"])
        for n in network.nodes:
            w.writerow([n.id, repr(n.x), repr(n.y)])
    with open(directory / "links.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "from", "to", "length_m", "free_speed_ms", "capacity_vph", "lanes", "modes"])
        for l in network.links:
            w.writerow([l.id, l.from_node, l.to_node, repr(l.length), repr(l.free_speed),
                        repr(l.flow_capacity), l.lanes, ";".join(sorted(l.modes))])


def read_network(directory) -> Network:
    directory = FsPath(directory)
    for name in ("nodes.csv", "links.csv"):
        if not (directory / name).exists():
            raise NetworkError(f"missing network file: {directory / name}")
    with open(directory / "nodes.csv", newline="") as fh:
        nodes = [Node(r["id"], float(r["x"]), float(r["y"])) for r in csv.DictReader(fh)]
    with open(directory / "links.csv", newline="") as fh:
        links = [
            Link(r["id"], r["from"], r["to"], float(r["length_m"]), float(r["free_speed_ms"]),
                 float(r["capacity_vph"]), int(r["lanes"]),
                 frozenset(m for m in r["modes"].split(";") if m))
            for r in csv.DictReader(fh)
        ]
    return build_network(nodes, links)


def grid_city(size: int = 16, spacing: float = 500.0, arterial_every: int = 4,
              local_speed: float = 8.33, arterial_speed: float = 13.89,
              local_capacity: float = 900.0, arterial_capacity: float = 1800.0):
    """Square grid with bidirectional links; every ``arterial_every``-th row and
    column is a faster two-lane arterial.  Returns ``(nodes, links)``."""
    nodes = []
    for r in range(size):
        for c in range(size):
            nodes.append(Node(f"n{r}_{c}", c * spacing, r * spacing))
    links = []

    def add(a, b, arterial):
        speed = arterial_speed if arterial else local_speed
        cap = arterial_capacity if arterial else local_capacity
        lanes = 2 if arterial else 1
        links.append(Link(f"{a}-{b}", a, b, spacing, speed, cap * lanes, lanes))

    for r in range(size):
        for c in range(size):
            here = f"n{r}_{c}"
            if c + 1 < size:
                right = f"n{r}_{c + 1}"
                art = r % arterial_every == 0
                add(here, right, art)
                add(right, here, art)
            if r + 1 < size:
                up = f"n{r + 1}_{c}"
                art = c % arterial_every == 0
                add(here, up, art)
                add(up, here, art)
    return nodes, links


# --------------------------------------------------------------------------
# travel times

@dataclass
class TravelTimeProfile:
    """Per-link, per-time-bin mean traversal times (seconds)."""

    times: np.ndarray  # (n_links, n_bins) float
    free_flow: np.ndarray  # (n_links,) float
    bin_width: int = DEFAULT_BIN_WIDTH
    _int_costs: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_bins(self) -> int:
        return self.times.shape[1]

    def bin_of(self, t: float) -> int:
        return min(int(t // self.bin_width), self.n_bins - 1)

    def int_costs(self) -> np.ndarray:
        """Integer link costs (ceil of the bin mean) used by every router."""
        if self._int_costs is None:
            c = np.ceil(self.times - 1e-9).astype(np.int64)
            self._int_costs = np.maximum(c, 1)
        return self._int_costs

    def link_time(self, link: int, t: float) -> float:
        return float(self.times[link, self.bin_of(t)])


def free_flow_profile(network: Network, bin_width: int = DEFAULT_BIN_WIDTH,
                      n_bins: int = DEFAULT_N_BINS) -> TravelTimeProfile:
    ff = network.free_flow_time
    return TravelTimeProfile(np.repeat(ff[:, None], n_bins, axis=1), ff.copy(), bin_width)


def update_travel_times(network: Network, events, bin_width: int = DEFAULT_BIN_WIDTH,
                        n_bins: int = DEFAULT_N_BINS) -> TravelTimeProfile:
    """Average experienced traversal times per link and entry-time bin.

    ``events`` is an iterable of rows ``(time, kind, person, vehicle, link, ...)``
    with integer vehicle and link indices.  Bins without observations keep
    free-flow time and every value is floored at free-flow time.
    """
    open_trav = {}
    links, enters, durations = [], [], []
    for ev in events:
        kind = ev[1]
        if kind == "link_enter":
            open_trav[ev[3]] = (ev[4], ev[0])
        elif kind == "link_leave":
            rec = open_trav.pop(ev[3], None)
            if rec is None or rec[0] != ev[4]:
                raise ValueError(f"link_leave without link_enter: vehicle {ev[3]} link {ev[4]} t={ev[0]}")
            links.append(rec[0])
            enters.append(rec[1])
            durations.append(ev[0] - rec[1])
    return profile_from_traversals(network, links, enters, durations, bin_width, n_bins)


def profile_from_traversals(network: Network, links, enters, durations,
                            bin_width: int = DEFAULT_BIN_WIDTH,
                            n_bins: int = DEFAULT_N_BINS) -> TravelTimeProfile:
    """Same as :func:`update_travel_times` from parallel arrays of completed
    traversals (link, entry time, duration)."""
    ff = network.free_flow_time
    times = np.repeat(ff[:, None], n_bins, axis=1)
    if len(links):
        links = np.asarray(links, dtype=np.int64)
        bins = np.minimum(np.asarray(enters, dtype=np.int64) // bin_width, n_bins - 1)
        flat = links * n_bins + bins
        sums = np.bincount(flat, weights=np.asarray(durations, dtype=float),
                           minlength=network.n_links * n_bins)
        counts = np.bincount(flat, minlength=network.n_links * n_bins)
        seen = counts > 0
        flat_times = times.reshape(-1)
        flat_times[seen] = sums[seen] / counts[seen]
        np.maximum(times, ff[:, None], out=times)
    return TravelTimeProfile(times, ff.copy(), bin_width)


# --------------------------------------------------------------------------
# routing

@dataclass(frozen=True)
class Path:
    links: tuple
    travel_time: int
    distance: float
    reachable: bool = True


UNREACHABLE = Path((), -1, math.inf, False)


def _reconstruct(pred, link_from, src_node, dst_node):
    out = []
    n = dst_node
    while n != src_node:
        link = int(pred[n])
        out.append(link)
        n = int(link_from[link])
    out.reverse()
    return out


def shortest_path(network: Network, profile: TravelTimeProfile, origin_link: int,
                  dest_link: int, depart_time: int, mode: str = "car") -> Path:
    """Earliest-arrival route from the end of ``origin_link`` through ``dest_link``.

    Link costs are read at link-entry time.  The returned links exclude the
    origin link and include the destination link.
    """
    if not (network.allows(origin_link, mode) and network.allows(dest_link, mode)):
        raise NetworkError(f"mode {mode!r} not allowed on origin or destination link")
    if origin_link == dest_link:
        return Path((), 0, 0.0)
    out_ptr, out_links = network.csr(mode)
    costs = profile.int_costs()
    src = int(network.link_to[origin_link])
    dst = int(network.link_from[dest_link])
    pred, arrive, _ = kernels.td_dijkstra(out_ptr, out_links, network.link_to, network.length_m,
                                          costs, profile.bin_width, src, dst, int(depart_time))
    if arrive < 0:
        return UNREACHABLE
    links = _reconstruct(pred, network.link_from, src, dst)
    links.append(int(dest_link))
    arrive = int(arrive) + int(costs[dest_link, profile.bin_of(arrive)])
    distance = float(network.length[links].sum())
    return Path(tuple(links), arrive - int(depart_time), distance)


class Skims:
    """Cached all-pairs leg times/distances per time bin, for dispatch.

    Within one bin link costs are static, which is what the insertion
    heuristic evaluates against.
    """

    def __init__(self, network: Network, profile: TravelTimeProfile, mode: str = "sav",
                 margin: int = 0, shared: dict | None = None):
        self.network = network
        self.profile = profile
        self.mode = mode
        self.margin = int(margin)  # s added to every link, for conservative planning
        self._cache = {}
        self._cols = {}
        # matrices keyed by the cost vector; may be shared across bins and days
        self.shared = {} if shared is None else shared
        self.used = set()

    def for_bin(self, b: int):
        if b not in self._cache:
            cost = np.ascontiguousarray(self.profile.int_costs()[:, b]) + self.margin
            key = (self.mode, cost.tobytes())
            hit = self.shared.get(key)
            if hit is None:
                out_ptr, out_links = self.network.csr(self.mode)
                hit = kernels.all_pairs(out_ptr, out_links, self.network.link_to,
                                        self.network.length_m, cost)
                self.shared[key] = hit
            self.used.add(key)
            self._cache[b] = (hit[0], hit[1], cost)
        return self._cache[b]

    def at(self, t: float):
        return self.for_bin(self.profile.bin_of(t))

    def _column(self, b: int) -> np.ndarray:
        # (n_links, 1) cost table for one-to-one searches within bin b
        col = self._cols.get(b)
        if col is None:
            col = np.ascontiguousarray(self.profile.int_costs()[:, b:b + 1] + self.margin)
            self._cols[b] = col
        return col

    def leg(self, a: int, b: int, t: float) -> tuple[int, int]:
        """(seconds, metres) from the end of link ``a`` through link ``b``; -1 if unreachable."""
        if a == b:
            return 0, 0
        times, dists, cost = self.at(t)
        na, nb = self.network.link_to[a], self.network.link_from[b]
        if times[na, nb] >= kernels.INF:
            return -1, -1
        return int(times[na, nb] + cost[b]), int(dists[na, nb] + self.network.length_m[b])

    def direct(self, a: int, b: int, t: float) -> tuple[int, int]:
        """Same as :meth:`leg` via a one-to-one search, without building the bin's matrix."""
        if a == b:
            return 0, 0
        if self.profile.bin_of(t) in self._cache:
            return self.leg(a, b, t)
        out_ptr, out_links = self.network.csr(self.mode)
        cost = self._column(self.profile.bin_of(t))
        src, dst = int(self.network.link_to[a]), int(self.network.link_from[b])
        _, arrive, dist = kernels.td_dijkstra(out_ptr, out_links, self.network.link_to,
                                              self.network.length_m, cost, 1 << 40, src, dst, 0)
        if arrive < 0:
            return -1, -1
        return int(arrive + cost[b, 0]), int(dist + self.network.length_m[b])

    def route(self, a: int, b: int, t: float) -> list[int]:
        """Links of the static-cost shortest path used for SAV drives."""
        if a == b:
            return []
        out_ptr, out_links = self.network.csr(self.mode)
        cost = self._column(self.profile.bin_of(t))
        src, dst = int(self.network.link_to[a]), int(self.network.link_from[b])
        pred, arrive, _ = kernels.td_dijkstra(out_ptr, out_links, self.network.link_to,
                                              self.network.length_m, cost, 1 << 40, src, dst, 0)
        if arrive < 0:
            raise NetworkError(f"no route from link {a} to link {b}")
        links = _reconstruct(pred, self.network.link_from, src, dst)
        links.append(int(b))
        return links
