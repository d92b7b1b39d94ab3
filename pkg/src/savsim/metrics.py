"""Service KPIs reconstructed from an event stream, plus sweep trend verdicts."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .events import parse_detail
from .population import MODES


class KpiError(ValueError):
    pass


@dataclass
class KpiReport:
    modal_split: dict  # mode -> % of legs
    in_service_rate: list  # per hour, fraction of the fleet
    empty_distance_ratio: float
    pkt: float  # km
    evk: float  # km
    sav_km: float
    km_by_occupancy: dict  # k -> km
    pax_occupancy: dict  # k >= 1 -> % of occupied driving
    wait: dict  # mean/median/p95/max, s
    ivt: dict
    detour: dict
    rides_per_sav: float
    vehicle_km_mean: float
    vehicle_km_max: float
    car_km: float
    total_driven_km: float
    od_activity_shares: dict  # "origin>destination" -> % of trips
    requests: int
    served: int
    rejected: int
    fleet_size: int
    weighting: str = "distance"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def flat(self) -> dict:
        """One flat row for ``kpi.csv``."""
        row = {
            "sav_share": self.modal_split.get("sav", 0.0),
            "empty_distance_ratio": self.empty_distance_ratio,
            "pkt": self.pkt, "evk": self.evk, "sav_km": self.sav_km,
            "rides_per_sav": self.rides_per_sav,
            "vehicle_km_mean": self.vehicle_km_mean, "vehicle_km_max": self.vehicle_km_max,
            "car_km": self.car_km, "total_driven_km": self.total_driven_km,
            "requests": self.requests, "served": self.served, "rejected": self.rejected,
            "in_service_mean": float(np.mean(self.in_service_rate)) if self.in_service_rate else 0.0,
            "in_service_peak": max(self.in_service_rate) if self.in_service_rate else 0.0,
        }
        for m in MODES:
            row[f"share_{m}"] = self.modal_split.get(m, 0.0)
        for name in ("wait", "ivt", "detour"):
            for stat, v in getattr(self, name).items():
                row[f"{name}_{stat}"] = v
        for k, v in self.pax_occupancy.items():
            row[f"occupancy_{k}"] = v
        return row


def _summary(values) -> dict:
    if len(values) == 0:
        return {"mean": 0.0, "median": 0.0, "p95": 0.0, "max": 0.0}
    a = np.asarray(values, dtype=float)
    return {"mean": float(a.mean()), "median": float(np.median(a)),
            "p95": float(np.percentile(a, 95)), "max": float(a.max())}


def _is_sav(vid: str) -> bool:
    return vid.startswith("sav_")


def compute_kpis(events, network, fleet_size: int, time_weighted: bool = False) -> KpiReport:
    """Single pass over ``events`` (an :class:`EventStream`) with per-vehicle
    occupancy reconstruction.  Link distances come from ``network``."""
    vids = events.vehicle_ids
    sav = [_is_sav(v) for v in vids]
    length_km = network.length / 1000.0
    occ = {}
    veh_km = {}
    km_occ = {}
    time_occ = {}
    enter_t = {}
    car_km = 0.0
    mode_count = {m: 0 for m in MODES}
    boardings = alightings = 0
    onboard = {}  # request -> vehicle
    t_sub, tau, pick, drop = {}, {}, {}, {}
    rejected = 0
    service_open = {}
    service_intervals = []
    last_act = {}
    od = {}
    t_end = 0
    for t, kind, p, v, link, r, detail in events.rows:
        t_end = t
        if kind == "link_enter":
            if v >= 0 and sav[v]:
                enter_t[v] = t
        elif kind == "link_leave":
            if v < 0:
                continue
            if sav[v]:
                k = occ.get(v, 0)
                d = float(length_km[link])
                km_occ[k] = km_occ.get(k, 0.0) + d
                veh_km[v] = veh_km.get(v, 0.0) + d
                if v in enter_t:
                    time_occ[k] = time_occ.get(k, 0) + t - enter_t.pop(v)
            else:
                car_km += float(length_km[link])
        elif kind == "passenger_pickup":
            if r in onboard:
                raise KpiError(f"request {r} picked up twice")
            onboard[r] = v
            occ[v] = occ.get(v, 0) + 1
            boardings += 1
            pick[r] = t
        elif kind == "passenger_dropoff":
            if onboard.pop(r, None) != v:
                raise KpiError(f"request {r} dropped off without a matching pickup")
            occ[v] -= 1
            alightings += 1
            drop[r] = t
        elif kind == "request_submitted":
            t_sub[r] = t
            tau[r] = int(parse_detail(detail)["tau"])
        elif kind == "request_rejected":
            rejected += 1
        elif kind == "person_arrives":
            mode = detail[5:] if detail.startswith("mode=") else parse_detail(detail).get("mode")
            mode_count[mode] = mode_count.get(mode, 0) + 1
        elif kind == "act_end":
            last_act[p] = detail[5:]
        elif kind == "act_start":
            if p in last_act:
                key = f"{last_act.pop(p)}>{detail[5:]}"
                od[key] = od.get(key, 0) + 1
        elif kind == "task_start":
            if detail == "task=stop" or detail.endswith("purpose=service"):
                service_open[v] = t
        elif kind == "task_end":
            if v in service_open and (detail == "task=stop" or detail.endswith("purpose=service")):
                service_intervals.append((service_open.pop(v), t))
    if onboard:
        raise KpiError(f"{len(onboard)} passengers never dropped off")
    for v, t0 in service_open.items():
        service_intervals.append((t0, t_end))

    n_hours = max(1, int(math.ceil(t_end / 3600.0)))
    busy = np.zeros(n_hours)
    for a, b in service_intervals:
        for h in range(a // 3600, min(n_hours, (b - 1) // 3600 + 1) if b > a else a // 3600):
            lo, hi = max(a, h * 3600), min(b, (h + 1) * 3600)
            if hi > lo:
                busy[h] += hi - lo
    fleet = max(1, fleet_size)
    in_service = [float(x) for x in busy / (3600.0 * fleet)]

    sav_km = float(sum(km_occ.values()))
    evk = float(km_occ.get(0, 0.0))
    pkt = float(sum(k * d for k, d in km_occ.items()))
    if time_weighted:
        base = {k: float(s) for k, s in time_occ.items() if k > 0}
    else:
        base = {k: d for k, d in km_occ.items() if k > 0}
    occupied = sum(base.values())
    pax = {int(k): 100.0 * base[k] / occupied for k in sorted(base)} if occupied > 0 else {}

    total_legs = sum(mode_count.values())
    split = {m: (100.0 * c / total_legs if total_legs else 0.0) for m, c in mode_count.items()}
    served = [r for r in drop]
    waits = [pick[r] - t_sub[r] for r in served]
    ivts = [drop[r] - pick[r] for r in served]
    detours = [drop[r] - pick[r] - tau[r] for r in served]
    km_list = [veh_km.get(v, 0.0) for v in range(len(vids)) if sav[v]]
    km_list += [0.0] * max(0, fleet_size - len(km_list))
    n_trips = sum(od.values())
    return KpiReport(
        modal_split=split,
        in_service_rate=in_service,
        empty_distance_ratio=evk / sav_km if sav_km > 0 else 0.0,
        pkt=pkt, evk=evk, sav_km=sav_km,
        km_by_occupancy={int(k): float(v) for k, v in sorted(km_occ.items())},
        pax_occupancy=pax,
        wait=_summary(waits), ivt=_summary(ivts), detour=_summary(detours),
        rides_per_sav=boardings / fleet,
        vehicle_km_mean=float(np.mean(km_list)) if km_list else 0.0,
        vehicle_km_max=float(np.max(km_list)) if km_list else 0.0,
        car_km=car_km, total_driven_km=car_km + sav_km,
        od_activity_shares={k: 100.0 * c / n_trips for k, c in sorted(od.items())},
        requests=len(t_sub), served=len(served), rejected=rejected,
        fleet_size=fleet_size,
        weighting="time" if time_weighted else "distance",
        extra={"boardings": boardings, "alightings": alightings},
    )


def audit(events, capacity: int, detour_factor: float = 1.3, max_wait: int = 900) -> dict:
    """Count constraint violations of served requests, from events only."""
    vids = events.vehicle_ids
    t_sub, tau, pick, drop, ext = {}, {}, {}, {}, {}
    status = {}
    occ = {}
    out = {"wait": 0, "ride": 0, "capacity": 0, "scheduled_then_rejected": 0, "unbalanced": 0}
    for t, kind, p, v, link, r, detail in events.rows:
        if kind == "request_submitted":
            t_sub[r] = t
            tau[r] = int(parse_detail(detail)["tau"])
            status[r] = "submitted"
        elif kind == "request_scheduled":
            ext[r] = parse_detail(detail).get("ext") == "1"
            status[r] = "scheduled"
        elif kind == "request_rejected":
            if status.get(r) != "submitted":
                out["scheduled_then_rejected"] += 1
            status[r] = "rejected"
        elif kind == "passenger_pickup":
            pick[r] = t
            occ[v] = occ.get(v, 0) + 1
            if occ[v] > capacity:
                out["capacity"] += 1
        elif kind == "passenger_dropoff":
            if r not in pick:
                out["unbalanced"] += 1
            drop[r] = t
            occ[v] = occ.get(v, 0) - 1
    out["unbalanced"] += len(set(pick) - set(drop))
    for r, t in drop.items():
        if r not in pick:
            continue
        if pick[r] - t_sub[r] > max_wait:
            out["wait"] += 1
        bound = math.floor(detour_factor * tau[r] + 1e-9)
        if not ext.get(r, False) and drop[r] - pick[r] > bound:
            out["ride"] += 1
    out["served"] = len(drop)
    out["extended"] = sum(1 for r in drop if ext.get(r, False))
    del vids
    return out


# --------------------------------------------------------------------------
# trends

def monotone_verdict(values, tol: float = 0.2, max_inversions: int = 1) -> dict:
    """Nondecreasing check allowing up to ``max_inversions`` drops of at most ``tol``."""
    v = np.asarray(values, dtype=float)
    drops = -np.diff(v)
    inversions = [float(d) for d in drops if d > 1e-12]
    strict = len(inversions) == 0
    ok = strict or (len(inversions) <= max_inversions and max(inversions) <= tol + 1e-12)
    return {"values": [float(x) for x in v], "nondecreasing": strict,
            "nondecreasing_within_tolerance": ok, "inversions": inversions}


def change_verdict(before: float, after: float) -> dict:
    delta = after - before
    pct = 0.0 if before == 0 else 100.0 * delta / abs(before)
    return {"before": before, "after": after, "delta": delta,
            "decrease_pct": -pct if delta < 0 else 0.0,
            "increase_pct": pct if delta > 0 else 0.0}


def trend_compare(reports, variable: str, values, metrics=("sav_share",)) -> list[dict]:
    """Direction verdicts of ``metrics`` along a swept ``variable``.

    ``reports`` are :class:`KpiReport` or flat dicts, ordered like ``values``.
    """
    if len(reports) < 2:
        raise ValueError("trend comparison needs at least two reports")
    rows = [r.flat() if isinstance(r, KpiReport) else r for r in reports]
    findings = []
    for m in metrics:
        series = [float(r[m]) for r in rows]
        f = {"variable": variable, "sweep": list(values), "metric": m}
        f.update(monotone_verdict(series))
        f.update({k: v for k, v in change_verdict(series[0], series[-1]).items()
                  if k in ("delta", "decrease_pct", "increase_pct")})
        f["deltas"] = [float(x) for x in np.diff(series)]
        findings.append(f)
    return findings
