"""Bundled synthetic toy city ("grid16").

Everything here is invented: zone controls, chain templates, time profiles
and OD tables are plausible-looking toy values, not survey data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import build_network, grid_city
from .population import (ChainTemplate, Person, ZoneControls, age_band, allocate_chain,
                         assign_locations, attribute_levels, synthesize)

GRID_SIZE = 16
SPACING = 500.0
ZONE_SPAN = 4  # grid rows/cols per zone
CENTRAL_ZONES = (5, 6, 9, 10)
DEPOT_NODES = ("n2_2", "n2_13", "n13_2", "n13_13")
H = 3600


@dataclass
class ToyCity:
    network: object
    zone_of_link: np.ndarray
    zone_links: dict
    parking: np.ndarray  # per link: parking at the downstream end
    depots: list  # link indices
    n_zones: int


def grid16_city() -> ToyCity:
    nodes, links = grid_city(GRID_SIZE, SPACING)
    net = build_network(nodes, links)
    zpr = GRID_SIZE // ZONE_SPAN
    rows = np.rint(net.node_y / SPACING).astype(int)
    cols = np.rint(net.node_x / SPACING).astype(int)
    node_zone = (rows // ZONE_SPAN) * zpr + cols // ZONE_SPAN
    zone_of_link = node_zone[net.link_to]
    zone_links = {z: np.flatnonzero(zone_of_link == z).tolist() for z in range(zpr * zpr)}
    parking = ~np.isin(zone_of_link, CENTRAL_ZONES)
    depots = []
    for nid in DEPOT_NODES:
        n = net.node_index[nid]
        depots.append(int(np.flatnonzero(net.link_to == n)[0]))
    return ToyCity(net, zone_of_link, zone_links, parking, depots, zpr * zpr)


# --------------------------------------------------------------------------
# people

def seed_sample(rng: np.random.Generator, n: int = 3000) -> list[Person]:
    """Toy survey sample covering every control category."""
    out = []
    for k in range(n):
        age = int(rng.choice([rng.integers(0, 14), rng.integers(14, 25), rng.integers(25, 45),
                              rng.integers(45, 65), rng.integers(65, 90)],
                             p=[0.15, 0.15, 0.3, 0.25, 0.15]))
        gender = "m" if rng.random() < 0.49 else "f"
        income = int(rng.choice(4, p=[0.2, 0.35, 0.3, 0.15]))
        if age < 14:
            sp = "child"
        elif age < 25:
            sp = str(rng.choice(["student", "employed", "unemployed"], p=[0.65, 0.25, 0.1]))
        elif age < 65:
            sp = str(rng.choice(["employed", "unemployed", "homemaker"], p=[0.78, 0.1, 0.12]))
        else:
            sp = str(rng.choice(["retired", "homemaker"], p=[0.9, 0.1]))
        p_car = 0.0 if age < 18 else (0.25, 0.45, 0.6, 0.75)[income]
        out.append(Person(f"s{k}", age, gender, income, sp, bool(rng.random() < p_car)))
    return out


def _round_to(shares, total):
    raw = np.asarray(shares, dtype=float) / np.sum(shares) * total
    base = np.floor(raw).astype(int)
    rest = total - base.sum()
    base[np.argsort(-(raw - base), kind="stable")[:rest]] += 1
    return base


def zone_controls(seed, n_zones: int, per_zone: int) -> list[ZoneControls]:
    """Marginals from the seed distribution, tilted per zone (younger and
    richer in the centre, more retirees at the edge)."""
    levels = {}
    for p in seed:
        for attr, lv in attribute_levels(p).items():
            levels.setdefault(attr, {}).setdefault(lv, 0)
            levels[attr][lv] += 1
    controls = []
    for z in range(n_zones):
        central = z in CENTRAL_ZONES
        marg = {}
        for attr, counts in levels.items():
            names = sorted(counts)
            shares = []
            for lv in names:
                s = float(counts[lv])
                if central and attr == "income" and lv in ("2", "3"):
                    s *= 1.3
                if central and attr == "age_gender" and lv.startswith("25-44"):
                    s *= 1.25
                # retirees are all 65+, so both marginals move together
                if not central and ((attr == "socprof" and lv == "retired")
                                    or (attr == "age_gender" and lv.startswith("65+"))):
                    s *= 1.2
                shares.append(s)
            marg[attr] = dict(zip(names, (int(x) for x in _round_to(shares, per_zone))))
        # children are exactly the under-14s; employed absorbs the difference
        kids = sum(c for lv, c in marg["age_gender"].items() if lv.startswith("<14"))
        sp = marg["socprof"]
        sp["employed"] += sp["child"] - kids
        sp["child"] = kids
        old = sum(c for lv, c in marg["age_gender"].items() if lv.startswith("65+"))
        if sp["retired"] > old:
            sp["employed"] += sp["retired"] - old
            sp["retired"] = old
        controls.append(ZoneControls(z, marg))
    return controls


def _t(h_mean, h_sd):
    return (h_mean * H, h_sd * H)


def chain_templates() -> list[ChainTemplate]:
    """Toy activity chains: first entry is the end of the morning home stay,
    later entries are durations."""
    T = ChainTemplate
    return [
        T("emp1", "employed", 0.55, ("home", "work", "home"), (_t(7.5, 0.8), _t(8.5, 0.8))),
        T("emp2", "employed", 0.20, ("home", "work", "shop", "home"), (_t(7.5, 0.8), _t(8.0, 0.7), _t(0.8, 0.3))),
        T("emp3", "employed", 0.15, ("home", "work", "home", "leisure", "home"),
          (_t(7.8, 0.8), _t(8.3, 0.7), _t(1.5, 0.5), _t(2.0, 0.6))),
        T("emp4", "employed", 0.10, ("home", "business", "work", "home"), (_t(8.0, 0.8), _t(1.0, 0.3), _t(7.0, 0.8))),
        T("stu1", "student", 0.70, ("home", "education", "home"), (_t(8.0, 0.5), _t(6.5, 1.0))),
        T("stu2", "student", 0.30, ("home", "education", "leisure", "home"), (_t(8.0, 0.5), _t(5.5, 1.0), _t(2.0, 0.7))),
        T("chi1", "child", 0.85, ("home", "education", "home"), (_t(8.2, 0.3), _t(7.0, 0.6))),
        T("chi2", "child", 0.15, ("home", "education", "leisure", "home"), (_t(8.2, 0.3), _t(6.5, 0.6), _t(1.5, 0.4))),
        T("une1", "unemployed", 0.5, ("home", "shop", "home"), (_t(10.0, 1.5), _t(1.0, 0.4))),
        T("une2", "unemployed", 0.3, ("home", "other", "home", "leisure", "home"),
          (_t(9.5, 1.5), _t(1.0, 0.4), _t(3.0, 1.0), _t(2.0, 0.6))),
        T("une3", "unemployed", 0.2, ("home", "leisure", "home"), (_t(13.0, 2.0), _t(2.0, 0.7))),
        T("ret1", "retired", 0.5, ("home", "shop", "home"), (_t(10.0, 1.5), _t(1.0, 0.4))),
        T("ret2", "retired", 0.3, ("home", "leisure", "home"), (_t(14.0, 2.0), _t(2.0, 0.7))),
        T("ret3", "retired", 0.2, ("home", "other", "shop", "home"), (_t(9.5, 1.5), _t(1.0, 0.3), _t(0.8, 0.3))),
        T("hom1", "homemaker", 0.4, ("home", "escort", "home", "shop", "home"),
          (_t(8.0, 0.4), _t(0.4, 0.1), _t(2.0, 0.8), _t(1.0, 0.4))),
        T("hom2", "homemaker", 0.35, ("home", "shop", "home"), (_t(10.0, 1.5), _t(1.0, 0.4))),
        T("hom3", "homemaker", 0.25, ("home", "leisure", "other", "home"), (_t(14.0, 2.0), _t(2.0, 0.6), _t(1.0, 0.3))),
    ]


def _zone_centres(n_zones):
    zpr = int(math.isqrt(n_zones))
    span = ZONE_SPAN * SPACING
    idx = np.arange(n_zones)
    return np.stack([(idx % zpr + 0.5) * span, (idx // zpr + 0.5) * span], axis=1)


def destination_tables(n_zones: int):
    """Row-stochastic (zones x zones) gravity tables.  Returns (work_table, od)."""
    c = _zone_centres(n_zones)
    d_km = np.hypot(*(c[:, None, :] - c[None, :, :]).transpose(2, 0, 1)) / 1000.0
    attract = np.where(np.isin(np.arange(n_zones), CENTRAL_ZONES), 3.0, 1.0)

    def gravity(decay_km, pull):
        m = attract[None, :] ** pull * np.exp(-d_km / decay_km)
        return m / m.sum(axis=1, keepdims=True)

    work = {"work": gravity(3.0, 1.0), "education": gravity(1.5, 0.3)}
    od = {
        "shop": gravity(1.2, 1.0),
        "leisure": gravity(2.0, 1.0),
        "business": gravity(2.5, 1.0),
        "escort": gravity(0.8, 0.2),
        "other": gravity(1.5, 0.5),
        "home": gravity(1.0, 0.0),
    }
    return work, od


def initial_modes(plan, person, network, walk_limit_m: float = 1500.0):
    """Car for owners; otherwise walk for short tours, PT for the rest."""
    for tour in plan.tours():
        if person.car_owner:
            mode = "car"
        else:
            home = plan.activities[tour[0]].link
            reach = max(network.beeline(home, plan.activities[k + 1].link) for k in tour)
            mode = "walk" if reach < walk_limit_m else "pt"
        for k in tour:
            plan.legs[k].mode = mode
    return plan


def grid16_population(city: ToyCity, n_agents: int, seed: int):
    """Synthesize persons and located initial plans for the toy city."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC17]))
    sample = seed_sample(rng)
    per_zone = max(1, n_agents // city.n_zones)
    controls = zone_controls(sample, city.n_zones, per_zone)
    persons = synthesize(sample, controls, rng)
    templates = chain_templates()
    work, od = destination_tables(city.n_zones)
    plans = []
    for p in persons:
        chain = allocate_chain(p, templates, rng)
        plan = assign_locations(p, chain, work, od, city.zone_links, rng)
        plans.append(initial_modes(plan, p, city.network))
    return persons, plans, controls


__all__ = ["ToyCity", "grid16_city", "grid16_population", "seed_sample", "zone_controls",
           "chain_templates", "destination_tables", "initial_modes", "age_band"]
