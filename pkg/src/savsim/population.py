"""Synthetic population, activity chains and located day plans."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SOCPROF = ("employed", "unemployed", "student", "child", "retired", "homemaker")
ACTIVITY_TYPES = ("home", "work", "education", "shop", "leisure", "business", "escort", "other")
AGE_EDGES = (14, 25, 45, 65)
AGE_LABELS = ("<14", "14-24", "25-44", "45-64", "65+")
MODES = ("car", "pt", "walk", "sav")
FIXED_PURPOSES = ("work", "education")


class PopulationError(ValueError):
    pass


def age_band(age: int) -> str:
    return AGE_LABELS[int(np.searchsorted(AGE_EDGES, age, side="right"))]


@dataclass(frozen=True)
class Person:
    id: str
    age: int
    gender: str
    income: int
    socprof: str
    car_owner: bool
    home_zone: int = -1

    def __post_init__(self):
        if (self.socprof == "child") != (self.age < 14):
            raise PopulationError(f"{self.id}: socprof {self.socprof!r} inconsistent with age {self.age}")


def attribute_levels(p: Person) -> dict:
    return {
        "age_gender": f"{age_band(p.age)}|{p.gender}",
        "income": str(p.income),
        "socprof": p.socprof,
    }


@dataclass
class ZoneControls:
    zone: int
    marginals: dict  # attribute -> {level: count}

    @property
    def total(self) -> int:
        first = next(iter(self.marginals.values()))
        return int(round(sum(first.values())))

    def validate(self):
        totals = []
        for attr, levels in self.marginals.items():
            if any(c < 0 for c in levels.values()):
                raise PopulationError(f"zone {self.zone}: negative marginal in {attr}")
            totals.append(sum(levels.values()))
        if max(totals) - min(totals) > len(totals):
            raise PopulationError(f"zone {self.zone}: marginal totals disagree {totals}")


# --------------------------------------------------------------------------
# synthesis

def _level_matrix(seed, levels):
    index = {lv: k for k, lv in enumerate(levels)}
    a = np.zeros((len(seed), len(levels)), dtype=np.int64)
    for row, p in enumerate(seed):
        for attr, lv in attribute_levels(p).items():
            k = index.get((attr, lv))
            if k is not None:
                a[row, k] = 1
    return a


def synthesize(seed_sample, controls, rng: np.random.Generator, eps: float = 0.05,
               max_steps: int = 20000, batch: int = 48,
               max_kicks: int = 100) -> list[Person]:
    """Fitness-based synthesis: draw zone pools from the seed, then swap
    members in and out until every marginal is within ``eps`` relative error
    (or the search gives up; the best pool seen is kept)."""
    seed_sample = list(seed_sample)
    if not seed_sample:
        raise PopulationError("empty seed sample")
    persons = []
    for ctl in controls:
        ctl.validate()
        levels = [(attr, lv) for attr, lvs in ctl.marginals.items() for lv in lvs]
        target = np.array([ctl.marginals[a][lv] for a, lv in levels], dtype=float)
        a = _level_matrix(seed_sample, levels)
        present = a.sum(axis=0)
        for k, (attr, lv) in enumerate(levels):
            if target[k] > 0 and present[k] == 0:
                raise PopulationError(f"seed sample lacks control category {attr}={lv}")
        n = ctl.total
        denom = np.maximum(target, 1.0)
        sel = rng.integers(len(seed_sample), size=n)
        counts = a[sel].sum(axis=0).astype(float)
        fails = kicks = 0
        best_sel, best_obj = sel.copy(), np.inf
        for _ in range(max_steps):
            err = counts - target
            rel = np.abs(err) / denom
            bad = np.flatnonzero(rel > eps)
            cur = len(bad) * 1e6 + rel.sum()
            if cur < best_obj:
                best_sel, best_obj = sel.copy(), cur
            if len(bad) == 0 or kicks > max_kicks:
                break
            # random violator rather than the worst one, to get out of local minima
            k = int(bad[rng.integers(len(bad))])
            if err[k] > 0:
                out_pool = np.flatnonzero(a[sel, k] == 1)
                in_pool = np.flatnonzero(a[:, k] == 0)
            else:
                out_pool = np.flatnonzero(a[sel, k] == 0)
                in_pool = np.flatnonzero(a[:, k] == 1)
            if len(out_pool) == 0 or len(in_pool) == 0:
                fails += 1
                continue
            outs = rng.choice(out_pool, size=min(batch, len(out_pool)), replace=False)
            ins = rng.choice(in_pool, size=min(batch, len(in_pool)), replace=False)
            change = a[ins][None, :, :] - a[sel[outs]][:, None, :]
            new = np.abs(counts + change - target) / denom
            # fewest violations first, then total relative error
            obj = (new > eps).sum(axis=2) * 1e6 + new.sum(axis=2)
            o, q = np.unravel_index(int(np.argmin(obj)), obj.shape)
            stuck = fails > 40
            if obj[o, q] < cur - 1e-12 or stuck:
                counts += change[o, q]
                sel[outs[o]] = ins[q]
                fails = 0
                kicks += stuck
            else:
                fails += 1
        sel = best_sel
        for k, row in enumerate(sel):
            persons.append(replace(seed_sample[row], id=f"z{ctl.zone}_{k}", home_zone=ctl.zone))
    return persons


def validate_synthesis(persons, controls) -> dict:
    """Relative error |synthetic - control| / max(control, 1) per zone and level."""
    counts = {}
    for p in persons:
        for attr, lv in attribute_levels(p).items():
            key = (p.home_zone, attr, lv)
            counts[key] = counts.get(key, 0) + 1
    report = {}
    for ctl in controls:
        for attr, lvs in ctl.marginals.items():
            for lv, c in lvs.items():
                syn = counts.get((ctl.zone, attr, lv), 0)
                report[(ctl.zone, attr, lv)] = abs(syn - c) / max(c, 1)
    return report


# --------------------------------------------------------------------------
# activity chains

@dataclass(frozen=True)
class ChainTemplate:
    id: str
    group: str
    probability: float
    activities: tuple  # activity types, first and last "home"
    # (mean, sd) in seconds: end time of the first activity, then durations
    times: tuple

    def __post_init__(self):
        if self.activities[0] != "home" or self.activities[-1] != "home":
            raise PopulationError(f"template {self.id}: chains start and end at home")
        if len(self.times) != len(self.activities) - 1:
            raise PopulationError(f"template {self.id}: need one time profile per non-final activity")


def check_templates(templates):
    totals = {}
    for t in templates:
        totals[t.group] = totals.get(t.group, 0.0) + t.probability
    for group, s in totals.items():
        if abs(s - 1.0) > 1e-9:
            raise PopulationError(f"template probabilities for {group!r} sum to {s}")


def allocate_chain(person: Person, templates, rng: np.random.Generator):
    """Draw a template for the person's group and sample activity end times.

    Returns ``[(type, end_time), ...]``; the last activity has end ``None``.
    """
    group = [t for t in templates if t.group == person.socprof]
    if not group:
        raise PopulationError(f"no activity chain template for group {person.socprof!r}")
    probs = np.array([t.probability for t in group])
    tpl = group[int(rng.choice(len(group), p=probs / probs.sum()))]
    ends = []
    prev = None
    for k, (mean, sd) in enumerate(tpl.times):
        draw = float(rng.normal(mean, sd))
        if k == 0:
            end = max(0, int(round(draw)))
        else:
            end = prev + max(0, int(round(draw)))
        if prev is not None and end < prev + 1:
            end = prev + 1
        ends.append(end)
        prev = end
    chain = [(a, e) for a, e in zip(tpl.activities[:-1], ends)]
    chain.append((tpl.activities[-1], None))
    return chain


# --------------------------------------------------------------------------
# plans

@dataclass
class Activity:
    type: str
    link: int
    end_time: int | None


@dataclass
class Leg:
    mode: str
    route: tuple | None = None  # car legs: links after the origin link
    distance: float = 0.0


@dataclass
class Plan:
    activities: list
    legs: list
    score: float | None = None

    def copy(self) -> "Plan":
        return Plan([replace(a) for a in self.activities], [replace(l) for l in self.legs], None)

    def signature(self) -> tuple:
        return (tuple((a.type, a.link, a.end_time) for a in self.activities),
                tuple((l.mode, l.route) for l in self.legs))

    def tours(self) -> list[list[int]]:
        """Leg indices grouped into home-based tours."""
        tours, cur = [], []
        for k, _ in enumerate(self.legs):
            cur.append(k)
            if self.activities[k + 1].type == "home":
                tours.append(cur)
                cur = []
        if cur:
            tours.append(cur)
        return tours

    def validate(self, person: Person):
        if len(self.activities) != len(self.legs) + 1:
            raise PopulationError(f"{person.id}: activities and legs must alternate")
        for leg in self.legs:
            if leg.mode not in MODES:
                raise PopulationError(f"{person.id}: unknown mode {leg.mode!r}")
            if leg.mode == "car" and not person.car_owner:
                raise PopulationError(f"{person.id}: car leg without a car")


def assign_locations(person: Person, chain, work_table: dict, od: dict, zone_links: dict,
                     rng: np.random.Generator, home_link: int | None = None) -> Plan:
    """Bind every activity of ``chain`` to a link.

    ``work_table[purpose]`` and ``od[purpose]`` are (zones x zones) row-stochastic
    matrices; work/education use the home-zone row of the former, every other
    purpose the origin-zone row of the latter.
    """
    def pick_link(zone):
        links = zone_links.get(zone)
        if not links:
            raise PopulationError(f"zone {zone} has no links")
        return int(links[int(rng.integers(len(links)))])

    def draw_zone(row):
        row = np.asarray(row, dtype=float)
        return int(rng.choice(len(row), p=row / row.sum()))

    if home_link is None:
        home_link = pick_link(person.home_zone)
    fixed = {}
    acts = []
    zone = person.home_zone
    for act_type, end in chain:
        if act_type == "home":
            link, zone = home_link, person.home_zone
        elif act_type in FIXED_PURPOSES:
            if act_type not in fixed:
                z = draw_zone(work_table[act_type][person.home_zone])
                fixed[act_type] = (pick_link(z), z)
            link, zone = fixed[act_type]
        else:
            zone = draw_zone(od[act_type][zone])
            link = pick_link(zone)
        acts.append(Activity(act_type, link, end))
    legs = [Leg("walk") for _ in range(len(acts) - 1)]
    return Plan(acts, legs)


# --------------------------------------------------------------------------
# files

def write_population(persons, plans, directory, link_ids) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "population.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "age", "gender", "income", "socprof", "car_owner", "home_zone"])
        for p in persons:
            w.writerow([p.id, p.age, p.gender, p.income, p.socprof, int(p.car_owner), p.home_zone])
    with open(directory / "plans.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["person", "seq", "element", "type_or_mode", "link", "end_time", "route"])
        for p, plan in zip(persons, plans):
            for k, act in enumerate(plan.activities):
                w.writerow([p.id, 2 * k, "act", act.type, link_ids[act.link],
                            "" if act.end_time is None else act.end_time, ""])
                if k < len(plan.legs):
                    leg = plan.legs[k]
                    route = " ".join(link_ids[l] for l in leg.route) if leg.route else ""
                    w.writerow([p.id, 2 * k + 1, "leg", leg.mode, "", "", route])


def read_population(directory, link_index: dict):
    directory = Path(directory)
    persons = []
    with open(directory / "population.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            persons.append(Person(r["id"], int(r["age"]), r["gender"], int(r["income"]),
                                  r["socprof"], bool(int(r["car_owner"])), int(r["home_zone"])))
    rows = {}
    with open(directory / "plans.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(r["person"], []).append(r)
    plans = []
    for p in persons:
        acts, legs = [], []
        for r in sorted(rows.get(p.id, []), key=lambda r: int(r["seq"])):
            if r["element"] == "act":
                end = int(r["end_time"]) if r["end_time"] else None
                acts.append(Activity(r["type_or_mode"], link_index[r["link"]], end))
            else:
                route = tuple(link_index[x] for x in r["route"].split()) if r["route"] else None
                legs.append(Leg(r["type_or_mode"], route))
        plans.append(Plan(acts, legs))
    return persons, plans
