"""Co-evolutionary plan loop: execute, score, replan, select."""
from __future__ import annotations

import bisect
import csv
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mobsim import MobsimParams, SavService, run_day
from .network import Skims, free_flow_profile, profile_from_traversals, shortest_path
from .population import MODES
from .savfleet import CellGrid
from .scoring import FareScheme, ScoringParams, score_plan, taste_for

STRATEGIES = ("reroute", "mode", "time", "select")


@dataclass
class StrategyWeights:
    reroute: float = 0.05
    mode: float = 0.10
    time: float = 0.05
    select: float = 0.80
    innovation_cutoff: float = 0.8

    def __post_init__(self):
        w = self.as_array()
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("strategy weights must be nonnegative and sum to 1")
        if not 0 <= self.innovation_cutoff <= 1:
            raise ValueError("innovation_cutoff must be in [0, 1]")

    def as_array(self, innovate: bool = True) -> np.ndarray:
        if not innovate:
            return np.array([0.0, 0.0, 0.0, 1.0])
        return np.array([self.reroute, self.mode, self.time, self.select], dtype=float)


@dataclass
class ReplanParams:
    weights: StrategyWeights = field(default_factory=StrategyWeights)
    memory: int = 5
    beta_sel: float = 1.0
    time_bound: int = 600


class PlanMemory:
    """Up to ``capacity`` plans with scores; exactly one is selected."""

    def __init__(self, plan, capacity: int = 5):
        if capacity < 1:
            raise ValueError("memory capacity must be >= 1")
        self.capacity = capacity
        self.plans = [plan]
        self.selected = 0

    def __len__(self):
        return len(self.plans)

    @property
    def current(self):
        return self.plans[self.selected]

    def scores(self) -> np.ndarray:
        return np.array([-math.inf if p.score is None else p.score for p in self.plans])

    def add(self, plan) -> None:
        """Store ``plan`` and select it, evicting the worst plan when full."""
        if len(self.plans) >= self.capacity:
            worst = int(np.argmin(self.scores()))
            del self.plans[worst]
        self.plans.append(plan)
        self.selected = len(self.plans) - 1


def select_plan(memory: PlanMemory, rng: np.random.Generator, beta: float = 1.0) -> int:
    """Multinomial-logit draw over memorized scores; ``beta=inf`` is argmax."""
    n = len(memory.plans)
    if n == 1:
        memory.selected = 0
        return 0
    s = [-math.inf if p.score is None else p.score for p in memory.plans]
    if math.isinf(beta):
        k = max(range(n), key=s.__getitem__)
    else:
        top = max(s)
        w = [math.exp(beta * (x - top)) for x in s]
        cdf = list(itertools.accumulate(w))
        k = min(bisect.bisect_right(cdf, rng.random() * cdf[-1]), n - 1)
    memory.selected = k
    return k


def feasible_modes(person, with_sav: bool = True):
    return tuple(m for m in MODES if (m != "car" or person.car_owner) and (m != "sav" or with_sav))


def mutate_mode(plan, person, rng: np.random.Generator, with_sav: bool = True, router=None):
    """Switch every leg of one random tour to a uniformly drawn feasible mode."""
    new = plan.copy()
    tours = new.tours()
    if not tours:
        return new
    tour = tours[int(rng.integers(len(tours)))]
    modes = feasible_modes(person, with_sav)
    mode = modes[int(rng.integers(len(modes)))]
    for k in tour:
        new.legs[k].mode = mode
        new.legs[k].route = None
        if mode == "car" and router is not None:
            new.legs[k].route = router(new, k)
    return new


def mutate_time(plan, rng: np.random.Generator, bound: int = 600):
    """Shift one activity end time uniformly within ``±bound`` seconds, clamped
    so that end times stay strictly increasing."""
    new = plan.copy()
    acts = new.activities
    ends = [k for k, a in enumerate(acts) if a.end_time is not None]
    if not ends or bound == 0:
        return new
    k = ends[int(rng.integers(len(ends)))]
    t = acts[k].end_time + int(rng.integers(-bound, bound + 1))
    lo = 0 if k == 0 else acts[k - 1].end_time + 1
    t = max(t, lo)
    if k + 1 < len(acts) and acts[k + 1].end_time is not None:
        t = min(t, acts[k + 1].end_time - 1)
    acts[k].end_time = int(max(t, lo))
    return new


def reroute(plan, router):
    new = plan.copy()
    for k, leg in enumerate(new.legs):
        if leg.mode == "car":
            leg.route = router(new, k)
    return new


def make_router(network, profile):
    def route(plan, k):
        o = plan.activities[k].link
        d = plan.activities[k + 1].link
        if o == d:
            return ()
        t = plan.activities[k].end_time or 0
        path = shortest_path(network, profile, o, d, t, "car")
        return path.links if path.reachable else None
    return route


# --------------------------------------------------------------------------

@dataclass
class Scenario:
    name: str
    network: object
    persons: list
    plans: list
    scoring: ScoringParams
    fares: FareScheme = field(default_factory=FareScheme)
    mobsim: MobsimParams = field(default_factory=MobsimParams)
    service: SavService | None = None
    parking: object = None
    replanning: ReplanParams = field(default_factory=ReplanParams)
    seed: int = 1
    bin_width: int = 900
    plan_margin: int = 0  # s per link added to the dispatcher's travel times


@dataclass
class EquilibriumResult:
    memories: list
    score_history: list
    log: list  # dict per iteration
    day: object  # DayResult of the final iteration
    profile: object
    convergence: float

    def executed_plans(self):
        return [m.current for m in self.memories]


def convergence_statistic(history, tail: float = 0.1) -> float:
    """(max - min) / |mean| of the mean executed score over the last ``tail`` fraction."""
    h = np.asarray(history, dtype=float)
    n = max(1, int(math.ceil(len(h) * tail)))
    last = h[-n:]
    return float((last.max() - last.min()) / max(abs(last.mean()), 1e-12))


def relaxation_ok(history, window: int = 10, band: float = 0.02) -> bool:
    """Moving average over the final half never drops more than ``band`` below its running max."""
    h = np.asarray(history, dtype=float)
    if len(h) < window:
        return True
    ma = np.convolve(h, np.ones(window) / window, mode="valid")
    half = ma[len(ma) // 2:] if len(h) // 2 >= window else ma
    run = np.maximum.accumulate(half)
    return bool((half >= run - band * np.abs(run)).all())


def _log_row(it, res, mean_score):
    counts = {m: 0 for m in MODES}
    for row in res.events.rows:
        if row[1] == "person_arrives":
            counts[row[6][5:]] += 1
    total = max(1, sum(counts.values()))
    reqs = res.requests
    served = [r for r in reqs if r.status == "completed"]
    wait = float(np.mean([r.pickup_time - r.t_sub for r in served])) if served else 0.0
    row = {"iteration": it, "mean_executed_score": round(mean_score, 6)}
    for m in MODES:
        row[f"share_{m}"] = round(100.0 * counts[m] / total, 4)
    row.update({"sav_requests": len(reqs), "sav_served": len(served),
                "sav_rejected": sum(r.status == "rejected" for r in reqs),
                "sav_mean_wait_s": round(wait, 3), "stuck": res.n_stuck})
    return row


def run_equilibrium(scenario: Scenario, iterations: int, progress=None) -> EquilibriumResult:
    net = scenario.network
    rp = scenario.replanning
    memories = [PlanMemory(p.copy(), rp.memory) for p in scenario.plans]
    profile = free_flow_profile(net, scenario.bin_width)
    grid = None
    if scenario.service and scenario.service.rebalance:
        grid = CellGrid(net, scenario.service.rebalance.cell_size)
    with_sav = scenario.service is not None
    history, log = [], []
    tastes = [taste_for(scenario.scoring, p) for p in scenario.persons]
    prev_events = None
    res = None
    skim_cache = {}
    cutoff = rp.weights.innovation_cutoff * iterations
    for it in range(iterations):
        if it > 0:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([scenario.seed, it])))
            weights = rp.weights.as_array(innovate=it < cutoff)
            strategy = rng.choice(4, size=len(memories), p=weights)
            router = make_router(net, profile)
            for m, person, s in zip(memories, scenario.persons, strategy):
                if s == 3:
                    select_plan(m, rng, rp.beta_sel)
                    continue
                base = m.current
                if s == 0:
                    new = reroute(base, router)
                elif s == 1:
                    new = mutate_mode(base, person, rng, with_sav, router)
                else:
                    new = mutate_time(base, rng, rp.time_bound)
                m.add(new)
        skims = plan_skims = None
        if with_sav:
            skims = Skims(net, profile, "sav", 0, skim_cache)
            plan_skims = Skims(net, profile, "sav", scenario.plan_margin, skim_cache)
        res = run_day(net, scenario.persons, [m.current for m in memories], profile, skims,
                      scenario.mobsim, scenario.service, prev_events, scenario.parking,
                      scenario.fares, grid, plan_skims)
        total = 0.0
        for m, person, exp, taste in zip(memories, scenario.persons, res.experiences, tastes):
            s = score_plan(scenario.scoring, person, exp, taste)
            m.current.score = s
            total += s
        mean = total / max(1, len(memories))
        history.append(mean)
        row = _log_row(it, res, mean)
        log.append(row)
        if progress:
            progress(row)
        if with_sav:
            # keep only matrices this day needed; most bins repeat across days
            used = skims.used | plan_skims.used
            skim_cache = {k: v for k, v in skim_cache.items() if k in used}
        prev_events = res.events.rows
        profile = profile_from_traversals(net, *res.traversals, scenario.bin_width, profile.n_bins)
    return EquilibriumResult(memories, history, log, res, profile,
                             convergence_statistic(history) if history else 0.0)


def write_iteration_log(log, path) -> None:
    if not log:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(log[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(log)


__all__ = ["StrategyWeights", "ReplanParams", "PlanMemory", "select_plan", "mutate_mode",
           "mutate_time", "reroute", "make_router", "Scenario", "EquilibriumResult",
           "run_equilibrium", "convergence_statistic", "relaxation_ok", "write_iteration_log",
           "feasible_modes"]
