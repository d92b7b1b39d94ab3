"""Charypar-Nagel plan scoring with SAV taste variation and fares.

Every default below is a toy value chosen so the synthetic city produces a
nontrivial mode choice.  None of them is calibrated against survey data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

SECONDS_PER_HOUR = 3600.0
DAY = 86400


class ScoringError(ValueError):
    pass


@dataclass
class ActivityParams:
    typical_duration: float  # s
    beta_dur: float = 6.0  # utils/h
    minimal_duration: float | None = None  # s; defaults to typical * e^-1

    @property
    def t0(self) -> float:
        if self.minimal_duration is not None:
            return self.minimal_duration
        return self.typical_duration * math.exp(-1.0)


@dataclass
class ModeParams:
    asc: float = 0.0
    beta_tt: float = -6.0  # utils/h
    beta_money: float = 0.6  # utils/EUR


@dataclass
class FareScheme:
    individual_per_km: float = 0.50
    shared_per_km: float = 0.40
    car_per_km: float = 0.30
    pt_flat: float = 1.50

    def __post_init__(self):
        for name in ("individual_per_km", "shared_per_km", "car_per_km", "pt_flat"):
            if getattr(self, name) < 0:
                raise ScoringError(f"{name} must be >= 0")


def fare(scheme: FareScheme, mode_variant: str, direct_distance_km: float) -> float:
    """Price of one leg.  Shared SAV rides are billed on the direct distance."""
    if direct_distance_km < 0:
        raise ScoringError("distance must be >= 0")
    if mode_variant == "sav_individual":
        return scheme.individual_per_km * direct_distance_km
    if mode_variant == "sav_shared":
        return scheme.shared_per_km * direct_distance_km
    if mode_variant == "car":
        return scheme.car_per_km * direct_distance_km
    if mode_variant == "pt":
        return scheme.pt_flat if direct_distance_km > 0 else 0.0
    if mode_variant == "walk":
        return 0.0
    raise ScoringError(f"unknown mode variant {mode_variant!r}")


@dataclass
class TasteFactors:
    """(socprof, age band, gender, income band) -> (f_time, f_cost).

    Keys may use ``"*"`` as a wildcard.  An exact key wins; otherwise the
    first matching wildcard entry in insertion order applies; otherwise 1.0.
    """

    table: dict = field(default_factory=dict)

    def factors(self, socprof: str, age_band: str, gender: str, income: str) -> tuple[float, float]:
        key = (socprof, age_band, gender, str(income))
        hit = self.table.get(key)
        if hit is not None:
            return hit
        for pattern, value in self.table.items():
            if all(p == "*" or p == k for p, k in zip(pattern, key)):
                return value
        return (1.0, 1.0)


@dataclass
class ScoringParams:
    activities: dict
    modes: dict
    wait_weight: float = 1.5
    car_owner_bonus: float = 0.5
    no_parking_penalty: float = -2.0
    rejection_penalty: float = -10.0
    stuck_penalty: float = -100.0
    extended_detour_rate: float = 12.0  # utils/h of ride beyond the detour limit
    taste: TasteFactors = field(default_factory=TasteFactors)

    def __post_init__(self):
        if self.wait_weight < 1:
            raise ScoringError("wait_weight must be >= 1")
        for mode, p in self.modes.items():
            if p.beta_tt > 0:
                raise ScoringError(f"{mode}: beta_tt must be <= 0")
            if p.beta_money <= 0:
                raise ScoringError(f"{mode}: beta_money must be > 0")


def default_scoring_params() -> ScoringParams:
    h = SECONDS_PER_HOUR
    activities = {
        "home": ActivityParams(12 * h),
        "work": ActivityParams(8 * h),
        "education": ActivityParams(6 * h),
        "shop": ActivityParams(1 * h),
        "leisure": ActivityParams(2 * h),
        "business": ActivityParams(1 * h),
        "escort": ActivityParams(0.5 * h),
        "other": ActivityParams(1 * h),
    }
    modes = {
        "car": ModeParams(asc=0.0, beta_tt=-6.0, beta_money=0.6),
        "pt": ModeParams(asc=-1.0, beta_tt=-6.0, beta_money=0.6),
        "walk": ModeParams(asc=0.0, beta_tt=-9.0, beta_money=0.6),
        "sav": ModeParams(asc=-0.5, beta_tt=-6.0, beta_money=0.6),
    }
    taste = TasteFactors({
        ("*", "65+", "*", "*"): (1.4, 1.2),
        ("*", "45-64", "f", "*"): (1.2, 1.1),
        ("*", "45-64", "m", "*"): (1.1, 1.0),
        ("*", "14-24", "*", "*"): (0.9, 1.1),
        ("*", "*", "*", "0"): (1.0, 1.3),
        ("*", "*", "*", "3"): (0.9, 0.8),
    })
    return ScoringParams(activities, modes, taste=taste)


def score_activity(params: ScoringParams, act_type: str, duration: float) -> float:
    """Logarithmic performing utility, clamped at its value for the minimal duration."""
    if duration < 0:
        raise ScoringError("duration must be >= 0")
    try:
        a = params.activities[act_type]
    except KeyError:
        raise ScoringError(f"unknown activity type {act_type!r}") from None
    if duration <= a.t0:
        return 0.0
    return a.beta_dur * (a.typical_duration / SECONDS_PER_HOUR) * math.log(duration / a.t0)


def taste_for(params: ScoringParams, person) -> tuple[float, float]:
    from .population import age_band
    return params.taste.factors(person.socprof, age_band(person.age), person.gender,
                                str(person.income))


def score_leg(params: ScoringParams, person, mode: str, in_vehicle_time: float,
              wait_time: float = 0.0, detour_excess_time: float = 0.0,
              monetary_cost: float = 0.0, parking_available: bool = True,
              taste: tuple[float, float] | None = None) -> float:
    if in_vehicle_time < 0 or wait_time < 0 or detour_excess_time < 0:
        raise ScoringError("times must be >= 0")
    p = params.modes[mode]
    beta_tt, beta_c = p.beta_tt, p.beta_money
    ivt_h = in_vehicle_time / SECONDS_PER_HOUR
    wait_h = wait_time / SECONDS_PER_HOUR
    if mode == "sav":
        f_time, f_cost = taste if taste is not None else taste_for(params, person)
        beta_tt *= f_time
        beta_c *= f_cost
        u = p.asc + beta_tt * ivt_h + params.wait_weight * beta_tt * wait_h
        u -= params.extended_detour_rate * detour_excess_time / SECONDS_PER_HOUR
    else:
        u = p.asc + beta_tt * (ivt_h + wait_h)
    u -= beta_c * monetary_cost
    if mode == "car":
        if not person.car_owner:
            raise ScoringError(f"car leg for non-owner {person.id}")
        u += params.car_owner_bonus
        if not parking_available:
            u += params.no_parking_penalty
    return u


@dataclass
class LegExperience:
    mode: str
    in_vehicle_time: float
    wait_time: float = 0.0
    detour_excess_time: float = 0.0
    cost: float = 0.0
    parking_available: bool = True
    rejected: bool = False


@dataclass
class PlanExperience:
    activities: list  # [(type, performed duration s)]
    legs: list  # [LegExperience]
    stuck: bool = False


def score_plan(params: ScoringParams, person, experience: PlanExperience,
               taste: tuple[float, float] | None = None) -> float:
    if taste is None:
        taste = taste_for(params, person)
    total = 0.0
    for act_type, duration in experience.activities:
        total += score_activity(params, act_type, duration)
    for leg in experience.legs:
        total += score_leg(params, person, leg.mode, leg.in_vehicle_time, leg.wait_time,
                           leg.detour_excess_time, leg.cost, leg.parking_available, taste)
        if leg.rejected:
            total += params.rejection_penalty
    if experience.stuck:
        total += params.stuck_penalty
    return total
