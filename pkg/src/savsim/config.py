"""Scenario configuration (TOML) and scenario assembly.

One file determines a run completely; every field below has a documented
default and unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .coevolution import ReplanParams, Scenario, StrategyWeights
from .mobsim import MobsimParams, SavService
from .network import read_network
from .population import read_population
from .presets import grid16_city, grid16_population
from .savfleet import DispatchParams, RebalanceParams
from .scoring import (ActivityParams, FareScheme, ModeParams, ScoringParams, TasteFactors,
                      default_scoring_params)


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    name: str = "grid16"
    seed: int = 1
    iterations: int = 100
    output: str = "output"
    sample_rate: float = 1.0
    write_events: bool = True


@dataclass
class CitySection:
    preset: str = "grid16"  # or "files"
    agents: int = 10000
    network_dir: str = ""
    population_dir: str = ""


@dataclass
class FleetSection:
    enabled: bool = True
    size: int = 200
    capacity: int = 4
    ridesharing: bool = True
    rebalancing: bool = True
    depots: list = field(default_factory=list)  # link ids; empty = preset depots
    detour_factor: float = 1.3
    max_wait: int = 900
    stop_duration: int = 60
    extended_detour: bool = True
    plan_margin: int = 1
    rebalance_interval: int = 300
    idle_threshold: int = 600
    demand_horizon: int = 3600
    cell_size: float = 1000.0


@dataclass
class FareSection:
    individual_per_km: float = 0.5
    shared_per_km: float = 0.4
    car_per_km: float = 0.3
    pt_flat: float = 1.5
    shared_multiplier: float = 1.0


@dataclass
class ReplanSection:
    reroute: float = 0.05
    mode: float = 0.10
    time: float = 0.05
    select: float = 0.80
    innovation_cutoff: float = 0.8
    memory: int = 5
    beta_sel: float = 1.0
    time_bound: int = 600


@dataclass
class MobsimSection:
    walk_speed: float = 1.34
    pt_speed: float = 6.7
    pt_wait: int = 300
    beeline_factor: float = 1.3
    horizon: int = 129600
    bin_width: int = 900


def _default_activities():
    p = default_scoring_params()
    return {k: {"typical_duration_h": v.typical_duration / 3600.0, "beta_dur": v.beta_dur}
            for k, v in p.activities.items()}


def _default_modes():
    p = default_scoring_params()
    return {k: {"asc": v.asc, "beta_tt": v.beta_tt, "beta_money": v.beta_money}
            for k, v in p.modes.items()}


def _default_taste():
    p = default_scoring_params()
    return [{"socprof": k[0], "age": k[1], "gender": k[2], "income": k[3],
             "f_time": v[0], "f_cost": v[1]} for k, v in p.taste.table.items()]


@dataclass
class ScoringSection:
    wait_weight: float = 1.5
    car_owner_bonus: float = 0.5
    no_parking_penalty: float = -2.0
    rejection_penalty: float = -10.0
    stuck_penalty: float = -100.0
    extended_detour_rate: float = 12.0
    activities: dict = field(default_factory=_default_activities)
    modes: dict = field(default_factory=_default_modes)
    taste: list = field(default_factory=_default_taste)


@dataclass
class ScenarioConfig:
    run: RunSection = field(default_factory=RunSection)
    city: CitySection = field(default_factory=CitySection)
    fleet: FleetSection = field(default_factory=FleetSection)
    fares: FareSection = field(default_factory=FareSection)
    replanning: ReplanSection = field(default_factory=ReplanSection)
    mobsim: MobsimSection = field(default_factory=MobsimSection)
    scoring: ScoringSection = field(default_factory=ScoringSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    def with_overrides(self, **dotted) -> "ScenarioConfig":
        """Copy with ``section.field`` values replaced, e.g. ``{"fleet.size": 50}``."""
        data = self.to_dict()
        for key, value in dotted.items():
            section, name = key.split(".", 1)
            if section not in data or name not in data[section]:
                raise ConfigError(f"{key}: unknown field")
            data[section][name] = value
        return from_dict(data)


_SECTIONS = {f.name: f.default_factory for f in fields(ScenarioConfig)}


def _coerce(section: str, f, value):
    where = f"{section}.{f.name}"
    default = getattr(_SECTIONS[section](), f.name)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
    elif isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a table")
    return value


def from_dict(data: dict) -> ScenarioConfig:
    parts = {}
    for section, raw in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"{section}: unknown section")
        if not isinstance(raw, dict):
            raise ConfigError(f"{section}: expected a table")
        cls = type(_SECTIONS[section]())
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"{section}.{key}: unknown field")
            kwargs[key] = _coerce(section, known[key], value)
        parts[section] = cls(**kwargs)
    cfg = ScenarioConfig(**parts)
    validate(cfg)
    return cfg


def loads(text: str) -> ScenarioConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    return from_dict(data)


def load(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = loads(path.read_text())
    base = path.parent
    # relative data paths are relative to the config file
    for name in ("network_dir", "population_dir"):
        value = getattr(cfg.city, name)
        if value and not Path(value).is_absolute():
            setattr(cfg.city, name, str((base / value).resolve()))
    validate(cfg, check_files=True)
    return cfg


def validate(cfg: ScenarioConfig, check_files: bool = False) -> None:
    r = cfg.run
    if r.iterations < 1:
        raise ConfigError("run.iterations: must be >= 1")
    if not 0 < r.sample_rate <= 1:
        raise ConfigError("run.sample_rate: must be in (0, 1]")
    if cfg.city.preset not in ("grid16", "files"):
        raise ConfigError(f"city.preset: unknown preset {cfg.city.preset!r}")
    if cfg.city.preset == "grid16" and cfg.city.agents < 16:
        raise ConfigError("city.agents: must be >= 16")
    f = cfg.fleet
    if f.size < 0:
        raise ConfigError("fleet.size: must be >= 0")
    if f.capacity < 1:
        raise ConfigError("fleet.capacity: must be >= 1")
    if f.detour_factor < 1:
        raise ConfigError("fleet.detour_factor: must be >= 1")
    for name in ("max_wait", "rebalance_interval", "idle_threshold", "demand_horizon"):
        if getattr(f, name) <= 0:
            raise ConfigError(f"fleet.{name}: must be > 0")
    if f.cell_size <= 0:
        raise ConfigError("fleet.cell_size: must be > 0")
    if f.plan_margin < 0 or f.stop_duration < 0:
        raise ConfigError("fleet.plan_margin and fleet.stop_duration: must be >= 0")
    for name in ("individual_per_km", "shared_per_km", "car_per_km", "pt_flat", "shared_multiplier"):
        if getattr(cfg.fares, name) < 0:
            raise ConfigError(f"fares.{name}: must be >= 0")
    rp = cfg.replanning
    total = rp.reroute + rp.mode + rp.time + rp.select
    if min(rp.reroute, rp.mode, rp.time, rp.select) < 0 or abs(total - 1) > 1e-9:
        raise ConfigError("replanning: strategy weights must be >= 0 and sum to 1")
    if rp.memory < 1:
        raise ConfigError("replanning.memory: must be >= 1")
    try:
        scoring_params(cfg)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"scoring: {exc}") from None
    if check_files and cfg.city.preset == "files":
        for name, required in (("network_dir", ("nodes.csv", "links.csv")),
                               ("population_dir", ("population.csv", "plans.csv"))):
            d = getattr(cfg.city, name)
            if not d:
                raise ConfigError(f"city.{name}: required for preset 'files'")
            for fn in required:
                p = Path(d) / fn
                if not p.is_file():
                    raise ConfigError(f"city.{name}: missing file {p}")
        if f.enabled and not f.depots:
            raise ConfigError("fleet.depots: required for preset 'files'")


def scoring_params(cfg: ScenarioConfig) -> ScoringParams:
    s = cfg.scoring
    acts = {k: ActivityParams(v["typical_duration_h"] * 3600.0, v.get("beta_dur", 6.0))
            for k, v in s.activities.items()}
    modes = {k: ModeParams(v.get("asc", 0.0), v.get("beta_tt", -6.0), v.get("beta_money", 0.6))
             for k, v in s.modes.items()}
    taste = TasteFactors({(str(t["socprof"]), str(t["age"]), str(t["gender"]), str(t["income"])):
                          (float(t["f_time"]), float(t["f_cost"])) for t in s.taste})
    return ScoringParams(acts, modes, s.wait_weight, s.car_owner_bonus, s.no_parking_penalty,
                         s.rejection_penalty, s.stuck_penalty, s.extended_detour_rate, taste)


def fare_scheme(cfg: ScenarioConfig) -> FareScheme:
    f = cfg.fares
    return FareScheme(f.individual_per_km, f.shared_per_km * f.shared_multiplier,
                      f.car_per_km, f.pt_flat)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Materialize network, population, fleet and parameters for a run."""
    r = cfg.run
    if cfg.city.preset == "grid16":
        city = grid16_city()
        network = city.network
        persons, plans, _ = grid16_population(city, cfg.city.agents, r.seed)
        parking = city.parking
        depots = list(city.depots)
    else:
        network = read_network(cfg.city.network_dir)
        persons, plans = read_population(cfg.city.population_dir, network.link_index)
        parking = None
        depots = []
    if cfg.fleet.depots:
        try:
            depots = [network.link_index[d] for d in cfg.fleet.depots]
        except KeyError as exc:
            raise ConfigError(f"fleet.depots: unknown link {exc.args[0]!r}") from None
    if r.sample_rate < 1:
        rng = np.random.default_rng(np.random.SeedSequence([r.seed, 0x5A]))
        keep = np.flatnonzero(rng.random(len(persons)) < r.sample_rate)
        persons = [persons[k] for k in keep]
        plans = [plans[k] for k in keep]
    f = cfg.fleet
    service = None
    if f.enabled and f.size > 0:
        dispatch = DispatchParams(f.detour_factor, f.max_wait, f.stop_duration, f.extended_detour)
        rebalance = None
        if f.rebalancing:
            rebalance = RebalanceParams(f.cell_size, f.rebalance_interval, f.idle_threshold,
                                        f.demand_horizon)
        size = max(1, int(round(f.size * r.sample_rate)))
        service = SavService(size, f.capacity, depots, dispatch, rebalance, f.ridesharing)
    m = cfg.mobsim
    mob = MobsimParams(r.sample_rate, m.walk_speed, m.pt_speed, m.pt_wait, m.beeline_factor, m.horizon)
    rp = cfg.replanning
    replan = ReplanParams(StrategyWeights(rp.reroute, rp.mode, rp.time, rp.select, rp.innovation_cutoff),
                          rp.memory, rp.beta_sel, rp.time_bound)
    return Scenario(r.name, network, persons, plans, scoring_params(cfg), fare_scheme(cfg), mob,
                    service, parking, replan, r.seed, m.bin_width, f.plan_margin)
