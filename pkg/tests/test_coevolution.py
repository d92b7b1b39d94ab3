import math

import numpy as np
import pytest
from scipy import stats

from savsim.coevolution import (PlanMemory, ReplanParams, Scenario, StrategyWeights, convergence_statistic,
                                feasible_modes, mutate_mode, mutate_time, relaxation_ok, run_equilibrium,
                                select_plan)
from savsim.mobsim import SavService
from savsim.population import Activity, Leg, Person, Plan
from savsim.presets import grid16_city, grid16_population
from savsim.scoring import default_scoring_params

H = 3600


def plan(score=None, modes=("walk", "walk"), types=("home", "work", "home")):
    acts = [Activity(t, k, 8 * H + k * H if k < len(types) - 1 else None) for k, t in enumerate(types)]
    return Plan(acts, [Leg(m) for m in modes], score)


OWNER = Person("o", 40, "m", 2, "employed", True)
NON_OWNER = Person("n", 40, "f", 2, "employed", False)


def test_memory_bound_and_eviction():
    m = PlanMemory(plan(1.0), 3)
    m.add(plan(5.0))
    m.add(plan(-2.0))
    m.add(plan(None))
    assert len(m) == 3
    assert -2.0 not in [p.score for p in m.plans]
    assert m.current.score is None
    with pytest.raises(ValueError):
        PlanMemory(plan(), 0)


def test_select_single_plan():
    m = PlanMemory(plan(3.0))
    assert select_plan(m, np.random.default_rng(0)) == 0


def test_select_equal_scores_half_half():
    m = PlanMemory(plan(2.0))
    m.add(plan(2.0))
    rng = np.random.default_rng(1)
    n = 10_000
    ones = sum(select_plan(m, rng) for _ in range(n))
    assert abs(ones / n - 0.5) <= 0.02


def test_select_logit_probability():
    m = PlanMemory(plan(10.0))
    m.add(plan(0.0))
    rng = np.random.default_rng(2)
    n = 20_000
    first = sum(select_plan(m, rng) == 0 for _ in range(n)) / n
    want = math.exp(10) / (math.exp(10) + 1)
    assert abs(first - want) <= 3 * math.sqrt(want * (1 - want) / n) + 1e-4
    assert select_plan(m, rng, beta=math.inf) == 0


def test_mode_mutation_respects_car_ownership():
    rng = np.random.default_rng(3)
    p = plan(modes=("walk", "walk", "walk", "walk"), types=("home", "work", "home", "shop", "home"))
    for _ in range(500):
        assert all(l.mode != "car" for l in mutate_mode(p, NON_OWNER, rng).legs)
    assert "car" not in feasible_modes(NON_OWNER)
    assert "sav" not in feasible_modes(OWNER, with_sav=False)


def test_mode_mutation_flips_one_whole_tour():
    rng = np.random.default_rng(4)
    p = plan(modes=("walk", "walk", "walk", "walk"), types=("home", "work", "home", "shop", "home"))
    for _ in range(500):
        m = [l.mode for l in mutate_mode(p, OWNER, rng).legs]
        assert m[0] == m[1] and m[2] == m[3]
        assert "walk" in (m[0], m[2])
    assert [l.mode for l in p.legs] == ["walk"] * 4


def test_mode_mutation_uniform_over_feasible():
    rng = np.random.default_rng(8)
    p = plan()
    n = 8000
    seen = {}
    for _ in range(n):
        mode = mutate_mode(p, OWNER, rng).legs[0].mode
        seen[mode] = seen.get(mode, 0) + 1
    for mode in ("car", "pt", "walk", "sav"):
        assert abs(seen[mode] / n - 0.25) <= 0.02


def test_time_mutation_zero_bound_is_identity():
    p = plan()
    assert mutate_time(p, np.random.default_rng(0), 0).signature() == p.signature()


def test_time_mutation_clamped():
    p = plan()
    p.activities[0].end_time = 100
    rng = np.random.default_rng(5)
    for _ in range(500):
        new = mutate_time(p, rng, 600)
        ends = [a.end_time for a in new.activities[:-1]]
        assert ends[0] >= 0
        assert ends[1] > ends[0]


def test_time_mutation_uniform():
    p = plan(types=("home", "work"), modes=("walk",))
    p.activities[0].end_time = 10 * H
    rng = np.random.default_rng(6)
    shifts = [mutate_time(p, rng, 600).activities[0].end_time - 10 * H for _ in range(4000)]
    assert min(shifts) >= -600 and max(shifts) <= 600
    assert stats.kstest(shifts, stats.uniform(-600, 1201).cdf).pvalue > 0.01


def test_weights_validated():
    with pytest.raises(ValueError):
        StrategyWeights(0.5, 0.5, 0.5, 0.5)
    assert StrategyWeights().as_array(False).tolist() == [0, 0, 0, 1]


def test_convergence_helpers():
    assert convergence_statistic([1.0] * 20) == 0.0
    assert convergence_statistic([0.0] * 18 + [99.0, 101.0]) == pytest.approx(0.02)
    assert relaxation_ok(list(range(30)))
    assert not relaxation_ok([10.0] * 20 + [5.0] * 20)


@pytest.fixture(scope="module")
def small():
    city = grid16_city()
    persons, plans, _ = grid16_population(city, 200, seed=2)
    return city, persons, plans


def scenario(small, **kw):
    city, persons, plans = small
    return Scenario("t", city.network, persons, plans, default_scoring_params(),
                    service=SavService(10, 4, city.depots), parking=city.parking, **kw)


def test_single_iteration_keeps_initial_plans(small):
    res = run_equilibrium(scenario(small), 1)
    assert len(res.score_history) == 1
    assert all(len(m) == 1 for m in res.memories)
    def key(p):
        return p.signature()[0], tuple(l.mode for l in p.legs)
    assert [key(m.current) for m in res.memories] == [key(p) for p in small[2]]
    assert all(m.current.score is not None for m in res.memories)


def test_no_innovation_never_grows_memory(small):
    rp = ReplanParams(StrategyWeights(innovation_cutoff=0.0))
    res = run_equilibrium(scenario(small, replanning=rp), 4)
    assert all(len(m) == 1 for m in res.memories)


def test_trajectory_deterministic_and_bounded(small):
    a = run_equilibrium(scenario(small), 6)
    b = run_equilibrium(scenario(small), 6)
    assert a.log == b.log and a.score_history == b.score_history
    assert all(1 <= len(m) <= 5 for m in a.memories)
    assert any(len(m) > 1 for m in a.memories)
    c = run_equilibrium(scenario(small, seed=7), 6)
    assert c.log != a.log
