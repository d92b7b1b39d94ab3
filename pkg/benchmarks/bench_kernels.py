"""Compare the numba kernels with the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each path runs in its own interpreter (the switch is read at import time),
so numba timings exclude nothing but the first-call compilation, which is
reported separately.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def child(repeat: int) -> dict:
    from savsim import kernels
    from savsim._accel import USE_NUMBA
    from savsim.mobsim import SavService, run_day
    from savsim.network import Skims, free_flow_profile
    from savsim.presets import grid16_city, grid16_population

    city = grid16_city()
    net = city.network
    prof = free_flow_profile(net)
    out_ptr, out_links = net.csr("car")
    cost = np.ascontiguousarray(prof.int_costs()[:, 0])
    col = np.ascontiguousarray(prof.int_costs()[:, :1])
    rng = np.random.default_rng(0)
    pairs = rng.integers(net.n_nodes, size=(repeat, 2))
    res = {"numba": USE_NUMBA}

    t0 = time.perf_counter()
    kernels.all_pairs(out_ptr, out_links, net.link_to, net.length_m, cost)
    res["first_call_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    for _ in range(3):
        kernels.all_pairs(out_ptr, out_links, net.link_to, net.length_m, cost)
    res["all_pairs_ms"] = 1e3 * (time.perf_counter() - t0) / 3

    kernels.td_dijkstra(out_ptr, out_links, net.link_to, net.length_m, col, 1 << 40, 0, 1, 0)
    t0 = time.perf_counter()
    for s, d in pairs:
        kernels.td_dijkstra(out_ptr, out_links, net.link_to, net.length_m, col, 1 << 40, int(s), int(d), 0)
    res["td_dijkstra_us"] = 1e6 * (time.perf_counter() - t0) / repeat

    sup = [rng.integers(1, 4, size=8).astype(np.int64) for _ in range(repeat)]
    dem = [rng.integers(1, 4, size=8).astype(np.int64) for _ in range(repeat)]
    cst = [rng.integers(0, 5000, size=(8, 8)).astype(np.int64) for _ in range(repeat)]
    kernels.transport_min_cost_flow(sup[0], dem[0], cst[0])
    t0 = time.perf_counter()
    for a, b, c in zip(sup, dem, cst):
        kernels.transport_min_cost_flow(a, b, c)
    res["transport_8x8_us"] = 1e6 * (time.perf_counter() - t0) / repeat

    persons, plans, _ = grid16_population(city, 2000, seed=1)
    for p in plans:
        for leg in p.legs:
            if leg.mode in ("walk", "pt"):
                leg.mode = "sav"  # load the dispatcher
    svc = SavService(60, 4, city.depots)
    t0 = time.perf_counter()
    day = run_day(net, persons, plans, prof, Skims(net, prof), service=svc, parking=city.parking)
    res["sav_day_s"] = time.perf_counter() - t0
    res["sav_requests"] = len(day.requests)
    return res


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(child(args.repeat)))
        return
    rows = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, SAVSIM_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                             env=env, check=True, capture_output=True, text=True)
        rows[label] = json.loads(out.stdout.strip().splitlines()[-1])
    keys = ["first_call_s", "all_pairs_ms", "td_dijkstra_us", "transport_8x8_us", "sav_day_s"]
    print(f"{'metric':<20}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for k in keys:
        a, b = rows["numba"][k], rows["numpy"][k]
        print(f"{k:<20}{a:>12.3f}{b:>12.3f}{b / a if a else float('nan'):>9.1f}x")
    print(f"SAV requests in the day: {rows['numba']['sav_requests']} (numba) "
          f"{rows['numpy']['sav_requests']} (numpy)")


if __name__ == "__main__":
    main()
