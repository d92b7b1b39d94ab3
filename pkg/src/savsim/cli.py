"""Command line: ``savsim run | sweep | report``.

Exit codes: 0 ok, 1 configuration error, 2 invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from .coevolution import relaxation_ok, run_equilibrium, write_iteration_log
from .metrics import KpiError, audit, compute_kpis, trend_compare

log = logging.getLogger("savsim")

WORKERS_ENV = "SAVSIM_WORKERS"

# named service designs; S0 has no SAV at all
SCENARIOS = {
    "S0": {"fleet.enabled": False},
    "S1": {"fleet.capacity": 4, "fleet.ridesharing": False},
    "S2": {"fleet.capacity": 2, "fleet.ridesharing": True},
    "S3": {"fleet.capacity": 4, "fleet.ridesharing": True},
    "S4": {"fleet.capacity": 6, "fleet.ridesharing": True},
}

AXES = {
    "fleet": ("fleet.size", int),
    "capacity": ("fleet.capacity", int),
    "ridesharing": ("fleet.ridesharing", "bool"),
    "rebalancing": ("fleet.rebalancing", "bool"),
    "fare": ("fares.shared_multiplier", float),
    "scenario": (None, str),
}


class InvariantViolation(RuntimeError):
    pass


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise cfgmod.ConfigError(f"not a boolean: {s!r}")


def parse_axis(spec: str):
    if "=" not in spec:
        raise cfgmod.ConfigError(f"axis {spec!r}: expected name=v1,v2,...")
    name, raw = spec.split("=", 1)
    name = name.strip()
    if name not in AXES:
        raise cfgmod.ConfigError(f"axis {name!r}: unknown (choose from {', '.join(AXES)})")
    conv = AXES[name][1]
    values = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            if conv == "bool":
                values.append(_parse_bool(item))
            else:
                values.append(conv(item))
        except ValueError:
            raise cfgmod.ConfigError(f"axis {name!r}: bad value {item!r}") from None
        if name == "scenario" and item not in SCENARIOS:
            raise cfgmod.ConfigError(f"axis scenario: unknown scenario {item!r}")
    if not values:
        raise cfgmod.ConfigError(f"axis {name!r}: no values")
    return name, values


def grid_points(axes):
    """Cartesian product of the axes, in the given order."""
    if not axes:
        raise cfgmod.ConfigError("sweep needs at least one axis")
    names = [a for a, _ in axes]
    for combo in itertools.product(*[v for _, v in axes]):
        yield dict(zip(names, combo))


def point_overrides(point: dict) -> dict:
    out = {}
    if "scenario" in point:
        out.update(SCENARIOS[point["scenario"]])
    for name, value in point.items():
        key = AXES[name][0]
        if key is not None:
            out[key] = value
    return out


def point_label(point: dict) -> str:
    return "_".join(f"{k}-{str(v).lower()}" for k, v in point.items())


# --------------------------------------------------------------------------

def execute(cfg: cfgmod.ScenarioConfig, outdir, progress=None) -> dict:
    """Full equilibrium run; writes events, kpi.json, iteration log and audit."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    scenario = cfgmod.build_scenario(cfg)
    result = run_equilibrium(scenario, cfg.run.iterations, progress)
    day = result.day
    (outdir / "config.toml").write_text(cfg.dumps())
    if cfg.run.write_events:
        day.events.write_csv(outdir / "events.csv.gz")
    write_iteration_log(result.log, outdir / "iterations.csv")
    fleet = scenario.service.fleet_size if scenario.service else 0
    capacity = scenario.service.capacity if scenario.service else 0
    kpi = compute_kpis(day.events, scenario.network, fleet)
    dp = scenario.service.dispatch if scenario.service else None
    checks = audit(day.events, capacity, dp.detour_factor if dp else 1.3, dp.max_wait if dp else 900)
    kpi.extra.update({
        "convergence": result.convergence,
        "relaxation_ok": relaxation_ok(result.score_history),
        "final_mean_score": result.score_history[-1],
        "stuck": day.n_stuck,
        "audit": checks,
    })
    (outdir / "kpi.json").write_text(kpi.to_json() + "\n")
    violations = {k: v for k, v in checks.items()
                  if k in ("wait", "ride", "capacity", "scheduled_then_rejected", "unbalanced") and v}
    return {"kpi": kpi, "violations": violations, "result": result, "scenario": scenario}


def _run_point(args):
    base_text, point, outdir = args
    cfg = cfgmod.loads(base_text).with_overrides(**point_overrides(point))
    out = execute(cfg, outdir)
    row = {"point": point_label(point), "scenario": point.get("scenario", cfg.run.name),
           "fleet": cfg.fleet.size if cfg.fleet.enabled else 0, "capacity": cfg.fleet.capacity,
           "ridesharing": cfg.fleet.ridesharing, "rebalancing": cfg.fleet.rebalancing,
           "fare_multiplier": cfg.fares.shared_multiplier}
    row.update(out["kpi"].flat())
    row["violations"] = sum(out["violations"].values())
    return row


def sweep(cfg: cfgmod.ScenarioConfig, axes, outdir, workers: int = 1) -> list[dict]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    points = list(grid_points(axes))
    text = cfg.dumps()
    jobs = [(text, p, str(outdir / point_label(p))) for p in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_point, jobs))
    else:
        rows = [_run_point(j) for j in jobs]
    write_kpi_csv(rows, outdir / "kpi.csv")
    findings = []
    if "fleet" in dict(axes):
        fleets = dict(axes)["fleet"]
        groups = {}
        for p, row in zip(points, rows):
            key = tuple((k, v) for k, v in p.items() if k != "fleet")
            groups.setdefault(key, []).append(row)
        if len(fleets) >= 2:
            for key, grp in groups.items():
                for f in trend_compare(grp, "fleet", fleets,
                                       ("sav_share", "wait_mean", "empty_distance_ratio",
                                        "total_driven_km", "in_service_mean")):
                    f["group"] = dict(key)
                    findings.append(f)
    (outdir / "trends.json").write_text(json.dumps(findings, indent=2, sort_keys=True) + "\n")
    return rows


def write_kpi_csv(rows, path) -> None:
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in cols})


FAMILIES = {
    "modal_share": ("share_",),
    "in_service": ("in_service_",),
    "times": ("wait_", "ivt_", "detour_"),
    "distance": ("sav_km", "evk", "pkt", "car_km", "total_driven_km", "vehicle_km_"),
    "efficiency": ("empty_distance_ratio", "rides_per_sav"),
}


def report(kpi_csv, outdir) -> list[Path]:
    """Long-format (scenario, fleet, metric, value) tables per figure family."""
    kpi_csv = Path(kpi_csv)
    if not kpi_csv.is_file():
        raise cfgmod.ConfigError(f"report input not found: {kpi_csv}")
    with open(kpi_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cols = list(rows[0]) if rows else []
    written = []
    for family, prefixes in FAMILIES.items():
        metrics = [c for c in cols if c.startswith(prefixes)]
        out = []
        for c in metrics:
            vals = [r.get(c, "") for r in rows]
            if all(v == "" for v in vals):
                log.warning("metric %s has no values; omitted", c)
                continue
            for r in rows:
                if r.get(c, "") != "":
                    out.append({"scenario": r.get("scenario", ""), "fleet": r.get("fleet", ""),
                                "metric": c, "value": r[c]})
        if out:
            path = outdir / f"{family}.csv"
            write_kpi_csv(out, path)
            written.append(path)
    occ = [c for c in cols if c.startswith("occupancy_")]
    out = []
    for r in rows:
        for c in occ:
            if r.get(c, "") != "":
                out.append({"scenario": r.get("scenario", ""), "fleet": r.get("fleet", ""),
                            "k": int(c.split("_")[1]), "value": r[c]})
    if out:
        path = outdir / "occupancy.csv"
        write_kpi_csv(out, path)
        written.append(path)
    return written


# --------------------------------------------------------------------------

def _progress(row):
    log.info("it %d  score %.4f  sav %.2f%%  req %d  rej %d  wait %.0fs",
             row["iteration"], row["mean_executed_score"], row["share_sav"],
             row["sav_requests"], row["sav_rejected"], row["sav_mean_wait_s"])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="savsim", description="Shared autonomous vehicle simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="run one scenario to equilibrium")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", help="output directory (default: run.output)")
    p_run.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE",
                       help="override a config field (TOML value syntax)")
    p_sw = sub.add_parser("sweep", help="run a grid of scenarios")
    p_sw.add_argument("--config", required=True)
    p_sw.add_argument("--axis", action="append", default=[], metavar="NAME=V1,V2")
    p_sw.add_argument("--out")
    p_sw.add_argument("--workers", type=int, default=None,
                      help=f"parallel runs (default: ${WORKERS_ENV} or 1)")
    p_sw.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE")
    p_rep = sub.add_parser("report", help="long-format tables from a sweep's kpi.csv")
    p_rep.add_argument("--in", dest="inp", required=True)
    p_rep.add_argument("--out")
    p_cfg = sub.add_parser("init", help="write the default grid16 config")
    p_cfg.add_argument("path")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        if args.cmd == "init":
            cfgmod.ScenarioConfig().save(args.path)
            return 0
        if args.cmd == "report":
            out = args.out or str(Path(args.inp).parent / "report")
            for p in report(args.inp, out):
                print(p)
            return 0
        cfg = cfgmod.load(args.config)
        if args.set:
            cfg = cfg.with_overrides(**_parse_sets(args.set))
        if args.cmd == "run":
            out = execute(cfg, args.out or cfg.run.output, _progress)
            print(json.dumps(out["kpi"].flat(), sort_keys=True))
            if out["violations"]:
                print(f"invariant violations: {out['violations']}", file=sys.stderr)
                return 2
            return 0
        axes = [parse_axis(a) for a in args.axis]
        workers = args.workers or int(os.environ.get(WORKERS_ENV, "1"))
        rows = sweep(cfg, axes, args.out or cfg.run.output, workers)
        if any(r["violations"] for r in rows):
            print("invariant violations in at least one grid point", file=sys.stderr)
            return 2
        return 0
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (KpiError, InvariantViolation) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2


def _parse_sets(items) -> dict:
    import tomli
    out = {}
    for item in items:
        if "=" not in item:
            raise cfgmod.ConfigError(f"--set {item!r}: expected SECTION.FIELD=VALUE")
        key, raw = item.split("=", 1)
        try:
            value = tomli.loads(f"v = {raw}")["v"]
        except tomli.TOMLDecodeError:
            value = raw
        out[key.strip()] = value
    return out


if __name__ == "__main__":
    sys.exit(main())
