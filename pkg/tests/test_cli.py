import csv
import json

import pytest

from savsim import config as cfgmod
from savsim.cli import main, parse_axis, point_overrides, report, sweep, write_kpi_csv


def small_config(tmp_path, **over):
    cfg = cfgmod.ScenarioConfig().with_overrides(**{"city.agents": 120, "run.iterations": 2,
                                                    "fleet.size": 6, **over})
    path = tmp_path / "cfg.toml"
    cfg.save(path)
    return cfg, path


def test_config_roundtrip(tmp_path):
    cfg, path = small_config(tmp_path)
    assert cfgmod.load(path) == cfg
    assert cfgmod.loads(cfg.dumps()).to_dict() == cfg.to_dict()


def test_unknown_field_rejected():
    with pytest.raises(cfgmod.ConfigError, match="fleet.sise"):
        cfgmod.loads("[fleet]\nsise = 3\n")
    with pytest.raises(cfgmod.ConfigError, match="expected an integer"):
        cfgmod.loads("[fleet]\nsize = 'many'\n")
    with pytest.raises(cfgmod.ConfigError, match="sum to 1"):
        cfgmod.loads("[replanning]\nselect = 0.5\n")


def test_missing_network_file_named(tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text('[city]\npreset = "files"\nnetwork_dir = "net"\npopulation_dir = "pop"\n')
    with pytest.raises(cfgmod.ConfigError, match="nodes.csv"):
        cfgmod.load(path)
    assert main(["run", "--config", str(path)]) == 1
    assert str(tmp_path / "net" / "nodes.csv") in capsys.readouterr().err


def test_axis_parsing():
    assert parse_axis("fleet=100, 200") == ("fleet", [100, 200])
    assert parse_axis("ridesharing=true,off") == ("ridesharing", [True, False])
    for bad in ("fleet", "colour=1", "fleet=x", "scenario=S9"):
        with pytest.raises(cfgmod.ConfigError):
            parse_axis(bad)
    assert point_overrides({"scenario": "S1", "fleet": 50}) == {
        "fleet.capacity": 4, "fleet.ridesharing": False, "fleet.size": 50}


def test_run_writes_outputs(tmp_path, capsys):
    _, path = small_config(tmp_path)
    out = tmp_path / "run"
    assert main(["run", "--config", str(path), "--out", str(out), "--set", "fleet.size=4"]) == 0
    kpi = json.loads((out / "kpi.json").read_text())
    assert abs(sum(kpi["modal_split"].values()) - 100) <= 0.1
    assert kpi["extra"]["audit"]["wait"] == 0
    assert "fleet.size: must be" not in capsys.readouterr().err
    assert "size = 4" in (out / "config.toml").read_text()
    assert (out / "events.csv.gz").is_file()
    with open(out / "iterations.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2


def test_bad_set_value_is_config_error(tmp_path):
    _, path = small_config(tmp_path)
    assert main(["run", "--config", str(path), "--set", "fleet.size=-3"]) == 1
    assert main(["run", "--config", str(path), "--set", "fleet.nope=1"]) == 1


def test_sweep_two_points(tmp_path):
    cfg, _ = small_config(tmp_path, **{"run.iterations": 1})
    rows = sweep(cfg, [("fleet", [3, 6])], tmp_path / "sw")
    assert [r["fleet"] for r in rows] == [3, 6]
    with open(tmp_path / "sw" / "kpi.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2
    trends = json.loads((tmp_path / "sw" / "trends.json").read_text())
    assert {t["metric"] for t in trends} >= {"sav_share", "wait_mean"}


def test_report_tables(tmp_path):
    rows = [{"scenario": "S3", "fleet": 100, "share_sav": 12.5, "wait_mean": "",
             "occupancy_1": 60.0, "occupancy_2": 40.0}]
    write_kpi_csv(rows, tmp_path / "kpi.csv")
    written = {p.name for p in report(tmp_path / "kpi.csv", tmp_path / "rep")}
    assert written == {"modal_share.csv", "occupancy.csv"}  # empty wait_mean dropped
    with open(tmp_path / "rep" / "occupancy.csv") as fh:
        occ = list(csv.DictReader(fh))
    assert [(r["k"], r["value"]) for r in occ] == [("1", "60.0"), ("2", "40.0")]
    with pytest.raises(cfgmod.ConfigError):
        report(tmp_path / "missing.csv", tmp_path)


def test_init_writes_loadable_default(tmp_path):
    path = tmp_path / "d.toml"
    assert main(["init", str(path)]) == 0
    assert cfgmod.load(path) == cfgmod.ScenarioConfig()
