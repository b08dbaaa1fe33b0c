import csv
import math

import pytest
import yaml

from layeredq import expcli
from layeredq.desim import SimConfig
from layeredq.expcli import ConfigError, ExperimentConfig, config_from_dict

UNIT = {"family": "exponential", "params": {"rate": 1}}


def golden_raw(**over):
    raw = {
        "version": 1,
        "mode": "instance",
        "model": {
            "machines": [
                {"lam": 0.25, "sigma": 1, "service": UNIT, "repair": UNIT},
                {"lam": 0, "sigma": 1, "service": UNIT, "repair": UNIT},
            ]
        },
        "sim": {"warmup": 100, "horizon": 2e5, "replications": 1, "seed": 3},
    }
    raw.update(over)
    return raw


def test_config_parsing(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(golden_raw(jobs=2, testbed={"subsample": 10, "seed": 4})))
    cfg = expcli.load_config(path)
    assert cfg.mode == "instance" and cfg.jobs == 2 and cfg.subsample == 10 and cfg.subsample_seed == 4
    assert cfg.model.m1.lam == 0.25
    assert cfg.sim.horizon == 2e5


@pytest.mark.parametrize(
    "raw, where",
    [
        (golden_raw(version=2), "version"),
        (golden_raw(mode="nope"), "mode"),
        (golden_raw(testbed={"subsample": 676}), "testbed.subsample"),
        (golden_raw(sim={"horizon": "long"}), "sim.horizon"),
        (golden_raw(sim={"warmup": 10, "horizon": 5}), "sim"),
        (golden_raw(model={"machines": [1]}), "model"),
        ({"version": 1, "mode": "instance"}, "model"),
        ([1, 2], "<root>"),
    ],
)
def test_config_errors_name_the_path(raw, where):
    with pytest.raises(ConfigError, match=where):
        config_from_dict(raw)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        expcli.load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("mode: [unclosed")
    with pytest.raises(ConfigError, match="YAML"):
        expcli.load_config(bad)


def test_testbed_grid():
    grid = expcli.testbed_grid()
    assert len(grid) == 675
    assert grid == expcli.testbed_grid()
    assert len({tuple(sorted((k, str(v)) for k, v in g.items())) for g in grid}) == 675
    assert grid[0] == {"rho": 0.25, "a_sigma": 0.1, "b_sigma": (1, 1), "a_nu": 0.1, "b_nu": (1, 1)}


def test_testbed_spec_workload():
    point = {"rho": 0.5, "a_sigma": 1.0, "b_sigma": (1, 2), "a_nu": 10.0, "b_nu": (5, 1)}
    spec = expcli.testbed_spec(point)
    assert (spec.m1.sigma, spec.m2.sigma) == (1.0, 2.0)
    assert (spec.m1.repair.rate, spec.m2.repair.rate) == (50.0, 10.0)
    ok, _ = expcli.layered_stability(spec, 1)
    assert ok
    ed = expcli.downtime_stats(spec, 1).mean
    assert spec.m1.lam * (1 + spec.m1.sigma * ed) == pytest.approx(0.5)


def test_bin_report():
    recs = [
        {"delta": d, "rho": 0.25, "a_sigma": 1.0, "a_nu": 1.0, "b_sigma": "(1, 1)", "b_nu": "(1, 1)"}
        for d in (0.001, 0.05, 0.5, 2.0, 7.0, math.nan)
    ]
    rep = expcli.bin_report(recs)
    assert list(rep.counts.values()) == [1, 1, 1, 1, 1]
    assert rep.total == 5 and rep.failures == 1
    assert rep.median == pytest.approx(0.5)
    assert sum(rep.fractions().values()) == pytest.approx(1.0)


def test_testbed_serial_equals_parallel():
    cfg = ExperimentConfig(mode="testbed", subsample=4, subsample_seed=2)
    a = expcli.run_testbed(cfg)
    b = expcli.run_testbed(ExperimentConfig(mode="testbed", subsample=4, subsample_seed=2, jobs=2))
    assert a.counts == b.counts and a.grouped == b.grouped
    assert [r["delta"] for r in a.instances] == [r["delta"] for r in b.instances]
    assert a.failures == 0


def test_run_instance_record_and_determinism(tmp_path):
    cfg = config_from_dict(golden_raw())
    rec = expcli.run_instance(cfg)
    assert rec["approx_mean"] == pytest.approx(2.2056, abs=1e-3)
    assert rec["exact_mean"] == pytest.approx(2.2206, abs=1e-3)
    assert rec["seed"] == 3
    p1 = expcli.write_csv([rec], tmp_path / "a.csv")
    p2 = expcli.write_csv([expcli.run_instance(cfg)], tmp_path / "b.csv")
    assert p1.read_bytes() == p2.read_bytes()


def test_run_instance_refuses_unstable():
    raw = golden_raw()
    raw["model"]["machines"][0]["lam"] = 0.5
    with pytest.raises(expcli.UnstableError):
        expcli.run_instance(config_from_dict(raw))


def test_figure3_endpoint():
    rows = expcli.figure3_rows(3)
    assert rows[0]["r"] == 0.0 and rows[0]["delta"] == 0.0
    assert rows[1]["delta"] > 0 and rows[2]["delta"] > rows[1]["delta"]


def test_figure5_vanishes_at_extremes():
    cfg = ExperimentConfig(mode="figure5", points=5)
    rows = expcli.run_figure(cfg)
    mid = max(r["delta"] for r in rows)
    assert rows[0]["r"] < 0.01 and rows[-1]["r"] < 0.01
    assert rows[0]["delta"] < 0.2 * mid and rows[-1]["delta"] < 0.2 * mid
    assert all("r_scaled" in r for r in rows)


def test_figure_sweeps_defined():
    for n in (4, 5, 6, 7):
        pts = expcli.figure_specs(n, 3)
        assert len(pts) == 3
    with pytest.raises(ValueError):
        expcli.figure_specs(8, 3)


def test_csv_format(tmp_path):
    path = expcli.write_csv([{"a": 1 / 3, "b": 2, "c": "x"}, {"a": 1e-12, "d": True}], tmp_path / "o.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["a", "b", "c", "d"]
    assert rows[1] == ["0.333333333", "2", "x", ""]
    assert rows[2][0] == "1e-12" and rows[2][3] == "True"


def test_cli_exit_codes(tmp_path, capsys):
    assert expcli.main(["instance"]) == expcli.EXIT_CONFIG
    raw = golden_raw()
    raw["model"]["machines"][0]["lam"] = 0.9
    bad = tmp_path / "unstable.yaml"
    bad.write_text(yaml.safe_dump(raw))
    assert expcli.main(["instance", "--config", str(bad)]) == expcli.EXIT_UNSTABLE
    good = tmp_path / "golden.yaml"
    good.write_text(yaml.safe_dump(golden_raw()))
    out = tmp_path / "out"
    assert expcli.main(["instance", "--config", str(good), "--out", str(out), "--seed", "5"]) == expcli.EXIT_OK
    assert (out / "instance.csv").exists()
    assert expcli.main(["figure", "3", "--points", "3", "--out", str(out)]) == expcli.EXIT_OK
    assert (out / "figure3.csv").exists()
    assert expcli.main(["testbed", "--subsample", "2", "--out", str(out)]) == expcli.EXIT_OK
    assert (out / "testbed_bins.csv").exists()


def test_sim_cycles_flag(tmp_path):
    good = tmp_path / "golden.yaml"
    good.write_text(yaml.safe_dump(golden_raw()))
    args = expcli.build_parser().parse_args(["instance", "--config", str(good), "--sim-cycles", "1000"])
    cfg = expcli._merge_args(args)
    # one machine-1 cycle lasts 1 + 1.5 time units
    assert cfg.sim.horizon == pytest.approx(100 + 2500)
    assert isinstance(cfg.sim, SimConfig)
