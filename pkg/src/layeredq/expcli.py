"""Experiment runner: single instances, the parameter test bed and the figure sweeps.

Configs are YAML documents::

    version: 1
    mode: instance            # instance | testbed | figure3 ... figure7
    model:                    # instance mode only
      machines:
        - {lam: 0.25, sigma: 1, service: {family: exponential, params: {rate: 1}},
           repair: {family: exponential, params: {rate: 1}}}
        - {lam: 0, sigma: 1, service: {family: exponential, params: {rate: 1}},
           repair: {family: exponential, params: {rate: 1}}}
    sim: {warmup: 1000, horizon: 1.0e7, replications: 4, seed: 1, batches: 32}
    reference: auto           # auto | exact | sim
    out: results
    jobs: 1
    testbed: {subsample: 50, seed: 1}
    figure: {points: 25}

Exact reference values come from the matrix-geometric solver whenever the
queue's service time is exponential and the repairs are phase-type; otherwise
(or with ``reference: sim``) the layered simulation is used.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import vacq
from .depcore import independent_pair, phase_compound_pair
from .desim import Estimate, SimConfig, relative_error, simulate_layered
from .distkit import Exponential, Hyper2
from .qbd import exact_queue, phase_type_downtime_stats, supports_exact
from .repairlayer import (
    LayeredSpec,
    MachineSpec,
    approximate_queue,
    downtime_stats,
    independent_baseline,
    layered_from_config,
    simulated_stats,
    with_lam,
)
from .vacq import UnstableError, VacQueueSpec

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODES = ("instance", "testbed", "figure3", "figure4", "figure5", "figure6", "figure7")
BIN_EDGES = (0.0, 0.01, 0.1, 1.0, 5.0, math.inf)
BIN_LABELS = ("0-0.01%", "0.01-0.1%", "0.1-1%", "1-5%", ">5%")
TESTBED_RHO = (0.25, 0.5, 0.75)
TESTBED_A = (0.1, 1.0, 10.0)
TESTBED_B = ((1, 1), (1, 2), (2, 1), (1, 5), (5, 1))

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE = 0, 2, 3


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending path."""


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    model: LayeredSpec | None = None
    sim: SimConfig = field(default_factory=lambda: SimConfig(warmup=1e3, horizon=1e7, replications=4))
    out: Path = Path("results")
    jobs: int = 1
    subsample: int | None = None
    subsample_seed: int = 1
    points: int = 25
    reference: str = "auto"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {MODES}, got {self.mode!r}")
        if self.subsample is not None and not 0 < self.subsample <= 675:
            raise ConfigError(f"testbed.subsample: must lie in 1..675, got {self.subsample}")
        if self.reference not in ("auto", "exact", "sim"):
            raise ConfigError(f"reference: expected auto, exact or sim, got {self.reference!r}")
        if self.jobs < 1:
            raise ConfigError("jobs: must be at least 1")
        if self.points < 2:
            raise ConfigError("figure.points: must be at least 2")


def _get(d: dict, key: str, path: str, typ, default=None):
    if key not in d:
        return default
    try:
        return typ(d[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}: cannot interpret {d[key]!r} as {typ.__name__}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected a mapping")
    version = raw.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"version: unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    mode = raw.get("mode")
    if mode is None:
        raise ConfigError("mode: missing")
    model = None
    if "model" in raw:
        try:
            model = layered_from_config(raw["model"])
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"model: {exc}") from None
    elif mode == "instance":
        raise ConfigError("model: required in instance mode")
    simraw = raw.get("sim", {}) or {}
    if not isinstance(simraw, dict):
        raise ConfigError("sim: expected a mapping")
    try:
        sim = SimConfig(
            warmup=_get(simraw, "warmup", "sim", float, 1e3),
            horizon=_get(simraw, "horizon", "sim", float, 1e7),
            replications=_get(simraw, "replications", "sim", int, 4),
            seed=_get(simraw, "seed", "sim", int, 20240101),
            batches=_get(simraw, "batches", "sim", int, 32),
            nhist=_get(simraw, "nhist", "sim", int, 512),
            workers=_get(simraw, "workers", "sim", int, 1),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"sim: {exc}") from None
    tb = raw.get("testbed", {}) or {}
    fig = raw.get("figure", {}) or {}
    return ExperimentConfig(
        mode=mode,
        model=model,
        sim=sim,
        out=Path(raw.get("out", "results")),
        jobs=_get(raw, "jobs", "", int, 1),
        subsample=_get(tb, "subsample", "testbed", int, None),
        subsample_seed=_get(tb, "seed", "testbed", int, 1),
        points=_get(fig, "points", "figure", int, 25),
        reference=str(raw.get("reference", "auto")),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return config_from_dict(raw)


# ----------------------------------------------------------------------------
# reference values


def machine_stats(spec: LayeredSpec, machine: int = 1):
    """Downtime statistics: closed form, else phase-type analysis, else simulation."""
    if spec.exponential_repairs:
        return downtime_stats(spec, machine)
    try:
        return phase_type_downtime_stats(spec, machine)
    except ValueError:
        return simulated_stats(spec, machine)


def layered_stability(spec: LayeredSpec, machine: int = 1) -> tuple[bool, str]:
    m = spec.machine(machine)
    ed = machine_stats(spec, machine).mean
    p_up = 1.0 / (1.0 + m.sigma * ed)
    rho = m.lam * m.service.mean
    return rho < p_up, f"rho = {rho:.6g}, P(machine {machine} up) = {p_up:.6g}"


def _reference(spec: LayeredSpec, sim: SimConfig, how: str) -> tuple[Estimate, str]:
    if how in ("auto", "exact") and supports_exact(spec, 1):
        return Estimate(exact_queue(spec, 1).mean, 0.0, 0), "exact"
    if how == "exact":
        raise ValueError("exact reference needs exponential service and phase-type repairs")
    return simulate_layered(spec, sim).queue(1).mean, "sim"


def _approx_means(spec: LayeredSpec) -> tuple[float, float]:
    stats = machine_stats(spec, 1)
    ours = vacq.mean_L(approximate_queue(spec, 1, stats=stats))
    base = vacq.mean_L(independent_baseline(spec, 1, stats=stats))
    return ours, base


def run_instance(cfg: ExperimentConfig) -> dict:
    """Approximation, independent baseline and simulation for queue 1 of ``cfg.model``."""
    spec = cfg.model
    if spec is None:
        raise ConfigError("model: required in instance mode")
    ok, report = layered_stability(spec, 1)
    if not ok:
        raise UnstableError("queue 1 is unstable: " + report)
    stats = machine_stats(spec, 1)
    app = approximate_queue(spec, 1, stats=stats)
    base = independent_baseline(spec, 1, stats=stats)
    app_mean = vacq.mean_L(app)
    base_mean = vacq.mean_L(base)
    app_p0 = float(np.real(vacq.pgf_L(app, 0.0)))
    simres = simulate_layered(spec, cfg.sim)
    q = simres.queue(1)
    d = relative_error(app_mean, q.mean)
    db = relative_error(base_mean, q.mean)
    rec = {
        "approx_mean": app_mean,
        "baseline_mean": base_mean,
        "sim_mean": q.mean.value,
        "sim_mean_hw": q.mean.half_width,
        "delta": d.value,
        "delta_hw": d.half_width,
        "baseline_delta": db.value,
        "approx_p0": app_p0,
        "sim_p0": q.p0.value,
        "sim_p0_hw": q.p0.half_width,
        "p0_rel_diff": 100.0 * (app_p0 - q.p0.value) / q.p0.value,
        "r": stats.r,
        "seed": cfg.sim.seed,
    }
    if supports_exact(spec, 1):
        ex = exact_queue(spec, 1)
        rec["exact_mean"] = ex.mean
        rec["exact_p0"] = ex.p0
    return rec


# ----------------------------------------------------------------------------
# test bed


def testbed_grid() -> list[dict]:
    """All 675 parameter combinations in a fixed order."""
    out = []
    for rho, a_s, b_s, a_n, b_n in itertools.product(TESTBED_RHO, TESTBED_A, TESTBED_B, TESTBED_A, TESTBED_B):
        out.append({"rho": rho, "a_sigma": a_s, "b_sigma": b_s, "a_nu": a_n, "b_nu": b_n})
    return out


def testbed_spec(point: dict) -> LayeredSpec:
    """Layered model of a grid point; lam1 puts queue 1 at workload rho1 of its available capacity."""
    s1, s2 = (point["a_sigma"] * b for b in point["b_sigma"])
    n1, n2 = (point["a_nu"] * b for b in point["b_nu"])
    unit = Exponential(1.0)
    spec = LayeredSpec(MachineSpec(0.0, unit, s1, Exponential(n1)), MachineSpec(0.0, unit, s2, Exponential(n2)))
    ed = downtime_stats(spec, 1).mean
    lam = point["rho"] / (1.0 + s1 * ed)
    return with_lam(spec, 1, lam)


def _testbed_sim_config(spec: LayeredSpec, base: SimConfig, index: int) -> SimConfig:
    # budgets grow as arrivals and machine events slow down
    m = spec.m1
    slow = max(1.0 / m.lam, 1.0 / m.sigma, 1.0 / spec.m2.sigma, m.repair.mean, spec.m2.repair.mean)
    horizon = max(base.horizon, 2e5 * slow)
    return SimConfig(base.warmup * slow, horizon, base.replications, base.seed + index, base.batches, base.nhist, 1)


def _testbed_one(args) -> dict:
    index, point, sim, reference = args
    rec = {"index": index, **{k: (str(v) if isinstance(v, tuple) else v) for k, v in point.items()}}
    try:
        spec = testbed_spec(point)
        ref, kind = _reference(spec, _testbed_sim_config(spec, sim, index), reference)
        ours, base = _approx_means(spec)
        rec.update(
            lam=spec.m1.lam,
            r=downtime_stats(spec, 1).r,
            reference=ref.value,
            reference_hw=ref.half_width,
            reference_kind=kind,
            approx=ours,
            baseline=base,
            delta=100.0 * abs(ours - ref.value) / ref.value,
            baseline_delta=100.0 * abs(base - ref.value) / ref.value,
            error="",
        )
    except Exception as exc:  # recorded, not fatal
        rec.update(delta=math.nan, error=f"{type(exc).__name__}: {exc}")
    rec["seed"] = sim.seed
    return rec


@dataclass(frozen=True)
class ErrorBinReport:
    counts: dict
    grouped: dict
    instances: tuple
    failures: int

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def median(self) -> float:
        d = [r["delta"] for r in self.instances if not math.isnan(r["delta"])]
        return float(np.median(d)) if d else math.nan

    def fractions(self) -> dict:
        n = self.total
        return {k: (v / n if n else math.nan) for k, v in self.counts.items()}


def bin_report(records: list[dict]) -> ErrorBinReport:
    good = [r for r in records if not math.isnan(r["delta"])]
    counts = dict.fromkeys(BIN_LABELS, 0)
    for r in good:
        k = int(np.searchsorted(BIN_EDGES, r["delta"], side="right")) - 1
        counts[BIN_LABELS[min(k, len(BIN_LABELS) - 1)]] += 1
    grouped = {}
    for key in ("rho", "a_sigma", "a_nu", "b_sigma", "b_nu"):
        levels = sorted({r[key] for r in good}, key=lambda v: (str(type(v)), v))
        grouped[key] = {v: float(np.mean([r["delta"] for r in good if r[key] == v])) for v in levels}
    return ErrorBinReport(counts, grouped, tuple(records), len(records) - len(good))


def _pool_map(fn, items, jobs):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=1))


def run_testbed(cfg: ExperimentConfig) -> ErrorBinReport:
    grid = testbed_grid()
    idx = np.arange(len(grid))
    if cfg.subsample is not None and cfg.subsample < len(grid):
        rng = np.random.default_rng(cfg.subsample_seed)
        idx = np.sort(rng.choice(len(grid), size=cfg.subsample, replace=False))
    tasks = [(int(i), grid[i], cfg.sim, cfg.reference) for i in idx]
    records = _pool_map(_testbed_one, tasks, cfg.jobs)
    return bin_report(records)


# ----------------------------------------------------------------------------
# figures


def _unit_layered(lam, service, sigma1=1.0, sigma2=1.0, r1=None, r2=None) -> LayeredSpec:
    r1 = r1 or Exponential(1.0)
    r2 = r2 or Exponential(1.0)
    return LayeredSpec(MachineSpec(lam, service, sigma1, r1), MachineSpec(0.0, Exponential(1.0), sigma2, r2))


def figure3_rows(points: int) -> list[dict]:
    """Relative difference in E[L] between the dependent phase model and its independent counterpart."""
    lam, service, sigma = 3.0, Exponential(5.0), 1.0 / 3.0
    r_max = 1.0 / (1.5 + 1e-3)
    rows = []
    for r in np.linspace(0.0, r_max, points):
        if r == 0.0:
            rows.append({"r": 0.0, "delta": 0.0, "mean_dep": math.nan, "mean_indep": math.nan})
            continue
        d = 1.0 / r
        dep = VacQueueSpec(lam, service, sigma, phase_compound_pair(d))
        ind = VacQueueSpec(lam, service, sigma, independent_pair(Exponential(d - 1.0)))
        md, mi = vacq.mean_L(dep), vacq.mean_L(ind)
        rows.append({"r": float(r), "delta": 100.0 * (md - mi) / mi, "mean_dep": md, "mean_indep": mi})
    return rows


def _fig_point(args) -> dict:
    x, spec, sim, reference, extra = args
    ref, kind = _reference(spec, sim, reference)
    ours, base = _approx_means(spec)
    extra = {"r": machine_stats(spec, 1).r, **extra}
    row = {
        "x": float(x),
        "reference": ref.value,
        "reference_hw": ref.half_width,
        "reference_kind": kind,
        "approx": ours,
        "baseline": base,
        "delta": 100.0 * abs(ours - ref.value) / ref.value,
        "signed_delta": 100.0 * (ours - ref.value) / ref.value,
        "baseline_delta": 100.0 * abs(base - ref.value) / ref.value,
    }
    row.update(extra)
    return row


def figure_specs(n: int, points: int) -> list[tuple[float, LayeredSpec, dict]]:
    """(x, layered spec, extra columns) of the sweep behind figure ``n`` (4..7)."""
    out = []
    if n == 4:
        for lam in np.linspace(3.0 / points, 3.0, points):
            out.append((lam, _unit_layered(lam, Exponential(10.0 * lam / 3.0)), {}))
    elif n == 5:
        for s2 in np.geomspace(0.01, 100.0, points):
            out.append((s2, _unit_layered(0.25, Exponential(1.0), 1.0, s2), {}))
    elif n == 6:
        for scv in np.linspace(1.0, 8.0, points):
            rep = Exponential(1.0) if scv == 1.0 else Hyper2.balanced(1.0, scv)
            out.append((scv, _unit_layered(0.25, Exponential(1.0), r1=rep, r2=rep), {}))
    elif n == 7:
        r1 = Hyper2(0.975, 100.0, 0.01)
        for lam in np.linspace(0.01 / points, 0.01, points):
            spec = _unit_layered(lam, Exponential(500.0 * lam), 100.0, 0.02, r1, Exponential(0.01))
            out.append((lam, spec, {}))
    else:
        raise ValueError(f"no sweep defined for figure {n}")
    return out


def run_figure(cfg: ExperimentConfig, n: int | None = None) -> list[dict]:
    n = n if n is not None else int(cfg.mode.removeprefix("figure"))
    if n == 3:
        return figure3_rows(cfg.points)
    pts = figure_specs(n, cfg.points)
    rows = _pool_map(_fig_point, [(x, s, cfg.sim, cfg.reference, e) for x, s, e in pts], cfg.jobs)
    if n == 5:
        rmax = max(r["r"] for r in rows)
        dmax = max(r["delta"] for r in rows)
        for r in rows:
            r["r_scaled"] = r["r"] * dmax / rmax if rmax > 0 else 0.0
    for r in rows:
        r["seed"] = cfg.sim.seed
    return rows


# ----------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def write_csv(rows: list[dict], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    header = list(rows[0].keys()) if rows else []
    for r in rows[1:]:
        header += [k for k in r if k not in header]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in header])
    return path


def write_report(rep: ErrorBinReport, out: Path, seed: int) -> list[Path]:
    bins = [
        {"bin": k, "count": v, "fraction": rep.fractions()[k], "seed": seed} for k, v in rep.counts.items()
    ]
    groups = [
        {"variable": key, "level": str(level), "mean_delta": val, "seed": seed}
        for key, levels in rep.grouped.items()
        for level, val in levels.items()
    ]
    return [
        write_csv(list(rep.instances), out / "testbed_instances.csv"),
        write_csv(bins, out / "testbed_bins.csv"),
        write_csv(groups, out / "testbed_grouped.csv"),
    ]


# ----------------------------------------------------------------------------
# command line


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="layeredq", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="YAML experiment config")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--jobs", type=int, help="parallel worker processes")
        sp.add_argument("--seed", type=int, help="master simulation seed")
        sp.add_argument("--sim-cycles", type=float, help="simulated horizon in mean machine-1 up/down cycles")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("instance", help="approximation vs simulation for one model"))
    tb = sub.add_parser("testbed", help="error bins over the parameter grid")
    common(tb)
    tb.add_argument("--subsample", type=int, help="number of grid points to sample (<= 675)")
    fg = sub.add_parser("figure", help="sweep behind one of figures 3-7")
    fg.add_argument("number", type=int, choices=range(3, 8))
    fg.add_argument("--points", type=int, help="sweep resolution")
    common(fg)
    return p


def _merge_args(args) -> ExperimentConfig:
    mode = args.command if args.command != "figure" else f"figure{args.number}"
    if args.config is not None:
        cfg = load_config(args.config)
        if cfg.mode != mode:
            cfg = replace(cfg, mode=mode)
    else:
        if mode == "instance":
            raise ConfigError("--config: required for the instance command")
        cfg = ExperimentConfig(mode=mode)
    changes = {}
    if args.out is not None:
        changes["out"] = args.out
    if args.jobs is not None:
        changes["jobs"] = args.jobs
    if getattr(args, "subsample", None) is not None:
        changes["subsample"] = args.subsample
    if getattr(args, "points", None) is not None:
        changes["points"] = args.points
    sim = cfg.sim
    if args.seed is not None:
        sim = replace(sim, seed=args.seed)
    if args.sim_cycles is not None:
        cycle = 1.0
        if cfg.model is not None:
            m = cfg.model.m1
            try:
                cycle = 1.0 / m.sigma + downtime_stats(cfg.model, 1).mean
            except ValueError:
                cycle = 1.0 / m.sigma + m.repair.mean
        sim = replace(sim, horizon=sim.warmup + args.sim_cycles * cycle)
    try:
        return replace(cfg, sim=SimConfig(**{f: getattr(sim, f) for f in sim.__dataclass_fields__}), **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _merge_args(args)
        if cfg.mode == "instance":
            rec = run_instance(cfg)
            path = write_csv([rec], cfg.out / "instance.csv")
            print(json.dumps({k: (round(v, 9) if isinstance(v, float) else v) for k, v in rec.items()}, indent=1))
        elif cfg.mode == "testbed":
            rep = run_testbed(cfg)
            paths = write_report(rep, cfg.out, cfg.sim.seed)
            print(f"{rep.total} instances, {rep.failures} failed, median delta {rep.median:.4g}%")
            for k, v in rep.counts.items():
                print(f"  {k:>10}: {v}")
            path = paths[1]
        else:
            rows = run_figure(cfg)
            path = write_csv(rows, cfg.out / f"{cfg.mode}.csv")
        print(f"wrote {path}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnstableError as exc:
        print(f"refusing to run: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
