"""Command-line front end: world generation, runs, batches, report emission.

Missions are described by a strict JSON config file (unknown keys are
errors, so typos fail loudly instead of silently running defaults); a few
flags override file values for quick sweeps. No plotting here — `report`
emits plot-ready CSV only.

Exit codes: 0 success, 2 bad flags/config, 3 mission timed out,
4 collision abort.
"""
from __future__ import annotations

import hashlib
import json
import math
import statistics
import sys
from pathlib import Path

import click

from .coordination import CoordinationParams
from .planner import CostWeights, DynamicLimits, PlannerConfig
from .sensor import DepthCamera
from .simulation import STRATEGIES, MissionConfig, Simulation, write_artifacts
from .world import (
    DensityRegion,
    World,
    WorldError,
    generate_forest,
    generate_tiled_forest,
    load_world,
    save_world,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TIMEOUT = 3
EXIT_COLLISION = 4

DEFAULT_TIMESTAMPS = (300.0, 600.0, 900.0, 1200.0, 1500.0)


class ConfigError(Exception):
    """A config document problem, reported with the offending key."""


# -- strict config parsing ----------------------------------------------------

def _reject_unknown(doc: dict, allowed, where: str) -> None:
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def _field(doc: dict, key: str, kind, where: str, default):
    if key not in doc:
        return default
    val = doc[key]
    if isinstance(val, bool) and kind is not bool:
        raise ConfigError(f"key {key!r} in {where} must be {kind.__name__}")
    if kind is float and isinstance(val, int):
        val = float(val)
    if not isinstance(val, kind):
        raise ConfigError(f"key {key!r} in {where} must be {kind.__name__}")
    return val


def _camera_from(doc: dict, resolution: float) -> DepthCamera | None:
    if doc is None:
        return None
    _reject_unknown(doc, {"max_range", "h_fov", "v_fov", "h_rays", "v_rays"},
                    "camera")
    kw = {k: _field(doc, k, float, "camera", None)
          for k in ("max_range", "h_fov", "v_fov")}
    kw = {k: v for k, v in kw.items() if v is not None}
    if "h_rays" in doc or "v_rays" in doc:
        kw["h_rays"] = _field(doc, "h_rays", int, "camera", 87)
        kw["v_rays"] = _field(doc, "v_rays", int, "camera", 51)
        return DepthCamera(**kw)
    return DepthCamera.for_resolution(resolution, **kw)


def _planner_from(doc: dict) -> PlannerConfig:
    if doc is None:
        return PlannerConfig()
    _reject_unknown(doc, {"weights", "limits", "collector_trigger_min_trails",
                          "collector_trigger_radius", "replan_period",
                          "stuck_displacement", "stuck_window", "mode_dwell"},
                    "planner")
    wdoc = doc.get("weights") or {}
    _reject_unknown(wdoc, {"w_d", "w_v", "w_l", "p_trail", "w_p", "w_a",
                           "w_f", "d_max"}, "planner.weights")
    defaults_w = CostWeights()
    weights = CostWeights(**{k: _field(wdoc, k, float, "planner.weights",
                                       getattr(defaults_w, k))
                             for k in ("w_d", "w_v", "w_l", "p_trail",
                                       "w_p", "w_a", "w_f", "d_max")})
    ldoc = doc.get("limits") or {}
    _reject_unknown(ldoc, {"v_max", "yaw_rate_max", "collector_speed_factor"},
                    "planner.limits")
    defaults_l = DynamicLimits()
    limits = DynamicLimits(**{k: _field(ldoc, k, float, "planner.limits",
                                        getattr(defaults_l, k))
                              for k in ("v_max", "yaw_rate_max",
                                        "collector_speed_factor")})
    base = PlannerConfig()
    return PlannerConfig(
        weights=weights, limits=limits,
        collector_trigger_min_trails=_field(
            doc, "collector_trigger_min_trails", int, "planner",
            base.collector_trigger_min_trails),
        collector_trigger_radius=_field(
            doc, "collector_trigger_radius", float, "planner",
            base.collector_trigger_radius),
        replan_period=_field(doc, "replan_period", float, "planner",
                             base.replan_period),
        stuck_displacement=_field(doc, "stuck_displacement", float, "planner",
                                  base.stuck_displacement),
        stuck_window=_field(doc, "stuck_window", float, "planner",
                            base.stuck_window),
        mode_dwell=_field(doc, "mode_dwell", float, "planner", base.mode_dwell),
    )


def _coordination_from(doc: dict) -> CoordinationParams:
    if doc is None:
        return CoordinationParams()
    _reject_unknown(doc, {"comm_range", "k_a", "k_r", "d_0", "d_c", "w_f",
                          "sync_period", "verbatim_attraction"}, "coordination")
    base = CoordinationParams()
    kw = {k: _field(doc, k, float, "coordination", getattr(base, k))
          for k in ("comm_range", "k_a", "k_r", "d_0", "d_c", "w_f",
                    "sync_period")}
    kw["verbatim_attraction"] = _field(doc, "verbatim_attraction", bool,
                                       "coordination",
                                       base.verbatim_attraction)
    return CoordinationParams(**kw)


def _regions_from(items, where: str) -> tuple[DensityRegion, ...]:
    regions = []
    for i, rdoc in enumerate(items):
        spot = f"{where}[{i}]"
        _reject_unknown(rdoc, {"rect_min", "rect_max", "density"}, spot)
        for key in ("rect_min", "rect_max", "density"):
            if key not in rdoc:
                raise ConfigError(f"missing key {key!r} in {spot}")
        regions.append(DensityRegion(
            rect_min=tuple(float(v) for v in rdoc["rect_min"]),
            rect_max=tuple(float(v) for v in rdoc["rect_max"]),
            density=float(rdoc["density"])))
    return tuple(regions)


class RunConfigFile:
    """Parsed, validated run/batch configuration document."""

    TOP_KEYS = {"schema", "world", "world_file", "output_dir", "seed", "seeds",
                "strategy", "strategies", "n_agents", "resolution", "dt",
                "max_mission_time", "metric_sample_period", "sensor_period",
                "safety_margin", "camera", "planner", "coordination",
                "timestamps"}
    WORLD_KEYS = {"seed", "size", "density", "regions", "spawns",
                  "radius_range"}

    def __init__(self, doc: dict, base_dir: Path):
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        _reject_unknown(doc, self.TOP_KEYS, "config")
        schema = _field(doc, "schema", int, "config", 1)
        if schema != 1:
            raise ConfigError(f"unsupported config schema {schema}")
        if "world" in doc and "world_file" in doc:
            raise ConfigError("config must give either 'world' or "
                              "'world_file', not both")
        if "world" not in doc and "world_file" not in doc:
            raise ConfigError("missing key 'world' (generation parameters) "
                              "or 'world_file' in config")
        self.base_dir = base_dir
        self.world_file = doc.get("world_file")
        self.world_gen = None
        if "world" in doc:
            wdoc = doc["world"]
            _reject_unknown(wdoc, self.WORLD_KEYS, "world")
            if "size" not in wdoc:
                raise ConfigError("missing key 'size' in world")
            if ("density" in wdoc) == ("regions" in wdoc):
                raise ConfigError("world needs exactly one of 'density' or "
                                  "'regions'")
            self.world_gen = wdoc
        self.output_dir = _field(doc, "output_dir", str, "config", "runs")
        self.seed = _field(doc, "seed", int, "config", 0)
        seeds = doc.get("seeds", None)
        if seeds is not None and (not isinstance(seeds, list) or not seeds or
                                  any(not isinstance(s, int) for s in seeds)):
            raise ConfigError("key 'seeds' in config must be a non-empty "
                              "list of integers")
        self.seeds = seeds
        strategy = _field(doc, "strategy", str, "config", "adaptive")
        strategies = doc.get("strategies", None)
        if strategies is not None and (
                not isinstance(strategies, list) or not strategies or
                any(not isinstance(s, str) for s in strategies)):
            raise ConfigError("key 'strategies' in config must be a "
                              "non-empty list of strings")
        self.strategies = strategies or [strategy]
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r} in config; "
                                  f"expected one of {STRATEGIES}")
        self.n_agents = _field(doc, "n_agents", int, "config", 1)
        self.resolution = _field(doc, "resolution", float, "config", 0.1)
        self.dt = _field(doc, "dt", float, "config", 0.1)
        self.max_mission_time = _field(doc, "max_mission_time", float,
                                       "config", 1500.0)
        self.metric_sample_period = _field(doc, "metric_sample_period", float,
                                           "config", 1.0)
        self.sensor_period = _field(doc, "sensor_period", float, "config", 0.1)
        self.safety_margin = _field(doc, "safety_margin", float, "config", 0.3)
        self.camera = _camera_from(doc.get("camera"), self.resolution)
        self.planner = _planner_from(doc.get("planner"))
        self.coordination = _coordination_from(doc.get("coordination"))
        ts = doc.get("timestamps", list(DEFAULT_TIMESTAMPS))
        if (not isinstance(ts, list) or
                any(not isinstance(t, (int, float)) or isinstance(t, bool)
                    for t in ts)):
            raise ConfigError("key 'timestamps' in config must be a list "
                              "of numbers")
        self.timestamps = tuple(float(t) for t in ts)

    @classmethod
    def load(cls, path) -> "RunConfigFile":
        p = Path(path)
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        return cls(doc, p.parent)

    def build_world(self, seed: int) -> World:
        if self.world_file is not None:
            return load_world(self.base_dir / self.world_file)
        wdoc = self.world_gen
        size = tuple(float(v) for v in wdoc["size"])
        if len(size) != 3:
            raise ConfigError("world 'size' must be [x, y, z]")
        kw = {}
        if "radius_range" in wdoc:
            kw["radius_range"] = tuple(float(v) for v in wdoc["radius_range"])
        n_spawns = int(wdoc.get("spawns", max(self.n_agents, 1)))
        if "regions" in wdoc:
            regions = _regions_from(wdoc["regions"], "world.regions")
            return generate_tiled_forest(seed=seed, extent=size,
                                         regions=regions,
                                         n_spawns=n_spawns, **kw)
        return generate_forest(seed=seed, extent=size,
                               density=float(wdoc["density"]),
                               n_spawns=n_spawns, **kw)

    def mission_config(self, seed: int, strategy: str) -> MissionConfig:
        # a generated world is re-seeded per cell so each seed is a fresh draw
        world = self.build_world(seed if self.world_gen is not None
                                 else self.seed)
        return MissionConfig(
            world=world, resolution=self.resolution, n_agents=self.n_agents,
            strategy=strategy, dt=self.dt,
            max_mission_time=self.max_mission_time,
            metric_sample_period=self.metric_sample_period,
            sensor_period=self.sensor_period,
            safety_margin=self.safety_margin, camera=self.camera,
            planner=self.planner, coordination=self.coordination, seed=seed)


# -- shared helpers -------------------------------------------------------------

def _fail(msg: str, code: int = EXIT_CONFIG):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _result_exit_code(result) -> int:
    if result.collision_count:
        return EXIT_COLLISION
    if not result.completed:
        return EXIT_TIMEOUT
    return EXIT_OK


def _volume_at(series, t: float) -> float:
    """Team volume by time t (series sampled per period; holds after end)."""
    vol = series[0][1]
    for ts, v in series:
        if ts <= t + 1e-9:
            vol = v
        else:
            break
    return vol


def _num(v) -> str:
    return repr(float(v))


def _mean_std(values) -> tuple[float, float]:
    m = statistics.fmean(values)
    s = statistics.stdev(values) if len(values) > 1 else 0.0
    return m, s


# -- commands --------------------------------------------------------------------

@click.group()
def main():
    """Deterministic multi-UAV forest exploration simulator."""


@main.command("gen-world")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--size", required=True,
              help="world extent in meters as X,Y,Z (e.g. 50,50,2)")
@click.option("--density", type=float, default=None,
              help="trees per square meter (homogeneous forest)")
@click.option("--regions", "regions_file", type=click.Path(exists=True),
              default=None,
              help="JSON list of {rect_min, rect_max, density} tiles")
@click.option("--spawns", type=int, default=1, show_default=True,
              help="number of spawn points to place")
@click.option("-o", "--output", type=click.Path(), default="world.json",
              show_default=True)
def cmd_gen_world(seed, size, density, regions_file, spawns, output):
    """Generate a forest world file (deterministic for a given seed)."""
    try:
        extent = tuple(float(v) for v in size.split(","))
        if len(extent) != 3:
            raise ValueError
    except ValueError:
        _fail(f"--size must be X,Y,Z numbers, got {size!r}")
    if (density is None) == (regions_file is None):
        _fail("give exactly one of --density or --regions")
    try:
        if regions_file is not None:
            items = json.loads(Path(regions_file).read_text())
            regions = _regions_from(items, "regions")
            world = generate_tiled_forest(seed=seed, extent=extent,
                                          regions=regions, n_spawns=spawns)
        else:
            world = generate_forest(seed=seed, extent=extent, density=density,
                                    n_spawns=spawns)
    except (ConfigError, WorldError, ValueError) as e:
        _fail(str(e))
    save_world(world, output)
    click.echo(f"wrote {output}: {len(world.trees)} trees, "
               f"{len(world.spawn_points)} spawn points")


@main.command("run")
@click.argument("config_path", type=click.Path(exists=True))
@click.option("-o", "--output-dir", type=click.Path(), default=None,
              help="override the config's output_dir")
@click.option("--seed", type=int, default=None, help="override the seed")
@click.option("--strategy", type=str, default=None,
              help="override the strategy")
def cmd_run(config_path, output_dir, seed, strategy):
    """Run one mission and write trajectory/metrics/summary artifacts."""
    try:
        rcf = RunConfigFile.load(config_path)
        use_seed = rcf.seed if seed is None else seed
        use_strategy = rcf.strategies[0] if strategy is None else strategy
        if use_strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {use_strategy!r}")
        cfg = rcf.mission_config(use_seed, use_strategy)
    except (ConfigError, WorldError, ValueError) as e:
        _fail(str(e))
    result = Simulation(cfg).run()
    outdir = Path(output_dir) if output_dir else Path(rcf.output_dir)
    write_artifacts(result, outdir)
    status = ("completed" if result.completed else
              "collision" if result.collision_count else "timeout")
    click.echo(f"{status}: t={result.sim_time:.1f}s "
               f"explored={result.team_explored_m3:.1f}m3 "
               f"collisions={result.collision_count} -> {outdir}")
    sys.exit(_result_exit_code(result))


@main.command("batch")
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--seeds", "seeds_flag", type=str, default=None,
              help="comma-separated seed list; overrides the config's seeds")
@click.option("-o", "--output-dir", type=click.Path(), default=None,
              help="override the config's output_dir")
def cmd_batch(config_path, seeds_flag, output_dir):
    """Run every (strategy x seed) cell and write aggregate tables."""
    try:
        rcf = RunConfigFile.load(config_path)
        if seeds_flag is not None:
            try:
                seeds = [int(s) for s in seeds_flag.split(",")]
            except ValueError:
                raise ConfigError(f"--seeds must be comma-separated integers, "
                                  f"got {seeds_flag!r}") from None
        else:
            seeds = rcf.seeds
        if not seeds:
            raise ConfigError("batch needs seeds (config 'seeds' or --seeds)")
    except (ConfigError, WorldError, ValueError) as e:
        _fail(str(e))
    outdir = Path(output_dir) if output_dir else Path(rcf.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    cells = []
    worst = EXIT_OK
    for strategy in rcf.strategies:
        for seed in seeds:
            try:
                cfg = rcf.mission_config(seed, strategy)
            except (ConfigError, WorldError, ValueError) as e:
                _fail(str(e))
            result = Simulation(cfg).run()
            cell_dir = outdir / strategy / f"seed_{seed}"
            write_artifacts(result, cell_dir)
            cells.append((strategy, seed, result))
            code = _result_exit_code(result)
            worst = max(worst, code)
            click.echo(f"{strategy} seed={seed}: "
                       f"{'ok' if code == EXIT_OK else 'FAIL'} "
                       f"t={result.sim_time:.1f}s "
                       f"explored={result.team_explored_m3:.1f}m3")

    _write_cells_csv(outdir / "cells.csv", cells, rcf.timestamps)
    _write_aggregate_csv(outdir / "aggregate.csv", cells, rcf.timestamps)
    click.echo(f"wrote {outdir / 'cells.csv'} and {outdir / 'aggregate.csv'}")
    sys.exit(worst)


def _write_cells_csv(path: Path, cells, timestamps) -> None:
    vol_cols = ",".join(f"vol_{int(t)}s" for t in timestamps)
    with path.open("w") as f:
        f.write("# schema=1\n")
        f.write("strategy,seed,completed,completion_time,sim_time,"
                f"collision_count,distance_m,mean_velocity,{vol_cols},"
                "config_hash\n")
        for strategy, seed, r in cells:
            vols = ",".join(_num(_volume_at(r.team_series, t))
                            for t in timestamps)
            total_d = sum(a.distance_m for a in r.agents)
            mean_v = statistics.fmean(a.mean_velocity for a in r.agents)
            f.write(f"{strategy},{seed},{int(r.completed)},"
                    f"{_num(r.completion_time) if r.completed else ''},"
                    f"{_num(r.sim_time)},{r.collision_count},{_num(total_d)},"
                    f"{_num(mean_v)},{vols},{r.config_digest}\n")


def _write_aggregate_csv(path: Path, cells, timestamps) -> None:
    vol_cols = ",".join(f"vol_{int(t)}s_mean,vol_{int(t)}s_std"
                        for t in timestamps)
    strategies = []
    for strategy, _, _ in cells:
        if strategy not in strategies:
            strategies.append(strategy)
    with path.open("w") as f:
        f.write("# schema=1\n")
        f.write("strategy,n_runs,n_completed,completion_time_mean,"
                "completion_time_std,distance_mean,distance_std,"
                f"mean_velocity_mean,mean_velocity_std,{vol_cols}\n")
        for strategy in strategies:
            rs = [r for s, _, r in cells if s == strategy]
            done = [r for r in rs if r.completed]
            if done:
                tm, ts_ = _mean_std([r.completion_time for r in done])
                t_cols = f"{_num(tm)},{_num(ts_)}"
            else:
                t_cols = ","
            dm, ds = _mean_std([sum(a.distance_m for a in r.agents)
                                for r in rs])
            vm, vs = _mean_std([statistics.fmean(a.mean_velocity
                                                 for a in r.agents)
                                for r in rs])
            vol_parts = []
            for t in timestamps:
                m, s = _mean_std([_volume_at(r.team_series, t) for r in rs])
                vol_parts.append(f"{_num(m)},{_num(s)}")
            f.write(f"{strategy},{len(rs)},{len(done)},{t_cols},"
                    f"{_num(dm)},{_num(ds)},{_num(vm)},{_num(vs)},"
                    + ",".join(vol_parts) + "\n")


@main.command("report")
@click.argument("run_dirs", nargs=-1, type=click.Path(exists=True))
@click.option("-o", "--output-dir", type=click.Path(), default="report",
              show_default=True)
def cmd_report(run_dirs, output_dir):
    """Fold finished run directories into plot-ready CSV curves.

    All runs must share a config (seed and world may differ); emits
    exploration-rate, velocity, and per-agent balance tables with
    mean/std across the runs.
    """
    if not run_dirs:
        raise click.UsageError("give at least one run directory")
    runs = []
    for d in run_dirs:
        d = Path(d)
        try:
            summary = json.loads((d / "summary.json").read_text())
            metrics = (d / "metrics.csv").read_text().splitlines()
        except (OSError, json.JSONDecodeError) as e:
            _fail(f"cannot read run dir {d}: {e}")
        runs.append((d, summary, _parse_metrics(metrics, d)))

    base = _comparable_config(runs[0][1])
    for d, summary, _ in runs[1:]:
        if _comparable_config(summary) != base:
            _fail(f"run {d} was produced with a different config than "
                  f"{runs[0][0]} (only seed and world may differ)")
    base_hash = hashlib.sha256(json.dumps(
        base, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
    seeds = ",".join(str(s["seed"]) for _, s, _ in runs)
    stamp = f"# schema=1 base_config={base_hash} seeds={seeds}\n"

    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    times = sorted({t for _, _, m in runs for t in m["team"]})
    _write_rate_csv(outdir / "exploration_rate.csv", stamp, runs, times)
    _write_velocity_csv(outdir / "velocity.csv", stamp, runs, times)
    _write_balance_csv(outdir / "balance.csv", stamp, runs, times)
    click.echo(f"wrote exploration_rate.csv, velocity.csv, balance.csv "
               f"-> {outdir}")


def _parse_metrics(lines, where) -> dict:
    """metrics.csv -> {'team': {t: (vol, dist, v)}, 'agents': {id: {t: vol}}}."""
    rows = [ln for ln in lines if ln and not ln.startswith("#")]
    if not rows or rows[0] != "t,agent,explored_m3,distance_m,mean_v":
        _fail(f"unrecognized metrics.csv schema in {where}")
    team: dict[float, tuple] = {}
    agents: dict[str, dict[float, float]] = {}
    for ln in rows[1:]:
        t_s, agent, vol_s, dist_s, v_s = ln.split(",")
        t = float(t_s)
        if agent == "team":
            team[t] = (float(vol_s), float(dist_s), float(v_s))
        else:
            agents.setdefault(agent, {})[t] = float(vol_s)
    return {"team": team, "agents": agents}


def _comparable_config(summary: dict) -> dict:
    cfg = dict(summary.get("config", {}))
    cfg.pop("seed", None)
    cfg.pop("world", None)
    return cfg


def _series_at(series: dict, times) -> list[float]:
    """Sample a {t: value} series at the given times, holding the last value."""
    out = []
    last = 0.0
    for t in times:
        if t in series:
            last = series[t]
        out.append(last)
    return out


def _write_rate_csv(path, stamp, runs, times) -> None:
    vols = [_series_at({t: v[0] for t, v in m["team"].items()}, times)
            for _, _, m in runs]
    with path.open("w") as f:
        f.write(stamp)
        f.write("t,explored_m3_mean,explored_m3_std,rate_m3s_mean,"
                "rate_m3s_std\n")
        prev = None
        for i, t in enumerate(times):
            col = [v[i] for v in vols]
            m, s = _mean_std(col)
            if prev is None:
                rm, rs = 0.0, 0.0
            else:
                dt = t - prev[0]
                rates = [(v[i] - pv) / dt for v, pv in zip(vols, prev[1])]
                rm, rs = _mean_std(rates)
            f.write(f"{_num(t)},{_num(m)},{_num(s)},{_num(rm)},{_num(rs)}\n")
            prev = (t, col)


def _write_velocity_csv(path, stamp, runs, times) -> None:
    vels = [_series_at({t: v[2] for t, v in m["team"].items()}, times)
            for _, _, m in runs]
    with path.open("w") as f:
        f.write(stamp)
        f.write("t,mean_velocity_mean,mean_velocity_std\n")
        for i, t in enumerate(times):
            m, s = _mean_std([v[i] for v in vels])
            f.write(f"{_num(t)},{_num(m)},{_num(s)}\n")


def _write_balance_csv(path, stamp, runs, times) -> None:
    ids = sorted({a for _, _, m in runs for a in m["agents"]}, key=int)
    cols = {}
    for aid in ids:
        cols[aid] = [_series_at(m["agents"].get(aid, {}), times)
                     for _, _, m in runs]
    with path.open("w") as f:
        f.write(stamp)
        header = ",".join(f"agent{aid}_m3_mean,agent{aid}_m3_std"
                          for aid in ids)
        f.write(f"t,{header}\n")
        for i, t in enumerate(times):
            parts = []
            for aid in ids:
                m, s = _mean_std([series[i] for series in cols[aid]])
                parts.append(f"{_num(m)},{_num(s)}")
            f.write(f"{_num(t)}," + ",".join(parts) + "\n")


if __name__ == "__main__":
    main()
