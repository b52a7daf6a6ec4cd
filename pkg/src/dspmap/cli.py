"""Command-line entry point: simulate, map, evaluate and bench.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import os
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from . import geometry as geo
from . import occupancy as occ
from . import simulator as sim
from .config import MODES, PROFILES, Config, ConfigError, apply_overrides, canonical_key, dump_config, load_config
from .dataset import CorruptStream, load_dataset, read_frames, write_dataset
from .pipeline import DSPMap, NonMonotoneTimestamp

THREADS_ENV = "DSPMAP_THREADS"
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def build_id() -> str:
    """``git describe`` of the source checkout, or the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out: Path, command: str, args: dict, inputs: dict, seed, config: Config | None) -> None:
    outputs = sorted(str(p.relative_to(out)) for p in out.rglob("*")
                     if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": command,
        "build": build_id(),
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "args": args,
        "config": dump_config(config).splitlines() if config is not None else None,
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def resolve_threads(cli_value: int | None) -> int | None:
    if cli_value is not None:
        return cli_value
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return None


def base_config(args) -> Config:
    return PROFILES[args.profile]()


def make_config(args, path: str | None = None, **overrides) -> Config:
    base = base_config(args)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"config file not found: {p}")
        try:
            cfg = load_config(p, base)
        except ConfigError as exc:
            raise DataError(f"{p}: {exc}") from None
    else:
        cfg = base
    threads = resolve_threads(args.threads)
    if threads is not None:
        cfg = replace(cfg, threads=threads)
    for k, v in overrides.items():
        if v is not None:
            cfg = replace(cfg, **{k: v})
    return cfg


def parse_floats(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise UsageError(f"expected positive numbers, got {text!r}")
    return vals


def res_tag(l: float) -> str:
    return f"r{l:.2f}"


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"file not found: {p}")
    return p


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    src = Path(args.world)
    if src.is_file():
        try:
            world = sim.load_world(src)
        except sim.WorldParseError as exc:
            raise DataError(str(exc)) from None
    elif args.world in sim.SCENARIOS:
        world = sim.scenario(args.world)
    else:
        raise DataError(f"world file not found: {src} (builtin scenarios: {', '.join(sorted(sim.SCENARIOS))})")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolutions = parse_floats(args.resolutions)
    if args.truth_stride < 1 or args.dense_factor < 1:
        raise UsageError("--truth-stride and --dense-factor must be at least 1")
    seed = world.seed if args.seed is None else args.seed
    result = sim.simulate(world, resolutions, truth_stride=args.truth_stride,
                          dense_factor=args.dense_factor, seed=seed)
    write_dataset(out / "data.dspd", result.frames)
    for l, (grid, steps) in result.truth.items():
        sim.write_truth(out / f"truth_{res_tag(l)}.dspg", grid, steps)
    sim.write_agents(out / "agents.csv", result.agent_rows)
    write_manifest(out, "simulate", {"resolutions": list(resolutions), "truth_stride": args.truth_stride,
                                     "dense_factor": args.dense_factor},
                   {"world": args.world}, seed, None)
    print(f"frames,{len(result.frames)}")
    print(f"agents,{len(world.agents)}")
    return 0


# ---------------------------------------------------------------- map


def _agent_table(dataset: Path):
    path = dataset.parent / "agents.csv"
    if not path.is_file():
        return None
    rows = sim.read_agents(path)
    return rows if rows.size else None


def _velocity_rows(frame_index, frame, state, cfg, agents, km_diff, km_kf):
    """DSP and baseline estimates for every agent visible in this frame."""
    rows = []
    for r in agents[agents[:, 0] == frame_index]:
        c, v = r[3:6], r[6:9]
        if geo.pyramid_index(c, frame.pose, cfg.map) < 0 or geo.voxel_index(c, frame.pose.position, cfg.map) < 0:
            continue
        base = {"frame": frame_index, "timestamp": float(frame.timestamp), "agent": int(r[2]),
                "vx_true": float(v[0]), "vy_true": float(v[1]), "vz_true": float(v[2])}
        try:
            mu, var = ev.map_velocity_estimate(state, c, 0.5)
            rows.append({**base, "source": "dsp", **_vel_cols(mu, var)})
        except ev.NoParticles:
            pass
        for name, tracks in (("km_diff", km_diff), ("km_kf", km_kf)):
            t = ev.nearest_track(tracks, c, 0.5)
            if t is not None:
                rows.append({**base, "source": name, **_vel_cols(t.velocity, t.variance)})
    return rows


def _vel_cols(mu, var):
    var = var if var is not None else (np.nan, np.nan, np.nan)
    return {"vx": float(mu[0]), "vy": float(mu[1]), "vz": float(mu[2]),
            "var_x": float(var[0]), "var_y": float(var[1]), "var_z": float(var[2])}


def run_map(frames, cfg: Config, out: Path, snapshot_every: int, agents=None) -> dict:
    """Run the filter over ``frames``, writing grids, timing and velocity tables into ``out``."""
    from .plotting import timing_figure

    resolutions = cfg.snapshot_resolutions
    for l in resolutions:
        (out / "grids" / res_tag(l)).mkdir(parents=True, exist_ok=True)
    timing, vel_rows = [], []
    trackers = None
    if agents is not None:
        trackers = (ev.ClusterTracker(cfg, kalman=False), ev.ClusterTracker(cfg, kalman=True))
    n_snap = 0
    with DSPMap(cfg) as mapper:
        for k, frame in enumerate(frames):
            rep = mapper.step(frame)
            timing.append(rep.row())
            if trackers is not None:
                km_diff, km_kf = (t.step(frame) for t in trackers)
                vel_rows += _velocity_rows(k, frame, mapper.state, cfg, agents, km_diff, km_kf)
            if k > 0 and k % snapshot_every == 0:
                for l in resolutions:
                    grid = occ.occupancy_grid(mapper.state, l)
                    occ.write_grid(out / "grids" / res_tag(l) / f"frame_{k:06d}.dspo", grid)
                n_snap += 1
        mapper.state.arena.dump(out / "particles_final.csv")
    ev.write_table(out / "timing.csv", timing)
    if timing:
        timing_figure(timing, out / "timing.png")
    if agents is not None:
        ev.write_table(out / "velocity_estimates.csv", vel_rows)
    return {"frames": len(timing), "snapshots": n_snap, "timing": timing}


def cmd_map(args) -> int:
    dataset = _require_file(args.dataset)
    cfg = make_config(args, args.config, mode=args.mode, seed=args.seed)
    if args.snapshot_every < 1:
        raise UsageError("--snapshot-every must be at least 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    agents = _agent_table(dataset)
    try:
        info = run_map(read_frames(dataset), cfg, out, args.snapshot_every, agents)
    except CorruptStream as exc:
        raise DataError(f"{dataset}: corrupt stream at frame {exc.frame_index}: {exc}") from None
    except NonMonotoneTimestamp as exc:
        raise DataError(f"{dataset}: {exc}") from None
    write_manifest(out, "map", {"snapshot_every": args.snapshot_every, "mode": cfg.mode},
                   {"dataset": dataset, "config": args.config}, cfg.seed, cfg)
    summary = ev.timing_summary(info["timing"])
    print(f"frames,{info['frames']}")
    print(f"snapshots,{info['snapshots']}")
    for k, v in summary.items():
        print(f"{k},{v:.3f}")
    return 0


# ---------------------------------------------------------------- evaluate


def _truth_path(truth: Path, l: float) -> Path:
    if truth.is_dir():
        return truth / f"truth_{res_tag(l)}.dspg"
    return truth


def _grid_files(run: Path, l: float) -> list[Path]:
    d = run / "grids" / res_tag(l)
    return sorted(d.glob("frame_*.dspo")) if d.is_dir() else []


def evaluate_occupancy(grids: list[Path], truth_path: Path, l: float, tol: float = 1e-6) -> ev.PrCurve:
    tgrid, steps = sim.read_truth(truth_path)
    if not np.isclose(tgrid.l_q, l):
        raise ev.ResolutionMismatch(f"{truth_path}: truth resolution {tgrid.l_q} differs from {l}")
    times = np.array([s.timestamp for s in steps])
    probs, truths, masks = [], [], []
    for path in grids:
        g = occ.read_grid(path)
        if times.size == 0:
            break
        i = int(np.argmin(np.abs(times - g.timestamp)))
        if abs(times[i] - g.timestamp) > tol:
            continue
        st = steps[i]
        if np.linalg.norm(np.asarray(g.center) - st.sensor_position) > 1e-3:
            raise DataError(f"{path.name}: map center {np.round(g.center, 4).tolist()} does not match "
                            f"truth sensor position {np.round(st.sensor_position, 4).tolist()}")
        prob, covered = ev.align_to_truth(g, tgrid)
        probs.append(prob)
        truths.append(ev.occupied_mask(tgrid.size, st.occupied))
        masks.append(st.observed & covered)
    if not probs:
        raise ev.EmptyOverlap(f"no grid snapshot shares a timestamp with {truth_path.name}")
    return ev.pr_curve(probs, truths, masks)


def evaluate_velocity(rows: list[dict], warmup: float) -> dict[str, ev.VelocityReport]:
    out = {}
    for source in ("dsp", "km_diff", "km_kf"):
        sel = [r for r in rows if r["source"] == source and float(r["timestamp"]) >= warmup]
        if not sel:
            continue
        means = [[float(r[k]) for k in ("vx", "vy", "vz")] for r in sel]
        truth = [[float(r[k]) for k in ("vx_true", "vy_true", "vz_true")] for r in sel]
        var = [[float(r[k]) for k in ("var_x", "var_y", "var_z")] for r in sel]
        has_var = all(np.all(np.isfinite(v)) for v in var)
        out[source] = ev.velocity_report(means, var if has_var else None, truth)
    return out


def cmd_evaluate(args) -> int:
    from .plotting import pr_figure

    run = Path(args.run_dir)
    if not run.is_dir():
        raise DataError(f"run directory not found: {run}")
    truth = Path(args.truth)
    if not truth.exists():
        raise DataError(f"truth not found: {truth}")
    resolutions = parse_floats(args.resolutions)
    if truth.is_file() and len(resolutions) > 1:
        raise UsageError("a single truth file covers one resolution; pass the simulate directory instead")
    out = Path(args.out) if args.out else run / "eval"
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for l in resolutions:
        tpath = _truth_path(truth, l)
        if not tpath.is_file():
            raise DataError(f"truth file not found: {tpath}")
        grids = _grid_files(run, l)
        if not grids:
            raise DataError(f"no snapshots for resolution {l} under {run / 'grids'}")
        try:
            curve = evaluate_occupancy(grids, tpath, l)
        except (ev.ResolutionMismatch, ev.EmptyOverlap, ValueError) as exc:
            raise DataError(str(exc)) from None
        tag = res_tag(l)
        ev.write_table(out / f"pr_{tag}.csv", ev.pr_rows(curve))
        pr_figure({tag: curve}, out / f"pr_{tag}.png", title=f"l = {l:.2f} m")
        best = curve.best
        summary[f"auc_{tag}"] = curve.auc
        summary[f"best_f1_{tag}"] = best.f1
        summary[f"best_threshold_{tag}"] = best.threshold
        print(f"{tag},auc,{curve.auc:.4f},best_f1,{best.f1:.4f},threshold,{best.threshold:.2f}")
    vpath = run / "velocity_estimates.csv"
    if vpath.is_file() and vpath.stat().st_size:
        reports = evaluate_velocity(ev.read_table(vpath), args.warmup)
        ev.write_table(out / "velocity.csv", [{"source": s, **r.row()} for s, r in reports.items()])
        for s, r in reports.items():
            summary[f"velocity_{s}_rmse"] = r.rmse
            summary[f"velocity_{s}_var"] = r.var
            summary[f"velocity_{s}_mbd"] = r.mbd
            print(f"velocity,{s},rmse,{r.rmse:.4f},var,{r.var:.4f},mbd,{r.mbd:.4f},n,{r.n}")
    ev.write_summary(out / "summary.txt", summary)
    write_manifest(out, "evaluate", {"resolutions": list(resolutions), "warmup": args.warmup},
                   {"run": run, "truth": truth}, None, None)
    return 0


# ---------------------------------------------------------------- bench


def parse_sweeps(items: list[str]) -> list[tuple[str, list[str]]]:
    sweeps = []
    for item in items or []:
        key, sep, values = item.partition("=")
        if not sep or not values.strip():
            raise UsageError(f"--sweep expects key=v1,v2,..., got {item!r}")
        try:
            canonical_key(key.strip())
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        sweeps.append((key.strip(), [v.strip() for v in values.split(",") if v.strip()]))
    return sweeps


def run_bench(frames, cfg: Config, sweeps, n_frames: int | None = None) -> list[dict]:
    """One pipeline run per combination of the swept values; returns the merged table."""
    keys = [k for k, _ in sweeps]
    frames = frames[:n_frames] if n_frames else frames
    rows = []
    for combo in itertools.product(*(vals for _, vals in sweeps)):
        try:
            c = apply_overrides(cfg, dict(zip(keys, combo)))
        except (ConfigError, geo.Infeasible) as exc:
            raise DataError(f"bad sweep value {dict(zip(keys, combo))}: {exc}") from None
        with DSPMap(c) as mapper:
            reps = mapper.run(frames)
        timing = [r.row() for r in reps]
        row = {"combo": " ".join(f"{k}={v}" for k, v in zip(keys, combo)) or "base"}
        row.update(dict(zip(keys, combo)))
        row["frames"] = len(timing)
        row.update(ev.timing_summary(timing))
        row["mean_live"] = float(np.mean([r["live_after"] for r in timing])) if timing else 0.0
        rows.append(row)
    return rows


def cmd_bench(args) -> int:
    from .plotting import bench_figure

    dataset = _require_file(args.dataset)
    sweeps = parse_sweeps(args.sweep)
    cfg = make_config(args, args.config, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        frames = load_dataset(dataset)
    except CorruptStream as exc:
        raise DataError(f"{dataset}: corrupt stream at frame {exc.frame_index}: {exc}") from None
    rows = run_bench(frames, cfg, sweeps, args.frames)
    ev.write_table(out / "bench.csv", rows)
    bench_figure(rows, out / "bench.png")
    write_manifest(out, "bench", {"sweep": args.sweep or [], "frames": args.frames},
                   {"dataset": dataset, "config": args.config}, cfg.seed, cfg)
    cols = ["combo", "mean_t_update_ms", "mean_t_total_ms", "mean_live"]
    print(",".join(cols))
    for r in rows:
        print(",".join(r[c] if isinstance(r[c], str) else f"{r[c]:.3f}" for c in cols))
    return 0


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dspmap", description="Particle-based dynamic occupancy mapping.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--profile", choices=sorted(PROFILES), default="default",
                   help="base parameter set before the config file is applied")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or the config value)")
    p.add_argument("--dump-config", action="store_true",
                   help="print every config key with its value for the chosen profile and exit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="render a synthetic world into a dataset plus ground truth")
    s.add_argument("world", help="world file or builtin scenario name")
    s.add_argument("out")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--resolutions", default="0.1,0.2,0.3")
    s.add_argument("--truth-stride", type=int, default=1)
    s.add_argument("--dense-factor", type=int, default=4)
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("map", help="run the filter over a dataset")
    m.add_argument("dataset")
    m.add_argument("config")
    m.add_argument("out")
    m.add_argument("--snapshot-every", type=int, default=5)
    m.add_argument("--mode", choices=MODES, default=None)
    m.add_argument("--seed", type=int, default=None)
    m.set_defaults(func=cmd_map)

    e = sub.add_parser("evaluate", help="score grid snapshots against ground truth")
    e.add_argument("run_dir")
    e.add_argument("truth", help="simulate output directory or a single truth file")
    e.add_argument("--resolutions", default="0.1,0.2,0.3")
    e.add_argument("--warmup", type=float, default=2.0, help="seconds skipped in velocity metrics")
    e.add_argument("--out", default=None, help="output directory (default RUN_DIR/eval)")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bench", help="timing over a factorial parameter sweep")
    b.add_argument("dataset")
    b.add_argument("config")
    b.add_argument("out")
    b.add_argument("--sweep", action="append", metavar="KEY=V1,V2,...")
    b.add_argument("--frames", type=int, default=None, help="only the first N frames")
    b.add_argument("--seed", type=int, default=None)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.dump_config:
            cfg = base_config(args)
            threads = resolve_threads(args.threads)
            if threads is not None:
                cfg = replace(cfg, threads=threads)
            sys.stdout.write(dump_config(cfg))
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"dspmap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError, geo.Infeasible, sim.WorldParseError) as exc:
        print(f"dspmap: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"dspmap: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
