"""Synthetic worlds, depth-sensor ray casting and ground-truth occupancy.

Worlds hold axis-aligned boxes, vertical cylinders, an optional ground plane
at z = 0 and cylindrical walkers. Everything has closed-form ray hits and
distance functions, so ground truth needs no meshes.
"""
from __future__ import annotations

import copy
import functools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .geometry import Pose, yaw_pitch_quat
from .pipeline import Frame

_EPS = 1e-9


class WorldParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = f"{path or '<world>'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


# ---------------------------------------------------------------- primitives


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, float)
        self.hi = np.asarray(self.hi, float)

    def ray_hits(self, o, d):
        with np.errstate(divide="ignore", invalid="ignore"):
            safe = np.where(d == 0.0, 1e-300, d)
            t1 = (self.lo - o) / safe
            t2 = (self.hi - o) / safe
        tn = np.minimum(t1, t2).max(axis=1)
        tf = np.maximum(t1, t2).min(axis=1)
        return np.where((tn <= tf) & (tn > _EPS), tn, np.inf)

    def distance(self, p):
        c = (self.lo + self.hi) / 2
        h = (self.hi - self.lo) / 2
        q = np.abs(p - c) - h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return np.abs(outside + inside)

    def bounds(self):
        return self.lo, self.hi


@dataclass
class Cylinder:
    """Vertical cylinder with base center (x, y, z0)."""

    center: np.ndarray  # (x, y)
    radius: float
    z0: float = 0.0
    height: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, float).reshape(2)

    def ray_hits(self, o, d):
        # cheap bounding-sphere cull before the exact test
        c = np.array([self.center[0], self.center[1], self.z0 + self.height / 2]) - o
        along = d @ c
        r_b2 = self.radius**2 + (self.height / 2) ** 2
        cand = (along > 0) & (c @ c - along * along <= r_b2 + 1e-9)
        cand |= (c @ c) <= r_b2
        out = np.full(d.shape[0], np.inf)
        if cand.any():
            out[cand] = self._exact_hits(o, d[cand])
        return out

    def _exact_hits(self, o, d):
        ox, oy = o[0] - self.center[0], o[1] - self.center[1]
        dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
        a = dx * dx + dy * dy
        b = 2 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - self.radius**2
        disc = b * b - 4 * a * c
        with np.errstate(divide="ignore", invalid="ignore"):
            t_side = (-b - np.sqrt(np.maximum(disc, 0.0))) / (2 * a)
        z = o[2] + t_side * dz
        z1 = self.z0 + self.height
        side_ok = (a > 0) & (disc >= 0) & (t_side > _EPS) & (z >= self.z0) & (z <= z1)
        best = np.where(side_ok, t_side, np.inf)
        for zc in (self.z0, z1):
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (zc - o[2]) / dz
            px = ox + t * dx
            py = oy + t * dy
            ok = (dz != 0) & (t > _EPS) & (px * px + py * py <= self.radius**2)
            best = np.where(ok & (t < best), t, best)
        return best

    def distance(self, p):
        dr = np.hypot(p[..., 0] - self.center[0], p[..., 1] - self.center[1]) - self.radius
        hz = self.height / 2
        dz = np.abs(p[..., 2] - (self.z0 + hz)) - hz
        outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
        inside = np.minimum(np.maximum(dr, dz), 0.0)
        return np.abs(outside + inside)

    def bounds(self):
        r = self.radius
        return (np.array([self.center[0] - r, self.center[1] - r, self.z0]),
                np.array([self.center[0] + r, self.center[1] + r, self.z0 + self.height]))


@dataclass
class Ground:
    def ray_hits(self, o, d):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -o[2] / d[:, 2]
        return np.where((d[:, 2] < 0) & (o[2] > 0) & (t > _EPS), t, np.inf)

    def distance(self, p):
        return np.abs(p[..., 2])


@dataclass
class Agent:
    """Walking cylinder; constant velocity with reflection, or a waypoint loop."""

    position: np.ndarray  # base center (x, y)
    radius: float = 0.25
    height: float = 1.7
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    waypoints: np.ndarray | None = None
    speed: float = 1.0
    target: int = 0

    def __post_init__(self):
        self.position = np.asarray(self.position, float).reshape(2)
        self.velocity = np.asarray(self.velocity, float).reshape(2)
        if self.waypoints is not None:
            self.waypoints = np.asarray(self.waypoints, float).reshape(-1, 2)
            self._aim()

    def _aim(self):
        delta = self.waypoints[self.target] - self.position
        dist = np.linalg.norm(delta)
        self.velocity = delta / dist * self.speed if dist > 0 else np.zeros(2)

    @property
    def shape(self) -> Cylinder:
        return Cylinder(self.position, self.radius, 0.0, self.height)

    @property
    def center3(self) -> np.ndarray:
        return np.array([self.position[0], self.position[1], self.height / 2])

    @property
    def velocity3(self) -> np.ndarray:
        return np.array([self.velocity[0], self.velocity[1], 0.0])

    def advance(self, dt: float, lo, hi) -> None:
        if self.waypoints is not None:
            remaining = self.speed * dt
            for _ in range(len(self.waypoints) + 1):
                goal = self.waypoints[self.target]
                delta = goal - self.position
                dist = float(np.linalg.norm(delta))
                if dist > remaining:
                    self.position = self.position + delta / dist * remaining
                    break
                self.position = goal.copy()
                remaining -= dist
                self.target = (self.target + 1) % len(self.waypoints)
            self._aim()
            return
        self.position = self.position + self.velocity * dt
        for a in range(2):
            lo_a, hi_a = lo[a] + self.radius, hi[a] - self.radius
            if self.position[a] > hi_a and self.velocity[a] > 0:
                self.position[a] = 2 * hi_a - self.position[a]
                self.velocity[a] = -self.velocity[a]
            elif self.position[a] < lo_a and self.velocity[a] < 0:
                self.position[a] = 2 * lo_a - self.position[a]
                self.velocity[a] = -self.velocity[a]


# ---------------------------------------------------------------- sensor


@dataclass
class SensorModel:
    fov_h: float = math.radians(90.0)
    fov_v: float = math.radians(60.0)
    resolution: float = math.radians(0.5)
    max_range: float = 6.0
    noise_model: str = "linear"
    noise_sigma: float = 0.01

    def rho(self, r):
        r = np.asarray(r, float)
        return np.full_like(r, self.noise_sigma) if self.noise_model == "constant" else self.noise_sigma * r

    def directions(self, factor: int = 1) -> np.ndarray:
        """Unit ray directions in the sensor frame at ``resolution / factor`` spacing."""
        return _directions(self.fov_h, self.fov_v, self.resolution, factor)


@functools.lru_cache(maxsize=8)
def _directions(fov_h, fov_v, resolution, factor) -> np.ndarray:
    step = resolution / factor
    n_a = max(1, int(round(fov_h / step)))
    n_z = max(1, int(round(fov_v / step)))
    beta = -fov_h / 2 + (np.arange(n_a) + 0.5) * fov_h / n_a
    alpha = (math.pi - fov_v) / 2 + (np.arange(n_z) + 0.5) * fov_v / n_z
    a, b = np.meshgrid(alpha, beta, indexing="ij")
    a, b = a.ravel(), b.ravel()
    out = np.stack([np.sin(a) * np.cos(b), np.sin(a) * np.sin(b), np.cos(a)], axis=1)
    out.setflags(write=False)
    return out


@dataclass
class SensorTrajectory:
    """Constant-velocity, constant-yaw-rate sensor motion."""

    position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    yaw: float = 0.0
    pitch: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw_rate: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, float).reshape(3)
        self.velocity = np.asarray(self.velocity, float).reshape(3)

    def pose(self, t: float) -> Pose:
        return Pose(self.position + self.velocity * t,
                    yaw_pitch_quat(self.yaw + self.yaw_rate * t, self.pitch))


@dataclass
class World:
    statics: list = field(default_factory=list)
    agents: list[Agent] = field(default_factory=list)
    ground: bool = True
    bounds_lo: np.ndarray = field(default_factory=lambda: np.array([-6.0, -6.0, -0.5]))
    bounds_hi: np.ndarray = field(default_factory=lambda: np.array([6.0, 6.0, 2.5]))
    sensor: SensorModel = field(default_factory=SensorModel)
    trajectory: SensorTrajectory = field(default_factory=SensorTrajectory)
    rate: float = 20.0
    duration: float = 10.0
    seed: int = 0
    time: float = 0.0

    def __post_init__(self):
        self.bounds_lo = np.asarray(self.bounds_lo, float)
        self.bounds_hi = np.asarray(self.bounds_hi, float)
        if self.rate <= 0:
            raise ValueError("frame rate must be positive")

    @property
    def n_frames(self) -> int:
        return int(math.floor(self.duration * self.rate + 1e-9))

    def static_shapes(self) -> list:
        return list(self.statics) + ([Ground()] if self.ground else [])

    def shapes(self) -> list:
        return self.static_shapes() + [a.shape for a in self.agents]


def step_world(world: World, dt: float) -> World:
    """New world with every agent advanced by ``dt``."""
    out = copy.deepcopy(world)
    for agent in out.agents:
        agent.advance(dt, out.bounds_lo, out.bounds_hi)
    out.time = world.time + dt
    return out


def _first_hit(shapes, origin, dirs) -> np.ndarray:
    best = np.full(dirs.shape[0], np.inf)
    for s in shapes:
        np.minimum(best, s.ray_hits(origin, dirs), out=best)
    return best


class _StaticHitCache:
    """First-hit distances against static geometry, cached per sensor pose."""

    def __init__(self):
        self.key = None
        self.value = None

    def get(self, world: World, pose: Pose, dirs_sensor: np.ndarray, factor: int):
        key = (pose.position.tobytes(), pose.orientation.tobytes(), factor, dirs_sensor.shape[0])
        if key != self.key:
            dirs = dirs_sensor @ pose.rotation.T
            self.value = (dirs, _first_hit(world.static_shapes(), pose.position, dirs))
            self.key = key
        return self.value


def raycast_frame(world: World, pose: Pose, rng: np.random.Generator,
                  cache: _StaticHitCache | None = None) -> Frame:
    """One noisy depth frame; points are in the sensor frame."""
    sensor = world.sensor
    dirs_s = sensor.directions()
    if cache is None:
        dirs = dirs_s @ pose.rotation.T
        static = _first_hit(world.static_shapes(), pose.position, dirs)
    else:
        dirs, static = cache.get(world, pose, dirs_s, 1)
    t = np.minimum(static, _first_hit([a.shape for a in world.agents], pose.position, dirs))
    hit = t <= sensor.max_range
    noise = rng.standard_normal(dirs_s.shape[0])
    r = t[hit] + noise[hit] * sensor.rho(t[hit])
    return Frame(world.time, pose, dirs_s[hit] * r[:, None])


# ---------------------------------------------------------------- ground truth


@dataclass
class TruthGrid:
    """World-aligned evaluation grid: cell (i, j, k) spans ``(origin_idx + ijk) * l_q``."""

    l_q: float
    origin_idx: np.ndarray
    dims: tuple[int, int, int]

    @classmethod
    def for_world(cls, world: World, l_q: float) -> "TruthGrid":
        lo = np.floor(world.bounds_lo / l_q + 1e-9).astype(np.int64)
        hi = np.ceil(world.bounds_hi / l_q - 1e-9).astype(np.int64)
        return cls(l_q, lo, tuple(int(x) for x in hi - lo))

    @property
    def size(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def centers(self, ids=None) -> np.ndarray:
        nx, ny, _ = self.dims
        ids = np.arange(self.size) if ids is None else np.asarray(ids)
        ijk = np.stack([ids % nx, (ids // nx) % ny, ids // (nx * ny)], axis=-1)
        return (self.origin_idx + ijk + 0.5) * self.l_q

    def sub_ids(self, lo, hi) -> np.ndarray:
        """Ids of cells whose centers may lie inside the world box [lo, hi]."""
        a = np.clip(np.floor(np.asarray(lo) / self.l_q).astype(np.int64) - self.origin_idx - 1, 0, None)
        b = np.minimum(np.ceil(np.asarray(hi) / self.l_q).astype(np.int64) - self.origin_idx + 1,
                       np.array(self.dims))
        if np.any(b <= a):
            return np.empty(0, np.int64)
        nx, ny, _ = self.dims
        i, j, k = np.meshgrid(*(np.arange(s, e) for s, e in zip(a, b)), indexing="ij")
        return (i + j * nx + k * nx * ny).ravel()


@dataclass
class TruthStep:
    timestamp: float
    sensor_position: np.ndarray
    occupied: np.ndarray  # sorted cell ids
    observed: np.ndarray  # bool mask over the grid


class GroundTruthBuilder:
    """Accumulates occupancy and observed masks frame by frame for one resolution."""

    def __init__(self, world: World, l_q: float, dense_factor: int = 4,
                 exclude_below: float | None = 0.2):
        self.grid = TruthGrid.for_world(world, l_q)
        self.dense_factor = dense_factor
        self.observed = np.zeros(self.grid.size, dtype=bool)
        centers = self.grid.centers()
        d = np.full(self.grid.size, np.inf)
        for s in world.static_shapes():
            np.minimum(d, s.distance(centers), out=d)
        self.static_occ = d <= l_q / 2 + 1e-9
        # cells near the ground plane are left out of scoring
        self.excluded = centers[:, 2] <= exclude_below if exclude_below is not None and world.ground \
            else np.zeros(self.grid.size, bool)
        self.cache = _StaticHitCache()
        self._traversed = None
        self.steps: list[TruthStep] = []

    def occupied(self, world: World) -> np.ndarray:
        occ = self.static_occ.copy()
        l_q = self.grid.l_q
        for agent in world.agents:
            shape = agent.shape
            lo, hi = shape.bounds()
            ids = self.grid.sub_ids(lo - l_q, hi + l_q)
            if ids.size:
                near = shape.distance(self.grid.centers(ids)) <= l_q / 2 + 1e-9
                occ[ids[near]] = True
        return np.nonzero(occ & ~self.excluded)[0]

    def observe(self, world: World, pose: Pose, agent_t: np.ndarray | None = None) -> None:
        """Mark cells crossed by the dense rays; ``agent_t`` may carry precomputed agent hits."""
        sensor = world.sensor
        dirs_s = sensor.directions(self.dense_factor)
        dirs, static = self.cache.get(world, pose, dirs_s, self.dense_factor)
        if self.cache.key != self._traversed:
            # rays that only meet static geometry are identical for a fixed pose
            self._traverse(pose.position, dirs, np.minimum(static, sensor.max_range))
            self._traversed = self.cache.key
        if agent_t is None:
            agent_t = _first_hit([a.shape for a in world.agents], pose.position, dirs)
        cut = agent_t < np.minimum(static, sensor.max_range)
        if cut.any():
            self._traverse(pose.position, dirs[cut], agent_t[cut])

    def _traverse(self, origin, dirs, lengths) -> None:
        g = self.grid
        K.traverse_rays(np.asarray(origin, np.float64), np.ascontiguousarray(dirs),
                        np.ascontiguousarray(lengths), (g.origin_idx * g.l_q).astype(np.float64),
                        1.0 / g.l_q, np.array(g.dims, dtype=np.int64), self.observed)

    def add(self, world: World, pose: Pose, agent_t: np.ndarray | None = None) -> TruthStep:
        self.observe(world, pose, agent_t)
        step = TruthStep(world.time, pose.position.copy(), self.occupied(world),
                         self.observed & ~self.excluded)
        self.steps.append(step)
        return step


TRUTH_MAGIC = b"DSPG"
TRUTH_VERSION = 1
_TRUTH_HEAD = struct.Struct("<4sId3q3II")
_TRUTH_STEP = struct.Struct("<d3dI")


def write_truth(path: str | Path, grid: TruthGrid, steps: list[TruthStep]) -> None:
    """Header, then per step: f64 time, f64x3 sensor position, u32 n, u32 ids, packed mask bits."""
    with open(path, "wb") as fh:
        fh.write(_TRUTH_HEAD.pack(TRUTH_MAGIC, TRUTH_VERSION, grid.l_q, *map(int, grid.origin_idx),
                                  *grid.dims, len(steps)))
        for s in steps:
            fh.write(_TRUTH_STEP.pack(s.timestamp, *map(float, s.sensor_position), len(s.occupied)))
            fh.write(np.asarray(s.occupied, dtype="<u4").tobytes())
            fh.write(np.packbits(s.observed, bitorder="little").tobytes())


def read_truth(path: str | Path) -> tuple[TruthGrid, list[TruthStep]]:
    data = Path(path).read_bytes()
    if len(data) < _TRUTH_HEAD.size:
        raise ValueError(f"{path}: truncated ground-truth header")
    vals = _TRUTH_HEAD.unpack_from(data)
    if vals[0] != TRUTH_MAGIC or vals[1] != TRUTH_VERSION:
        raise ValueError(f"{path}: not a ground-truth file")
    grid = TruthGrid(vals[2], np.array(vals[3:6], dtype=np.int64), tuple(vals[6:9]))
    n_steps = vals[9]
    off = _TRUTH_HEAD.size
    n_bytes = (grid.size + 7) // 8
    steps = []
    for _ in range(n_steps):
        v = _TRUTH_STEP.unpack_from(data, off)
        off += _TRUTH_STEP.size
        n = v[4]
        occ = np.frombuffer(data, dtype="<u4", count=n, offset=off).astype(np.int64)
        off += 4 * n
        bits = np.frombuffer(data, dtype=np.uint8, count=n_bytes, offset=off)
        off += n_bytes
        mask = np.unpackbits(bits, bitorder="little")[:grid.size].astype(bool)
        steps.append(TruthStep(v[0], np.array(v[1:4]), occ, mask))
    return grid, steps


def ground_truth(world: World, l_q: float, pose: Pose | None = None, dense_factor: int = 4) -> TruthStep:
    """Single-viewpoint ground truth for ``world`` at its current time."""
    builder = GroundTruthBuilder(world, l_q, dense_factor)
    return builder.add(world, pose or world.trajectory.pose(world.time))


# ---------------------------------------------------------------- runs


@dataclass
class SimulationResult:
    frames: list[Frame]
    truth: dict[float, tuple[TruthGrid, list[TruthStep]]]
    agent_rows: list[tuple]  # (frame, time, agent, x, y, z, vx, vy, vz)


def simulate(world: World, resolutions=(), truth_stride: int = 1, dense_factor: int = 4,
             seed: int | None = None) -> SimulationResult:
    """Render every frame of ``world`` and build ground truth at each resolution."""
    seed = world.seed if seed is None else seed
    w = copy.deepcopy(world)
    w.time = 0.0
    builders = {l: GroundTruthBuilder(w, l, dense_factor) for l in resolutions}
    cache = _StaticHitCache()
    frames, rows = [], []
    dt = 1.0 / w.rate
    for k in range(w.n_frames):
        pose = w.trajectory.pose(w.time)
        rng = np.random.default_rng([seed, k])
        frames.append(raycast_frame(w, pose, rng, cache))
        agent_t = None
        if builders:
            dirs = w.sensor.directions(dense_factor) @ pose.rotation.T
            agent_t = _first_hit([a.shape for a in w.agents], pose.position, dirs)
        for b in builders.values():
            if k % truth_stride == 0:
                b.add(w, pose, agent_t)
            else:
                b.observe(w, pose, agent_t)
        for i, a in enumerate(w.agents):
            c, v = a.center3, a.velocity3
            rows.append((k, w.time, i, *c, *v))
        w = step_world(w, dt)
        w.time = (k + 1) * dt
    return SimulationResult(frames, {l: (b.grid, b.steps) for l, b in builders.items()}, rows)


def write_agents(path: str | Path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("frame,timestamp,agent,x,y,z,vx,vy,vz\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]:.6f},{r[2]}," + ",".join(f"{x:.6f}" for x in r[3:]) + "\n")


def read_agents(path: str | Path) -> np.ndarray:
    """Rows of (frame, timestamp, agent, x, y, z, vx, vy, vz)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data


# ---------------------------------------------------------------- world files

_SECTIONS = {"world", "sensor", "box", "cylinder", "agent"}


def _floats(text: str, n: int | None, key: str, line: int) -> np.ndarray:
    try:
        vals = [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError:
        raise WorldParseError(f"{key}: expected numbers, got {text!r}", line) from None
    if n is not None and len(vals) != n:
        raise WorldParseError(f"{key}: expected {n} values, got {len(vals)}", line)
    return np.array(vals)


def parse_world(text: str, path: str | None = None) -> World:
    """Parse a world description made of ``[section]`` headers and ``key = value`` lines."""
    sections: list[tuple[str, int, dict]] = []
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise WorldParseError(f"malformed section header {raw.strip()!r}", no, path)
            name = line[1:-1].strip().lower()
            if name not in _SECTIONS:
                raise WorldParseError(f"unknown section [{name}]", no, path)
            sections.append((name, no, {}))
            continue
        if "=" not in line:
            raise WorldParseError(f"expected key = value, got {raw.strip()!r}", no, path)
        if not sections:
            sections.append(("world", no, {}))
        key, value = (s.strip() for s in line.split("=", 1))
        sections[-1][2][key.lower()] = (value.strip().strip('"'), no)

    world = World()
    sensor = SensorModel()
    traj = SensorTrajectory()
    try:
        for name, start, kv in sections:
            get = _Getter(kv, name, path)
            if name == "world":
                world.duration = get.float("duration", world.duration)
                world.rate = get.float("rate", world.rate)
                world.seed = get.int("seed", world.seed)
                world.ground = get.bool("ground", world.ground)
                if "bounds" in kv:
                    b = get.vec("bounds", 6)
                    world.bounds_lo, world.bounds_hi = b[:3], b[3:]
            elif name == "sensor":
                traj.position = get.vec("position", 3, traj.position)
                traj.velocity = get.vec("velocity", 3, traj.velocity)
                traj.yaw = math.radians(get.float("yaw_deg", math.degrees(traj.yaw)))
                traj.pitch = math.radians(get.float("pitch_deg", math.degrees(traj.pitch)))
                traj.yaw_rate = math.radians(get.float("yaw_rate_deg", 0.0))
                sensor.fov_h = math.radians(get.float("fov_h_deg", math.degrees(sensor.fov_h)))
                sensor.fov_v = math.radians(get.float("fov_v_deg", math.degrees(sensor.fov_v)))
                sensor.resolution = math.radians(get.float("resolution_deg", math.degrees(sensor.resolution)))
                sensor.max_range = get.float("max_range", sensor.max_range)
                sensor.noise_model = get.choice("noise_model", ("linear", "constant"), sensor.noise_model)
                sensor.noise_sigma = get.float("noise_sigma", sensor.noise_sigma)
            elif name == "box":
                world.statics.append(Box(get.vec("min", 3), get.vec("max", 3)))
            elif name == "cylinder":
                world.statics.append(Cylinder(get.vec("center", 2), get.float("radius"),
                                              get.float("z0", 0.0), get.float("height")))
            elif name == "agent":
                wp = get.vec("waypoints", None, None)
                world.agents.append(Agent(
                    get.vec("position", 2), get.float("radius", 0.25), get.float("height", 1.7),
                    get.vec("velocity", 2, np.zeros(2)),
                    None if wp is None else wp.reshape(-1, 2), get.float("speed", 1.0)))
            get.check_unused(start)
    except WorldParseError:
        raise
    world.sensor = sensor
    world.trajectory = traj
    if world.rate <= 0:
        raise WorldParseError("rate must be positive", None, path)
    if world.duration < 0:
        raise WorldParseError("duration must be non-negative", None, path)
    return world


class _Getter:
    def __init__(self, kv: dict, section: str, path: str | None):
        self.kv = kv
        self.section = section
        self.path = path
        self.used: set[str] = set()

    def _raw(self, key, default, required):
        if key not in self.kv:
            if required:
                raise WorldParseError(f"[{self.section}] is missing '{key}'", None, self.path)
            return None, None
        self.used.add(key)
        return self.kv[key]

    def float(self, key, default=None):
        text, line = self._raw(key, default, default is None)
        if text is None:
            return default
        try:
            return float(text)
        except ValueError:
            raise WorldParseError(f"{key}: expected a number, got {text!r}", line, self.path) from None

    def int(self, key, default=None):
        text, line = self._raw(key, default, default is None)
        if text is None:
            return default
        try:
            return int(text)
        except ValueError:
            raise WorldParseError(f"{key}: expected an integer, got {text!r}", line, self.path) from None

    def bool(self, key, default):
        text, line = self._raw(key, default, False)
        if text is None:
            return default
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise WorldParseError(f"{key}: expected true/false, got {text!r}", line, self.path)

    def choice(self, key, options, default):
        text, line = self._raw(key, default, False)
        if text is None:
            return default
        if text not in options:
            raise WorldParseError(f"{key}: expected one of {options}, got {text!r}", line, self.path)
        return text

    def vec(self, key, n, default=...):
        required = default is ...
        text, line = self._raw(key, default, required)
        if text is None:
            return None if default is ... else default
        try:
            return _floats(text, n, key, line)
        except WorldParseError as e:
            raise WorldParseError(str(e).split(": ", 1)[-1], line, self.path) from None

    def check_unused(self, start: int) -> None:
        for key, (_, line) in self.kv.items():
            if key not in self.used:
                raise WorldParseError(f"unknown key '{key}' in [{self.section}]", line, self.path)


def load_world(path: str | Path) -> World:
    path = Path(path)
    return parse_world(path.read_text(), str(path))


# ---------------------------------------------------------------- scenarios

SCENARIOS = {
    "walker": """
[world]
duration = 10
rate = 20
bounds = -4, -4, -0.5, 8, 8, 2.5
[sensor]
position = 0, 0, 1.0
[agent]
position = 3.5, -3.5
velocity = 0, 1.0
radius = 0.25
height = 1.7
""",
    "square": """
[world]
duration = 8
rate = 20
bounds = -2, -5, -0.5, 8, 5, 2.5
[sensor]
position = 0, 0, 1.0
max_range = 8
[box]  # enclosure: far wall and two side walls outside the map box
min = 5.5, -6, 0
max = 6.0, 6, 5
[box]
min = -1, 4.2, 0
max = 6.0, 4.7, 5
[box]
min = -1, -4.7, 0
max = 6.0, -4.2, 5
[agent]
waypoints = 2.5, -2; 2.5, 2
position = 2.5, 0
speed = 1.0
[agent]
waypoints = 4.5, 2.5; 4.5, -2.5
position = 4.5, 1
speed = 1.2
[agent]
waypoints = 2, 1; 5, 1; 5, -1; 2, -1
position = 3.5, -1
speed = 0.8
""",
    "forest": """
[world]
duration = 8
rate = 20
bounds = -2, -5, -0.5, 8, 5, 2.5
[sensor]
position = 0, 0, 1.0
max_range = 8
[box]  # enclosure: far wall and two side walls outside the map box
min = 5.5, -6, 0
max = 6.0, 6, 5
[box]
min = -1, 4.2, 0
max = 6.0, 4.7, 5
[box]
min = -1, -4.7, 0
max = 6.0, -4.2, 5
[cylinder]
center = 2.0, -1.2
radius = 0.15
height = 2.2
[cylinder]
center = 2.4, 0.9
radius = 0.2
height = 2.2
[cylinder]
center = 3.1, -0.2
radius = 0.12
height = 2.2
[cylinder]
center = 3.5, 1.8
radius = 0.18
height = 2.2
[cylinder]
center = 3.8, -1.9
radius = 0.2
height = 2.2
[cylinder]
center = 4.3, 0.6
radius = 0.15
height = 2.2
[cylinder]
center = 4.7, -0.9
radius = 0.25
height = 2.2
[cylinder]
center = 5.2, 2.3
radius = 0.2
height = 2.2
[cylinder]
center = 1.6, 1.6
radius = 0.15
height = 2.2
[box]
min = 2.8, 1.0, 0
max = 3.1, 1.3, 0.8
[box]
min = 4.0, -3.0, 0
max = 4.6, -2.6, 1.2
[box]
min = 5.4, -0.4, 0
max = 5.8, 0.4, 1.0
[agent]
waypoints = 2.7, -2.8; 2.7, 2.8
position = 2.7, 0
speed = 0.8
""",
    "street": """
[world]
duration = 8
rate = 20
bounds = -2, -5, -0.5, 8, 5, 2.5
[sensor]
position = 0, 0, 1.0
max_range = 8
[box]  # enclosure: far wall and two side walls outside the map box
min = 5.5, -6, 0
max = 6.0, 6, 5
[box]
min = -1, 4.2, 0
max = 6.0, 4.7, 5
[box]
min = -1, -4.7, 0
max = 6.0, -4.2, 5
[box]
min = 2.0, 2.2, 0
max = 5.5, 2.6, 2.0
[box]
min = 2.0, -2.6, 0
max = 5.5, -2.2, 2.0
[cylinder]
center = 5.0, 1.5
radius = 0.15
height = 2.0
[box]
min = 4.8, -1.8, 0
max = 5.3, -1.3, 0.9
[agent]
waypoints = 3.0, -1.8; 3.0, 1.6
position = 3.0, -1.8
speed = 1.0
[agent]
waypoints = 4.2, 1.8; 2.2, 1.8
position = 3.2, 1.8
speed = 1.0
""",
}


def scenario(name: str) -> World:
    try:
        return parse_world(SCENARIOS[name], f"<scenario {name}>")
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
