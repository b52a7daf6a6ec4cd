"""Frame ingestion and the per-frame map cycle."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import phd
from .config import Config, MapConfig
from .velocity import VelocityEstimator, VelocityLabels

PHASES = ("preprocess", "velocity", "predict", "update", "resample", "birth", "total")


class NonMonotoneTimestamp(ValueError):
    pass


@dataclass
class Frame:
    timestamp: float
    pose: geo.Pose
    points: np.ndarray  # (N, 3) sensor frame

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)


@dataclass
class PreprocessedFrame:
    """Filtered world-frame points sorted by pyramid, with CSR offsets into ``points``."""

    points: np.ndarray
    pids: np.ndarray
    pt_start: np.ndarray  # (N_p + 1,)
    vis_len: np.ndarray  # squared meters, 0 where a pyramid holds no point
    dt: float | None
    timestamp: float
    pose: geo.Pose
    n_raw: int = 0
    n_filtered: int = 0
    n_outside: int = 0
    n_not_in_fov: int = 0
    n_bin_dropped: int = 0

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.pt_start)

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])

    def bin(self, pid: int) -> np.ndarray:
        return self.points[self.pt_start[pid]:self.pt_start[pid + 1]]


def voxel_filter(points: np.ndarray, res: float) -> np.ndarray:
    """Replace the points of every occupied ``res`` cell by their centroid."""
    if res <= 0:
        raise ValueError("res must be positive")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        return points.copy()
    cells = np.floor(points / res).astype(np.int64)
    _, inv, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    out = np.zeros((counts.shape[0], 3))
    for d in range(3):
        out[:, d] = np.bincount(inv, weights=points[:, d], minlength=counts.shape[0])
    return out / counts[:, None]


def bin_capacity(cfg: MapConfig) -> int:
    """Per-pyramid measurement capacity ``ceil((theta / theta_snsr)^2)``."""
    return max(1, math.ceil((cfg.pyramid_angle / cfg.sensor_resolution) ** 2 - 1e-9))


def preprocess(frame: Frame, cfg: MapConfig, prev_timestamp: float | None = None) -> PreprocessedFrame:
    dt = None
    if prev_timestamp is not None:
        dt = float(frame.timestamp) - float(prev_timestamp)
        if dt <= 0:
            raise NonMonotoneTimestamp(
                f"timestamp {frame.timestamp} does not follow {prev_timestamp}")
    n_raw = frame.points.shape[0]
    filt = voxel_filter(frame.points, cfg.filter_resolution)
    pids = geo.pyramid_ids_sensor(filt, cfg) if filt.shape[0] else np.empty(0, np.int64)
    world = frame.pose.sensor_to_world(filt) if filt.shape[0] else filt
    inside = geo.voxel_indices(world, frame.pose.position, cfg) >= 0 if filt.shape[0] else np.empty(0, bool)
    in_fov = pids >= 0
    keep = inside & in_fov
    n_outside = int((~inside).sum())
    n_not_in_fov = int((inside & ~in_fov).sum())
    # returns beyond the box are not measurements, but they still prove the
    # ray crossed the box, so they bound their pyramid's visible length
    far = ~inside & in_fov
    far_pids = pids[far]
    far_d2 = ((world[far] - frame.pose.position) ** 2).sum(axis=1)
    world, pids = world[keep], pids[keep]

    order = np.argsort(pids, kind="stable")
    world, pids = world[order], pids[order]
    # rank of each point inside its pyramid, to enforce the bin capacity
    starts = np.searchsorted(pids, pids, side="left")
    rank = np.arange(pids.shape[0]) - starts
    cap = bin_capacity(cfg)
    fits = rank < cap
    n_bin_dropped = int((~fits).sum())
    world, pids = world[fits], pids[fits]

    n_p = cfg.n_pyramids
    pt_start = np.zeros(n_p + 1, dtype=np.int64)
    np.cumsum(np.bincount(pids, minlength=n_p), out=pt_start[1:])
    vis_len = np.zeros(n_p)
    if pids.size:
        d2 = ((world - frame.pose.position) ** 2).sum(axis=1)
        np.maximum.at(vis_len, pids, d2)
    if far_pids.size:
        np.maximum.at(vis_len, far_pids, far_d2)
    return PreprocessedFrame(
        points=np.ascontiguousarray(world), pids=pids, pt_start=pt_start, vis_len=vis_len,
        dt=dt, timestamp=float(frame.timestamp), pose=frame.pose,
        n_raw=n_raw, n_filtered=int(filt.shape[0]), n_outside=n_outside,
        n_not_in_fov=n_not_in_fov, n_bin_dropped=n_bin_dropped,
    )


@dataclass
class FrameReport:
    index: int
    timestamp: float
    n_points: int
    live_before: int
    live_after: int
    times: dict = field(default_factory=dict)  # seconds per phase
    pruned: int = 0
    dropped_predict: int = 0
    dropped_birth: int = 0
    dropped_bin: int = 0
    dropped_pyramid: int = 0
    born: int = 0
    updated: int = 0
    thinned: int = 0
    estimated_clusters: int = 0
    order: list = field(default_factory=list)

    def row(self) -> dict:
        out = {
            "frame": self.index, "timestamp": self.timestamp, "points": self.n_points,
            "live_before": self.live_before, "live_after": self.live_after,
            "pruned": self.pruned, "dropped_predict": self.dropped_predict,
            "dropped_birth": self.dropped_birth, "dropped_bin": self.dropped_bin,
            "dropped_pyramid": self.dropped_pyramid, "born": self.born,
            "updated": self.updated, "thinned": self.thinned,
        }
        for name in PHASES:
            out[f"t_{name}_ms"] = 1e3 * self.times.get(name, 0.0)
        return out


class _Serial:
    """Stand-in for a one-worker executor that runs the call in place."""

    class _Done:
        def __init__(self, value):
            self._value = value

        def result(self):
            return self._value

    def submit(self, fn, *args):
        return self._Done(fn(*args))

    def shutdown(self, wait=True):
        pass


class DSPMap:
    """The map plus everything needed to feed it a stream of frames.

    With ``cfg.threads > 1`` velocity estimation runs in a worker thread while
    predict, update and resample run here. The estimator uses no random
    numbers, so the thread count never changes the result.
    """

    def __init__(self, cfg: Config | None = None):
        self.cfg = cfg or Config()
        self.state = phd.MapState(self.cfg)
        self.rng = np.random.default_rng(self.cfg.seed)
        self.estimator = VelocityEstimator(self.cfg.velocity, self.cfg.map.filter_resolution)
        self.executor = ThreadPoolExecutor(1) if self.cfg.threads > 1 else _Serial()
        self.last_timestamp: float | None = None
        self.frame_index = 0
        self.last_labels: VelocityLabels | None = None
        self.last_pre: PreprocessedFrame | None = None

    def close(self) -> None:
        self.executor.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def live_count(self) -> int:
        return self.state.arena.live_count

    def _estimate(self, points, dt):
        t0 = time.perf_counter()
        labels = self.estimator.estimate(points, dt)
        return labels, time.perf_counter() - t0

    def step(self, frame: Frame) -> FrameReport:
        cfg = self.cfg
        state = self.state
        times = {}
        t_start = time.perf_counter()
        live_before = state.arena.live_count

        t0 = time.perf_counter()
        pre = preprocess(frame, cfg.map, self.last_timestamp)
        times["preprocess"] = time.perf_counter() - t0
        m = pre.n_points
        order = ["preprocess"]

        use_estimator = cfg.mode == "dynamic" and m > 0
        fut = self.executor.submit(self._estimate, pre.points, pre.dt) if use_estimator else None

        state.time = pre.timestamp
        t0 = time.perf_counter()
        pinfo = phd.predict(state, pre.dt or 0.0, frame.pose, self.rng)
        times["predict"] = time.perf_counter() - t0
        order.append("predict")

        t0 = time.perf_counter()
        uinfo = {"updated": 0}
        if m > 0:
            uinfo = phd.update(state, pre)
            order.append("update")
        times["update"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        rinfo = phd.resample(state, rng=self.rng)
        times["resample"] = time.perf_counter() - t0
        order.append("resample")

        if fut is not None:
            labels, times["velocity"] = fut.result()
        else:
            labels, times["velocity"] = VelocityLabels.unknown(m), 0.0
        order.append("velocity_join")

        t0 = time.perf_counter()
        binfo = {"born": 0, "dropped": 0}
        if m > 0:
            binfo = phd.birth(state, pre, labels.labels, labels.velocities, rng=self.rng)
            order.append("birth")
        times["birth"] = time.perf_counter() - t0
        times["total"] = time.perf_counter() - t_start

        self.last_timestamp = pre.timestamp
        self.last_labels = labels
        self.last_pre = pre
        report = FrameReport(
            index=self.frame_index, timestamp=pre.timestamp, n_points=m,
            live_before=live_before, live_after=state.arena.live_count, times=times,
            pruned=pinfo["pruned"], dropped_predict=pinfo["dropped"],
            dropped_birth=binfo["dropped"], dropped_bin=pre.n_bin_dropped,
            dropped_pyramid=state.pyramids.dropped, born=binfo["born"],
            updated=uinfo["updated"], thinned=rinfo["thinned"],
            estimated_clusters=len(self.estimator.last_cluster_velocity) if use_estimator else 0,
            order=order,
        )
        self.frame_index += 1
        return report

    def run(self, frames, callback=None) -> list[FrameReport]:
        reports = []
        for frame in frames:
            rep = self.step(frame)
            reports.append(rep)
            if callback is not None:
                callback(self, rep)
        return reports
