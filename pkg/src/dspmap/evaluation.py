"""Occupancy and velocity metrics, plus the two cluster-tracking baselines."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config
from .particle_store import NEWBORN, SURVIVED
from .pipeline import Frame, preprocess
from .velocity import VelocityEstimator

DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))
SIGMA_GT = 0.1


class ResolutionMismatch(ValueError):
    pass


class EmptyOverlap(ValueError):
    pass


class NoParticles(ValueError):
    pass


# ---------------------------------------------------------------- occupancy


@dataclass
class PrPoint:
    threshold: float
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class PrCurve:
    points: list[PrPoint]
    auc: float

    @property
    def best(self) -> PrPoint:
        return max(self.points, key=lambda p: p.f1)

    @property
    def best_f1(self) -> float:
        return self.best.f1


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def align_to_truth(grid, truth_grid) -> tuple[np.ndarray, np.ndarray]:
    """Map probabilities onto the truth grid; returns (prob, covered) over truth cells."""
    if not math.isclose(grid.l_q, truth_grid.l_q, rel_tol=1e-9):
        raise ResolutionMismatch(f"grid resolution {grid.l_q} differs from truth {truth_grid.l_q}")
    tnx, tny, tnz = truth_grid.dims
    gnx, gny, gnz = grid.dims
    off = np.asarray(grid.origin_idx) - np.asarray(truth_grid.origin_idx)
    prob = np.zeros(truth_grid.size)
    covered = np.zeros(truth_grid.size, dtype=bool)
    lo = np.maximum(off, 0)
    hi = np.minimum(off + np.array(grid.dims), np.array(truth_grid.dims))
    if np.any(hi <= lo):
        return prob, covered
    vol_t = prob.reshape(tnz, tny, tnx)
    cov_t = covered.reshape(tnz, tny, tnx)
    vol_g = np.asarray(grid.prob).reshape(gnz, gny, gnx)
    gs = tuple(slice(a - o, b - o) for a, b, o in zip(lo[::-1], hi[::-1], off[::-1]))
    ts = tuple(slice(a, b) for a, b in zip(lo[::-1], hi[::-1]))
    vol_t[ts] = vol_g[gs]
    cov_t[ts] = grid.box_mask().reshape(gnz, gny, gnx)[gs]
    return prob, covered


def pr_counts(prob: np.ndarray, truth: np.ndarray, mask: np.ndarray, thresholds) -> np.ndarray:
    """(T, 3) array of (tp, fp, fn) for each threshold over the masked cells."""
    p = np.asarray(prob)[mask]
    t = np.asarray(truth, bool)[mask]
    out = np.zeros((len(thresholds), 3), dtype=np.int64)
    for i, thr in enumerate(thresholds):
        pred = (p >= thr) & (p > 0)
        out[i] = ((pred & t).sum(), (pred & ~t).sum(), (~pred & t).sum())
    return out


def curve_from_counts(counts: np.ndarray, thresholds) -> PrCurve:
    pts = []
    for thr, (tp, fp, fn) in zip(thresholds, counts):
        p, r, f = prf(int(tp), int(fp), int(fn))
        pts.append(PrPoint(float(thr), p, r, f, int(tp), int(fp), int(fn)))
    return PrCurve(pts, auc_from_points(pts))


def auc_from_points(points: list[PrPoint]) -> float:
    """Trapezoid area under precision over recall.

    Points without any predicted positive have no precision and are skipped.
    The curve is extended to recall 0 at the precision of its lowest-recall
    point.
    """
    defined = [(p.recall, p.precision) for p in points if p.tp + p.fp > 0]
    if not defined:
        return 0.0
    defined.sort(key=lambda rp: (rp[0], -rp[1]))
    r = np.array([0.0] + [d[0] for d in defined])
    p = np.array([defined[0][1]] + [d[1] for d in defined])
    return float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2.0))


def pr_curve(probs, truths, masks, thresholds=DEFAULT_THRESHOLDS) -> PrCurve:
    """Pool counts over all evaluation steps, then build the curve."""
    counts = np.zeros((len(thresholds), 3), dtype=np.int64)
    for prob, truth, mask in zip(probs, truths, masks):
        counts += pr_counts(prob, truth, mask, thresholds)
    return curve_from_counts(counts, thresholds)


def occupied_mask(size: int, ids) -> np.ndarray:
    m = np.zeros(size, dtype=bool)
    m[np.asarray(ids, dtype=np.int64)] = True
    return m


# ---------------------------------------------------------------- velocity


def bhattacharyya(mu1, var1, mu2, var2) -> float:
    """Distance between two Gaussians with diagonal covariances."""
    mu1, var1, mu2, var2 = (np.asarray(x, float) for x in (mu1, var1, mu2, var2))
    var = (var1 + var2) / 2.0
    d = mu1 - mu2
    term1 = 0.125 * float(np.sum(d * d / var))
    term2 = 0.5 * float(np.sum(np.log(var)) - 0.5 * (np.sum(np.log(var1)) + np.sum(np.log(var2))))
    return term1 + term2


@dataclass
class VelocityReport:
    rmse: float
    var: float
    mbd: float
    n: int

    def row(self) -> dict:
        return {"rmse": self.rmse, "var": self.var, "mbd": self.mbd, "n": self.n}


def velocity_report(means, variances, truth, sigma_gt: float = SIGMA_GT) -> VelocityReport:
    """RMSE of the mean, mean per-axis variance and mean Bhattacharyya distance.

    ``variances`` may be None for estimators without uncertainty, in which
    case ``var`` and ``mbd`` are NaN.
    """
    means = np.asarray(means, float).reshape(-1, 3)
    truth = np.asarray(truth, float).reshape(-1, 3)
    if means.shape[0] == 0:
        raise EmptyOverlap("no aligned velocity samples")
    err = means - truth
    rmse = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
    if variances is None:
        return VelocityReport(rmse, math.nan, math.nan, means.shape[0])
    variances = np.maximum(np.asarray(variances, float).reshape(-1, 3), 1e-12)
    gt_var = np.full(3, sigma_gt**2)
    mbd = float(np.mean([bhattacharyya(m, v, t, gt_var) for m, v, t in zip(means, variances, truth)]))
    return VelocityReport(rmse, float(np.mean(variances)), mbd, means.shape[0])


def align_times(est_times, truth_times, tol: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (est, truth) matched by nearest timestamp within ``tol``."""
    est_times = np.asarray(est_times, float)
    truth_times = np.asarray(truth_times, float)
    if est_times.size == 0 or truth_times.size == 0:
        raise EmptyOverlap("empty stream")
    order = np.argsort(truth_times)
    ts = truth_times[order]
    pos = np.clip(np.searchsorted(ts, est_times), 1, len(ts) - 1) if len(ts) > 1 else np.zeros(len(est_times), int)
    if len(ts) > 1:
        left = ts[pos - 1]
        right = ts[pos]
        pos = np.where(np.abs(est_times - left) <= np.abs(est_times - right), pos - 1, pos)
    ok = np.abs(ts[pos] - est_times) <= tol
    if not ok.any():
        raise EmptyOverlap("no timestamps within tolerance")
    return np.nonzero(ok)[0], order[pos[ok]]


def map_velocity_estimate(state, gt_position, radius: float = 0.5):
    """Weighted mean and per-axis variance of particle velocities near ``gt_position``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    arena = state.arena
    live = (arena.flags == SURVIVED) | (arena.flags == NEWBORN)
    st = arena.states[live]
    w = arena.weights[live]
    near = np.sum((st[:, :3] - np.asarray(gt_position, float)) ** 2, axis=1) <= radius * radius
    return weighted_velocity(st[near, 3:], w[near])


def weighted_velocity(vel, w):
    vel = np.asarray(vel, float).reshape(-1, 3)
    w = np.asarray(w, float)
    total = w.sum()
    if vel.shape[0] == 0 or total <= 0:
        raise NoParticles("no weighted particles in the query ball")
    mean = (w[:, None] * vel).sum(axis=0) / total
    var = (w[:, None] * (vel - mean) ** 2).sum(axis=0) / total
    return mean, var


# ---------------------------------------------------------------- baselines


@dataclass
class TrackEstimate:
    track: int
    centroid: np.ndarray
    velocity: np.ndarray
    variance: np.ndarray | None


class KalmanCV:
    """Linear CV filter on a 3-D position with white-acceleration process noise."""

    def __init__(self, position, q: float = 0.5, r: float = 0.05, v0_std: float = 2.0):
        self.x = np.concatenate([np.asarray(position, float), np.zeros(3)])
        self.P = np.diag([r * r] * 3 + [v0_std**2] * 3)
        self.q = q
        self.r = r

    def predict(self, dt: float) -> None:
        F = np.eye(6)
        F[:3, 3:] = dt * np.eye(3)
        q2 = self.q**2
        Q = np.zeros((6, 6))
        Q[:3, :3] = q2 * dt**3 / 3 * np.eye(3)
        Q[:3, 3:] = Q[3:, :3] = q2 * dt**2 / 2 * np.eye(3)
        Q[3:, 3:] = q2 * dt * np.eye(3)
        self.x = F @ self.x
        self.P = F @ self.P @ F.T + Q

    def update(self, z) -> None:
        H = np.hstack([np.eye(3), np.zeros((3, 3))])
        S = H @ self.P @ H.T + self.r**2 * np.eye(3)
        Kg = self.P @ H.T @ np.linalg.inv(S)
        self.x = self.x + Kg @ (np.asarray(z, float) - H @ self.x)
        self.P = (np.eye(6) - Kg @ H) @ self.P

    @property
    def velocity(self) -> np.ndarray:
        return self.x[3:].copy()

    @property
    def velocity_var(self) -> np.ndarray:
        return np.diag(self.P)[3:].copy()


class ClusterTracker:
    """KM cluster matching with either raw differencing or a per-track Kalman filter."""

    def __init__(self, cfg: Config, kalman: bool, q: float = 0.5, r: float = 0.05):
        self.cfg = cfg
        self.kalman = kalman
        self.q, self.r = q, r
        self.estimator = VelocityEstimator(cfg.velocity, cfg.map.filter_resolution)
        self.track_ids: list[int] = []
        self.filters: dict[int, KalmanCV] = {}
        self.next_id = 0
        self.last_ts: float | None = None

    def step(self, frame: Frame) -> list[TrackEstimate]:
        pre = preprocess(frame, self.cfg.map, self.last_ts)
        self.last_ts = pre.timestamp
        est = self.estimator
        est.estimate(pre.points, pre.dt)
        cur = est.last_clusters
        prev_ids = self.track_ids
        ids = [-1] * len(cur)
        for i, j in est.last_match.pairs:
            ids[j] = prev_ids[i]
        for j in range(len(cur)):
            if ids[j] < 0:
                ids[j] = self.next_id
                self.next_id += 1
        out = []
        for j, c in enumerate(cur):
            tid = ids[j]
            if self.kalman:
                f = self.filters.get(tid)
                if f is None:
                    f = self.filters[tid] = KalmanCV(c.centroid, self.q, self.r)
                else:
                    f.predict(pre.dt)
                    f.update(c.centroid)
                out.append(TrackEstimate(tid, c.centroid, f.velocity, f.velocity_var))
            elif j in est.last_cluster_velocity:
                out.append(TrackEstimate(tid, c.centroid, est.last_cluster_velocity[j], None))
        live = set(ids)
        self.filters = {k: v for k, v in self.filters.items() if k in live}
        self.track_ids = ids
        return out


def baseline_km_diff(frames, cfg: Config) -> list[list[TrackEstimate]]:
    tr = ClusterTracker(cfg, kalman=False)
    return [tr.step(f) for f in frames]


def baseline_km_kf(frames, cfg: Config, q: float = 0.5, r: float = 0.05) -> list[list[TrackEstimate]]:
    tr = ClusterTracker(cfg, kalman=True, q=q, r=r)
    return [tr.step(f) for f in frames]


def nearest_track(tracks: list[TrackEstimate], position, radius: float = 0.5) -> TrackEstimate | None:
    """Track whose cluster centroid is closest to ``position`` in the horizontal plane."""
    best, best_d = None, radius
    for t in tracks:
        d = float(np.hypot(*(t.centroid[:2] - np.asarray(position, float)[:2])))
        if d <= best_d:
            best, best_d = t, d
    return best


# ---------------------------------------------------------------- tables


def write_table(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


def read_table(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_summary(path: str | Path, items: dict) -> None:
    lines = []
    for k, v in items.items():
        lines.append(f"{k} = {v:.6g}" if isinstance(v, float) else f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def pr_rows(curve: PrCurve) -> list[dict]:
    return [{"threshold": p.threshold, "precision": p.precision, "recall": p.recall,
             "f1": p.f1, "tp": p.tp, "fp": p.fp, "fn": p.fn} for p in curve.points]


def timing_summary(rows: list[dict]) -> dict:
    """Mean of every ``t_*_ms`` column."""
    out = {}
    if not rows:
        return out
    for key in rows[0]:
        if key.startswith("t_") and key.endswith("_ms"):
            out[f"mean_{key}"] = float(np.mean([float(r[key]) for r in rows]))
    return out
