"""Slow, literal reference implementations used as test oracles."""
from __future__ import annotations

import math

import numpy as np

from dspmap import geometry as geo
from dspmap.config import Config, FilterParams, MapConfig
from dspmap.particle_store import NEWBORN, SURVIVED
from dspmap.phd import MapState, index_pyramids
from dspmap.pipeline import Frame, preprocess


def small_config(**map_kw) -> Config:
    kw = dict(map_size=(4.0, 4.0, 4.0), voxel_size=0.2)
    kw.update(map_kw)
    cfg = Config(map=MapConfig(**kw), filter=FilterParams(L_max=50_000))
    cfg.threads = 1
    return cfg


def load_state(cfg: Config, positions, velocities, weights, flags, pose=None) -> MapState:
    """A MapState holding exactly the given particles, with a fresh pyramid index."""
    state = MapState(cfg)
    state.set_pose(pose or geo.Pose.identity())
    pos = np.asarray(positions, float).reshape(-1, 3)
    st = np.concatenate([pos, np.asarray(velocities, float).reshape(-1, 3)], axis=1)
    vids = geo.voxel_indices(pos, state.center, cfg.map)
    state.arena.add_batch(vids, np.asarray(weights, float), st, np.asarray(flags, np.int8))
    index_pyramids(state)
    return state


def frame_of(points, pose=None, t=0.0) -> Frame:
    return Frame(t, pose or geo.Pose.identity(), np.asarray(points, float).reshape(-1, 3))


def gauss(d2, rho: float):
    return (2 * math.pi) ** -1.5 / rho**3 * np.exp(-np.asarray(d2) / (2 * rho * rho))


def full_update(state: MapState, pre, params: FilterParams) -> dict:
    """O(L*M) update without activation gating.

    Returns {(voxel, slot): new weight} for every particle of the index. Newborn
    particles sum over the measurements of their activation space, exactly as
    the gated version does, because their term carries no likelihood factor.
    """
    mc = state.map_cfg
    arena = state.arena
    pyr = state.pyramids
    center = state.center
    entries = []
    for q in range(pyr.n_pyramids):
        for v, s in pyr.entries(q):
            p = arena.states[v, s, :3]
            d2c = float(((p - center) ** 2).sum())
            vis = pre.vis_len[q] > 0 and d2c <= pre.vis_len[q]
            entries.append((q, v, s, d2c, vis))
    nb = float(arena.weights[arena.flags == NEWBORN].sum())
    pts = pre.points
    ck = np.full(pts.shape[0], nb)
    lik = {}
    for q, v, s, d2c, vis in entries:
        if not vis or arena.flags[v, s] != SURVIVED:
            continue
        rho = float(geo.noise_std(math.sqrt(d2c), mc))
        d2 = ((pts - arena.states[v, s, :3]) ** 2).sum(axis=1)
        lik[(v, s)] = params.P_d * gauss(d2, rho)
        ck += arena.weights[v, s] * lik[(v, s)]
    out = {}
    for q, v, s, d2c, vis in entries:
        w = float(arena.weights[v, s])
        if not vis:
            out[(v, s)] = w
        elif arena.flags[v, s] == SURVIVED:
            out[(v, s)] = (1 - params.P_d + float(np.sum(lik[(v, s)] / (params.kappa + ck)))) * w
        else:
            act = np.isin(pre.pids, list(state.neighbors[q]))
            out[(v, s)] = float(np.sum(w / (params.kappa + ck[act])))
    return out


def random_update_instance(rng, cfg: Config, n_particles: int, n_points: int):
    """Measurements spread over the field of view and particles scattered around them."""
    pts = []
    while len(pts) < n_points:
        r = rng.uniform(0.4, 1.9)
        a = rng.uniform(math.radians(62), math.radians(118))
        b = rng.uniform(-math.radians(44), math.radians(44)) % (2 * math.pi)
        pts.append(geo.to_cartesian(r, a, b))
    pts = np.array(pts)
    anchors = pts[rng.integers(0, n_points, n_particles)]
    pos = anchors + rng.normal(0, 0.03, size=anchors.shape)
    flags = np.where(rng.random(n_particles) < 0.3, NEWBORN, SURVIVED).astype(np.int8)
    w = rng.uniform(0.0, 0.05, n_particles)
    state = load_state(cfg, pos, np.zeros_like(pos), w, flags)
    return state, preprocess_points(cfg, pts)


def brute_activation(pid: int, n: int, n_zenith: int, n_azimuth: int) -> set[int]:
    """Enumerate every pyramid and keep those within the clamped/wrapped window."""
    zb, ab = divmod(pid, n_azimuth)
    out = set()
    for q in range(n_zenith * n_azimuth):
        z, a = divmod(q, n_azimuth)
        da = min((a - ab) % n_azimuth, (ab - a) % n_azimuth)
        if abs(z - zb) <= n and da <= n:
            out.add(q)
    return out


def batch_cv_fit(times, positions):
    """Least-squares constant-velocity fit; returns the velocity."""
    t = np.asarray(times, float)
    A = np.stack([np.ones_like(t), t], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.asarray(positions, float), rcond=None)
    return coef[1]


def preprocess_points(cfg: Config, points, pose=None, t=0.0):
    return preprocess(frame_of(points, pose, t), cfg.map)
