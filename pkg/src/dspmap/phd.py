"""SMC-PHD filter steps operating on a :class:`MapState`.

The map is an egocentric box centered on the robot. Particles keep world
coordinates and are re-homed into the voxel grid of the current box in every
prediction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import geometry as geo
from .config import Config, FilterParams, MapConfig
from .particle_store import (NEWBORN, SURVIVED, TIME, PyramidIndex, VoxelArena,
                             resample_cap)

# velocity labels produced by the estimator
UNKNOWN, STATIC, ESTIMATED = 0, 1, 2


@dataclass
class DstCoefficients:
    lam1: np.ndarray
    live: np.ndarray

    @property
    def lam2(self) -> np.ndarray:
        return 1.0 - self.lam1


class MapState:
    """Voxel arena, pyramid index and per-voxel mixture coefficients."""

    def __init__(self, cfg: Config):
        self.cfg = cfg
        mc = cfg.map
        self.n_act = geo.activation_n(mc)
        self.neighbors = geo.neighbor_table(self.n_act, mc.n_zenith, mc.n_azimuth)
        self.arena = VoxelArena.for_config(mc, cfg.filter.L_max)
        self.pyramids = PyramidIndex.for_config(mc, cfg.filter.L_max)
        self.resample_cap = resample_cap(mc, cfg.filter.L_max)
        self.lam1 = np.full(mc.n_voxels, 0.5)
        self.voxel_live = np.zeros(mc.n_voxels, dtype=np.int64)
        self.voxel_mass = np.zeros(mc.n_voxels)
        self.center = np.zeros(3)
        self.pose = geo.Pose.identity()
        self.time = None
        self.seeded_cells = np.empty(0, dtype=np.int64)

    @property
    def map_cfg(self) -> MapConfig:
        return self.cfg.map

    def set_pose(self, pose: geo.Pose) -> None:
        self.pose = pose
        self.center = pose.position.copy()

    def dst(self) -> DstCoefficients:
        return DstCoefficients(self.lam1.copy(), self.voxel_live.copy())

    def total_weight(self) -> float:
        live = self.arena.flags != 0
        return float(self.arena.weights[live].sum())


def likelihood(z, x_pos, r, cfg: MapConfig) -> float:
    """Isotropic Gaussian measurement density with std rho(r)."""
    rho = float(geo.noise_std(r, cfg))
    d = np.asarray(z, float) - np.asarray(x_pos, float)
    return float(K.likelihood_kernel(float(d @ d), rho))


def mixture_split(speed: np.ndarray, v_hat: float, mode: str, rng) -> np.ndarray:
    """True where a particle follows the constant-velocity model this frame."""
    if mode == "static":
        return np.zeros(speed.shape, dtype=bool)
    if mode == "random":
        return np.ones(speed.shape, dtype=bool)
    coin = rng.random(speed.shape[0]) < 0.5
    return (speed > v_hat) | ((speed > 1e-9) & coin)


def propagate(states: np.ndarray, dt: float, dynamic: np.ndarray,
              params: FilterParams, noise: np.ndarray | None) -> np.ndarray:
    """Mixture motion model: CV for ``dynamic`` rows, position-only noise otherwise."""
    out = states.copy()
    out[dynamic, :3] += states[dynamic, 3:] * dt
    if noise is not None:
        out[:, :3] += params.q_pos_std * noise[:, :3]
        out[dynamic, 3:] += params.q_vel_std * noise[dynamic, 3:]
    return out


def predict(state: MapState, dt: float, pose: geo.Pose, rng: np.random.Generator) -> dict:
    """Propagate every particle, re-home it in the new box and rebuild the pyramid index."""
    cfg = state.cfg
    params = cfg.filter
    arena = state.arena
    vids, sids, flags, w, st, stamps = arena.live()
    n = vids.shape[0]
    speed = np.linalg.norm(st[:, 3:], axis=1)
    is_time = flags == TIME
    dynamic = mixture_split(speed, params.v_hat, cfg.mode, rng) & ~is_time
    noise = rng.standard_normal((n, 6))
    noise[is_time] = 0.0
    if cfg.mode == "static":
        noise[:, 3:] = 0.0
    new_st = propagate(st, dt, dynamic, params, noise)
    if cfg.mode == "static":
        new_st[:, 3:] = 0.0
    w = w.copy()
    w[flags == SURVIVED] *= params.P_s

    state.set_pose(pose)
    before = arena.drops.outside, arena.drops.full
    arena.clear()
    new_vids = geo.voxel_indices(new_st[:, :3], state.center, cfg.map)
    arena.add_batch(new_vids, w, new_st, flags, stamps)
    pruned = arena.drops.outside - before[0]
    dropped = arena.drops.full - before[1]
    seeded = seed_time_particles(state, rng) if cfg.time_particles else 0
    index_pyramids(state)
    return {"pruned": pruned, "dropped": dropped, "dynamic": int(dynamic.sum()),
            "time_seeded": seeded}


def index_pyramids(state: MapState) -> None:
    """Rebuild the pyramid index from every live particle in the current sensor frame."""
    mc = state.map_cfg
    state.pyramids.clear_frame()
    vids, sids, _, _, st, _ = state.arena.live()
    if vids.size == 0:
        return
    ps = state.pose.world_to_sensor(st[:, :3])
    pids = geo.pyramid_ids_sensor(ps, mc)
    r = np.linalg.norm(ps, axis=1)
    pids[r < mc.robot_radius] = -1
    state.pyramids.fill(pids, vids, sids)


def newborn_sum(state: MapState) -> float:
    arena = state.arena
    return float(arena.weights[arena.flags == NEWBORN].sum())


def update(state: MapState, pre, params: FilterParams | None = None) -> dict:
    """Weight update against the preprocessed measurements of this frame."""
    params = params or state.cfg.filter
    mc = state.map_cfg
    arena = state.arena
    pyr = state.pyramids
    nb = newborn_sum(state)
    ck = np.zeros(pre.points.shape[0])
    n_upd = K.update_kernel(
        arena.flags, arena.weights, arena.states, arena.stamps,
        pyr.count, pyr.voxel, pyr.slot,
        pre.pt_start, pre.points, pre.vis_len, state.neighbors, state.center,
        params.P_d, params.kappa, nb, mc.noise_model == "constant", mc.noise_sigma,
        params.empty_pyramid_visible, float(pre.timestamp), ck,
    )
    arena.flags[arena.flags == NEWBORN] = SURVIVED
    return {"updated": int(n_upd), "newborn_sum": nb, "ck": ck}


def resample(state: MapState, params: FilterParams | None = None,
             rng: np.random.Generator | None = None) -> dict:
    """Per-voxel systematic resampling fused with DST coefficients and voxel mass."""
    params = params or state.cfg.filter
    rng = rng or np.random.default_rng()
    arena = state.arena
    uniforms = rng.random(arena.n_voxels)
    thinned = K.resample_kernel(
        arena.flags, arena.weights, arena.states, arena.stamps, arena.counts,
        state.resample_cap, params.v_hat, uniforms,
        state.lam1, state.voxel_live, state.voxel_mass,
    )
    return {"thinned": int(thinned)}


def dst_coefficients(weights, speeds, v_hat: float) -> tuple[float, float]:
    """Mixture coefficients (lambda1, lambda2) of one voxel from particle weights."""
    weights = np.asarray(weights, float)
    speeds = np.asarray(speeds, float)
    total = weights.sum()
    if total <= 0:
        return 0.5, 0.5
    w_d = weights[speeds >= v_hat].sum()
    w_s = weights[speeds <= 1e-9].sum()
    w_ds = total - w_d - w_s
    lam1 = (w_d + 0.5 * w_ds) / total
    return lam1, 1.0 - lam1


def birth_velocities(labels, label_vel, lam1, L_b: int, mode: str,
                     params: FilterParams, rng) -> np.ndarray:
    """(M * L_b, 3) newborn velocities following the mixture allocation."""
    m = labels.shape[0]
    vel = np.zeros((m, L_b, 3))
    if m == 0 or mode == "static":
        return vel.reshape(-1, 3)
    uniform = rng.uniform(-params.v_max, params.v_max, size=(m, L_b, 3))
    if mode == "random":
        return uniform.reshape(-1, 3)
    gauss = rng.standard_normal((m, L_b, 3)) * params.sigma_vb
    mean = np.where((labels == ESTIMATED)[:, None], label_vel, 0.0)
    gauss += mean[:, None, :]
    n_dyn = np.rint(lam1 * L_b).astype(np.int64)
    n_dyn[labels == STATIC] = 0
    n_rand = n_dyn // 2
    n_gauss = n_dyn - n_rand
    k = np.arange(L_b)[None, :]
    is_gauss = k < n_gauss[:, None]
    is_rand = (k >= n_gauss[:, None]) & (k < n_dyn[:, None])
    vel[is_gauss] = gauss[is_gauss]
    vel[is_rand] = uniform[is_rand]
    return vel.reshape(-1, 3)


def birth(state: MapState, pre, labels, label_vel, params: FilterParams | None = None,
          rng: np.random.Generator | None = None) -> dict:
    """Spawn ``L_b`` newborn particles around every measurement point."""
    params = params or state.cfg.filter
    rng = rng or np.random.default_rng()
    mc = state.map_cfg
    pts = pre.points
    m = pts.shape[0]
    if m == 0:
        return {"born": 0, "dropped": 0, "prior_weight": 0.0, "mass": 0.0}
    L_b = params.L_b
    mass = params.newborn_mass if params.newborn_mass is not None else params.w_init * m * L_b
    w0 = mass / (m * L_b)
    vids = geo.voxel_indices(pts, state.center, mc)
    safe = np.maximum(vids, 0)
    enough = (vids >= 0) & (state.voxel_live[safe] >= params.dst_min_particles)
    lam1 = np.where(enough, state.lam1[safe], 0.5)
    r = np.linalg.norm(pts - state.center, axis=1)
    rho = geo.noise_std(r, mc)
    pos = pts[:, None, :] + rng.standard_normal((m, L_b, 3)) * rho[:, None, None]
    vel = birth_velocities(np.asarray(labels), np.asarray(label_vel, float).reshape(m, 3),
                           lam1, L_b, state.cfg.mode, params, rng)
    states = np.concatenate([pos.reshape(-1, 3), vel], axis=1)
    new_vids = geo.voxel_indices(states[:, :3], state.center, mc)
    before = state.arena.drops.full + state.arena.drops.outside
    state.arena.add_batch(new_vids, np.full(m * L_b, w0), states,
                          np.full(m * L_b, NEWBORN, dtype=np.int8))
    dropped = state.arena.drops.full + state.arena.drops.outside - before
    return {"born": m * L_b - dropped, "dropped": dropped, "prior_weight": w0, "mass": mass}


def seed_time_particles(state: MapState, rng: np.random.Generator) -> int:
    """Drop zero-weight time particles into box cells seen for the first time."""
    mc = state.map_cfg
    l = mc.voxel_size
    lo = np.floor((state.center - np.asarray(mc.map_size) / 2) / l).astype(np.int64)
    hi = np.floor((state.center + np.asarray(mc.map_size) / 2) / l).astype(np.int64)
    ix, iy, iz = (np.arange(a, b) for a, b in zip(lo, hi))
    gx, gy, gz = np.meshgrid(ix, iy, iz, indexing="ij")
    cells = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    keys = _cell_keys(cells)
    fresh = ~np.isin(keys, state.seeded_cells, assume_unique=False)
    if not fresh.any():
        return 0
    cells = cells[fresh]
    state.seeded_cells = np.union1d(state.seeded_cells, keys[fresh])
    per = max(1, state.cfg.time_particles_per_voxel)
    if per == 1:
        pos = (cells + 0.5) * l
    else:
        pos = (np.repeat(cells, per, axis=0) + rng.random((cells.shape[0] * per, 3))) * l
    n = pos.shape[0]
    st = np.zeros((n, 6))
    st[:, :3] = pos
    vids = geo.voxel_indices(pos, state.center, mc)
    state.arena.add_batch(vids, np.zeros(n), st, np.full(n, TIME, dtype=np.int8),
                          np.full(n, -np.inf))
    return n


def _cell_keys(cells: np.ndarray) -> np.ndarray:
    off = cells + (1 << 20)
    return (off[:, 0] << 42) | (off[:, 1] << 21) | off[:, 2]
