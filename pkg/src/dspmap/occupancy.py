"""Occupancy readout, future occupancy and the unknown-space mask."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry as geo
from .particle_store import SURVIVED, NEWBORN, TIME
from .phd import MapState, mixture_split, propagate

GRID_MAGIC = b"DSPO"
GRID_VERSION = 1
_GRID_HEADER = struct.Struct("<4sI3d3dd3i3Id")


class OutsideMap(ValueError):
    pass


class NotEnabled(RuntimeError):
    pass


def aligned_origin(center, size, l_q: float) -> np.ndarray:
    """World-aligned grid origin (a multiple of ``l_q``) for a box around ``center``."""
    lo = np.asarray(center, float) - np.asarray(size, float) / 2.0
    return np.round(lo / l_q).astype(np.int64)


@dataclass
class OccupancyGrid:
    """Probabilities on a world-aligned grid; ``origin_idx * l_q`` is the min corner."""

    l_q: float
    origin_idx: np.ndarray  # int64 (3,)
    dims: tuple[int, int, int]
    prob: np.ndarray  # flat float, x fastest
    center: np.ndarray
    timestamp: float = 0.0
    observed: np.ndarray | None = None
    extent: np.ndarray | None = None  # map box size; None: the grid itself

    def box_mask(self) -> np.ndarray:
        """Cells whose centers lie inside the map box."""
        if self.extent is None:
            return np.ones(self.prob.shape[0], dtype=bool)
        half = np.asarray(self.extent) / 2.0
        c = self.cell_centers()
        return np.all(np.abs(c - self.center) <= half + 1e-9, axis=1)

    @property
    def origin(self) -> np.ndarray:
        return self.origin_idx * self.l_q

    def as_volume(self) -> np.ndarray:
        """(nz, ny, nx) view of the probabilities."""
        nx, ny, nz = self.dims
        return self.prob.reshape(nz, ny, nx)

    def cell_centers(self) -> np.ndarray:
        nx, ny, nz = self.dims
        ids = np.arange(nx * ny * nz)
        ijk = np.stack([ids % nx, (ids // nx) % ny, ids // (nx * ny)], axis=1)
        return (self.origin_idx + ijk + 0.5) * self.l_q

    def global_cells(self) -> np.ndarray:
        """Integer world cell coordinates of every grid cell."""
        nx, ny, nz = self.dims
        ids = np.arange(nx * ny * nz)
        return self.origin_idx + np.stack([ids % nx, (ids // nx) % ny, ids // (nx * ny)], axis=1)


def _live_mass(state: MapState):
    arena = state.arena
    live = (arena.flags == SURVIVED) | (arena.flags == NEWBORN)
    return arena.states[live], arena.weights[live]


def occupancy_at(state: MapState, p, side: float | None = None) -> float:
    """Weight sum of particles in the cube of side ``Res`` centered at ``p``, clamped to 1."""
    mc = state.map_cfg
    p = np.asarray(p, float).reshape(3)
    if geo.voxel_index(p, state.center, mc) < 0:
        raise OutsideMap(f"point {p.tolist()} lies outside the map box")
    side = mc.filter_resolution if side is None else side
    half = np.asarray(mc.map_size) / 2.0
    lo = np.maximum(p - side / 2.0, state.center - half)
    hi = np.minimum(p + side / 2.0, state.center + half)
    # only the voxels overlapping the cube need to be scanned
    nx, ny, nz = mc.grid_shape
    a = np.clip(geo.voxel_coords(lo, state.center, mc)[0], 0, [nx - 1, ny - 1, nz - 1])
    b = np.clip(geo.voxel_coords(hi, state.center, mc)[0], 0, [nx - 1, ny - 1, nz - 1])
    ii, jj, kk = np.meshgrid(*(np.arange(s, e + 1) for s, e in zip(a, b)), indexing="ij")
    vids = (ii + jj * nx + kk * nx * ny).ravel()
    arena = state.arena
    flags = arena.flags[vids]
    live = (flags == SURVIVED) | (flags == NEWBORN)
    pos = arena.states[vids][..., :3][live]
    w = arena.weights[vids][live]
    inside = np.all((pos >= lo) & (pos < hi), axis=1)
    return float(min(w[inside].sum(), 1.0))


def scale_factor(l_q: float, res: float) -> float:
    return (res / l_q) ** 3 if l_q <= res else 1.0


def occupancy_voxel(mass: float | np.ndarray, l_q: float, res: float):
    """Probability from the weight sum of one query voxel of edge ``l_q``."""
    return np.minimum(np.asarray(mass, float) * scale_factor(l_q, res), 1.0)


def grid_from_particles(positions, weights, center, size, l_q: float, res: float,
                        timestamp: float = 0.0) -> OccupancyGrid:
    origin_idx = aligned_origin(center, size, l_q)
    dims = tuple(int(math.ceil(s / l_q - 1e-9)) for s in size)
    nx, ny, nz = dims
    ijk = np.floor(np.asarray(positions).reshape(-1, 3) / l_q + 1e-12).astype(np.int64) - origin_idx
    ok = np.all((ijk >= 0) & (ijk < np.array(dims)), axis=1)
    ids = ijk[ok, 0] + ijk[ok, 1] * nx + ijk[ok, 2] * nx * ny
    mass = np.bincount(ids, weights=np.asarray(weights)[ok], minlength=nx * ny * nz)
    return OccupancyGrid(l_q, origin_idx, dims, occupancy_voxel(mass, l_q, res),
                         np.asarray(center, float).copy(), float(timestamp),
                         extent=np.asarray(size, float).copy())


def occupancy_grid(state: MapState, l_q: float | None = None) -> OccupancyGrid:
    mc = state.map_cfg
    l_q = l_q or mc.voxel_size
    st, w = _live_mass(state)
    ts = state.time if state.time is not None else 0.0
    return grid_from_particles(st[:, :3], w, state.center, mc.map_size, l_q,
                               mc.filter_resolution, ts)


def predict_occupancy(state: MapState, tau: float, l_q: float | None = None,
                      noise: bool = False, rng: np.random.Generator | None = None,
                      step: float = 0.05, near: tuple | None = None) -> OccupancyGrid:
    """Occupancy after propagating a copy of the particles over ``tau`` seconds.

    The noiseless default moves fast particles by ``v * tau`` and intermediate
    ones by half of that, the expected displacement under the per-frame coin.
    With ``noise`` the real mixture model runs in steps of ``step`` seconds.
    ``near=(point, radius)`` keeps only particles currently within ``radius``
    of ``point`` in the horizontal plane, which isolates one object.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    mc = state.map_cfg
    params = state.cfg.filter
    l_q = l_q or mc.voxel_size
    st, w = _live_mass(state)
    if near is not None:
        point, radius = near
        keep = np.hypot(*(st[:, :2] - np.asarray(point, float)[:2]).T) <= radius
        st, w = st[keep], w[keep]
    st = st.copy()
    mode = state.cfg.mode
    if tau > 0 and st.shape[0]:
        if not noise:
            speed = np.linalg.norm(st[:, 3:], axis=1)
            if mode == "random":
                frac = np.ones_like(speed)
            elif mode == "static":
                frac = np.zeros_like(speed)
            else:
                frac = np.where(speed > params.v_hat, 1.0, np.where(speed > 1e-9, 0.5, 0.0))
            st[:, :3] += st[:, 3:] * (frac * tau)[:, None]
        else:
            rng = rng or np.random.default_rng(state.cfg.seed)
            n_steps = max(1, int(math.ceil(tau / step - 1e-9)))
            dt = tau / n_steps
            for _ in range(n_steps):
                speed = np.linalg.norm(st[:, 3:], axis=1)
                dyn = mixture_split(speed, params.v_hat, mode, rng)
                st = propagate(st, dt, dyn, params, rng.standard_normal(st.shape))
                if mode == "static":
                    st[:, 3:] = 0.0
    ts = (state.time or 0.0) + tau
    return grid_from_particles(st[:, :3], w, state.center, mc.map_size, l_q,
                               mc.filter_resolution, ts)


def binarize(grid: OccupancyGrid | np.ndarray, threshold: float) -> np.ndarray:
    """Occupied where the probability is nonzero and reaches ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    prob = grid.prob if isinstance(grid, OccupancyGrid) else np.asarray(grid)
    return (prob >= threshold) & (prob > 0.0)


def unknown_mask(state: MapState, l_q: float | None = None) -> np.ndarray:
    """True for grid cells whose time particles were never refreshed."""
    if not state.cfg.time_particles:
        raise NotEnabled("time particles are disabled in this configuration")
    mc = state.map_cfg
    l_q = l_q or mc.voxel_size
    arena = state.arena
    t = arena.flags == TIME
    pos = arena.states[t][:, :3]
    seen = np.isfinite(arena.stamps[t]).astype(float)
    grid = grid_from_particles(pos, seen, state.center, mc.map_size, l_q, l_q)
    return grid.prob <= 0.0


def write_grid(path: str | Path, grid: OccupancyGrid) -> None:
    """Header then one little-endian f32 per cell (x fastest).

    Header: magic, u32 version, f64x3 map center, f64x3 map size, f64 l_q,
    i32x3 origin cell index, u32x3 dims, f64 timestamp.
    """
    extent = grid.extent if grid.extent is not None else np.array(grid.dims) * grid.l_q
    head = _GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION, *map(float, grid.center),
                             *map(float, extent), float(grid.l_q),
                             *map(int, grid.origin_idx), *map(int, grid.dims), float(grid.timestamp))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.asarray(grid.prob, dtype="<f4").tobytes())


def read_grid(path: str | Path) -> OccupancyGrid:
    data = Path(path).read_bytes()
    vals = _GRID_HEADER.unpack_from(data)
    if vals[0] != GRID_MAGIC or vals[1] != GRID_VERSION:
        raise ValueError(f"{path}: not an occupancy grid file")
    center = np.array(vals[2:5])
    extent = np.array(vals[5:8])
    l_q = vals[8]
    origin_idx = np.array(vals[9:12], dtype=np.int64)
    dims = tuple(vals[12:15])
    ts = vals[15]
    prob = np.frombuffer(data, dtype="<f4", offset=_GRID_HEADER.size).astype(np.float64)
    if prob.size != dims[0] * dims[1] * dims[2]:
        raise ValueError(f"{path}: payload size does not match dims")
    return OccupancyGrid(l_q, origin_idx, dims, prob, center, ts, extent=extent)


def export_slice_png(path: str | Path, grid: OccupancyGrid, z: float) -> None:
    """Horizontal slice at world height ``z`` as an 8-bit grayscale PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    k = int(math.floor(z / grid.l_q)) - int(grid.origin_idx[2])
    k = min(max(k, 0), grid.dims[2] - 1)
    img = grid.as_volume()[k][::-1]  # +y up
    plt.imsave(path, np.round(img * 255).astype(np.uint8), cmap="gray", vmin=0, vmax=255)
