"""Fixed-capacity particle arena indexed by voxel, plus the per-frame pyramid index.

Particles live in preallocated ``(N_v, L_s)`` arrays and are added or removed
by flipping a per-slot flag. Pyramids only hold (voxel, slot) references.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .config import MapConfig

VACANT, SURVIVED, NEWBORN, TIME = K.VACANT, K.SURVIVED, K.NEWBORN, K.TIME
DROPPED = None


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    weight: float = 0.0
    flag: int = SURVIVED
    stamp: float = -math.inf

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.position, float), np.asarray(self.velocity, float)])


@dataclass
class DropStats:
    outside: int = 0
    full: int = 0
    weight: float = 0.0
    pyramid: int = 0

    def add(self, outside: int, full: int, weight: float) -> None:
        self.outside += int(outside)
        self.full += int(full)
        self.weight += float(weight)


def voxel_capacity(cfg: MapConfig, L_max: int) -> int:
    return max(1, math.ceil(cfg.eta1 * L_max / cfg.n_voxels - 1e-9))


def resample_cap(cfg: MapConfig, L_max: int) -> int:
    return max(1, int(L_max // cfg.n_voxels))


def pyramid_capacity(cfg: MapConfig, L_max: int) -> int:
    theta = cfg.pyramid_angle
    return max(1, math.ceil(cfg.eta2 * L_max * theta * theta / (2 * math.pi * math.pi) - 1e-9))


class VoxelArena:
    """Flag-based particle storage; voxel ids follow ``geometry.voxel_indices``."""

    def __init__(self, n_voxels: int, slots_per_voxel: int):
        self.n_voxels = n_voxels
        self.capacity = slots_per_voxel
        self.flags = np.zeros((n_voxels, slots_per_voxel), dtype=np.int8)
        self.weights = np.zeros((n_voxels, slots_per_voxel))
        self.states = np.zeros((n_voxels, slots_per_voxel, 6))
        self.stamps = np.full((n_voxels, slots_per_voxel), -np.inf)
        self.counts = np.zeros(n_voxels, dtype=np.int64)
        self.drops = DropStats()

    @classmethod
    def for_config(cls, cfg: MapConfig, L_max: int) -> "VoxelArena":
        return cls(cfg.n_voxels, voxel_capacity(cfg, L_max))

    def clear(self) -> None:
        self.flags[:] = VACANT
        self.counts[:] = 0

    @property
    def live_count(self) -> int:
        return int(self.counts.sum())

    def is_live(self, vid: int, sid: int) -> bool:
        return bool(self.flags[vid, sid] != VACANT)

    def add_batch(self, vids, weights, states, flags, stamps=None) -> np.ndarray:
        """Insert many particles; returns slot ids (-1 where dropped)."""
        vids = np.ascontiguousarray(vids, dtype=np.int64)
        n = vids.shape[0]
        if stamps is None:
            stamps = np.full(n, -np.inf)
        out = np.empty(n, dtype=np.int64)
        n_out, n_full, lost = K.add_batch(
            self.flags, self.weights, self.states, self.stamps, self.counts,
            vids,
            np.ascontiguousarray(weights, dtype=np.float64),
            np.ascontiguousarray(states, dtype=np.float64).reshape(n, 6),
            np.ascontiguousarray(flags, dtype=np.int8),
            np.ascontiguousarray(stamps, dtype=np.float64),
            out,
        )
        self.drops.add(n_out, n_full, lost)
        return out

    def add_particle(self, vid: int, p: Particle):
        """Store ``p`` in voxel ``vid``; returns (vid, slot) or DROPPED."""
        slots = self.add_batch(np.array([vid]), np.array([p.weight]), p.state[None, :],
                               np.array([p.flag]), np.array([p.stamp]))
        return DROPPED if slots[0] < 0 else (vid, int(slots[0]))

    def delete_particle(self, vid: int, sid: int) -> None:
        if self.flags[vid, sid] == VACANT:
            raise ValueError(f"slot ({vid}, {sid}) is not live")
        self.flags[vid, sid] = VACANT
        self.counts[vid] -= 1

    def get(self, vid: int, sid: int) -> Particle:
        s = self.states[vid, sid]
        return Particle(s[:3].copy(), s[3:].copy(), float(self.weights[vid, sid]),
                        int(self.flags[vid, sid]), float(self.stamps[vid, sid]))

    def move_particle(self, vid: int, sid: int, new_vid: int):
        """Re-home a particle whose position was already updated.

        ``new_vid`` is the voxel of the new position (negative when it left the
        map box, in which case the particle is pruned).
        """
        p = self.get(vid, sid)
        self.delete_particle(vid, sid)
        return self.add_particle(new_vid, p)

    def live(self):
        """Flat views of every live slot: (vids, sids, flags, weights, states, stamps)."""
        vids, sids = np.nonzero(self.flags)
        return (vids, sids, self.flags[vids, sids], self.weights[vids, sids],
                self.states[vids, sids], self.stamps[vids, sids])

    def voxel_weight(self, vid: int) -> float:
        live = self.flags[vid] != VACANT
        return float(self.weights[vid][live].sum())

    def check(self) -> None:
        """Consistency check between counters and flags (debug aid)."""
        actual = (self.flags != VACANT).sum(axis=1)
        if not np.array_equal(actual, self.counts):
            bad = np.nonzero(actual != self.counts)[0][:5]
            raise AssertionError(f"counter/flag mismatch in voxels {bad.tolist()}")

    def dump(self, path: str | Path) -> None:
        vids, sids, flags, w, st, _ = self.live()
        table = np.column_stack([vids, sids, flags, w, st[:, 3:], st[:, :3]])
        np.savetxt(path, table, delimiter=",",
                   fmt=["%d", "%d", "%d", "%.9g", "%.6f", "%.6f", "%.6f", "%.6f", "%.6f", "%.6f"],
                   header="voxel_id,slot_id,flag,weight,vx,vy,vz,px,py,pz", comments="")


class PyramidIndex:
    """Per-frame (voxel, slot) references grouped by pyramid id."""

    def __init__(self, n_pyramids: int, capacity: int):
        self.n_pyramids = n_pyramids
        self.capacity = capacity
        self.count = np.zeros(n_pyramids, dtype=np.int64)
        self.voxel = np.zeros((n_pyramids, capacity), dtype=np.int64)
        self.slot = np.zeros((n_pyramids, capacity), dtype=np.int64)
        self.dropped = 0

    @classmethod
    def for_config(cls, cfg: MapConfig, L_max: int) -> "PyramidIndex":
        return cls(cfg.n_pyramids, pyramid_capacity(cfg, L_max))

    def clear_frame(self) -> None:
        self.count[:] = 0
        self.dropped = 0

    def index_into_pyramid(self, vid: int, sid: int, pid: int):
        if not 0 <= pid < self.n_pyramids:
            raise ValueError(f"pyramid id {pid} out of range")
        dropped = self.fill(np.array([pid]), np.array([vid]), np.array([sid]))
        return DROPPED if dropped else (pid, int(self.count[pid]) - 1)

    def fill(self, pids, vids, sids) -> int:
        dropped = K.fill_pyramids(
            self.count, self.voxel, self.slot,
            np.ascontiguousarray(pids, dtype=np.int64),
            np.ascontiguousarray(vids, dtype=np.int64),
            np.ascontiguousarray(sids, dtype=np.int64),
        )
        self.dropped += int(dropped)
        return int(dropped)

    def entries(self, pid: int) -> list[tuple[int, int]]:
        c = int(self.count[pid])
        return list(zip(self.voxel[pid, :c].tolist(), self.slot[pid, :c].tolist()))
