"""Numba kernels for the hot loops of the map.

All kernels release the GIL so that velocity estimation can run in a second
thread while prediction and update execute.
"""
import math

import numpy as np
from numba import njit

VACANT = 0
SURVIVED = 1
NEWBORN = 2
TIME = 3

_GAUSS_NORM = (2.0 * math.pi) ** -1.5


@njit(cache=True, nogil=True)
def add_batch(flags, weights, states, stamps, counts,
              vids, new_w, new_states, new_flags, new_stamps, out_slots):
    """Insert particles into the first vacant slot of their voxel.

    ``out_slots[i]`` receives the slot id, or -1 when the voxel id is negative
    (outside the map) or the voxel is full. Returns (n_outside, n_full,
    dropped_weight).
    """
    cap = flags.shape[1]
    n_out = 0
    n_full = 0
    lost = 0.0
    for i in range(vids.shape[0]):
        v = vids[i]
        if v < 0:
            out_slots[i] = -1
            n_out += 1
            lost += new_w[i]
            continue
        slot = -1
        if counts[v] < cap:
            for j in range(cap):
                if flags[v, j] == VACANT:
                    slot = j
                    break
        if slot < 0:
            out_slots[i] = -1
            n_full += 1
            lost += new_w[i]
            continue
        flags[v, slot] = new_flags[i]
        weights[v, slot] = new_w[i]
        for d in range(6):
            states[v, slot, d] = new_states[i, d]
        stamps[v, slot] = new_stamps[i]
        counts[v] += 1
        out_slots[i] = slot
    return n_out, n_full, lost


@njit(cache=True, nogil=True)
def fill_pyramids(pyd_count, pyd_voxel, pyd_slot, pids, vids, sids):
    """Append (voxel, slot) entries to their pyramid; returns drop count."""
    cap = pyd_voxel.shape[1]
    dropped = 0
    for i in range(pids.shape[0]):
        p = pids[i]
        if p < 0:
            continue
        c = pyd_count[p]
        if c >= cap:
            dropped += 1
            continue
        pyd_voxel[p, c] = vids[i]
        pyd_slot[p, c] = sids[i]
        pyd_count[p] = c + 1
    return dropped


@njit(cache=True, nogil=True, inline="always")
def _rho(r, noise_const, sigma):
    if noise_const:
        return sigma
    return sigma * r


@njit(cache=True, nogil=True, inline="always")
def _visible(q, d2, vis_len, pt_start, empty_visible):
    if vis_len[q] > 0.0:
        return d2 <= vis_len[q]
    if empty_visible and pt_start[q + 1] == pt_start[q]:
        return True
    return False


@njit(cache=True, nogil=True)
def likelihood_kernel(dist2, rho):
    return _GAUSS_NORM / (rho * rho * rho) * math.exp(-dist2 / (2.0 * rho * rho))


@njit(cache=True, nogil=True)
def update_kernel(flags, weights, states, stamps,
                  pyd_count, pyd_voxel, pyd_slot,
                  pt_start, pts, vis_len, nbr, center,
                  P_d, kappa, newborn_sum, noise_const, sigma,
                  empty_visible, timestamp, ck_out):
    """Gated PHD weight update over the pyramid structure.

    Pass 1 accumulates C'(z) for every measurement from survived particles
    whose activation space holds z. Pass 2 rewrites the weights of every
    visible indexed particle. Returns the number of particles updated.
    """
    n_p = pyd_count.shape[0]
    k = nbr.shape[1]
    cx = center[0]
    cy = center[1]
    cz = center[2]

    # pass 1
    for i in range(n_p):
        a = pt_start[i]
        b = pt_start[i + 1]
        if a == b:
            continue
        for j in range(a, b):
            ck_out[j] = newborn_sum
        for t in range(k):
            q = nbr[i, t]
            if q < 0:
                continue
            for e in range(pyd_count[q]):
                v = pyd_voxel[q, e]
                s = pyd_slot[q, e]
                if flags[v, s] != SURVIVED:
                    continue
                px = states[v, s, 0]
                py = states[v, s, 1]
                pz = states[v, s, 2]
                d2c = (px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2
                if not _visible(q, d2c, vis_len, pt_start, empty_visible):
                    continue
                rho = _rho(math.sqrt(d2c), noise_const, sigma)
                norm = P_d * weights[v, s] * _GAUSS_NORM / (rho * rho * rho)
                inv2 = 1.0 / (2.0 * rho * rho)
                for j in range(a, b):
                    dx = pts[j, 0] - px
                    dy = pts[j, 1] - py
                    dz = pts[j, 2] - pz
                    ck_out[j] += norm * math.exp(-(dx * dx + dy * dy + dz * dz) * inv2)

    # pass 2
    n_updated = 0
    for q in range(n_p):
        for e in range(pyd_count[q]):
            v = pyd_voxel[q, e]
            s = pyd_slot[q, e]
            f = flags[v, s]
            px = states[v, s, 0]
            py = states[v, s, 1]
            pz = states[v, s, 2]
            d2c = (px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2
            if not _visible(q, d2c, vis_len, pt_start, empty_visible):
                continue
            if f == TIME:
                stamps[v, s] = timestamp
                continue
            n_updated += 1
            if f == SURVIVED:
                rho = _rho(math.sqrt(d2c), noise_const, sigma)
                norm = P_d * _GAUSS_NORM / (rho * rho * rho)
                inv2 = 1.0 / (2.0 * rho * rho)
                acc = 0.0
                for t in range(k):
                    i = nbr[q, t]
                    if i < 0:
                        continue
                    for j in range(pt_start[i], pt_start[i + 1]):
                        dx = pts[j, 0] - px
                        dy = pts[j, 1] - py
                        dz = pts[j, 2] - pz
                        g = norm * math.exp(-(dx * dx + dy * dy + dz * dz) * inv2)
                        acc += g / (kappa + ck_out[j])
                weights[v, s] = (1.0 - P_d + acc) * weights[v, s]
            elif f == NEWBORN:
                w0 = weights[v, s]
                acc = 0.0
                for t in range(k):
                    i = nbr[q, t]
                    if i < 0:
                        continue
                    for j in range(pt_start[i], pt_start[i + 1]):
                        acc += w0 / (kappa + ck_out[j])
                weights[v, s] = acc
    return n_updated


@njit(cache=True, nogil=True)
def resample_kernel(flags, weights, states, stamps, counts, cap, v_hat,
                    uniforms, lam1_out, live_out, mass_out):
    """Per-voxel DST coefficients, voxel mass and systematic resampling.

    Voxels whose live particles carry zero total weight are emptied. Time
    particles are carried over untouched and do not count towards ``cap``.
    Returns the number of voxels that were thinned.
    """
    n_v, n_s = flags.shape
    idx = np.empty(n_s, dtype=np.int64)
    tmp_state = np.empty((n_s, 6))
    tmp_stamp = np.empty(n_s)
    tmp_time = np.empty(n_s, dtype=np.int64)
    thinned = 0
    for v in range(n_v):
        if counts[v] == 0:
            lam1_out[v] = 0.5
            live_out[v] = 0
            mass_out[v] = 0.0
            continue
        n = 0
        nt = 0
        w_d = 0.0
        w_s = 0.0
        w_ds = 0.0
        for j in range(n_s):
            f = flags[v, j]
            if f == VACANT:
                continue
            if f == TIME:
                tmp_time[nt] = j
                nt += 1
                continue
            idx[n] = j
            n += 1
            w = weights[v, j]
            vx = states[v, j, 3]
            vy = states[v, j, 4]
            vz = states[v, j, 5]
            speed = math.sqrt(vx * vx + vy * vy + vz * vz)
            if speed <= 1e-9:
                w_s += w
            elif speed >= v_hat:
                w_d += w
            else:
                w_ds += w
        total = w_d + w_s + w_ds
        live_out[v] = n
        mass_out[v] = total
        if total > 0.0:
            lam1_out[v] = (w_d + 0.5 * w_ds) / total
        else:
            lam1_out[v] = 0.5
        if n == 0:
            continue
        if total <= 0.0:
            for t in range(n):
                flags[v, idx[t]] = VACANT
            counts[v] -= n
            continue
        if n <= cap:
            w_new = total / n
            for t in range(n):
                weights[v, idx[t]] = w_new
            continue
        # systematic selection of ``cap`` survivors over the weight CDF
        thinned += 1
        step = total / cap
        u = uniforms[v] * step
        cum = weights[v, idx[0]]
        src = 0
        for t in range(cap):
            target = u + t * step
            while cum < target and src < n - 1:
                src += 1
                cum += weights[v, idx[src]]
            j = idx[src]
            for d in range(6):
                tmp_state[t, d] = states[v, j, d]
        for t in range(nt):
            tmp_stamp[t] = stamps[v, tmp_time[t]]
        for j in range(n_s):
            flags[v, j] = VACANT
        w_new = total / cap
        for t in range(cap):
            flags[v, t] = SURVIVED
            weights[v, t] = w_new
            for d in range(6):
                states[v, t, d] = tmp_state[t, d]
        for t in range(nt):
            slot = cap + t
            flags[v, slot] = TIME
            weights[v, slot] = 0.0
            stamps[v, slot] = tmp_stamp[t]
            # time particles keep their (static) position
        counts[v] = cap + nt
    return thinned


@njit(cache=True, nogil=True)
def traverse_rays(origin, dirs, lengths, grid_origin, inv_l, dims, mask):
    """Mark every grid cell a ray passes through, up to and including its end.

    Amanatides-Woo traversal; ``mask`` is a flat bool array over ``dims``
    (x fastest).
    """
    nx = dims[0]
    ny = dims[1]
    nz = dims[2]
    for r in range(dirs.shape[0]):
        ox = (origin[0] - grid_origin[0]) * inv_l
        oy = (origin[1] - grid_origin[1]) * inv_l
        oz = (origin[2] - grid_origin[2]) * inv_l
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        dz = dirs[r, 2]
        tmax_total = lengths[r] * inv_l
        ix = int(math.floor(ox))
        iy = int(math.floor(oy))
        iz = int(math.floor(oz))
        sx = 1 if dx > 0 else -1
        sy = 1 if dy > 0 else -1
        sz = 1 if dz > 0 else -1
        big = 1e30
        if dx != 0.0:
            nxt = (ix + 1 - ox) if dx > 0 else (ox - ix)
            tdx = 1.0 / abs(dx)
            tmx = nxt * tdx
        else:
            tdx = big
            tmx = big
        if dy != 0.0:
            nxt = (iy + 1 - oy) if dy > 0 else (oy - iy)
            tdy = 1.0 / abs(dy)
            tmy = nxt * tdy
        else:
            tdy = big
            tmy = big
        if dz != 0.0:
            nxt = (iz + 1 - oz) if dz > 0 else (oz - iz)
            tdz = 1.0 / abs(dz)
            tmz = nxt * tdz
        else:
            tdz = big
            tmz = big
        t = 0.0
        while True:
            if 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz:
                mask[ix + iy * nx + iz * nx * ny] = True
            if tmx <= tmy and tmx <= tmz:
                t = tmx
                tmx += tdx
                ix += sx
            elif tmy <= tmz:
                t = tmy
                tmy += tdy
                iy += sy
            else:
                t = tmz
                tmz += tdz
                iz += sz
            if t > tmax_total:
                break
