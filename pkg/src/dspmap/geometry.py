"""Coordinate conversions, voxel/pyramid indexing and activation-space sizing."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .config import MapConfig

OUTSIDE = -1
NOT_IN_FOV = -1
TWO_PI = 2.0 * math.pi


class Infeasible(ValueError):
    """The activation-space bound has no solution for the given parameters."""


class SphericalCoord(NamedTuple):
    r: float
    alpha: float  # zenith, [0, pi]
    beta: float  # azimuth, [0, 2pi)


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion given as (w, x, y, z)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def yaw_pitch_quat(yaw: float, pitch: float = 0.0) -> np.ndarray:
    """Quaternion (w, x, y, z) for a z-yaw followed by a y-pitch (nose down positive)."""
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    # q = q_yaw * q_pitch
    return np.array([cy * cp, -sy * sp, cy * sp, sy * cp])


@dataclass
class Pose:
    """Sensor pose; ``orientation`` rotates sensor-frame vectors into the world."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        q = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(q)
        if norm == 0:
            raise ValueError("zero quaternion")
        self.orientation = q / norm

    @classmethod
    def identity(cls, position=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(np.asarray(position, dtype=float), np.array([1.0, 0.0, 0.0, 0.0]))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def world_to_sensor(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.position) @ self.rotation

    def sensor_to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.position


def spherical_arrays(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized ``to_spherical`` over an (N, 3) array."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    r = np.sqrt(np.einsum("ij,ij->i", p, p))
    rho_xy = np.hypot(p[:, 0], p[:, 1])
    # atan2 equals the arccos form (2*pi - arccos for y < 0) but stays
    # accurate near the poles and near beta = 0
    alpha = np.arctan2(rho_xy, p[:, 2])
    beta = np.arctan2(p[:, 1], p[:, 0])
    beta = np.where(beta < 0, beta + TWO_PI, beta)
    beta = np.where((rho_xy <= 1e-12 * np.maximum(r, 1.0)) | (beta >= TWO_PI), 0.0, beta)
    return r, alpha, beta


def to_spherical(p) -> SphericalCoord:
    r, a, b = spherical_arrays(np.asarray(p, dtype=float).reshape(1, 3))
    return SphericalCoord(float(r[0]), float(a[0]), float(b[0]))


def to_cartesian(r, alpha, beta) -> np.ndarray:
    r, alpha, beta = np.broadcast_arrays(r, alpha, beta)
    out = np.stack([
        r * np.sin(alpha) * np.cos(beta),
        r * np.sin(alpha) * np.sin(beta),
        r * np.cos(alpha),
    ], axis=-1)
    return out


def voxel_coords(points: np.ndarray, center, cfg: MapConfig) -> np.ndarray:
    """Integer (ix, iy, iz) per point; may fall outside the grid."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    half = np.asarray(cfg.map_size) / 2.0
    return np.floor((p - np.asarray(center) + half) / cfg.voxel_size).astype(np.int64)


def voxel_indices(points: np.ndarray, center, cfg: MapConfig) -> np.ndarray:
    """Flat voxel ids (x fastest) or OUTSIDE for an (N, 3) array."""
    nx, ny, nz = cfg.grid_shape
    ijk = voxel_coords(points, center, cfg)
    inside = ((ijk >= 0) & (ijk < np.array([nx, ny, nz]))).all(axis=1)
    ids = ijk[:, 0] + ijk[:, 1] * nx + ijk[:, 2] * nx * ny
    return np.where(inside, ids, OUTSIDE)


def voxel_index(p, center, cfg: MapConfig) -> int:
    return int(voxel_indices(np.asarray(p, dtype=float).reshape(1, 3), center, cfg)[0])


def voxel_center(vid: int, center, cfg: MapConfig) -> np.ndarray:
    nx, ny, _ = cfg.grid_shape
    ijk = np.array([vid % nx, (vid // nx) % ny, vid // (nx * ny)], dtype=float)
    return np.asarray(center) - np.asarray(cfg.map_size) / 2.0 + (ijk + 0.5) * cfg.voxel_size


def in_fov(alpha: np.ndarray, beta: np.ndarray, fov_h: float, fov_v: float) -> np.ndarray:
    signed = np.where(beta > math.pi, beta - TWO_PI, beta)
    ok_h = np.abs(signed) <= fov_h / 2.0 + 1e-12
    lo = (math.pi - fov_v) / 2.0
    hi = (math.pi + fov_v) / 2.0
    return ok_h & (alpha >= lo - 1e-12) & (alpha <= hi + 1e-12)


def pyramid_ids_sensor(points_sensor: np.ndarray, cfg: MapConfig) -> np.ndarray:
    """Pyramid ids for sensor-frame points (NOT_IN_FOV outside the field of view).

    Ids enumerate the full-sphere grid: ``zenith_bin * n_azimuth + azimuth_bin``.
    """
    r, alpha, beta = spherical_arrays(points_sensor)
    theta = cfg.pyramid_angle
    zb = np.minimum((alpha / theta).astype(np.int64), cfg.n_zenith - 1)
    ab = (beta / theta).astype(np.int64) % cfg.n_azimuth
    ids = zb * cfg.n_azimuth + ab
    # a cell belongs to the FOV iff its center direction does
    ok = in_fov((zb + 0.5) * theta, (ab + 0.5) * theta, cfg.fov_h, cfg.fov_v) & (r > 0)
    return np.where(ok, ids, NOT_IN_FOV)


def fov_pyramid_mask(cfg: MapConfig) -> np.ndarray:
    """Boolean mask over full-sphere pyramid ids marking the FOV cells."""
    zb, ab = np.divmod(np.arange(cfg.n_pyramids), cfg.n_azimuth)
    theta = cfg.pyramid_angle
    return in_fov((zb + 0.5) * theta, (ab + 0.5) * theta, cfg.fov_h, cfg.fov_v)


def pyramid_index(p, pose: Pose, cfg: MapConfig) -> int:
    ps = pose.world_to_sensor(np.asarray(p, dtype=float).reshape(1, 3))
    return int(pyramid_ids_sensor(ps, cfg)[0])


def activation_neighbors(pyd_id: int, n: int, n_zenith: int, n_azimuth: int | None = None) -> set[int]:
    """Pyramids within ``n`` rows and columns; azimuth wraps, zenith clamps."""
    if n_azimuth is None:
        n_azimuth = 2 * n_zenith
    zb, ab = divmod(int(pyd_id), n_azimuth)
    out = set()
    for dz in range(-n, n + 1):
        z = zb + dz
        if z < 0 or z >= n_zenith:
            continue
        for da in range(-n, n + 1):
            out.add(z * n_azimuth + (ab + da) % n_azimuth)
    return out


def neighbor_table(n: int, n_zenith: int, n_azimuth: int) -> np.ndarray:
    """(N_p, (2n+1)^2) table of neighbor ids, padded with -1 near the poles."""
    k = 2 * n + 1
    n_p = n_zenith * n_azimuth
    ids = np.arange(n_p)
    zb, ab = np.divmod(ids, n_azimuth)
    dz, da = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1), indexing="ij")
    z = zb[:, None] + dz.ravel()[None, :]
    a = (ab[:, None] + da.ravel()[None, :]) % n_azimuth
    table = z * n_azimuth + a
    table[(z < 0) | (z >= n_zenith)] = -1
    assert table.shape == (n_p, k * k)
    return table.astype(np.int64)


def noise_std(r, cfg: MapConfig):
    """Measurement standard deviation at range ``r``."""
    if cfg.noise_model == "constant":
        return np.full_like(np.asarray(r, dtype=float), cfg.noise_sigma)
    return cfg.noise_sigma * np.asarray(r, dtype=float)


def theta_prime_max(cfg: MapConfig) -> float:
    """Largest angular gap beyond which any measurement has likelihood <= epsilon."""
    s = cfg.noise_sigma
    cos2 = math.cos(cfg.fov_v / 2.0) ** 2
    if cfg.noise_model == "constant":
        log_arg = cfg.epsilon * (2 * math.pi) ** 1.5 * s**3
        scale = 2 * s * s / (cfg.robot_radius**2 * cos2)
    else:
        log_arg = cfg.epsilon * (2 * math.pi) ** 1.5 * s**3 * cfg.robot_radius**3
        scale = 2 * s * s / cos2
    if log_arg <= 0:
        raise Infeasible("non-positive logarithm argument")
    arg = scale * math.log(1.0 / log_arg)
    if arg < 0:
        # the density never reaches epsilon: every gap is already safe
        return 0.0
    if arg > 1:
        raise Infeasible(
            f"square-root argument {arg:.3f} > 1; increase robot_radius or decrease fov_v"
        )
    return math.asin(math.sqrt(arg))


def activation_n(cfg: MapConfig) -> int:
    if cfg.activation_n is not None:
        return int(cfg.activation_n)
    return max(1, math.ceil(theta_prime_max(cfg) / cfg.pyramid_angle - 1e-12))


def lower_bound_distance(r, alpha, theta_p):
    return r * np.sin(alpha) * np.sin(theta_p)
