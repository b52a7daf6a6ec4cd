"""Configuration dataclasses and the flat ``key = value`` config file format.

Angles are stored in radians internally; the config file uses degrees for
every key ending in ``_deg``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Raised for malformed config files or invalid parameter values."""


@dataclass
class MapConfig:
    map_size: tuple[float, float, float] = (10.0, 10.0, 6.0)
    voxel_size: float = 0.2
    pyramid_angle: float = math.radians(3.0)
    fov_h: float = math.radians(90.0)
    fov_v: float = math.radians(60.0)
    robot_radius: float = 0.15
    filter_resolution: float = 0.1
    noise_model: str = "linear"  # "constant" -> sigma in meters, "linear" -> sigma * r
    noise_sigma: float = 0.01
    epsilon: float = 0.01
    activation_n: int | None = None  # None: derived from theta_prime_max
    sensor_resolution: float = math.radians(0.5)
    eta1: float = 3.0
    eta2: float = 3.0

    def __post_init__(self):
        self.map_size = tuple(float(v) for v in self.map_size)
        self.validate()
        # round the box up to whole voxels so that N_v is an integer
        l = self.voxel_size
        self.map_size = tuple(math.ceil(v / l - 1e-9) * l for v in self.map_size)

    def validate(self) -> None:
        if any(v <= 0 for v in self.map_size):
            raise ConfigError("map_size components must be positive")
        if self.voxel_size <= 0:
            raise ConfigError("voxel_size must be positive")
        if self.pyramid_angle <= 0:
            raise ConfigError("pyramid_angle must be positive")
        ratio = math.pi / self.pyramid_angle
        if abs(ratio - round(ratio)) > 1e-6:
            raise ConfigError(
                f"pyramid_angle must divide pi evenly (pi/theta = {ratio:.6f})"
            )
        if not 0 < self.fov_v < math.pi:
            raise ConfigError("fov_v must lie in (0, pi)")
        if not 0 < self.fov_h <= 2 * math.pi + 1e-12:
            raise ConfigError("fov_h must lie in (0, 2pi]")
        if self.robot_radius <= 0 or self.robot_radius >= self.r_max:
            raise ConfigError("robot_radius must satisfy 0 < r_min < r_max")
        if self.filter_resolution <= 0:
            raise ConfigError("filter_resolution must be positive")
        if self.noise_model not in ("constant", "linear"):
            raise ConfigError(f"unknown noise_model {self.noise_model!r}")
        if self.noise_sigma <= 0 or self.epsilon <= 0:
            raise ConfigError("noise_sigma and epsilon must be positive")

    @property
    def r_max(self) -> float:
        return 0.5 * math.sqrt(sum(v * v for v in self.map_size))

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return tuple(int(round(v / self.voxel_size)) for v in self.map_size)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.grid_shape
        return nx * ny * nz

    @property
    def n_zenith(self) -> int:
        return int(round(math.pi / self.pyramid_angle))

    @property
    def n_azimuth(self) -> int:
        return 2 * self.n_zenith

    @property
    def n_pyramids(self) -> int:
        return self.n_zenith * self.n_azimuth

    @property
    def n_fov_pyramids(self) -> int:
        return int(round(self.fov_h * self.fov_v / self.pyramid_angle**2))


@dataclass
class FilterParams:
    P_d: float = 0.9
    P_s: float = 0.98
    kappa: float = 0.01
    newborn_mass: float | None = None  # None: w_init * M_k * L_b per frame
    L_b: int = 5
    L_max: int = 1_600_000
    q_pos_std: float = 0.05
    q_vel_std: float = 0.1
    v_hat: float = 0.2
    sigma_vb: float = 0.5
    v_max: float = 5.0
    w_init: float = 1e-4
    dst_min_particles: int = 3
    empty_pyramid_visible: bool = False

    def __post_init__(self):
        if not 0 < self.P_d <= 1 or not 0 < self.P_s <= 1:
            raise ConfigError("P_d and P_s must lie in (0, 1]")
        if self.kappa <= 0:
            raise ConfigError("kappa must be positive")
        if self.L_b < 1 or self.L_max < 1:
            raise ConfigError("L_b and L_max must be positive")
        if min(self.q_pos_std, self.q_vel_std) < 0:
            raise ConfigError("prediction noise must be non-negative")


@dataclass
class VelocityParams:
    cluster_dist: float | None = None  # None: 2 * filter_resolution
    min_cluster_size: int = 5
    gate_v_max: float = 5.0
    w_count: float = 1.0
    ground_height_thresh: float = 0.2


MODES = ("dynamic", "random", "static")


@dataclass
class Config:
    map: MapConfig = field(default_factory=MapConfig)
    filter: FilterParams = field(default_factory=FilterParams)
    velocity: VelocityParams = field(default_factory=VelocityParams)
    mode: str = "dynamic"
    seed: int = 0
    threads: int = 2
    time_particles: bool = False
    time_particles_per_voxel: int = 1
    predict_noise: bool = False
    snapshot_resolutions: tuple[float, ...] = (0.1, 0.2, 0.3)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")


def desk_profile() -> Config:
    """Reduced map and particle budget for laptop-scale runs."""
    cfg = Config()
    cfg.map = MapConfig(map_size=(8.0, 8.0, 3.0))
    cfg.filter = FilterParams(L_max=200_000)
    return cfg


PROFILES = {"default": Config, "desk": desk_profile}

# config-file key -> (section, attribute, kind)
_KEYS: dict[str, tuple[str, str, str]] = {
    "map_size": ("map", "map_size", "vec3"),
    "voxel_size": ("map", "voxel_size", "float"),
    "pyramid_angle_deg": ("map", "pyramid_angle", "deg"),
    "fov_h_deg": ("map", "fov_h", "deg"),
    "fov_v_deg": ("map", "fov_v", "deg"),
    "robot_radius": ("map", "robot_radius", "float"),
    "filter_resolution": ("map", "filter_resolution", "float"),
    "noise_model": ("map", "noise_model", "str"),
    "noise_sigma": ("map", "noise_sigma", "float"),
    "epsilon": ("map", "epsilon", "float"),
    "activation_n": ("map", "activation_n", "optint"),
    "sensor_resolution_deg": ("map", "sensor_resolution", "deg"),
    "eta1": ("map", "eta1", "float"),
    "eta2": ("map", "eta2", "float"),
    "P_d": ("filter", "P_d", "float"),
    "P_s": ("filter", "P_s", "float"),
    "kappa": ("filter", "kappa", "float"),
    "newborn_mass": ("filter", "newborn_mass", "optfloat"),
    "L_b": ("filter", "L_b", "int"),
    "L_max": ("filter", "L_max", "int"),
    "q_pos_std": ("filter", "q_pos_std", "float"),
    "q_vel_std": ("filter", "q_vel_std", "float"),
    "v_hat": ("filter", "v_hat", "float"),
    "sigma_vb": ("filter", "sigma_vb", "float"),
    "v_max": ("filter", "v_max", "float"),
    "w_init": ("filter", "w_init", "float"),
    "dst_min_particles": ("filter", "dst_min_particles", "int"),
    "empty_pyramid_visible": ("filter", "empty_pyramid_visible", "bool"),
    "cluster_dist": ("velocity", "cluster_dist", "optfloat"),
    "min_cluster_size": ("velocity", "min_cluster_size", "int"),
    "gate_v_max": ("velocity", "gate_v_max", "float"),
    "w_count": ("velocity", "w_count", "float"),
    "ground_height_thresh": ("velocity", "ground_height_thresh", "float"),
    "mode": ("", "mode", "str"),
    "seed": ("", "seed", "int"),
    "threads": ("", "threads", "int"),
    "time_particles": ("", "time_particles", "bool"),
    "time_particles_per_voxel": ("", "time_particles_per_voxel", "int"),
    "predict_noise": ("", "predict_noise", "bool"),
    "snapshot_resolutions": ("", "snapshot_resolutions", "floats"),
}

# short names used by ``bench --sweep``
ALIASES = {
    "theta": "pyramid_angle_deg",
    "Res": "filter_resolution",
    "res": "filter_resolution",
    "l": "voxel_size",
}


def _parse_value(kind: str, text: str):
    text = text.strip()
    if kind in ("float", "deg"):
        v = float(text)
        return math.radians(v) if kind == "deg" else v
    if kind == "int":
        return int(float(text))
    if kind == "optint":
        return None if text.lower() in ("auto", "none", "") else int(float(text))
    if kind == "optfloat":
        return None if text.lower() in ("auto", "none", "") else float(text)
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "vec3":
        parts = [float(p) for p in text.replace(" ", ",").split(",") if p]
        if len(parts) != 3:
            raise ValueError("expected three comma-separated numbers")
        return tuple(parts)
    if kind == "floats":
        return tuple(float(p) for p in text.split(",") if p.strip())
    return text


def _format_value(kind: str, value) -> str:
    if value is None:
        return "auto"
    if kind == "deg":
        return repr(round(math.degrees(value), 10))
    if kind in ("vec3", "floats"):
        return ",".join(repr(float(v)) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


def canonical_key(key: str) -> str:
    key = ALIASES.get(key, key)
    if key not in _KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def apply_overrides(cfg: Config, items: dict[str, str]) -> Config:
    """Return a new Config with ``key -> text value`` overrides applied."""
    sections = {
        "map": dataclasses.asdict(cfg.map),
        "filter": dataclasses.asdict(cfg.filter),
        "velocity": dataclasses.asdict(cfg.velocity),
    }
    top = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)
           if f.name not in sections}
    for raw_key, text in items.items():
        key = canonical_key(raw_key)
        section, attr, kind = _KEYS[key]
        try:
            value = _parse_value(kind, text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        (sections[section] if section else top)[attr] = value
    return Config(
        map=MapConfig(**sections["map"]),
        filter=FilterParams(**sections["filter"]),
        velocity=VelocityParams(**sections["velocity"]),
        **top,
    )


def parse_config_text(text: str, base: Config | None = None) -> Config:
    items: dict[str, str] = {}
    profile = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "profile":
            profile = value
            continue
        try:
            canonical_key(key)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        items[key] = value
    if base is None:
        if profile is not None and profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        base = PROFILES[profile or "default"]()
    return apply_overrides(base, items)


def load_config(path: str | Path, base: Config | None = None) -> Config:
    return parse_config_text(Path(path).read_text(), base)


def dump_config(cfg: Config) -> str:
    lines = []
    for key, (section, attr, kind) in _KEYS.items():
        owner = getattr(cfg, section) if section else cfg
        lines.append(f"{key} = {_format_value(kind, getattr(owner, attr))}")
    return "\n".join(lines) + "\n"
