import math

import numpy as np
import pytest

from dspmap.config import Config, ConfigError, apply_overrides, dump_config, parse_config_text
from dspmap.dataset import CorruptStream, load_dataset, write_dataset
from dspmap.geometry import Pose
from dspmap.pipeline import Frame


def frames(rng, n=3):
    out = []
    for k in range(n):
        pose = Pose(rng.normal(size=3), np.array([1.0, 0, 0, 0]))
        out.append(Frame(0.05 * k, pose, rng.normal(size=(k * 4, 3)).astype(np.float32)))
    return out


def test_dataset_round_trip(tmp_path, rng):
    src = frames(rng)
    write_dataset(tmp_path / "d.dspd", src)
    back = load_dataset(tmp_path / "d.dspd")
    assert len(back) == 3
    for a, b in zip(src, back):
        assert a.timestamp == b.timestamp
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_allclose(a.pose.position, b.pose.position, rtol=1e-6)


def test_truncated_stream_names_the_frame(tmp_path, rng):
    write_dataset(tmp_path / "d.dspd", frames(rng))
    data = (tmp_path / "d.dspd").read_bytes()
    (tmp_path / "t.dspd").write_bytes(data[:-5])
    with pytest.raises(CorruptStream) as e:
        load_dataset(tmp_path / "t.dspd")
    assert e.value.frame_index == 2


def test_bad_magic(tmp_path):
    (tmp_path / "x.dspd").write_bytes(b"NOPE\x01\x00\x00\x00")
    with pytest.raises(CorruptStream):
        load_dataset(tmp_path / "x.dspd")


def test_empty_dataset(tmp_path):
    write_dataset(tmp_path / "e.dspd", [])
    assert load_dataset(tmp_path / "e.dspd") == []


def test_config_dump_parses_back():
    cfg = Config()
    again = parse_config_text(dump_config(cfg))
    assert dump_config(again) == dump_config(cfg)


def test_config_overrides_and_aliases():
    cfg = apply_overrides(Config(), {"theta": "5", "L_max": "1000", "mode": "static"})
    assert cfg.map.pyramid_angle == pytest.approx(math.radians(5))
    assert cfg.filter.L_max == 1000 and cfg.mode == "static"
    with pytest.raises(ConfigError):
        apply_overrides(Config(), {"warp_factor": "9"})
    with pytest.raises(ConfigError):
        parse_config_text("voxel_size = 0.1\nnonsense\n")


def test_profile_line_selects_base():
    cfg = parse_config_text("profile = desk\nvoxel_size = 0.25\n")
    assert cfg.filter.L_max == 200_000 and cfg.map.voxel_size == 0.25
