import json

import numpy as np
import pytest

from dspmap.cli import main
from dspmap.evaluation import read_table
from dspmap.simulator import SCENARIOS

WORLD = SCENARIOS["walker"].replace("duration = 10", "duration = 0.5").replace("3.5, -3.5", "2.5, -0.5")
CONFIG = "profile = desk\nmap_size = 6,6,3\nL_max = 30000\n"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "w.world").write_text(WORLD)
    (d / "c.cfg").write_text(CONFIG)
    assert run("simulate", d / "w.world", d / "sim", "--resolutions", "0.1,0.2,0.3", "--dense-factor", "1") == 0
    return d


@pytest.fixture(scope="module")
def map_dir(sim_dir):
    assert run("map", sim_dir / "sim" / "data.dspd", sim_dir / "c.cfg", sim_dir / "run",
               "--snapshot-every", "3") == 0
    return sim_dir / "run"


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as e:
        main(["map"])
    assert e.value.code == 1
    assert run() == 1


def test_missing_dataset_is_named(tmp_path, capsys):
    (tmp_path / "c.cfg").write_text(CONFIG)
    assert run("map", tmp_path / "nope.dspd", tmp_path / "c.cfg", tmp_path / "o") == 2
    assert "nope.dspd" in capsys.readouterr().err


def test_unknown_world_exits_2(tmp_path, capsys):
    assert run("simulate", tmp_path / "missing.world", tmp_path / "o") == 2


def test_dump_config(capsys):
    assert run("--profile", "desk", "--dump-config") == 0
    out = capsys.readouterr().out
    assert "L_max = 200000" in out


def test_zero_duration_gives_empty_dataset(tmp_path, capsys):
    (tmp_path / "z.world").write_text("[world]\nduration = 0\n")
    assert run("simulate", tmp_path / "z.world", tmp_path / "o", "--resolutions", "0.3") == 0
    assert "frames,0" in capsys.readouterr().out
    assert (tmp_path / "o" / "data.dspd").stat().st_size == 8


def test_map_outputs(map_dir):
    snaps = sorted((map_dir / "grids" / "r0.30").glob("*.dspo"))
    assert [p.name for p in snaps] == ["frame_000003.dspo", "frame_000006.dspo", "frame_000009.dspo"]
    for name in ("timing.csv", "timing.png", "particles_final.csv", "velocity_estimates.csv"):
        assert (map_dir / name).stat().st_size > 0
    manifest = json.loads((map_dir / "manifest.json").read_text())
    assert manifest["command"] == "map" and manifest["config"]


def test_same_seed_gives_identical_grids(sim_dir, map_dir):
    assert run("map", sim_dir / "sim" / "data.dspd", sim_dir / "c.cfg", sim_dir / "run2",
               "--snapshot-every", "3") == 0
    for a in sorted((map_dir / "grids").rglob("*.dspo")):
        b = sim_dir / "run2" / a.relative_to(map_dir)
        assert a.read_bytes() == b.read_bytes()


def test_static_mode_dump_has_zero_velocity(sim_dir):
    out = sim_dir / "static"
    assert run("map", sim_dir / "sim" / "data.dspd", sim_dir / "c.cfg", out, "--mode", "static") == 0
    dump = np.loadtxt(out / "particles_final.csv", delimiter=",", skiprows=1, ndmin=2)
    header = (out / "particles_final.csv").read_text().splitlines()[0].split(",")
    cols = [header.index(c) for c in ("vx", "vy", "vz")]
    assert dump.shape[0] > 0
    assert np.all(dump[:, cols] == 0.0)


def test_evaluate_three_resolutions(sim_dir, map_dir, capsys):
    out = sim_dir / "eval"
    assert run("evaluate", map_dir, sim_dir / "sim", "--out", out, "--warmup", "0.1") == 0
    for tag in ("r0.10", "r0.20", "r0.30"):
        rows = read_table(out / f"pr_{tag}.csv")
        assert len(rows) == 19
        assert (out / f"pr_{tag}.png").stat().st_size > 0
    assert (out / "summary.txt").read_text()


def test_evaluate_missing_truth(sim_dir, map_dir, capsys):
    assert run("evaluate", map_dir, sim_dir / "nowhere", "--out", sim_dir / "e2") != 0


def test_corrupt_stream_reports_frame(sim_dir, tmp_path, capsys):
    data = (sim_dir / "sim" / "data.dspd").read_bytes()
    (tmp_path / "bad.dspd").write_bytes(data[: len(data) // 2])
    assert run("map", tmp_path / "bad.dspd", sim_dir / "c.cfg", tmp_path / "o") == 2
    assert "frame" in capsys.readouterr().err


def test_bench_unknown_key(sim_dir, capsys):
    assert run("bench", sim_dir / "sim" / "data.dspd", sim_dir / "c.cfg", sim_dir / "b0",
               "--sweep", "warp=1,2") == 1


def test_bench_rows(sim_dir, capsys):
    assert run("bench", sim_dir / "sim" / "data.dspd", sim_dir / "c.cfg", sim_dir / "b1", "--frames", "2") == 0
    assert len(read_table(sim_dir / "b1" / "bench.csv")) == 1
    assert run("bench", sim_dir / "sim" / "data.dspd", sim_dir / "c.cfg", sim_dir / "b2", "--frames", "2",
               "--sweep", "theta=3,5", "--sweep", "L_max=20000,30000") == 0
    rows = read_table(sim_dir / "b2" / "bench.csv")
    assert len(rows) == 4
    assert (sim_dir / "b2" / "bench.png").stat().st_size > 0
