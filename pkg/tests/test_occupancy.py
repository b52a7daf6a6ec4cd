import numpy as np
import pytest

from dspmap import geometry as geo
from dspmap import occupancy as occ
from dspmap.particle_store import SURVIVED
from dspmap.pipeline import DSPMap, Frame

from oracles import load_state, small_config


def test_occupancy_at_examples():
    cfg = small_config()
    state = load_state(cfg, [[1.02, 0.01, 0.0]] * 3, [[0, 0, 0]] * 3, [0.2, 0.2, 0.2], [SURVIVED] * 3)
    assert occ.occupancy_at(state, [1.0, 0.0, 0.0]) == pytest.approx(0.6)
    assert occ.occupancy_at(state, [-1.0, 0.5, 0.0]) == 0.0
    state = load_state(cfg, [[1.02, 0.01, 0.0]] * 3, [[0, 0, 0]] * 3, [0.5] * 3, [SURVIVED] * 3)
    assert occ.occupancy_at(state, [1.0, 0.0, 0.0]) == 1.0
    with pytest.raises(occ.OutsideMap):
        occ.occupancy_at(state, [9.0, 0, 0])


@pytest.mark.parametrize("mass, l_q, expect", [(0.7, 0.1, 0.7), (0.1, 0.05, 0.8), (1.4, 0.3, 1.0)])
def test_occupancy_voxel_examples(mass, l_q, expect):
    assert occ.occupancy_voxel(mass, l_q, 0.1) == pytest.approx(expect)


def test_grid_is_world_aligned_and_sums_mass(rng):
    cfg = small_config()
    pos = rng.uniform(-1.5, 1.5, size=(200, 3))
    w = rng.uniform(0, 0.002, 200)
    state = load_state(cfg, pos, np.zeros_like(pos), w, [SURVIVED] * 200)
    g = occ.occupancy_grid(state, 0.3)
    assert np.all(g.origin_idx * 0.3 == pytest.approx(np.round(g.origin_idx * 0.3 / 0.3) * 0.3))
    assert g.prob.sum() == pytest.approx(w.sum())


def test_binarize_examples():
    p = np.array([0.0, 0.2, 1.0])
    assert binarized(p, 0.0) == [False, True, True]
    assert binarized(p, 1.0) == [False, False, True]
    with pytest.raises(ValueError):
        occ.binarize(p, 1.5)


def binarized(p, t):
    return occ.binarize(p, t).tolist()


def test_grid_file_round_trip(tmp_path, rng):
    g = occ.OccupancyGrid(0.2, np.array([-5, 3, 0]), (4, 3, 2), rng.random(24).astype(np.float32).astype(float),
                          np.array([0.1, 0.2, 0.3]), 1.25, extent=np.array([0.8, 0.6, 0.4]))
    occ.write_grid(tmp_path / "g.dspo", g)
    h = occ.read_grid(tmp_path / "g.dspo")
    np.testing.assert_array_equal(h.prob, g.prob)
    np.testing.assert_array_equal(h.origin_idx, g.origin_idx)
    assert h.dims == g.dims and h.timestamp == 1.25 and h.l_q == 0.2
    np.testing.assert_array_equal(h.extent, g.extent)


def test_predict_occupancy_zero_tau_matches_current(rng):
    cfg = small_config()
    pos = rng.uniform(-1, 1, size=(50, 3))
    state = load_state(cfg, pos, rng.normal(0, 1, size=(50, 3)), np.full(50, 0.02), [SURVIVED] * 50)
    np.testing.assert_array_equal(occ.predict_occupancy(state, 0.0, 0.2).prob, occ.occupancy_grid(state, 0.2).prob)


def _centroid(grid, thr=0.05):
    c = grid.cell_centers()
    m = grid.prob >= thr
    return (c[m] * grid.prob[m, None]).sum(axis=0) / grid.prob[m].sum()


def test_predict_occupancy_shifts_dynamic_cluster(rng):
    cfg = small_config()
    pos = np.array([0.5, 0.6, 0.0]) + rng.normal(0, 0.05, size=(40, 3))
    state = load_state(cfg, pos, np.tile([0, -1.0, 0], (40, 1)), np.full(40, 0.05), [SURVIVED] * 40)
    before = _centroid(occ.occupancy_grid(state, 0.1))
    after = _centroid(occ.predict_occupancy(state, 1.0, 0.1))
    np.testing.assert_allclose(after - before, [0, -1.0, 0], atol=0.05)


def test_predict_occupancy_static_scene_unchanged(rng):
    cfg = small_config()
    pos = rng.uniform(-1, 1, size=(30, 3))
    state = load_state(cfg, pos, np.zeros_like(pos), np.full(30, 0.03), [SURVIVED] * 30)
    np.testing.assert_array_equal(occ.predict_occupancy(state, 2.0, 0.2).prob, occ.occupancy_grid(state, 0.2).prob)


def test_unknown_mask():
    cfg = small_config()
    with pytest.raises(occ.NotEnabled):
        occ.unknown_mask(DSPMap(cfg).state)
    cfg.time_particles = True
    m = DSPMap(cfg)
    # a return straight through the centre of the cell at (0.9, 0.1, 0.1)
    hit = np.array([[0.9, 0.1, 0.1]]) * 1.9 / 0.9
    m.step(Frame(0.0, geo.Pose.identity(), hit))
    m.step(Frame(0.1, geo.Pose.identity(), hit))
    unknown = occ.unknown_mask(m.state, 0.2)
    g = occ.occupancy_grid(m.state, 0.2)
    centers = g.cell_centers()

    def cell(p):
        return int(np.argmin(np.linalg.norm(centers - p, axis=1)))

    assert not unknown[cell([0.9, 0.1, 0.1])]  # swept by the ray
    assert unknown[cell([-1.5, 0.0, 0.0])]  # behind the sensor


def test_slice_png(tmp_path):
    g = occ.OccupancyGrid(0.5, np.array([0, 0, 0]), (3, 2, 2), np.linspace(0, 1, 12), np.zeros(3))
    occ.export_slice_png(tmp_path / "s.png", g, 0.7)
    assert (tmp_path / "s.png").stat().st_size > 0
