import numpy as np
import pytest

from dspmap.geometry import Pose
from dspmap.simulator import (Agent, Box, GroundTruthBuilder, SensorModel, World, WorldParseError,
                              ground_truth, parse_world, raycast_frame, read_agents, read_truth,
                              scenario, simulate, step_world, write_agents, write_truth)


def wall_world(noise_sigma=0.0):
    return World(statics=[Box([3.0, -5, -5], [3.5, 5, 5])], ground=False,
                 sensor=SensorModel(noise_sigma=noise_sigma))


def origin():
    return Pose.identity()


def test_wall_at_three_metres():
    f = raycast_frame(wall_world(), origin(), np.random.default_rng(0))
    centre = np.argmin(np.linalg.norm(f.points / np.linalg.norm(f.points, axis=1)[:, None] - [1, 0, 0], axis=1))
    assert np.linalg.norm(f.points[centre]) == pytest.approx(3.0, abs=1e-3)
    np.testing.assert_allclose(f.points[:, 0], 3.0, atol=1e-9)


def test_empty_world_gives_empty_frame():
    f = raycast_frame(World(ground=False), origin(), np.random.default_rng(0))
    assert f.points.shape == (0, 3)


def test_linear_noise_std():
    f = raycast_frame(wall_world(noise_sigma=0.01), origin(), np.random.default_rng(3))
    # along-ray noise projects onto x as 0.01 * 3 for every ray hitting the plane x = 3
    assert np.std(f.points[:, 0] - 3.0) == pytest.approx(0.03, rel=0.05)
    assert abs(np.mean(f.points[:, 0] - 3.0)) < 0.002


def test_truth_observed_and_occupied():
    world = World(statics=[Box([3.0, -0.5, 0.5], [3.4, 0.5, 1.5])], ground=False,
                  bounds_lo=np.array([-1.0, -3, -1]), bounds_hi=np.array([6.0, 3, 3]))
    pose = Pose(np.array([0.0, 0, 1.0]), np.array([1.0, 0, 0, 0]))
    step = ground_truth(world, 0.2, pose)
    builder = GroundTruthBuilder(world, 0.2, exclude_below=None)
    centers = builder.grid.centers()

    def cell(p):
        return int(np.argmin(np.linalg.norm(centers - p, axis=1)))

    face = cell([3.1, 0.1, 1.1])
    assert face in set(step.occupied.tolist())
    assert step.observed[face]
    free = cell([1.5, 0.1, 1.1])
    assert step.observed[free] and free not in set(step.occupied.tolist())
    assert not step.observed[cell([4.5, 0.1, 1.1])]


def test_step_world_constant_velocity_and_reflection():
    w = World(agents=[Agent([0.0, 0.0], velocity=[1.0, 0.0])], bounds_lo=np.array([-2, -2, 0.0]),
              bounds_hi=np.array([2, 2, 2.0]))
    w2 = step_world(w, 0.5)
    np.testing.assert_allclose(w2.agents[0].position, [0.5, 0.0])
    assert w.agents[0].position[0] == 0.0  # original untouched
    w3 = step_world(w2, 2.0)
    # the wall sits at 2 - radius = 1.75; 0.5 + 2 = 2.5 reflects to 1.0
    np.testing.assert_allclose(w3.agents[0].position, [1.0, 0.0])
    assert w3.agents[0].velocity[0] == -1.0


def test_step_world_waypoints():
    w = World(agents=[Agent([0.0, 0.0], waypoints=[[1.0, 0.0], [1.0, 1.0]], speed=1.0)])
    w = step_world(w, 1.5)
    np.testing.assert_allclose(w.agents[0].position, [1.0, 0.5])
    np.testing.assert_allclose(w.agents[0].velocity, [0.0, 1.0])


def test_parse_errors_carry_line_numbers():
    with pytest.raises(WorldParseError) as e:
        parse_world("[world]\nduration = 3\n[sensor]\nmax_range = far\n")
    assert e.value.line == 4
    with pytest.raises(WorldParseError) as e:
        parse_world("[world]\nspeed_of_light = 1\n")
    assert e.value.line == 2
    with pytest.raises(WorldParseError):
        parse_world("[planet]\n")


def test_zero_duration_world():
    w = parse_world("[world]\nduration = 0\n")
    assert simulate(w).frames == []


def test_simulation_is_deterministic():
    w = scenario("walker")
    w.duration = 0.3
    a = simulate(w, seed=5)
    b = simulate(w, seed=5)
    for fa, fb in zip(a.frames, b.frames):
        np.testing.assert_array_equal(fa.points, fb.points)
    c = simulate(w, seed=6)
    assert not np.array_equal(a.frames[1].points, c.frames[1].points)


def test_truth_and_agent_files_round_trip(tmp_path):
    w = scenario("walker")
    w.duration = 0.2
    res = simulate(w, resolutions=(0.3,), dense_factor=1)
    grid, steps = res.truth[0.3]
    write_truth(tmp_path / "t.dspg", grid, steps)
    g2, s2 = read_truth(tmp_path / "t.dspg")
    assert g2.dims == grid.dims and len(s2) == len(steps)
    for a, b in zip(steps, s2):
        np.testing.assert_array_equal(a.occupied, b.occupied)
        np.testing.assert_array_equal(a.observed, b.observed)
        np.testing.assert_array_equal(a.sensor_position, b.sensor_position)
    write_agents(tmp_path / "a.csv", res.agent_rows)
    rows = read_agents(tmp_path / "a.csv")
    assert rows.shape == (len(res.agent_rows), 9)
    np.testing.assert_allclose(rows[:, 6:], np.array(res.agent_rows)[:, 6:], atol=1e-6)


@pytest.mark.parametrize("name", ["walker", "square", "forest", "street"])
def test_builtin_scenarios_parse(name):
    w = scenario(name)
    assert w.n_frames > 0 and w.agents
