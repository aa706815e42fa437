import json
import math

import numpy as np
import pytest

from kinesim import sensors
from kinesim.collision import Shape
from kinesim.errors import InvalidParamsError, UnknownEntityError
from kinesim.simcore import Instance, InstanceConfig
from kinesim.transforms import Pose


def pepper_world(pepper, ground=False):
    inst = Instance(1, InstanceConfig(ground_plane=ground))
    return inst, inst.spawn_robot(pepper)


def wall_ahead(inst, rid, frame, distance):
    """Thin box whose near face is ``distance`` ahead of ``frame`` along its x axis."""
    T = inst.robot_link_transforms(rid)[frame]
    centre = T[:3, 3] + (distance + 0.05) * T[:3, 0]
    yaw = math.atan2(T[1, 0], T[0, 0])
    inst.add_static_body(Shape.box(0.05, 20.0, 20.0), Pose.from_xyz_rpy(centre, (0, 0, yaw)))


def test_empty_world_laser_misses(pepper):
    inst, rid = pepper_world(pepper)
    scan = sensors.get_laser_scan(inst, rid, "front")
    assert len(scan.angles) == len(scan.ranges) == 15
    assert np.all(np.isinf(scan.ranges))
    data = json.loads(scan.to_json())
    assert data["ranges"] == [None] * 15 and data["max_range"] == 3.0
    assert data["metadata"]["fov_deg"] == 60.0


@pytest.mark.parametrize("laser", ["front", "left", "right"])
def test_wall_ranges(pepper, laser):
    inst, rid = pepper_world(pepper)
    frame = pepper.config.lasers[laser]["frame"]
    wall_ahead(inst, rid, frame, 2.0)
    scan = sensors.get_laser_scan(inst, rid, laser)
    np.testing.assert_allclose(scan.ranges, 2.0 / np.cos(scan.angles), atol=1e-9)
    assert scan.ranges[7] == pytest.approx(2.0, abs=1e-12)
    assert scan.frame == frame


def test_laser_yaw_offsets(pepper):
    inst, rid = pepper_world(pepper)
    T = inst.robot_link_transforms(rid)
    yaws = {k: math.degrees(math.atan2(T[v["frame"]][1, 0], T[v["frame"]][0, 0]))
            for k, v in pepper.config.lasers.items()}
    assert yaws == pytest.approx({"front": 0.0, "left": 90.0, "right": -90.0})


def test_obstacle_beyond_range_misses(pepper):
    inst, rid = pepper_world(pepper)
    wall_ahead(inst, rid, pepper.config.lasers["front"]["frame"], 3.5)
    assert np.all(np.isinf(sensors.get_laser_scan(inst, rid, "front").ranges))


def test_unknown_laser(pepper):
    inst, rid = pepper_world(pepper)
    with pytest.raises(UnknownEntityError):
        sensors.get_laser_scan(inst, rid, "top")


def test_rays_ignore_own_links(pepper):
    """With the arms raised in front of the camera, the robot still sees past itself."""
    inst, rid = pepper_world(pepper)
    inst.set_angles(rid, ["RShoulderPitch", "LShoulderPitch"], [-1.5, -1.5], 1.0)
    inst.step(2000)
    img = sensors.get_depth_image(inst, rid, "depth", "160x120")
    assert np.all(img.depth == img.far)


def test_scan_timestamp_is_clock(pepper):
    inst, rid = pepper_world(pepper)
    inst.step(37)
    assert sensors.get_laser_scan(inst, rid, "front").timestamp == inst.clock
    assert sensors.get_depth_image(inst, rid, "depth", "160x120").timestamp == inst.clock


@pytest.mark.parametrize("res", ["160x120", "320x240", "640x480"])
def test_depth_wall_is_flat(pepper, res):
    inst, rid = pepper_world(pepper)
    wall_ahead(inst, rid, "CameraDepth_frame", 2.0)
    img = sensors.get_depth_image(inst, rid, "depth", res)
    assert img.depth.shape == (img.width * img.height,)
    np.testing.assert_allclose(img.depth, 2.0, atol=1e-9)


def test_empty_scene_is_far(pepper):
    inst, rid = pepper_world(pepper)
    img = sensors.get_depth_image(inst, rid, "depth", (320, 240))
    assert np.all(img.depth == 8.0)
    assert not img.valid.any()


def test_ground_is_seen(pepper):
    inst, rid = pepper_world(pepper, ground=True)
    img = sensors.get_depth_image(inst, rid, "depth", "160x120")
    rows = img.as_array()
    assert np.all(rows[-1] < img.far)  # bottom row looks down at the floor
    assert np.all(rows[0] == img.far)  # top row looks above the horizon
    finite = img.depth[img.valid]
    assert np.all((finite >= img.near) & (finite <= img.far))


def test_resolution_scaling_and_downsample(pepper):
    inst, rid = pepper_world(pepper, ground=True)
    inst.add_static_body(Shape.sphere(0.4), Pose.from_xyz_rpy((2.0, 0.3, 0.9)))
    inst.add_static_body(Shape.box(0.2, 0.5, 0.6), Pose.from_xyz_rpy((3.0, -0.6, 0.6), (0.2, 0.1, 0.7)))
    small = sensors.get_depth_image(inst, rid, "depth", "160x120")
    big = sensors.get_depth_image(inst, rid, "depth", "640x480")
    assert np.allclose(np.array(big.intrinsics), 4.0 * np.array(small.intrinsics))
    # pixel (u, v) of the small image shares its ray with pixel (4u, 4v) of the large one
    k_small = sensors.pixel_rays(160, 120, small.intrinsics)
    k_big = sensors.pixel_rays(640, 480, big.intrinsics).reshape(480, 640, 3)[::4, ::4].reshape(-1, 3)
    np.testing.assert_allclose(k_small, k_big, atol=1e-15)
    shared = big.as_array()[::4, ::4].reshape(-1)
    np.testing.assert_allclose(small.depth, shared, atol=1e-9)
    assert (small.depth < small.far).sum() > 1000


def test_bad_resolution_and_camera(pepper):
    inst, rid = pepper_world(pepper)
    with pytest.raises(InvalidParamsError):
        sensors.get_depth_image(inst, rid, "depth", "100x100")
    with pytest.raises(InvalidParamsError):
        sensors.parse_resolution("wide")
    with pytest.raises(UnknownEntityError):
        sensors.get_depth_image(inst, rid, "rgb", "160x120")


def test_pgm_round_trip(pepper, tmp_path):
    inst, rid = pepper_world(pepper, ground=True)
    img = sensors.get_depth_image(inst, rid, "depth", "160x120")
    path = img.write_pgm(tmp_path / "d.pgm")
    mm = sensors.read_pgm(path)
    assert mm.shape == (120, 160)
    expected = np.where(img.valid, np.rint(img.depth * 1000), 0).reshape(120, 160)
    np.testing.assert_array_equal(mm, expected)
    header = json.loads((tmp_path / "d.json").read_text())
    assert header["width"] == 160 and header["units"] == "millimeters"
    assert header["intrinsics"]["cx"] == 80.0
    d = img.to_dict()
    assert d["depth"][0] is None and isinstance(d["depth"][-1], float)


def test_laser_matches_sphere_tracing_on_random_scenes(pepper):
    from scipy.spatial.transform import Rotation

    from oracles import sdf_world, sphere_trace

    rng = np.random.default_rng(12)
    compared = hits = 0
    for _ in range(30):
        inst, rid = pepper_world(pepper, ground=True)
        shapes = []
        for _ in range(int(rng.integers(3, 9))):
            kind = ["sphere", "capsule", "box", "cylinder"][rng.integers(4)]
            dims = tuple(rng.uniform(0.05, 0.4, {"sphere": 1, "capsule": 2, "box": 3, "cylinder": 2}[kind]))
            r, a = rng.uniform(0.8, 3.0), rng.uniform(-math.pi, math.pi)
            T = np.eye(4)
            T[:3, :3] = Rotation.random(random_state=rng).as_matrix()
            T[:3, 3] = (r * math.cos(a), r * math.sin(a), rng.uniform(0.0, 0.3))
            inst.add_static_body(Shape(kind, dims), T)
            shapes.append((kind, dims, T))
        for laser, cfg in pepper.config.lasers.items():
            scan = sensors.get_laser_scan(inst, rid, laser)
            T = inst.robot_link_transforms(rid)[cfg["frame"]]
            D = np.column_stack((np.cos(scan.angles), np.sin(scan.angles), np.zeros(len(scan.angles)))) @ T[:3, :3].T
            O = np.broadcast_to(T[:3, 3], D.shape)
            if min(sdf_world(k, d, S, O[:1])[0] for k, d, S in shapes) <= 0:
                continue
            ref, ok = sphere_trace(shapes, O, D, scan.max_range, ground=True)
            for got, want in zip(scan.ranges[ok], ref[ok]):
                assert (math.isinf(got) and math.isinf(want)) or abs(got - want) <= 1e-9
            compared += int(ok.sum())
            hits += int(np.isfinite(scan.ranges[ok]).sum())
    assert compared > 1000 and hits > 200
