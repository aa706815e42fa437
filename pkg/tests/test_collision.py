import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from kinesim.collision import (
    Body,
    SelfCollisionChecker,
    Shape,
    World,
    pair_distance,
    ray_cast,
    segment_distance,
    self_collision,
    world_collision,
)
from kinesim.errors import InvalidParamsError, UnknownEntityError
from kinesim.kinematics import link_transforms
from kinesim.simcore import Instance, InstanceConfig
from kinesim.transforms import Pose
from kinesim.urdf import parse_urdf

KINDS = ("sphere", "capsule", "box", "cylinder")


def at(x=0.0, y=0.0, z=0.0, rpy=(0.0, 0.0, 0.0)):
    return Pose.from_xyz_rpy((x, y, z), rpy)


def random_shape(rng, kind=None):
    kind = kind or KINDS[rng.integers(4)]
    n = {"sphere": 1, "capsule": 2, "box": 3, "cylinder": 2}[kind]
    return Shape(kind, tuple(rng.uniform(0.05, 0.4, n)))


def random_transform(rng, spread=0.6):
    T = np.eye(4)
    T[:3, :3] = Rotation.random(random_state=rng).as_matrix()
    T[:3, 3] = rng.uniform(-spread, spread, 3)
    return T


def test_sphere_pairs():
    s = Shape.sphere(0.5)
    assert pair_distance(s, at(), s, at(2.0)).signed_distance == pytest.approx(1.0, abs=1e-12)
    assert pair_distance(s, at(), s, at(0.9)).signed_distance == pytest.approx(-0.1, abs=1e-12)


def test_capsule_sphere():
    res = pair_distance(Shape.capsule(0.2, 0.5), at(), Shape.sphere(0.1), at(1.0))
    assert res.signed_distance == pytest.approx(0.7, abs=1e-9)
    np.testing.assert_allclose(res.closest_point_a, [0.2, 0, 0], atol=1e-12)
    np.testing.assert_allclose(res.closest_point_b, [0.9, 0, 0], atol=1e-12)


def test_sphere_box_closed_forms():
    box = Shape.box(0.5, 0.5, 0.5)
    assert pair_distance(Shape.sphere(0.1), at(0.58), box, at()).signed_distance == pytest.approx(-0.02, abs=1e-9)
    # corner region: distance to the corner point minus radius
    d = pair_distance(Shape.sphere(0.1), at(1, 1, 1), box, at()).signed_distance
    assert d == pytest.approx(math.sqrt(3) * 0.5 - 0.1, abs=1e-9)
    # deep: centre inside the box, shallowest face is 0.4 away
    assert pair_distance(Shape.sphere(0.2), at(0.1), box, at()).signed_distance == pytest.approx(-0.6, abs=1e-6)


def test_box_box_and_cylinders():
    box = Shape.box(0.5, 0.5, 0.5)
    assert pair_distance(box, at(), box, at(0.8)).signed_distance == pytest.approx(-0.2, abs=1e-6)
    assert pair_distance(box, at(), box, at(1.3)).signed_distance == pytest.approx(0.3, abs=1e-9)
    cyl = Shape.cylinder(0.3, 0.5)
    assert pair_distance(cyl, at(), cyl, at(0.4)).signed_distance == pytest.approx(-0.2, abs=1e-6)
    assert pair_distance(cyl, at(), cyl, at(0, 0, 1.25)).signed_distance == pytest.approx(0.25, abs=1e-9)


def test_touching_is_not_penetrating():
    s = Shape.sphere(0.5)
    res = pair_distance(s, at(), s, at(1.0))
    assert res.signed_distance == 0.0
    assert not res.penetrating


def test_segment_distance_parallel_and_crossing():
    p1, q1 = np.array([0.0, 0, 0]), np.array([1.0, 0, 0])
    d, _, _ = segment_distance(p1, q1, np.array([0.0, 1, 0]), np.array([1.0, 1, 0]))
    assert d == pytest.approx(1.0)
    d, c1, c2 = segment_distance(p1, q1, np.array([0.5, -1, 1]), np.array([0.5, 1, 1]))
    assert d == pytest.approx(1.0)
    np.testing.assert_allclose(c1, [0.5, 0, 0])
    np.testing.assert_allclose(c2, [0.5, 0, 1])


def test_symmetry_and_closest_points():
    rng = np.random.default_rng(11)
    for _ in range(300):
        a, b = random_shape(rng), random_shape(rng)
        Ta, Tb = random_transform(rng), random_transform(rng)
        ab = pair_distance(a, Ta, b, Tb)
        ba = pair_distance(b, Tb, a, Ta)
        tol = 1e-9 if ab.signed_distance >= 0 else 1e-3 * max(1.0, abs(ab.signed_distance))
        assert ab.signed_distance == pytest.approx(ba.signed_distance, abs=tol)
        if ab.signed_distance >= 0:
            gap = np.linalg.norm(ab.closest_point_a - ab.closest_point_b)
            assert gap == pytest.approx(ab.signed_distance, abs=1e-9)


def test_penetration_depth_is_a_separating_translation():
    """Moving B along the contact normal by the reported depth just separates the pair."""
    rng = np.random.default_rng(12)
    checked = 0
    while checked < 100:
        a, b = random_shape(rng), random_shape(rng)
        Ta, Tb = random_transform(rng, 0.2), random_transform(rng, 0.2)
        res = pair_distance(a, Ta, b, Tb)
        if res.signed_distance > -0.01:
            continue
        n = res.closest_point_b - res.closest_point_a
        n = -n / np.linalg.norm(n)  # points from A into B when penetrating: push B out along -n
        depth = -res.signed_distance
        moved = Tb.copy()
        moved[:3, 3] += n * depth * 1.002
        assert pair_distance(a, Ta, b, moved).signed_distance >= -2e-3 * depth
        checked += 1


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_sphere_pair_matches_centre_distance(r1, r2, x, y, z):
    d = pair_distance(Shape.sphere(r1), at(), Shape.sphere(r2), at(x, y, z)).signed_distance
    assert d == pytest.approx(math.sqrt(x * x + y * y + z * z) - r1 - r2, abs=1e-12)


# -- self-collision -------------------------------------------------------


def sphere_link(name, r=0.3, x=0.0):
    return (f'<link name="{name}"><collision><origin xyz="{x} 0 0"/><geometry><sphere radius="{r}"/></geometry>'
            f'</collision></link>')


def rz(name, parent, child, x):
    return (f'<joint name="{name}" type="revolute"><parent link="{parent}"/><child link="{child}"/>'
            f'<origin xyz="{x} 0 0"/><axis xyz="0 0 1"/>'
            f'<limit lower="-3.2" upper="3.2" velocity="1" effort="1"/></joint>')


ARM3 = parse_urdf('<robot name="arm3">' + sphere_link("link1") + sphere_link("link2") + sphere_link("link3", x=1.0)
                  + rz("j1", "link1", "link2", 1.0) + rz("j2", "link2", "link3", 0.0) + '</robot>')


def test_single_link_never_collides():
    m = parse_urdf('<robot name="one">' + sphere_link("a") + '</robot>')
    assert self_collision(m, []) == []


def test_adjacent_overlap_is_excluded():
    m = parse_urdf('<robot name="adj">' + sphere_link("a") + sphere_link("b") + rz("j", "a", "b", 0.2) + '</robot>')
    assert self_collision(m, [0.0]) == []


def test_folded_arm_reports_exactly_link1_link3():
    assert self_collision(ARM3, [0.0, 0.0]) == []
    pairs = self_collision(ARM3, [0.0, math.pi])
    assert pairs == [("link1", "link3")]
    T = link_transforms(ARM3, np.array([[0.0, math.pi]]))
    offset = Pose.from_xyz_rpy((1.0, 0.0, 0.0)).as_matrix()
    oracle = pair_distance(Shape.sphere(0.3), T["link1"][0], Shape.sphere(0.3), T["link3"][0] @ offset)
    assert oracle.signed_distance == pytest.approx(-0.6, abs=1e-12)
    assert self_collision(ARM3, [0.0, math.pi], ignore_pairs={("link3", "link1")}) == []


def test_accepted_configurations_have_nonnegative_distances(pepper):
    checker = SelfCollisionChecker(pepper)
    rng = np.random.default_rng(2)
    Q = rng.uniform(pepper.lower_limits, pepper.upper_limits, size=(300, pepper.dof))
    mats = link_transforms(pepper, Q)
    mask = checker.batch_mask(mats)
    assert mask.any() and not mask.all()
    for s in np.flatnonzero(~mask)[:60]:
        for i, j in checker.swept_pairs + checker.general_pairs:
            la, sa, Ta = checker.shapes[i]
            lb, sb, Tb = checker.shapes[j]
            d = pair_distance(sa, mats[la][s] @ Ta, sb, mats[lb][s] @ Tb).signed_distance
            assert d >= 0.0


def test_batch_paths_agree(pepper, nao):
    for model, n in ((pepper, 400), (nao, 60)):
        checker = SelfCollisionChecker(model)
        rng = np.random.default_rng(4)
        Q = rng.uniform(model.lower_limits, model.upper_limits, size=(n, model.dof))
        mats = link_transforms(model, Q)
        pruned = checker.colliding_pairs_batch(mats, broadphase=True)
        full = checker.colliding_pairs_batch(mats, broadphase=False)
        assert pruned == full
        np.testing.assert_array_equal(checker.batch_mask(mats), np.array([bool(p) for p in pruned]))


def test_bundled_postures_are_collision_free(pepper, nao):
    for model in (pepper, nao):
        for name in model.config.postures:
            assert self_collision(model, model.posture_vector(name)) == [], (model.name, name)


# -- world collision -------------------------------------------------------


def test_world_collision_against_table(two_link):
    inst = Instance(1, InstanceConfig(ground_plane=False))
    rid = inst.spawn_robot(two_link)
    assert world_collision(inst, rid, {"tip"}) == []
    assert world_collision(inst, rid, set()) == []
    tip = inst.robot_link_transforms(rid)["tip"][:3, 3]
    r = two_link.link_map["tip"].collisions[0].shape.radius
    # table top sits 0.02 inside the tip sphere
    inst.add_static_body(Shape.box(0.5, 0.5, 0.1), at(tip[0], tip[1], tip[2] - r - 0.1 + 0.02))
    hits = world_collision(inst, rid, {"tip"})
    assert len(hits) == 1
    assert hits[0].link == "tip" and hits[0].other == "static:0"
    assert hits[0].contact.signed_distance == pytest.approx(-0.02, abs=1e-6)
    with pytest.raises(UnknownEntityError):
        world_collision(inst, rid, {"nope"})
    with pytest.raises(UnknownEntityError):
        world_collision(inst, 42, {"tip"})


# -- rays ---------------------------------------------------------------


def test_ray_examples():
    world = World([Body(Shape.sphere(0.5), at(2, 0, 0.5).as_matrix(), "ball")])
    hit = ray_cast(world, [0, 0, 0.5], [1, 0, 0], 10.0)
    assert hit.distance == pytest.approx(1.5, abs=1e-12) and hit.body_id == "ball"
    np.testing.assert_allclose(hit.hit_point, [1.5, 0, 0.5], atol=1e-12)
    ground = ray_cast(world, [0, 0, 1], [0, 0, -1], 10.0)
    assert ground.distance == pytest.approx(1.0) and ground.body_id == "ground"
    assert ray_cast(World([], ground_plane=True), [0, 0, 1], [1, 0, 0], 5.0) is None
    assert ray_cast(world, [0, 0, 0.5], [1, 0, 0], 1.0) is None


def test_ray_errors():
    world = World([])
    with pytest.raises(InvalidParamsError):
        ray_cast(world, [0, 0, 1], [0, 0, 0], 1.0)
    with pytest.raises(InvalidParamsError):
        ray_cast(world, [0, 0, 1], [0, 0, 2], 1.0)
    with pytest.raises(InvalidParamsError):
        ray_cast(world, [0, 0, 1], [0, 0, 1], 0.0)


def test_ray_from_inside_reports_exit():
    world = World([Body(Shape.box(1, 1, 1), np.eye(4), "box")], ground_plane=False)
    assert ray_cast(world, [0, 0, 0], [1, 0, 0], 5.0).distance == pytest.approx(1.0)


def test_ray_owner_exclusion():
    world = World([Body(Shape.sphere(0.5), at(2).as_matrix(), "robot:1:hand", owner=1)], ground_plane=False)
    assert ray_cast(world, [0, 0, 0], [1, 0, 0], 5.0).body_id == "robot:1:hand"
    assert ray_cast(world, [0, 0, 0], [1, 0, 0], 5.0, exclude_owner=1) is None
