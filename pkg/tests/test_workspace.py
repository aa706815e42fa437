import csv

import numpy as np
import pytest

from kinesim import workspace as ws
from kinesim.collision import self_collision
from kinesim.errors import (
    DegenerateCloudError,
    InvalidParamsError,
    InvalidStateError,
    KinesimError,
    UnsatisfiableSamplingError,
)
from kinesim.kinematics import chain_fk, manipulability
from kinesim.urdf import extract_chain, parse_urdf

RIGHT = ("Tibia", "r_gripper")
LEFT = ("Tibia", "l_gripper")


def test_counts_and_determinism(pepper):
    a = ws.sample_workspace(pepper, RIGHT, 30, 4, seed=7)
    b = ws.sample_workspace(pepper, RIGHT, 30, 4, seed=7)
    assert len(a) == 120
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.w_raw, b.w_raw)
    c = ws.sample_workspace(pepper, RIGHT, 30, 4, seed=8)
    assert not np.array_equal(a.q, c.q)


def test_instances_are_independent_streams(pepper):
    """Instance i's samples do not depend on how many instances run."""
    four = ws.sample_workspace(pepper, RIGHT, 25, 4, seed=3)
    two = ws.sample_workspace(pepper, RIGHT, 25, 2, seed=3)
    np.testing.assert_array_equal(four.q[:50], two.q)


def test_one_r_arm_never_rejects(two_link):
    cloud = ws.sample_workspace(two_link, ("base", "tip"), 5, 1, seed=0)
    assert len(cloud) == 5
    assert cloud.provenance["rejections"] == 0


def test_samples_satisfy_contract(pepper):
    cloud = ws.sample_workspace(pepper, RIGHT, 40, 3, seed=1)
    chain = extract_chain(pepper, *RIGHT)
    stand = pepper.posture_vector("Stand")
    cols = [pepper.movable_index[n] for n in chain.joint_names]
    for p, q, w in zip(cloud.positions[:40], cloud.q[:40], cloud.w_raw[:40]):
        assert np.all(q >= chain.lower) and np.all(q <= chain.upper)
        np.testing.assert_array_equal(chain_fk(chain, q).translation, p)
        assert w == pytest.approx(manipulability(chain, q), rel=1e-12)
        full = stand.copy()
        full[cols] = q
        assert self_collision(pepper, full) == []


def test_audit_replays_rejections(pepper):
    cloud = ws.sample_workspace(pepper, RIGHT, 200, 2, seed=4, audit=True)
    assert len(cloud.rejected_q) == cloud.provenance["rejections"] > 0
    chain = extract_chain(pepper, *RIGHT)
    cols = [pepper.movable_index[n] for n in chain.joint_names]
    for q in cloud.rejected_q:
        full = pepper.posture_vector("Stand")
        full[cols] = q
        assert self_collision(pepper, full) != []
    report = ws.audit_cloud(pepper, cloud)
    assert report.ok and report.checked == 400
    assert report.max_position_error == 0.0 and report.max_w_error == 0.0


def test_disabling_collision_check_keeps_rejected_draws(pepper):
    checked = ws.sample_workspace(pepper, RIGHT, 100, 1, seed=2, audit=True)
    unchecked = ws.sample_workspace(pepper, RIGHT, 100 + len(checked.rejected_q), 1, seed=2,
                                    check_self_collision=False)
    raw_rows = {tuple(q) for q in unchecked.q}
    assert {tuple(q) for q in checked.q} <= raw_rows
    assert {tuple(q) for q in checked.rejected_q} <= raw_rows


def test_input_errors(pepper, two_link):
    with pytest.raises(InvalidParamsError):
        ws.sample_workspace(pepper, ("Torso", "Torso"), 5, 1, seed=0)
    with pytest.raises(InvalidParamsError):
        ws.sample_workspace(pepper, RIGHT, 0, 1, seed=0)
    with pytest.raises(InvalidParamsError):
        ws.sample_workspace(pepper, RIGHT, 5, -1, seed=0)
    with pytest.raises(InvalidParamsError):
        ws.sample_workspace(pepper, RIGHT, 5, 1, seed=0, mode="bogus")


def test_unsatisfiable_chain():
    # two overlapping spheres on non-adjacent links, whatever the joint does
    model = parse_urdf("""<robot name="stuck">
      <link name="a"><collision><geometry><sphere radius="0.5"/></geometry></collision></link>
      <link name="b"/>
      <link name="c"><collision><geometry><sphere radius="0.5"/></geometry></collision></link>
      <joint name="j" type="revolute"><parent link="a"/><child link="b"/><axis xyz="0 0 1"/>
        <limit lower="-1" upper="1" velocity="1" effort="1"/></joint>
      <joint name="f" type="fixed"><parent link="b"/><child link="c"/></joint></robot>""")
    with pytest.raises(UnsatisfiableSamplingError):
        ws.sample_workspace(model, ("a", "c"), 3, 1, seed=0, posture=None, rejection_cap=500)


def test_normalize(pepper):
    cloud = ws.normalize_workspace(ws.sample_workspace(pepper, RIGHT, 50, 2, seed=0))
    assert cloud.w_norm.max() == 1.0
    assert np.all(cloud.w_norm > 0) and np.all(cloud.w_norm <= 1.0)
    assert cloud.provenance["normalization"] == "per_chain"
    one = ws.sample_workspace(pepper, RIGHT, 1, 1, seed=0)
    assert ws.normalize_workspace(one).w_norm[0] == 1.0


def test_normalize_errors(pepper):
    cloud = ws.sample_workspace(pepper, RIGHT, 3, 1, seed=0)
    empty = ws.WorkspaceCloud(*RIGHT, "full_6", cloud.joint_names, cloud.positions[:0], cloud.q[:0],
                              cloud.w_raw[:0], dict(cloud.provenance))
    with pytest.raises(DegenerateCloudError):
        ws.normalize_workspace(empty)
    zeros = ws.WorkspaceCloud(*RIGHT, "full_6", cloud.joint_names, cloud.positions, cloud.q,
                              np.zeros(3), dict(cloud.provenance))
    with pytest.raises(DegenerateCloudError):
        ws.normalize_workspace(zeros)


def test_joint_normalization(pepper):
    r = ws.sample_workspace(pepper, RIGHT, 50, 2, seed=0)
    l = ws.sample_workspace(pepper, LEFT, 50, 2, seed=0)
    nr, nl = ws.normalize_jointly([r, l])
    assert max(nr.w_norm.max(), nl.w_norm.max()) == 1.0
    assert min(nr.w_norm.max(), nl.w_norm.max()) < 1.0
    assert nr.provenance["normalization"] == "joint"


def test_merge(pepper):
    parts = [ws.sample_workspace(pepper, RIGHT, 20, 1, seed=s) for s in range(3)]
    merged = ws.merge_clouds(parts)
    assert len(merged) == 60
    assert [p["seed"] for p in merged.parts] == [0, 1, 2]
    assert merged.provenance["seed"] == [0, 1, 2]
    assert ws.merge_clouds(parts[:1]) is parts[0]
    with pytest.raises(InvalidParamsError):
        ws.merge_clouds([parts[0], ws.sample_workspace(pepper, LEFT, 5, 1, seed=0)])
    with pytest.raises(InvalidParamsError):
        ws.merge_clouds([parts[0], ws.sample_workspace(pepper, RIGHT, 5, 1, seed=0, mode="pos3")])
    with pytest.raises(InvalidStateError):
        ws.merge_clouds([ws.normalize_workspace(parts[0]), parts[1]])


def test_ply_colors_and_header(pepper, tmp_path):
    cloud = ws.normalize_workspace(ws.sample_workspace(pepper, RIGHT, 50, 2, seed=0))
    path = ws.export_cloud(cloud, "ply", tmp_path / "c.ply")
    data = ws.read_ply(path)
    assert len(data["xyz"]) == 100
    np.testing.assert_array_equal(data["xyz"], cloud.positions)
    top, bottom = np.argmax(cloud.w_norm), np.argmin(cloud.w_norm)
    assert tuple(data["rgb"][top]) == (0, 255, 0)
    assert tuple(data["rgb"][bottom]) == (255, 0, 0)
    for key in ws.PROVENANCE_KEYS:
        assert key in data["comments"]
    assert data["comments"]["chain"] == "Tibia,r_gripper"
    assert data["comments"]["mode"] == "full_6"


def test_colors_are_linear():
    rgb = ws.manipulability_colors(np.array([0.5, 0.75, 1.0]))
    np.testing.assert_array_equal(rgb, [[255, 0, 0], [128, 128, 0], [0, 255, 0]])
    np.testing.assert_array_equal(ws.manipulability_colors(np.array([1.0])), [[0, 255, 0]])


def test_csv_layout(pepper, tmp_path):
    cloud = ws.normalize_workspace(ws.sample_workspace(pepper, RIGHT, 10, 2, seed=0))
    path = ws.export_cloud(cloud, "csv", tmp_path / "c.csv")
    lines = path.read_text().splitlines()
    body = [l for l in lines if not l.startswith("#")]
    assert len(body) == len(cloud) + 1
    header = body[0].split(",")
    assert header == ["x", "y", "z"] + [f"q{i}" for i in range(1, 9)] + ["w_raw", "w_norm"]
    rows = np.array(list(csv.reader(body[1:])), dtype=float)
    np.testing.assert_array_equal(rows[:, :3], cloud.positions)
    np.testing.assert_array_equal(rows[:, -1], cloud.w_norm)


def test_export_errors(pepper, tmp_path):
    raw = ws.sample_workspace(pepper, RIGHT, 3, 1, seed=0)
    with pytest.raises(InvalidStateError):
        ws.export_cloud(raw, "ply", tmp_path / "x.ply")
    cloud = ws.normalize_workspace(raw)
    with pytest.raises(KinesimError):
        ws.export_cloud(cloud, "ply", tmp_path / "missing" / "x.ply")
    with pytest.raises(InvalidParamsError):
        ws.export_cloud(cloud, "obj", tmp_path / "x.obj")


def test_workers_do_not_change_output(pepper):
    base = ws.ply_text(ws.normalize_workspace(ws.sample_workspace(pepper, RIGHT, 30, 5, seed=11)))
    for workers in (2, 5):
        cloud = ws.sample_workspace(pepper, RIGHT, 30, 5, seed=11, workers=workers)
        assert ws.ply_text(ws.normalize_workspace(cloud)) == base
