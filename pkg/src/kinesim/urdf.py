"""URDF parsing, validation and kinematic-chain extraction.

Supported subset: ``link``, ``joint`` (revolute, continuous, prismatic, fixed),
``origin``, ``axis``, ``limit``, ``inertial`` and ``collision`` with box, sphere,
cylinder and capsule primitives. A ``mesh`` collision is replaced by the capsule
declared in its ``capsule_approx="radius length"`` attribute.
"""

from __future__ import annotations

import hashlib
import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .collision.shapes import Shape
from .errors import ChainError, DanglingLinkError, URDFError, UnknownEntityError
from .transforms import Pose

JOINT_KINDS = ("revolute", "continuous", "prismatic", "fixed")
MOVABLE_KINDS = ("revolute", "continuous", "prismatic")
BUNDLED_MODELS = ("pepper_simple", "nao_simple", "two_link", "planar_2r")


@dataclass(frozen=True, eq=False)
class Inertial:
    mass: float
    center_of_mass: Pose
    inertia: np.ndarray


@dataclass(frozen=True, eq=False)
class CollisionShape:
    shape: Shape
    origin: Pose
    mesh_ref: Optional[str] = None


@dataclass(frozen=True, eq=False)
class Link:
    name: str
    inertial: Optional[Inertial] = None
    collisions: tuple = ()
    visual_mesh_ref: Optional[str] = None
    # mesh collisions that had no capsule_approx attribute
    skipped_meshes: tuple = ()


@dataclass(frozen=True)
class JointLimits:
    lower: Optional[float] = None
    upper: Optional[float] = None
    velocity: Optional[float] = None
    effort: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Joint:
    name: str
    kind: str
    parent: str
    child: str
    origin: Pose = field(default_factory=Pose)
    axis: tuple = (1.0, 0.0, 0.0)
    limits: Optional[JointLimits] = None

    @property
    def movable(self) -> bool:
        return self.kind != "fixed"

    @property
    def lower(self) -> float:
        if self.limits is None or self.limits.lower is None or self.kind == "continuous":
            return -math.inf
        return self.limits.lower

    @property
    def upper(self) -> float:
        if self.limits is None or self.limits.upper is None or self.kind == "continuous":
            return math.inf
        return self.limits.upper

    @property
    def velocity_max(self) -> Optional[float]:
        return None if self.limits is None else self.limits.velocity

    def clamp(self, value: float) -> float:
        return min(max(value, self.lower), self.upper)


@dataclass(frozen=True, eq=False)
class ModelConfig:
    """Sidecar data that URDF has no place for: postures, sensors, collision ignores."""

    postures: dict = field(default_factory=dict)
    ignore_pairs: frozenset = frozenset()
    lasers: dict = field(default_factory=dict)
    cameras: dict = field(default_factory=dict)
    base_height: float = 0.0
    base_caps: Optional[dict] = None

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(
            postures={k: dict(v) for k, v in data.get("postures", {}).items()},
            ignore_pairs=frozenset(frozenset(p) for p in data.get("ignore_pairs", [])),
            lasers=dict(data.get("lasers", {})),
            cameras=dict(data.get("cameras", {})),
            base_height=float(data.get("base_height", 0.0)),
            base_caps=data.get("base_caps"),
        )


@dataclass(frozen=True, eq=False)
class RobotModel:
    name: str
    links: tuple
    joints: tuple
    config: ModelConfig = field(default_factory=ModelConfig)
    source_sha256: Optional[str] = None

    @cached_property
    def link_map(self) -> dict:
        return {link.name: link for link in self.links}

    @cached_property
    def joint_map(self) -> dict:
        return {joint.name: joint for joint in self.joints}

    @cached_property
    def parent_joint(self) -> dict:
        """child link name -> joint"""
        return {joint.child: joint for joint in self.joints}

    @cached_property
    def root_link(self) -> str:
        roots = [link.name for link in self.links if link.name not in self.parent_joint]
        if len(roots) != 1:
            raise URDFError(f"model must have exactly one root link, found {roots}")
        return roots[0]

    @cached_property
    def ordered_joints(self) -> tuple:
        """Joints in parent-before-child order (breadth first from the root)."""
        children = {}
        for joint in self.joints:
            children.setdefault(joint.parent, []).append(joint)
        order, frontier = [], [self.root_link]
        while frontier:
            nxt = []
            for name in frontier:
                for joint in children.get(name, ()):
                    order.append(joint)
                    nxt.append(joint.child)
            frontier = nxt
        return tuple(order)

    @cached_property
    def movable_joints(self) -> tuple:
        """Non-fixed joints in declaration order; this is the Configuration order."""
        return tuple(j for j in self.joints if j.movable)

    @cached_property
    def movable_index(self) -> dict:
        return {j.name: i for i, j in enumerate(self.movable_joints)}

    @property
    def dof(self) -> int:
        return len(self.movable_joints)

    @cached_property
    def lower_limits(self) -> np.ndarray:
        return np.array([j.lower for j in self.movable_joints])

    @cached_property
    def upper_limits(self) -> np.ndarray:
        return np.array([j.upper for j in self.movable_joints])

    def adjacent_pairs(self) -> frozenset:
        return frozenset(frozenset((j.parent, j.child)) for j in self.joints)

    def excluded_pairs(self) -> frozenset:
        return self.adjacent_pairs() | self.config.ignore_pairs

    def is_ancestor(self, ancestor: str, link: str) -> bool:
        while link != ancestor:
            joint = self.parent_joint.get(link)
            if joint is None:
                return False
            link = joint.parent
        return True

    def zero_configuration(self) -> np.ndarray:
        return np.array([j.clamp(0.0) for j in self.movable_joints])

    def posture_vector(self, posture: str) -> np.ndarray:
        """Full configuration for a named posture; joints it omits stay at clamped zero."""
        q = self.zero_configuration()
        if posture == "StandZero" and posture not in self.config.postures:
            return q
        try:
            table = self.config.postures[posture]
        except KeyError:
            raise UnknownEntityError(f"unknown posture {posture!r}") from None
        for name, value in table.items():
            q[self.movable_index[name]] = value
        return q


# ---------------------------------------------------------------------------
# parsing


def _floats(text: Optional[str], n: int, default) -> tuple:
    if text is None:
        return tuple(default)
    parts = text.split()
    if len(parts) != n:
        raise URDFError(f"expected {n} numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _origin(elem) -> Pose:
    if elem is None:
        return Pose()
    xyz = _floats(elem.get("xyz"), 3, (0.0, 0.0, 0.0))
    rpy = _floats(elem.get("rpy"), 3, (0.0, 0.0, 0.0))
    return Pose.from_xyz_rpy(xyz, rpy)


def _geometry(geom, link_name: str):
    """Returns (Shape or None, mesh filename or None)."""
    if geom is None or len(geom) == 0:
        raise URDFError(f"link {link_name!r}: collision without geometry")
    g = geom[0]
    if g.tag == "box":
        sx, sy, sz = _floats(g.get("size"), 3, None)
        return Shape.box(sx / 2, sy / 2, sz / 2), None
    if g.tag == "sphere":
        return Shape.sphere(float(g.get("radius"))), None
    if g.tag in ("cylinder", "capsule"):
        r, length = float(g.get("radius")), float(g.get("length"))
        ctor = Shape.cylinder if g.tag == "cylinder" else Shape.capsule
        return ctor(r, length / 2), None
    if g.tag == "mesh":
        approx = g.get("capsule_approx")
        if approx is None:
            return None, g.get("filename")
        r, length = _floats(approx, 2, None)
        return Shape.capsule(r, length / 2), g.get("filename")
    raise URDFError(f"link {link_name!r}: unsupported geometry <{g.tag}>")


def _parse_link(elem) -> Link:
    name = elem.get("name")
    if not name:
        raise URDFError("link without a name")
    inertial = None
    ie = elem.find("inertial")
    if ie is not None:
        mass_e = ie.find("mass")
        mass = float(mass_e.get("value")) if mass_e is not None else 0.0
        I = np.zeros((3, 3))
        ine = ie.find("inertia")
        if ine is not None:
            g = lambda k: float(ine.get(k, 0.0))  # noqa: E731
            I = np.array(
                [
                    [g("ixx"), g("ixy"), g("ixz")],
                    [g("ixy"), g("iyy"), g("iyz")],
                    [g("ixz"), g("iyz"), g("izz")],
                ]
            )
        inertial = Inertial(mass, _origin(ie.find("origin")), I)
    collisions, skipped = [], []
    for ce in elem.findall("collision"):
        shape, mesh = _geometry(ce.find("geometry"), name)
        if shape is None:
            skipped.append(mesh)
        else:
            collisions.append(CollisionShape(shape, _origin(ce.find("origin")), mesh))
    visual_mesh = None
    for ve in elem.findall("visual"):
        m = ve.find("geometry/mesh")
        if m is not None:
            visual_mesh = m.get("filename")
            break
    return Link(name, inertial, tuple(collisions), visual_mesh, tuple(skipped))


def _parse_joint(elem) -> Joint:
    name = elem.get("name")
    kind = elem.get("type")
    if kind in ("planar", "floating"):
        raise URDFError(
            f"joint {name!r}: {kind} joints are not supported; "
            "mobile bases are driven by the simulation core"
        )
    if kind not in JOINT_KINDS:
        raise URDFError(f"joint {name!r}: unknown joint kind {kind!r}")
    parent = elem.find("parent")
    child = elem.find("child")
    if parent is None or child is None:
        raise URDFError(f"joint {name!r}: missing parent or child")
    axis = (1.0, 0.0, 0.0)
    if kind != "fixed":
        raw = np.array(_floats(elem.find("axis").get("xyz") if elem.find("axis") is not None else None,
                               3, (1.0, 0.0, 0.0)))
        norm = np.linalg.norm(raw)
        if norm == 0.0:
            raise URDFError(f"joint {name!r}: zero-length axis")
        axis = tuple(float(v) for v in raw / norm)
    limits = None
    le = elem.find("limit")
    if kind in ("revolute", "prismatic") and le is None:
        raise URDFError(f"joint {name!r}: {kind} joint requires <limit>")
    if le is not None and kind != "fixed":
        opt = lambda k: float(le.get(k)) if le.get(k) is not None else None  # noqa: E731
        if kind == "continuous":
            limits = JointLimits(velocity=opt("velocity"), effort=opt("effort"))
        else:
            limits = JointLimits(
                lower=float(le.get("lower", 0.0)),
                upper=float(le.get("upper", 0.0)),
                velocity=opt("velocity"),
                effort=opt("effort"),
            )
    return Joint(name, kind, parent.get("link"), child.get("link"), _origin(elem.find("origin")), axis, limits)


def parse_urdf(text, strict: bool = True, config: Optional[ModelConfig] = None) -> RobotModel:
    """Parse a URDF document into a :class:`RobotModel`.

    With ``strict`` (the default) any error-severity validation finding raises
    :class:`URDFError`; pass ``strict=False`` to get the model anyway and inspect
    :func:`validate_model` yourself. Structural errors (dangling links, unknown
    joint kinds, missing limits) always raise.
    """
    raw = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    try:
        root = ET.fromstring(raw)
    except ET.ParseError as exc:
        raise URDFError(f"malformed XML: {exc}") from None
    if root.tag != "robot":
        raise URDFError(f"root element must be <robot>, got <{root.tag}>")
    links = tuple(_parse_link(e) for e in root.findall("link"))
    joints = tuple(_parse_joint(e) for e in root.findall("joint"))
    names = {link.name for link in links}
    for joint in joints:
        for ref in (joint.parent, joint.child):
            if ref not in names:
                raise DanglingLinkError(joint.name, ref)
    model = RobotModel(
        root.get("name", ""),
        links,
        joints,
        config or ModelConfig(),
        hashlib.sha256(raw).hexdigest(),
    )
    tree_errors = _tree_findings(model)
    if tree_errors:
        raise URDFError("; ".join(f.message for f in tree_errors))
    if strict:
        errors = [f for f in validate_model(model).findings if f.severity == "error"]
        if errors:
            raise URDFError("; ".join(f"{f.element}: {f.message}" for f in errors))
    return model


def serialize_urdf(model: RobotModel) -> str:
    """Write a model back to URDF text (full float precision)."""

    def fmt(values):
        return " ".join(repr(float(v)) for v in values)

    def origin(parent, pose: Pose):
        ET.SubElement(parent, "origin", xyz=fmt(pose.translation), rpy=fmt(pose.rpy))

    robot = ET.Element("robot", name=model.name)
    for link in model.links:
        le = ET.SubElement(robot, "link", name=link.name)
        if link.inertial is not None:
            ie = ET.SubElement(le, "inertial")
            origin(ie, link.inertial.center_of_mass)
            ET.SubElement(ie, "mass", value=repr(float(link.inertial.mass)))
            I = link.inertial.inertia
            ET.SubElement(
                ie, "inertia",
                ixx=repr(float(I[0, 0])), ixy=repr(float(I[0, 1])), ixz=repr(float(I[0, 2])),
                iyy=repr(float(I[1, 1])), iyz=repr(float(I[1, 2])), izz=repr(float(I[2, 2])),
            )
        if link.visual_mesh_ref:
            ve = ET.SubElement(le, "visual")
            ET.SubElement(ET.SubElement(ve, "geometry"), "mesh", filename=link.visual_mesh_ref)
        for col in link.collisions:
            ce = ET.SubElement(le, "collision")
            origin(ce, col.origin)
            ge = ET.SubElement(ce, "geometry")
            s = col.shape
            if col.mesh_ref is not None:
                ET.SubElement(ge, "mesh", filename=col.mesh_ref,
                              capsule_approx=fmt((s.radius, 2 * s.half_length)))
            elif s.kind == "box":
                ET.SubElement(ge, "box", size=fmt(2 * np.array(s.dims)))
            elif s.kind == "sphere":
                ET.SubElement(ge, "sphere", radius=repr(s.radius))
            else:
                ET.SubElement(ge, s.kind, radius=repr(s.radius), length=repr(2 * s.half_length))
        for mesh in link.skipped_meshes:
            ce = ET.SubElement(le, "collision")
            ET.SubElement(ET.SubElement(ce, "geometry"), "mesh", filename=mesh or "")
    for joint in model.joints:
        je = ET.SubElement(robot, "joint", name=joint.name, type=joint.kind)
        origin(je, joint.origin)
        ET.SubElement(je, "parent", link=joint.parent)
        ET.SubElement(je, "child", link=joint.child)
        if joint.movable:
            ET.SubElement(je, "axis", xyz=fmt(joint.axis))
        if joint.limits is not None:
            attrs = {}
            for key in ("lower", "upper", "velocity", "effort"):
                value = getattr(joint.limits, key)
                if value is not None:
                    attrs[key] = repr(float(value))
            ET.SubElement(je, "limit", **attrs)
    ET.indent(robot)
    return ET.tostring(robot, encoding="unicode") + "\n"


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Finding:
    severity: str
    element: str
    message: str


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(f.severity == "error" for f in self.findings)

    def to_dict(self) -> dict:
        return {"findings": [{"severity": f.severity, "element": f.element, "message": f.message}
                             for f in self.findings]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _tree_findings(model: RobotModel) -> list:
    out = []
    names = {link.name for link in model.links}
    parents = {}
    for joint in model.joints:
        if joint.child in parents:
            out.append(Finding("error", joint.child, f"link has multiple parent joints "
                                                     f"({parents[joint.child]}, {joint.name})"))
        parents[joint.child] = joint.name
    roots = sorted(names - {j.child for j in model.joints})
    if len(roots) != 1:
        out.append(Finding("error", model.name or "robot",
                           f"expected a single root link, found {len(roots)}: {roots}"))
    # walk up from every link; a cycle never reaches a root
    by_child = {j.child: j.parent for j in model.joints}
    for name in sorted(names):
        seen = {name}
        cur = name
        while cur in by_child:
            cur = by_child[cur]
            if cur in seen:
                out.append(Finding("error", name, "link is part of a cycle"))
                break
            seen.add(cur)
        else:
            if len(roots) == 1 and cur != roots[0]:
                out.append(Finding("error", name, "link is not reachable from the root"))
    return out


def validate_model(model: RobotModel) -> ValidationReport:
    """Check every model invariant; never raises."""
    findings = []
    seen = set()
    for link in model.links:
        if link.name in seen:
            findings.append(Finding("error", link.name, "duplicate link name"))
        seen.add(link.name)
        if link.inertial is not None:
            I = np.asarray(link.inertial.inertia)
            if link.inertial.mass < 0:
                findings.append(Finding("error", link.name, f"negative mass {link.inertial.mass}"))
            if np.max(np.abs(I - I.T)) > 1e-12:
                findings.append(Finding("error", link.name, "inertia matrix is not symmetric"))
            if link.inertial.mass == 0 and np.any(I != 0):
                findings.append(Finding("warning", link.name, "zero mass with nonzero inertia"))
        for col in link.collisions:
            if not col.shape.valid:
                findings.append(Finding("error", link.name,
                                        f"{col.shape.kind} has non-positive dimensions {col.shape.dims}"))
        for mesh in link.skipped_meshes:
            findings.append(Finding("warning", link.name,
                                    f"mesh collision {mesh!r} has no capsule_approx; ignored"))
    seen = set()
    names = {link.name for link in model.links}
    for joint in model.joints:
        if joint.name in seen:
            findings.append(Finding("error", joint.name, "duplicate joint name"))
        seen.add(joint.name)
        if joint.kind not in JOINT_KINDS:
            findings.append(Finding("error", joint.name, f"unknown joint kind {joint.kind!r}"))
        for ref in (joint.parent, joint.child):
            if ref not in names:
                findings.append(Finding("error", joint.name, f"references undeclared link {ref!r}"))
        if not joint.movable:
            continue
        if abs(np.linalg.norm(joint.axis) - 1.0) > 1e-9:
            findings.append(Finding("error", joint.name, "axis is not a unit vector"))
        lim = joint.limits
        if joint.kind in ("revolute", "prismatic"):
            if lim is None or lim.lower is None or lim.upper is None:
                findings.append(Finding("error", joint.name, f"{joint.kind} joint without limits"))
            elif lim.lower > lim.upper:
                findings.append(Finding("error", joint.name,
                                        f"lower limit {lim.lower} exceeds upper {lim.upper}"))
        if lim is None or lim.velocity is None or not lim.velocity > 0:
            findings.append(Finding("error", joint.name, "velocity limit must be positive"))
    if all(f.severity != "error" or "undeclared" not in f.message for f in findings):
        findings.extend(_tree_findings(model))
    return ValidationReport(findings)


# ---------------------------------------------------------------------------
# chains


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """Movable joints from ``base_link`` to ``tip_link`` with fixed joints folded.

    ``pre_transforms[i]`` maps the frame after joint ``i-1``'s motion to the frame
    of joint ``i`` (fixed joints and the joint origin combined); ``tail`` maps the
    frame after the last motion to the tip link.
    """

    base_link: str
    tip_link: str
    joints: tuple
    pre_transforms: tuple
    tail: np.ndarray

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def joint_names(self) -> list:
        return [j.name for j in self.joints]

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    @cached_property
    def axes(self) -> np.ndarray:
        return np.array([j.axis for j in self.joints], dtype=float).reshape(-1, 3)

    @cached_property
    def prismatic(self) -> np.ndarray:
        return np.array([j.kind == "prismatic" for j in self.joints], dtype=bool)


def extract_chain(model: RobotModel, base_link: str, tip_link: str) -> KinematicChain:
    for name in (base_link, tip_link):
        if name not in model.link_map:
            raise UnknownEntityError(f"unknown link {name!r}")
    path = []
    cur = tip_link
    while cur != base_link:
        joint = model.parent_joint.get(cur)
        if joint is None:
            raise ChainError(f"{tip_link!r} is not a descendant of {base_link!r}")
        path.append(joint)
        cur = joint.parent
    path.reverse()
    movable, pres = [], []
    acc = np.eye(4)
    for joint in path:
        acc = acc @ joint.origin.as_matrix()
        if joint.movable:
            movable.append(joint)
            pres.append(acc)
            acc = np.eye(4)
    for T in pres:
        T.flags.writeable = False
    acc.flags.writeable = False
    return KinematicChain(base_link, tip_link, tuple(movable), tuple(pres), acc)


# ---------------------------------------------------------------------------
# loading


def _bundled_path(name: str) -> Optional[Path]:
    stem = Path(name).name
    if stem.endswith(".urdf"):
        stem = stem[:-5]
    if stem not in BUNDLED_MODELS:
        return None
    return Path(str(resources.files("kinesim") / "models" / f"{stem}.urdf"))


def resolve_model_path(source) -> Path:
    path = Path(source)
    if path.is_file():
        return path
    bundled = _bundled_path(str(source))
    if bundled is None or not bundled.is_file():
        raise UnknownEntityError(f"no URDF file or bundled model named {str(source)!r}")
    return bundled


def load_model(source, strict: bool = True) -> RobotModel:
    """Load a URDF from a path or bundled model name, with its JSON sidecar if present."""
    path = resolve_model_path(source)
    sidecar = path.with_suffix(".json")
    config = ModelConfig.from_dict(json.loads(sidecar.read_text())) if sidecar.is_file() else None
    return parse_urdf(path.read_bytes(), strict=strict, config=config)
