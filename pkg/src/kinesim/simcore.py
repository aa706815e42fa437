"""Simulation instances: lifecycle, fixed-timestep clock, joint and base controllers.

Joints follow a constant-speed ramp clamped at the target. The mobile base is
holonomic: velocity commands integrate the body-frame planar twist in closed
form, position commands translate in a straight line while rotating along the
shortest arc. Odometry is the true base pose.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .collision.shapes import Shape
from .collision.world import Body, World, contacts_against, world_contacts
from .errors import InvalidParamsError, SpawnCollisionError, UnknownEntityError
from .kinematics import link_transforms
from .transforms import Pose, homogeneous, rot_z
from .urdf import RobotModel

DEFAULT_DT = 1.0 / 240.0
DEFAULT_LINEAR_CAP = 0.35
DEFAULT_ANGULAR_CAP = 1.0
ARRIVAL_SLACK = 1e-12
JOINT_CONTROLLER = "constant_speed_ramp"  # no acceleration profile
GOTO_TOL = 1e-6


def normalize_angle(a: float) -> float:
    """Wrap into (-pi, pi]."""
    r = math.remainder(a, 2.0 * math.pi)
    return r + 2.0 * math.pi if r <= -math.pi else r


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def as_list(self) -> list:
        return [self.x, self.y, self.theta]


@dataclass
class InstanceConfig:
    dt: float = DEFAULT_DT
    seed: int = 0
    ground_plane: bool = True
    # None: each robot uses its model's caps (or the defaults)
    base_caps: Optional[dict] = None
    static_bodies: list = field(default_factory=list)

    def __post_init__(self):
        if not (isinstance(self.dt, (int, float)) and math.isfinite(self.dt) and self.dt > 0):
            raise InvalidParamsError(f"dt must be a positive number, got {self.dt!r}")
        self.dt = float(self.dt)
        self.seed = int(self.seed)

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "InstanceConfig":
        data = dict(data or {})
        unknown = set(data) - {"dt", "seed", "ground_plane", "base_caps", "static_bodies"}
        if unknown:
            raise InvalidParamsError(f"unknown instance config keys {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "seed": self.seed,
            "ground_plane": self.ground_plane,
            "base_caps": self.base_caps,
            "static_bodies": self.static_bodies,
        }


def parse_static_body(spec: dict) -> tuple[Shape, np.ndarray]:
    """``{"shape": {"kind": "box", "dims": [...]}, "xyz": [...], "rpy": [...]}``"""
    try:
        shape = Shape.from_dict(spec["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidParamsError(f"invalid static body shape: {exc}") from None
    if not shape.valid:
        raise InvalidParamsError(f"shape dimensions must be positive: {shape.dims}")
    pose = Pose.from_xyz_rpy(spec.get("xyz", (0, 0, 0)), spec.get("rpy", (0, 0, 0)))
    return shape, pose.as_matrix()


@dataclass
class RobotState:
    robot_id: int
    model: RobotModel
    x: float
    y: float
    theta: float
    q: np.ndarray
    joint_commands: dict = field(default_factory=dict)  # joint index -> (target, speed)
    base_command: Optional[tuple] = None

    @property
    def base_transform(self) -> np.ndarray:
        return homogeneous(rot_z(self.theta), (self.x, self.y, self.model.config.base_height))

    def link_transforms(self) -> dict:
        mats = link_transforms(self.model, self.q[None, :], self.base_transform)
        return {name: T[0] for name, T in mats.items()}


def _locked(method):
    @functools.wraps(method)
    def wrapper(self, *args, **kwargs):
        with self.lock:
            if self.stopped:
                raise UnknownEntityError(f"unknown instance {self.id} (stopped)")
            return method(self, *args, **kwargs)

    return wrapper


class Instance:
    """One independent simulated world. All public methods are serialized by ``lock``."""

    def __init__(self, instance_id: int, config: InstanceConfig):
        self.id = instance_id
        self.config = config
        self.lock = threading.RLock()
        self.stopped = False
        self._init_state()

    def _init_state(self):
        self.step_count = 0
        self.robots: dict[int, RobotState] = {}
        self.next_robot_id = 1
        self.static_bodies = [parse_static_body(s) for s in self.config.static_bodies]
        self.rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.config.seed)))

    @property
    def dt(self) -> float:
        return self.config.dt

    @property
    def clock(self) -> float:
        return self.step_count * self.config.dt

    # -- lifecycle ---------------------------------------------------------

    @_locked
    def reset(self):
        self._init_state()

    def _robot(self, robot_id) -> RobotState:
        try:
            return self.robots[robot_id]
        except (KeyError, TypeError):
            raise UnknownEntityError(f"unknown robot {robot_id}") from None

    def _bodies_for(self, robot: RobotState) -> list:
        out = []
        for name, T in robot.link_transforms().items():
            for k, col in enumerate(robot.model.link_map[name].collisions):
                suffix = f"#{k}" if k else ""
                out.append(Body(col.shape, T @ col.origin.as_matrix(),
                                f"robot:{robot.robot_id}:{name}{suffix}", robot.robot_id, name))
        return out

    def _snapshot(self) -> World:
        bodies = [Body(shape, T, f"static:{i}") for i, (shape, T) in enumerate(self.static_bodies)]
        for rid in sorted(self.robots):
            bodies.extend(self._bodies_for(self.robots[rid]))
        return World(bodies, self.config.ground_plane)

    @_locked
    def world_snapshot(self) -> World:
        return self._snapshot()

    @_locked
    def spawn_robot(self, model: RobotModel, base_pose=(0.0, 0.0, 0.0)) -> int:
        pose = base_pose if isinstance(base_pose, Pose2D) else Pose2D(*base_pose)
        if not all(math.isfinite(v) for v in pose.as_list()):
            raise InvalidParamsError("spawn pose must be finite")
        rid = self.next_robot_id
        robot = RobotState(rid, model, pose.x, pose.y, pose.theta, model.zero_configuration())
        hits = contacts_against(self._snapshot(), self._bodies_for(robot))
        if hits:
            raise SpawnCollisionError(sorted({(f"robot:{rid}:{c.link}", c.other) for c in hits}))
        self.robots[rid] = robot
        self.next_robot_id += 1
        return rid

    @_locked
    def remove_robot(self, robot_id: int):
        self._robot(robot_id)
        del self.robots[robot_id]

    @_locked
    def add_static_body(self, shape: Shape, pose) -> str:
        if not shape.valid:
            raise InvalidParamsError(f"shape dimensions must be positive: {shape.dims}")
        T = pose if isinstance(pose, np.ndarray) else pose.as_matrix()
        self.static_bodies.append((shape, np.array(T, dtype=float)))
        return f"static:{len(self.static_bodies) - 1}"

    # -- stepping ----------------------------------------------------------

    @_locked
    def step(self, n_steps: int = 1):
        if isinstance(n_steps, bool) or not isinstance(n_steps, (int, np.integer)) or n_steps < 1:
            raise InvalidParamsError(f"n_steps must be a positive integer, got {n_steps!r}")
        for _ in range(int(n_steps)):
            for rid in sorted(self.robots):
                self._step_robot(self.robots[rid])
            self.step_count += 1

    def _step_robot(self, robot: RobotState):
        dt = self.config.dt
        done = []
        for idx, (target, speed) in robot.joint_commands.items():
            cur = robot.q[idx]
            delta = target - cur
            max_step = speed * dt
            if abs(delta) <= max_step + ARRIVAL_SLACK:
                robot.q[idx] = target
                done.append(idx)
            else:
                joint = robot.model.movable_joints[idx]
                robot.q[idx] = joint.clamp(cur + math.copysign(max_step, delta))
        for idx in done:
            del robot.joint_commands[idx]
        cmd = robot.base_command
        if cmd is None:
            return
        if cmd[0] == "velocity":
            _, vx, vy, wz = cmd
            dx, dy, dth = integrate_twist(vx, vy, wz, dt)
            c, s = math.cos(robot.theta), math.sin(robot.theta)
            robot.x += c * dx - s * dy
            robot.y += s * dx + c * dy
            robot.theta = normalize_angle(robot.theta + dth)
        else:
            _, tx, ty, tth = cmd
            lin, ang = self._caps(robot)
            ex, ey = tx - robot.x, ty - robot.y
            dist = math.hypot(ex, ey)
            step = lin * dt
            if dist <= step + ARRIVAL_SLACK:
                robot.x, robot.y = tx, ty
            else:
                robot.x += ex / dist * step
                robot.y += ey / dist * step
            eth = normalize_angle(tth - robot.theta)
            if abs(eth) <= ang * dt + ARRIVAL_SLACK:
                robot.theta = tth
            else:
                robot.theta = normalize_angle(robot.theta + math.copysign(ang * dt, eth))
            if math.hypot(tx - robot.x, ty - robot.y) < GOTO_TOL and \
                    abs(normalize_angle(tth - robot.theta)) < GOTO_TOL:
                robot.base_command = None

    # -- joint control -----------------------------------------------------

    def _joint_indices(self, robot: RobotState, names) -> list:
        index = robot.model.movable_index
        out = []
        for name in names:
            if name not in index:
                raise UnknownEntityError(f"unknown joint {name!r}")
            out.append(index[name])
        return out

    @_locked
    def set_angles(self, robot_id: int, names, targets, fraction_max_speed: float):
        robot = self._robot(robot_id)
        if isinstance(names, str):
            names, targets = [names], [targets]
        names, targets = list(names), [float(t) for t in targets]
        if len(names) != len(targets):
            raise InvalidParamsError("names and targets differ in length")
        fraction = float(fraction_max_speed)
        if not 0.0 < fraction <= 1.0:
            raise InvalidParamsError(f"fraction_max_speed must lie in (0, 1], got {fraction}")
        indices = self._joint_indices(robot, names)
        commands = {}
        for name, idx, target in zip(names, indices, targets):
            joint = robot.model.movable_joints[idx]
            if not math.isfinite(target) or not joint.lower <= target <= joint.upper:
                raise InvalidParamsError(
                    f"target {target} for {name!r} outside limits [{joint.lower}, {joint.upper}]")
            commands[idx] = (target, fraction * joint.velocity_max)
        robot.joint_commands.update(commands)

    @_locked
    def get_angles(self, robot_id: int, names) -> list:
        robot = self._robot(robot_id)
        return [float(robot.q[i]) for i in self._joint_indices(robot, names)]

    @_locked
    def go_to_posture(self, robot_id: int, posture: str, fraction_max_speed: float):
        robot = self._robot(robot_id)
        q = robot.model.posture_vector(posture)
        names = [j.name for j in robot.model.movable_joints]
        self.set_angles(robot_id, names, q, fraction_max_speed)

    @_locked
    def joint_commands_done(self, robot_id: int) -> bool:
        return not self._robot(robot_id).joint_commands

    # -- base control ------------------------------------------------------

    def _caps(self, robot: RobotState) -> tuple[float, float]:
        caps = self.config.base_caps or robot.model.config.base_caps or {}
        return float(caps.get("linear", DEFAULT_LINEAR_CAP)), float(caps.get("angular", DEFAULT_ANGULAR_CAP))

    @_locked
    def move(self, robot_id: int, vx: float, vy: float, wz: float):
        robot = self._robot(robot_id)
        vx, vy, wz = float(vx), float(vy), float(wz)
        if not all(math.isfinite(v) for v in (vx, vy, wz)):
            raise InvalidParamsError("velocities must be finite")
        lin, ang = self._caps(robot)
        if math.hypot(vx, vy) > lin + 1e-12 or abs(wz) > ang + 1e-12:
            raise InvalidParamsError(
                f"speed cap exceeded: |v|={math.hypot(vx, vy):.6g} (cap {lin}), |wz|={abs(wz):.6g} (cap {ang})")
        robot.base_command = None if vx == vy == wz == 0.0 else ("velocity", vx, vy, wz)

    @_locked
    def move_to(self, robot_id: int, x: float, y: float, theta: float):
        robot = self._robot(robot_id)
        x, y, theta = float(x), float(y), float(theta)
        if not all(math.isfinite(v) for v in (x, y, theta)):
            raise InvalidParamsError("target pose must be finite")
        robot.base_command = ("goto", x, y, normalize_angle(theta))

    @_locked
    def base_command_done(self, robot_id: int) -> bool:
        cmd = self._robot(robot_id).base_command
        return cmd is None or cmd[0] != "goto"

    @_locked
    def get_odometry(self, robot_id: int) -> Pose2D:
        robot = self._robot(robot_id)
        return Pose2D(robot.x, robot.y, robot.theta)

    # -- queries -----------------------------------------------------------

    @_locked
    def robot_link_transforms(self, robot_id: int) -> dict:
        return self._robot(robot_id).link_transforms()

    @_locked
    def robot_model(self, robot_id: int) -> RobotModel:
        return self._robot(robot_id).model

    @_locked
    def world_collision(self, robot_id: int, links) -> list:
        self._robot(robot_id)
        return world_contacts(self._snapshot(), robot_id, links)

    @_locked
    def random_configuration(self, robot_id: int) -> np.ndarray:
        """Uniform draw within joint limits from this instance's stream."""
        model = self._robot(robot_id).model
        lo = np.where(np.isfinite(model.lower_limits), model.lower_limits, -math.pi)
        hi = np.where(np.isfinite(model.upper_limits), model.upper_limits, math.pi)
        return self.rng.uniform(lo, hi)

    @_locked
    def state_dict(self) -> dict:
        def fx(v):
            return float(v).hex()

        robots = {}
        for rid in sorted(self.robots):
            r = self.robots[rid]
            robots[str(rid)] = {
                "model": r.model.source_sha256,
                "base": [fx(r.x), fx(r.y), fx(r.theta)],
                "q": [fx(v) for v in r.q],
                "joint_commands": {str(i): [fx(t), fx(s)] for i, (t, s) in sorted(r.joint_commands.items())},
                "base_command": None if r.base_command is None
                else [r.base_command[0]] + [fx(v) for v in r.base_command[1:]],
            }
        return {
            "dt": fx(self.config.dt),
            "step_count": self.step_count,
            "seed": self.config.seed,
            "ground_plane": self.config.ground_plane,
            "next_robot_id": self.next_robot_id,
            "static_bodies": [[s.kind, [fx(d) for d in s.dims], [fx(v) for v in T.reshape(-1)]]
                              for s, T in self.static_bodies],
            "robots": robots,
        }

    def digest(self) -> str:
        """SHA-256 over the bit-exact instance state."""
        blob = json.dumps(self.state_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def integrate_twist(vx: float, vy: float, wz: float, dt: float) -> tuple[float, float, float]:
    """Body-frame displacement after holding a planar twist for ``dt`` (exact)."""
    th = wz * dt
    if abs(th) < 1e-9:
        # series of sin(th)/th and (1 - cos th)/th
        a = 1.0 - th * th / 6.0
        b = th / 2.0 - th ** 3 / 24.0
    else:
        a = math.sin(th) / th
        b = (1.0 - math.cos(th)) / th
    dx = (a * vx - b * vy) * dt
    dy = (b * vx + a * vy) * dt
    return dx, dy, th


class Registry:
    """Thread-safe table of live instances with atomic id allocation."""

    def __init__(self):
        self._lock = threading.Lock()
        self._instances: dict[int, Instance] = {}
        self._next_id = 1

    def create_instance(self, config=None) -> int:
        if not isinstance(config, InstanceConfig):
            config = InstanceConfig.from_dict(config)
        for spec in config.static_bodies:
            parse_static_body(spec)
        with self._lock:
            iid = self._next_id
            self._next_id += 1
            self._instances[iid] = Instance(iid, config)
        return iid

    def get(self, instance_id) -> Instance:
        with self._lock:
            try:
                return self._instances[instance_id]
            except (KeyError, TypeError):
                raise UnknownEntityError(f"unknown instance {instance_id}") from None

    def reset_instance(self, instance_id):
        self.get(instance_id).reset()

    def stop_instance(self, instance_id):
        with self._lock:
            inst = self._instances.pop(instance_id, None)
        if inst is None:
            raise UnknownEntityError(f"unknown instance {instance_id}")
        with inst.lock:
            inst.stopped = True

    def ids(self) -> list:
        with self._lock:
            return sorted(self._instances)

    def __contains__(self, instance_id):
        with self._lock:
            return instance_id in self._instances
