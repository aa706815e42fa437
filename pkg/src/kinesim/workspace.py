"""Manipulability workspace sampling.

Each simulated instance draws chain configurations uniformly within joint
limits from its own counter-based stream keyed by ``(seed, instance index)``,
rejects self-colliding ones, and records the tip position and manipulability
of every accepted sample until it reaches its quota. Instance results are
concatenated in index order, then normalized by the maximum manipulability.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .collision.world import SelfCollisionChecker
from .errors import (
    DegenerateCloudError,
    InvalidParamsError,
    InvalidStateError,
    KinesimError,
    UnsatisfiableSamplingError,
)
from .kinematics import canonical_mode, chain_fk_batch, jacobian_batch, link_transforms, manipulability_from_jacobians
from .urdf import KinematicChain, RobotModel, extract_chain

ADJACENCY_RULE = "joint-adjacent pairs + model ignore list"
REJECTION_CAP = 10**6
BATCH = 512


@dataclass(frozen=True)
class WorkspaceSample:
    position: np.ndarray
    q: np.ndarray
    w_raw: float
    w_norm: Optional[float] = None


@dataclass(eq=False)
class WorkspaceCloud:
    base_link: str
    tip_link: str
    mode: str
    joint_names: list
    positions: np.ndarray
    q: np.ndarray
    w_raw: np.ndarray
    provenance: dict
    parts: list = field(default_factory=list)
    w_norm: Optional[np.ndarray] = None
    rejected_q: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.w_raw)

    @property
    def chain_id(self) -> tuple:
        return self.base_link, self.tip_link

    @property
    def normalized(self) -> bool:
        return self.w_norm is not None

    @property
    def samples(self) -> list:
        wn = self.w_norm if self.w_norm is not None else [None] * len(self)
        return [WorkspaceSample(p, q, float(w), None if n is None else float(n))
                for p, q, w, n in zip(self.positions, self.q, self.w_raw, wn)]


def instance_stream(seed: int, index: int) -> np.random.Generator:
    """Philox stream for one instance; independent of scheduling and worker count."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def _resolve_chain(model: RobotModel, chain) -> KinematicChain:
    if isinstance(chain, KinematicChain):
        return chain
    if isinstance(chain, str):
        chain = chain.split(",")
    base, tip = chain
    return extract_chain(model, base, tip)


def _base_configuration(model: RobotModel, posture: Optional[str]) -> np.ndarray:
    if posture is None:
        return model.zero_configuration()
    if posture == "Stand" and "Stand" not in model.config.postures:
        return model.zero_configuration()
    return model.posture_vector(posture)


@dataclass
class _InstanceResult:
    positions: np.ndarray
    q: np.ndarray
    w: np.ndarray
    rejections: int
    rejected: Optional[np.ndarray]


def _sample_instance(model, chain, mode, target, seed, index, base_q, checker, rejection_cap, audit):
    rng = instance_stream(seed, index)
    cols = [model.movable_index[name] for name in chain.joint_names]
    lo, hi = chain.lower, chain.upper
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        lo = np.where(np.isfinite(lo), lo, -np.pi)
        hi = np.where(np.isfinite(hi), hi, np.pi)
    got_q, rejected = [], []
    n_got = rejections = streak = 0
    while n_got < target:
        # draws come off the stream in order, so batch sizing never changes the samples
        size = min(BATCH, 2 * (target - n_got) + 8)
        Qc = rng.uniform(lo, hi, size=(size, chain.dof))
        if checker is not None:
            Q = np.tile(base_q, (size, 1))
            Q[:, cols] = Qc
            bad = checker.batch_mask(link_transforms(model, Q))
        else:
            bad = np.zeros(size, dtype=bool)
        for row in range(size):
            if bad[row]:
                rejections += 1
                streak += 1
                if audit:
                    rejected.append(Qc[row])
                if streak >= rejection_cap:
                    raise UnsatisfiableSamplingError(
                        f"instance {index}: {streak} consecutive self-colliding draws; chain looks infeasible")
                continue
            streak = 0
            got_q.append(Qc[row])
            n_got += 1
            if n_got == target:
                break
    Qa = np.array(got_q).reshape(-1, chain.dof)
    J, tip = jacobian_batch(chain, Qa)
    w = manipulability_from_jacobians(J, mode)
    return _InstanceResult(tip[:, :3, 3].copy(), Qa, w, rejections,
                           np.array(rejected).reshape(-1, chain.dof) if audit else None)


def sample_workspace(model: RobotModel, chain, per_instance_target: int, n_instances: int, seed: int,
                     mode: str = "full_6", workers: int = 1, check_self_collision: bool = True,
                     posture: Optional[str] = "Stand", rejection_cap: int = REJECTION_CAP,
                     audit: bool = False, ignore_pairs=()) -> WorkspaceCloud:
    """Raw (unnormalized) workspace cloud of ``n_instances * per_instance_target`` samples.

    Non-chain joints are held at ``posture`` during the self-collision check.
    ``workers`` only changes how many instances run at once; output does not
    depend on it. With ``audit`` every rejected draw is kept in ``rejected_q``.
    """
    chain = _resolve_chain(model, chain)
    mode = canonical_mode(mode)
    if chain.dof == 0:
        raise InvalidParamsError(f"chain {chain.base_link}->{chain.tip_link} has no movable joints")
    for name, value in (("per_instance_target", per_instance_target), ("n_instances", n_instances)):
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
            raise InvalidParamsError(f"{name} must be a positive integer, got {value!r}")
    if workers < 1:
        raise InvalidParamsError("workers must be >= 1")
    base_q = _base_configuration(model, posture)
    checker = SelfCollisionChecker(model, ignore_pairs) if check_self_collision else None

    def run(index):
        return _sample_instance(model, chain, mode, per_instance_target, seed, index, base_q,
                                checker, rejection_cap, audit)

    if workers == 1:
        results = [run(i) for i in range(n_instances)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(n_instances)))

    parts = []
    for index, res in enumerate(results):
        prov = _provenance(model, chain, mode, seed, 1, per_instance_target, posture, check_self_collision)
        prov["instance_index"] = index
        prov["rejections"] = res.rejections
        parts.append(WorkspaceCloud(chain.base_link, chain.tip_link, mode, chain.joint_names,
                                    res.positions, res.q, res.w, prov, [prov], None, res.rejected))
    return merge_clouds(parts)


def _provenance(model, chain, mode, seed, n_instances, per_instance, posture, checked) -> dict:
    return {
        "seed": int(seed),
        "n_instances": int(n_instances),
        "per_instance_target": int(per_instance),
        "chain": f"{chain.base_link},{chain.tip_link}",
        "mode": mode,
        "model_sha256": model.source_sha256 or "",
        "adjacency_rule": ADJACENCY_RULE if checked else "self-collision check disabled",
        "version": __version__,
        "sampling": "uniform per joint within limits; Philox stream per (seed, instance)",
        "non_chain_posture": posture or "zeros",
        "normalization": "none",
    }


def merge_clouds(clouds) -> WorkspaceCloud:
    """Concatenate clouds in the given order. Normalize only after merging."""
    clouds = list(clouds)
    if not clouds:
        raise InvalidParamsError("nothing to merge")
    first = clouds[0]
    for c in clouds[1:]:
        if c.chain_id != first.chain_id:
            raise InvalidParamsError(f"cannot merge chain {c.chain_id} into {first.chain_id}")
        if c.mode != first.mode:
            raise InvalidParamsError(f"cannot merge mode {c.mode} into {first.mode}")
        if c.provenance.get("model_sha256") != first.provenance.get("model_sha256"):
            raise InvalidParamsError("cannot merge clouds sampled from different models")
    if len(clouds) == 1:
        return first
    if any(c.normalized for c in clouds):
        raise InvalidStateError("merge raw clouds, then normalize")
    parts = [p for c in clouds for p in c.parts]
    prov = dict(first.provenance)
    prov.pop("instance_index", None)
    seeds = sorted({p["seed"] for p in parts})
    targets = sorted({p["per_instance_target"] for p in parts})
    prov["seed"] = seeds[0] if len(seeds) == 1 else seeds
    prov["per_instance_target"] = targets[0] if len(targets) == 1 else targets
    prov["n_instances"] = sum(p["n_instances"] for p in parts)
    prov["rejections"] = sum(p.get("rejections", 0) for p in parts)
    rejected = None
    if all(c.rejected_q is not None for c in clouds):
        rejected = np.concatenate([c.rejected_q for c in clouds])
    return WorkspaceCloud(
        first.base_link, first.tip_link, first.mode, list(first.joint_names),
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.q for c in clouds]),
        np.concatenate([c.w_raw for c in clouds]),
        prov, parts, None, rejected,
    )


def _normalize_by(cloud: WorkspaceCloud, scale: float, scope: str) -> WorkspaceCloud:
    prov = dict(cloud.provenance, normalization=scope, w_raw_max=float(scale))
    return replace(cloud, w_norm=cloud.w_raw / scale, provenance=prov)


def _check_normalizable(cloud: WorkspaceCloud) -> float:
    if len(cloud) == 0:
        raise DegenerateCloudError("cannot normalize an empty cloud")
    top = float(np.max(cloud.w_raw))
    if not top > 0:
        raise DegenerateCloudError("every sample is singular (maximum manipulability is 0)")
    return top


def normalize_workspace(cloud: WorkspaceCloud) -> WorkspaceCloud:
    """w_norm = w_raw / max(w_raw); the maximum maps to exactly 1.0."""
    return _normalize_by(cloud, _check_normalizable(cloud), "per_chain")


def normalize_jointly(clouds) -> list:
    """Normalize several chains against their common maximum."""
    clouds = list(clouds)
    top = max(_check_normalizable(c) for c in clouds)
    return [_normalize_by(c, top, "joint") for c in clouds]


# ---------------------------------------------------------------------------
# audit


@dataclass
class AuditReport:
    checked: int
    limit_violations: list
    self_collisions: list
    max_position_error: float
    max_w_error: float

    @property
    def ok(self) -> bool:
        return not self.limit_violations and not self.self_collisions


def audit_cloud(model: RobotModel, cloud: WorkspaceCloud, posture: Optional[str] = "Stand",
                ignore_pairs=(), chunk: int = 2048) -> AuditReport:
    """Replay every sample through kinematics and the broad+narrow collision path."""
    chain = extract_chain(model, cloud.base_link, cloud.tip_link)
    base_q = _base_configuration(model, posture)
    cols = [model.movable_index[n] for n in chain.joint_names]
    checker = SelfCollisionChecker(model, ignore_pairs)
    limits, collisions = [], []
    pos_err = w_err = 0.0
    for start in range(0, len(cloud), chunk):
        Qc = cloud.q[start:start + chunk]
        out = (Qc < chain.lower) | (Qc > chain.upper)
        limits.extend(int(start + i) for i in np.flatnonzero(out.any(axis=1)))
        Q = np.tile(base_q, (len(Qc), 1))
        Q[:, cols] = Qc
        for i, pairs in enumerate(checker.colliding_pairs_batch(link_transforms(model, Q))):
            if pairs:
                collisions.append((start + i, pairs))
        tip = chain_fk_batch(chain, Qc)[:, :3, 3]
        pos_err = max(pos_err, float(np.max(np.abs(tip - cloud.positions[start:start + chunk]), initial=0.0)))
        J, _ = jacobian_batch(chain, Qc)
        w = manipulability_from_jacobians(J, cloud.mode)
        w_err = max(w_err, float(np.max(np.abs(w - cloud.w_raw[start:start + chunk]), initial=0.0)))
    return AuditReport(len(cloud), limits, collisions, pos_err, w_err)


# ---------------------------------------------------------------------------
# export


PROVENANCE_KEYS = ("seed", "n_instances", "per_instance_target", "chain", "mode", "model_sha256",
                   "adjacency_rule", "version")


def _header_lines(cloud: WorkspaceCloud) -> list:
    prov = cloud.provenance
    keys = list(PROVENANCE_KEYS) + sorted(k for k in prov if k not in PROVENANCE_KEYS)
    lines = []
    for key in keys:
        value = prov.get(key, "")
        if isinstance(value, list):
            value = " ".join(str(v) for v in value)
        lines.append(f"{key}: {value}")
    return lines


def manipulability_colors(w_norm: np.ndarray) -> np.ndarray:
    """Red at the minimum observed w_norm, green at 1.0, linear in between."""
    w_norm = np.asarray(w_norm, dtype=float)
    lo = float(np.min(w_norm))
    t = np.ones_like(w_norm) if lo >= 1.0 else (w_norm - lo) / (1.0 - lo)
    t = np.clip(t, 0.0, 1.0)
    rgb = np.zeros((len(w_norm), 3), dtype=np.uint8)
    rgb[:, 0] = np.rint(255.0 * (1.0 - t)).astype(np.uint8)
    rgb[:, 1] = np.rint(255.0 * t).astype(np.uint8)
    return rgb


def _require_normalized(cloud: WorkspaceCloud):
    if not cloud.normalized:
        raise InvalidStateError("cloud must be normalized before export")


def ply_text(cloud: WorkspaceCloud) -> str:
    _require_normalized(cloud)
    out = io.StringIO()
    out.write("ply\nformat ascii 1.0\n")
    for line in _header_lines(cloud):
        out.write(f"comment {line}\n")
    out.write(f"element vertex {len(cloud)}\n")
    for axis in "xyz":
        out.write(f"property double {axis}\n")
    for c in ("red", "green", "blue"):
        out.write(f"property uchar {c}\n")
    out.write("end_header\n")
    colors = manipulability_colors(cloud.w_norm)
    for p, c in zip(cloud.positions.tolist(), colors.tolist()):
        out.write(f"{p[0]!r} {p[1]!r} {p[2]!r} {c[0]} {c[1]} {c[2]}\n")
    return out.getvalue()


def csv_text(cloud: WorkspaceCloud) -> str:
    _require_normalized(cloud)
    out = io.StringIO()
    for line in _header_lines(cloud):
        out.write(f"# {line}\n")
    writer = csv.writer(out, lineterminator="\n")
    n = cloud.q.shape[1]
    writer.writerow(["x", "y", "z"] + [f"q{i + 1}" for i in range(n)] + ["w_raw", "w_norm"])
    for p, q, w, wn in zip(cloud.positions, cloud.q, cloud.w_raw, cloud.w_norm):
        writer.writerow([repr(float(v)) for v in (*p, *q, w, wn)])
    return out.getvalue()


def export_cloud(cloud: WorkspaceCloud, fmt: str, path) -> Path:
    """Write a normalized cloud as ``ply`` or ``csv``."""
    fmt = fmt.lower()
    if fmt not in ("ply", "csv"):
        raise InvalidParamsError(f"unknown export format {fmt!r}")
    text = ply_text(cloud) if fmt == "ply" else csv_text(cloud)
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise KinesimError(f"cannot write {path}: {exc.strerror}") from None
    return path


def read_ply(path) -> dict:
    """Minimal reader for the ASCII files written above (used by tests and tooling)."""
    lines = Path(path).read_text().splitlines()
    comments, count = {}, 0
    i = 0
    while lines[i] != "end_header":
        parts = lines[i].split(" ", 1)
        if parts[0] == "comment":
            key, _, value = parts[1].partition(": ")
            comments[key] = value
        elif parts[0] == "element":
            count = int(lines[i].split()[2])
        i += 1
    body = np.array([row.split() for row in lines[i + 1:i + 1 + count]], dtype=float).reshape(-1, 6)
    return {"comments": comments, "xyz": body[:, :3], "rgb": body[:, 3:].astype(int)}
