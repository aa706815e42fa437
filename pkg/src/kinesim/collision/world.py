"""World snapshots: broad phase, self-collision, world contacts and ray casts."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from ..errors import InvalidParamsError, UnknownEntityError
from .narrowphase import ContactResult, pair_distance, segment_distance
from .raycast import aabb_ray_mask, ground_ray_t, shape_ray_t
from .shapes import Shape

GROUND_ID = "ground"


@dataclass(frozen=True, eq=False)
class Body:
    shape: Shape
    transform: np.ndarray
    body_id: str
    owner: Optional[int] = None  # robot id, None for static bodies
    link: Optional[str] = None


@dataclass(frozen=True)
class RayHit:
    distance: float
    hit_point: np.ndarray
    body_id: str


@dataclass(frozen=True)
class WorldContact:
    link: str
    other: str
    contact: ContactResult

    def to_dict(self) -> dict:
        return {"link": self.link, "other": self.other, **self.contact.to_dict()}


class World:
    """Frozen set of placed shapes plus an optional ground plane at z = 0."""

    def __init__(self, bodies=(), ground_plane: bool = True):
        self.bodies = tuple(bodies)
        self.ground_plane = ground_plane

    @cached_property
    def aabbs(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.bodies:
            return np.zeros((0, 3)), np.zeros((0, 3))
        boxes = [b.shape.aabb(b.transform) for b in self.bodies]
        return np.array([lo for lo, _ in boxes]), np.array([hi for _, hi in boxes])

    def cast_rays(self, O, D, max_range: float, exclude_owner=None, broadphase: bool = True):
        """Nearest hit per ray. Returns (distances, body index) with -1 = ground, -2 = miss."""
        O = np.atleast_2d(np.asarray(O, dtype=float))
        D = np.atleast_2d(np.asarray(D, dtype=float))
        n = len(O)
        best = np.full(n, np.inf)
        which = np.full(n, -2, dtype=int)
        if self.ground_plane:
            t = ground_ray_t(O, D)
            hit = t < best
            best = np.where(hit, t, best)
            which = np.where(hit, -1, which)
        lo, hi = self.aabbs
        for i, body in enumerate(self.bodies):
            if exclude_owner is not None and body.owner == exclude_owner:
                continue
            if broadphase:
                rows = np.flatnonzero(aabb_ray_mask(lo[i], hi[i], O, D, max_range))
                if rows.size == 0:
                    continue
            else:
                rows = np.arange(n)
            t = shape_ray_t(body.shape, body.transform, O[rows], D[rows])
            better = t < best[rows]
            best[rows] = np.where(better, t, best[rows])
            which[rows] = np.where(better, i, which[rows])
        miss = best > max_range
        best[miss] = np.inf
        which[miss] = -2
        return best, which

    def body_name(self, index: int) -> Optional[str]:
        if index == -1:
            return GROUND_ID
        if index < 0:
            return None
        return self.bodies[index].body_id


def ray_cast(world: World, origin, direction, max_range: float, exclude_owner=None,
             broadphase: bool = True) -> Optional[RayHit]:
    """Nearest intersection along a unit-direction ray; None on a miss."""
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise InvalidParamsError("ray direction has zero length")
    if abs(norm - 1.0) > 1e-9:
        raise InvalidParamsError(f"ray direction must be a unit vector (norm {norm})")
    if not max_range > 0:
        raise InvalidParamsError("max_range must be positive")
    t, idx = world.cast_rays(origin[None], direction[None], max_range, exclude_owner, broadphase)
    if idx[0] == -2:
        return None
    d = float(t[0])
    return RayHit(d, origin + d * direction, world.body_name(int(idx[0])))


def _aabb_overlap(lo_a, hi_a, lo_b, hi_b) -> bool:
    return bool(np.all(lo_a <= hi_b) and np.all(lo_b <= hi_a))


def contacts_against(world: World, bodies, exclude_owner=None, broadphase: bool = True) -> list:
    """Penetrating contacts of ``bodies`` (each with a link name) against the world."""
    lo, hi = world.aabbs
    out = []
    for body in bodies:
        blo, bhi = body.shape.aabb(body.transform)
        for i, other in enumerate(world.bodies):
            if exclude_owner is not None and other.owner == exclude_owner:
                continue
            if broadphase and not _aabb_overlap(blo, bhi, lo[i], hi[i]):
                continue
            res = pair_distance(body.shape, body.transform, other.shape, other.transform)
            if res.penetrating:
                out.append(WorldContact(body.link, other.body_id, res))
    return out


def world_contacts(world: World, robot_id: int, links, broadphase: bool = True) -> list:
    """Contacts of a robot's named links against every body it does not own."""
    links = set(links)
    own = [b for b in world.bodies if b.owner == robot_id]
    if not own and links:
        raise UnknownEntityError(f"unknown robot {robot_id}")
    known = {b.link for b in own}
    unknown = links - known
    if unknown:
        raise UnknownEntityError(f"unknown or shapeless link(s) {sorted(unknown)}")
    return contacts_against(world, [b for b in own if b.link in links], robot_id, broadphase)


# ---------------------------------------------------------------------------
# self-collision


class SelfCollisionChecker:
    """Link-pair collision tests for one model with adjacency exclusion.

    Pairs directly connected by a joint are excluded, as are the model's
    configured ignore pairs and any extra ``ignore_pairs`` given here.
    """

    def __init__(self, model, ignore_pairs=()):
        self.model = model
        excluded = set(model.excluded_pairs()) | {frozenset(p) for p in ignore_pairs}
        self.shapes = []  # (link, Shape, local transform)
        for link in model.links:
            for col in link.collisions:
                self.shapes.append((link.name, col.shape, col.origin.as_matrix()))
        order = {link.name: i for i, link in enumerate(model.links)}
        shaped = [link.name for link in model.links if link.collisions]
        self.link_pairs = [
            (a, b)
            for i, a in enumerate(shaped)
            for b in shaped[i + 1:]
            if frozenset((a, b)) not in excluded
        ]
        self.link_pairs.sort(key=lambda p: (order[p[0]], order[p[1]]))
        by_link = {}
        for k, (link, shape, _) in enumerate(self.shapes):
            by_link.setdefault(link, []).append(k)
        self.by_link = by_link
        self.swept_pairs = []
        self.general_pairs = []
        for a, b in self.link_pairs:
            for i in by_link[a]:
                for j in by_link[b]:
                    target = self.swept_pairs if (self.shapes[i][1].is_swept and self.shapes[j][1].is_swept) \
                        else self.general_pairs
                    target.append((i, j))

    def candidate_mask(self, link_T: dict) -> np.ndarray:
        """AABB broad phase: (B, n_pairs) mask of link pairs whose boxes overlap."""
        B = next(iter(link_T.values())).shape[0]
        boxes = {}
        for link, ks in self.by_link.items():
            lo = np.full((B, 3), np.inf)
            hi = np.full((B, 3), -np.inf)
            for k in ks:
                _, shape, local = self.shapes[k]
                slo, shi = shape.aabb_batch(link_T[link] @ local)
                lo = np.minimum(lo, slo)
                hi = np.maximum(hi, shi)
            boxes[link] = (lo, hi)
        mask = np.empty((B, len(self.link_pairs)), dtype=bool)
        for p, (a, b) in enumerate(self.link_pairs):
            alo, ahi = boxes[a]
            blo, bhi = boxes[b]
            mask[:, p] = np.all((alo <= bhi) & (blo <= ahi), axis=1)
        return mask

    def colliding_pairs_batch(self, link_T: dict, broadphase: bool = True) -> list:
        """Per-sample lists of colliding link pairs via broad phase + exact narrow phase."""
        B = next(iter(link_T.values())).shape[0]
        if broadphase:
            mask = self.candidate_mask(link_T)
        else:
            mask = np.ones((B, len(self.link_pairs)), dtype=bool)
        out = [[] for _ in range(B)]
        for s, p in zip(*np.nonzero(mask)):
            a, b = self.link_pairs[p]
            for i in self.by_link[a]:
                Ti = link_T[a][s] @ self.shapes[i][2]
                hit = False
                for j in self.by_link[b]:
                    Tj = link_T[b][s] @ self.shapes[j][2]
                    if pair_distance(self.shapes[i][1], Ti, self.shapes[j][1], Tj).penetrating:
                        hit = True
                        break
                if hit:
                    out[s].append((a, b))
                    break
        return out

    def colliding_pairs(self, link_T: dict, broadphase: bool = True) -> list:
        """Colliding link pairs for one posed model; ``link_T`` maps link -> 4x4."""
        batch = {name: np.asarray(T)[None] for name, T in link_T.items()}
        return self.colliding_pairs_batch(batch, broadphase)[0]

    def batch_mask(self, link_T: dict) -> np.ndarray:
        """Boolean (B,) mask: True where the posed model self-collides.

        ``link_T`` maps link -> (B, 4, 4). Sphere/capsule pairs are evaluated in
        one vectorized segment-distance pass; other pairs per sample.
        """
        B = next(iter(link_T.values())).shape[0]
        hit = np.zeros(B, dtype=bool)
        if self.swept_pairs:
            ends = {}
            for k, (link, shape, local) in enumerate(self.shapes):
                if not shape.is_swept:
                    continue
                W = link_T[link] @ local
                h = shape.half_length if shape.kind == "capsule" else 0.0
                ends[k] = (W[:, :3, 3] - h * W[:, :3, 2], W[:, :3, 3] + h * W[:, :3, 2])
            I = [i for i, _ in self.swept_pairs]
            J = [j for _, j in self.swept_pairs]
            P1 = np.stack([ends[i][0] for i in I])
            Q1 = np.stack([ends[i][1] for i in I])
            P2 = np.stack([ends[j][0] for j in J])
            Q2 = np.stack([ends[j][1] for j in J])
            radii = np.array([self.shapes[i][1].margin + self.shapes[j][1].margin for i, j in self.swept_pairs])
            d, _, _ = segment_distance(P1, Q1, P2, Q2)
            hit |= np.any(d - radii[:, None] < 0.0, axis=0)
        for i, j in self.general_pairs:
            for s in np.flatnonzero(~hit):
                Ti = link_T[self.shapes[i][0]][s] @ self.shapes[i][2]
                Tj = link_T[self.shapes[j][0]][s] @ self.shapes[j][2]
                if pair_distance(self.shapes[i][1], Ti, self.shapes[j][1], Tj).penetrating:
                    hit[s] = True
        return hit


def self_collision(model, q, ignore_pairs=(), broadphase: bool = True) -> list:
    """Unordered link pairs whose shapes penetrate; empty means collision-free."""
    from ..kinematics import _as_vector, link_transforms

    values = _as_vector(model, q)
    mats = link_transforms(model, values[None, :])
    link_T = {name: T[0] for name, T in mats.items()}
    return SelfCollisionChecker(model, ignore_pairs).colliding_pairs(link_T, broadphase)
