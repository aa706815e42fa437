"""Pairwise signed distance between convex primitives.

Sphere and capsule pairs use closed-form segment distances. Any pair involving a
box or cylinder runs GJK on the shape cores (the shape minus its margin) and
falls back to EPA when the cores overlap.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .shapes import Shape

GJK_MAX_ITER = 64
GJK_TOL = 1e-9
EPA_MAX_ITER = 128
EPA_TOL = 1e-9
EPA_REL_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class ContactResult:
    signed_distance: float
    closest_point_a: np.ndarray
    closest_point_b: np.ndarray

    @property
    def penetrating(self) -> bool:
        return self.signed_distance < 0.0

    def swapped(self) -> "ContactResult":
        return ContactResult(self.signed_distance, self.closest_point_b, self.closest_point_a)

    def to_dict(self) -> dict:
        return {
            "signed_distance": self.signed_distance,
            "point_a": [float(v) for v in self.closest_point_a],
            "point_b": [float(v) for v in self.closest_point_b],
        }


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def segment_closest_params(p1, q1, p2, q2):
    """Closest-point parameters (s, t) in [0, 1] between segments p1q1 and p2q2.

    Vectorized over leading dimensions. Degenerate segments (points) are handled.
    """
    eps = 1e-300
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = _dot(d1, d1)
    e = _dot(d2, d2)
    f = _dot(d2, r)
    c = _dot(d1, r)
    b = _dot(d1, d2)
    a_ok = a > eps
    e_ok = e > eps
    sa = np.where(a_ok, a, 1.0)
    se = np.where(e_ok, e, 1.0)
    denom = a * e - b * b
    s_gen = np.where(denom > eps * np.maximum(a * e, eps), (b * f - c * e) / np.where(denom > 0, denom, 1.0), 0.0)
    s_gen = np.clip(s_gen, 0.0, 1.0)
    t_gen = (b * s_gen + f) / se
    s_lo = np.clip(-c / sa, 0.0, 1.0)
    s_hi = np.clip((b - c) / sa, 0.0, 1.0)
    s = np.where(t_gen < 0.0, s_lo, np.where(t_gen > 1.0, s_hi, s_gen))
    t = np.clip(t_gen, 0.0, 1.0)
    # one or both segments degenerate
    s = np.where(~e_ok, s_lo, s)
    t = np.where(~e_ok, 0.0, t)
    s = np.where(~a_ok, 0.0, s)
    t = np.where(~a_ok, np.where(e_ok, np.clip(f / se, 0.0, 1.0), 0.0), t)
    return s, t


def segment_distance(p1, q1, p2, q2):
    s, t = segment_closest_params(p1, q1, p2, q2)
    c1 = p1 + s[..., None] * (q1 - p1)
    c2 = p2 + t[..., None] * (q2 - p2)
    return np.linalg.norm(c2 - c1, axis=-1), c1, c2


def _world_segment(shape: Shape, T: np.ndarray):
    a, b = shape.core_segment()
    R, t = T[:3, :3], T[:3, 3]
    return R @ a + t, R @ b + t


def _any_perpendicular(u: np.ndarray) -> np.ndarray:
    axis = np.eye(3)[int(np.argmin(np.abs(u)))]
    v = np.cross(u, axis)
    return v / np.linalg.norm(v)


def _swept_pair(a: Shape, Ta, b: Shape, Tb) -> ContactResult:
    pa, qa = _world_segment(a, Ta)
    pb, qb = _world_segment(b, Tb)
    d, ca, cb = segment_distance(pa, qa, pb, qb)
    d = float(d)
    if d > 1e-15:
        n = (cb - ca) / d
    else:
        # cores touch: pick a direction perpendicular to both cores
        n = np.cross(qa - pa, qb - pb)
        if np.linalg.norm(n) < 1e-15:
            dirs = qa - pa if np.linalg.norm(qa - pa) > 1e-15 else qb - pb
            n = _any_perpendicular(dirs) if np.linalg.norm(dirs) > 1e-15 else np.array([0.0, 0.0, 1.0])
        n = n / np.linalg.norm(n)
    ra, rb = a.margin, b.margin
    return ContactResult(d - ra - rb, ca + ra * n, cb - rb * n)


class _Minkowski:
    """Support mapping of core(A) - core(B) with witness points."""

    def __init__(self, a: Shape, Ta, b: Shape, Tb):
        self.a, self.b = a, b
        self.Ra, self.ta = Ta[:3, :3], Ta[:3, 3]
        self.Rb, self.tb = Tb[:3, :3], Tb[:3, 3]

    def support(self, d: np.ndarray):
        sa = self.Ra @ self.a.core_support(self.Ra.T @ d) + self.ta
        sb = self.Rb @ self.b.core_support(self.Rb.T @ -d) + self.tb
        return sa - sb, sa, sb


def _closest_on_simplex(Y: np.ndarray):
    """Closest point to the origin on the convex hull of up to 4 points.

    Returns (point, barycentric weights, indices of the supporting sub-simplex).
    Every non-empty subset is projected; the minimum-norm valid projection wins.
    """
    best = None
    k = len(Y)
    for size in range(1, k + 1):
        for idx in itertools.combinations(range(k), size):
            P = Y[list(idx)]
            if size == 1:
                lam = np.array([1.0])
            else:
                D = P[1:] - P[0]
                G = D @ D.T
                try:
                    mu = np.linalg.solve(G, -D @ P[0])
                except np.linalg.LinAlgError:
                    continue
                if not np.all(np.isfinite(mu)):
                    continue
                lam = np.concatenate(([1.0 - mu.sum()], mu))
                if np.any(lam < -1e-12):
                    continue
                lam = np.clip(lam, 0.0, None)
                lam /= lam.sum()
            v = lam @ P
            nv = float(v @ v)
            if best is None or nv < best[0] - 1e-30:
                best = (nv, v, lam, idx)
    return best[1], best[2], list(best[3])


def _gjk(mk: _Minkowski, v0: np.ndarray):
    """Distance GJK. Returns (overlap, v, witness_a, witness_b, simplex points)."""
    v = v0 if np.linalg.norm(v0) > 1e-12 else np.array([1.0, 0.0, 0.0])
    W, A, B = [], [], []
    wa = wb = None
    for _ in range(GJK_MAX_ITER):
        w, sa, sb = mk.support(-v)
        vv = float(v @ v)
        if W and vv - float(v @ w) <= GJK_TOL * vv:
            break
        if any(np.array_equal(w, p) for p in W):
            break
        W.append(w)
        A.append(sa)
        B.append(sb)
        v, lam, keep = _closest_on_simplex(np.array(W))
        W = [W[i] for i in keep]
        A = [A[i] for i in keep]
        B = [B[i] for i in keep]
        wa = lam @ np.array(A)
        wb = lam @ np.array(B)
        if len(W) == 4 or float(v @ v) <= 1e-24:
            return True, v, wa, wb, (W, A, B)
    return False, v, wa, wb, (W, A, B)


_EPA_SEEDS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
    + [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
    dtype=float,
)


def _epa(mk: _Minkowski, simplex):
    """Penetration depth of overlapping cores.

    Returns (depth, normal from A to B, witness_a, witness_b). The polytope hull
    is maintained by qhull; expansion stops at an absolute progress of 1e-9, or a
    relative 1e-3 once the iteration budget is spent (curved cores).
    """
    W, A, B = (list(x) for x in simplex)
    for d in _EPA_SEEDS:
        w, sa, sb = mk.support(d / np.linalg.norm(d))
        W.append(w)
        A.append(sa)
        B.append(sb)
    pts = np.array(W)
    try:
        hull = ConvexHull(pts, incremental=True)
    except QhullError:
        # flat Minkowski difference (degenerate cores): no volume to penetrate
        return 0.0, np.array([0.0, 0.0, 1.0]), A[0], B[0]
    best = None
    for it in range(EPA_MAX_ITER):
        eq = hull.equations
        dist = -eq[:, 3]
        f = int(np.argmin(dist))
        n, depth = eq[f, :3], float(dist[f])
        best = (f, n, depth)
        w, sa, sb = mk.support(n)
        gap = float(n @ w) - depth
        if gap <= EPA_TOL or (it >= EPA_MAX_ITER // 2 and gap <= EPA_REL_TOL * max(depth, 1e-12)):
            break
        W.append(w)
        A.append(sa)
        B.append(sb)
        try:
            hull.add_points(w[None, :])
        except QhullError:
            break
    hull.close()
    f, n, depth = best
    depth = max(depth, 0.0)
    tri = hull.simplices[f]
    P = np.array(W)[tri]
    target = n * depth
    # barycentric coordinates of the origin's projection on the face
    D = P[1:] - P[0]
    G = D @ D.T
    try:
        mu = np.linalg.solve(G, D @ (target - P[0]))
        lam = np.concatenate(([1.0 - mu.sum()], mu))
    except np.linalg.LinAlgError:
        lam = np.full(3, 1.0 / 3.0)
    wa = lam @ np.array(A)[tri]
    wb = lam @ np.array(B)[tri]
    return depth, n, wa, wb


def _gjk_pair(a: Shape, Ta, b: Shape, Tb) -> ContactResult:
    mk = _Minkowski(a, Ta, b, Tb)
    overlap, v, wa, wb, simplex = _gjk(mk, Ta[:3, 3] - Tb[:3, 3])
    ra, rb = a.margin, b.margin
    if not overlap:
        d = float(np.linalg.norm(v))
        n = -v / d
        return ContactResult(d - ra - rb, wa + ra * n, wb - rb * n)
    depth, n, wa, wb = _epa(mk, simplex)
    return ContactResult(-(depth + ra + rb), wa + ra * n, wb - rb * n)


def pair_distance(a: Shape, pose_a, b: Shape, pose_b) -> ContactResult:
    """Signed distance (negative = penetration depth) and world closest points."""
    Ta = pose_a if isinstance(pose_a, np.ndarray) else pose_a.as_matrix()
    Tb = pose_b if isinstance(pose_b, np.ndarray) else pose_b.as_matrix()
    if a.is_swept and b.is_swept:
        return _swept_pair(a, Ta, b, Tb)
    return _gjk_pair(a, Ta, b, Tb)
