"""Analytic ray/primitive intersections, vectorized over rays.

Each function takes world-frame ray origins ``O`` (N, 3) and unit directions
``D`` (N, 3) and returns the ray parameter of the first surface crossing with
t >= 0, or +inf on a miss.
"""

from __future__ import annotations

import numpy as np

from .shapes import Shape

INF = np.inf


def _to_local(O, D, T):
    R, t = T[:3, :3], T[:3, 3]
    return (O - t) @ R, D @ R


def _sphere_t(o, d, center, r):
    oc = o - center
    b = np.einsum("ij,ij->i", oc, d)
    c = np.einsum("ij,ij->i", oc, oc) - r * r
    a = np.einsum("ij,ij->i", d, d)
    disc = b * b - a * c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t1 = (-b - sq) / a
    t2 = (-b + sq) / a
    t = np.where(t1 >= 0, t1, np.where(t2 >= 0, t2, INF))
    return np.where(ok, t, INF)


def _lateral_t(o, d, r, h):
    """Infinite z-cylinder of radius r, restricted to |z| <= h."""
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - r * r
    par = a < 1e-300
    sa = np.where(par, 1.0, a)
    disc = b * b - a * c
    ok = (disc >= 0) & ~par
    sq = np.sqrt(np.where(ok, disc, 0.0))
    best = np.full(len(o), INF)
    for t in ((-b - sq) / sa, (-b + sq) / sa):
        z = o[:, 2] + t * d[:, 2]
        good = ok & (t >= 0) & (np.abs(z) <= h)
        best = np.where(good & (t < best), t, best)
    return best


def _caps_t(o, d, r, h):
    best = np.full(len(o), INF)
    dz = d[:, 2]
    nz = np.abs(dz) > 1e-300
    sdz = np.where(nz, dz, 1.0)
    for zc in (-h, h):
        t = (zc - o[:, 2]) / sdz
        x = o[:, 0] + t * d[:, 0]
        y = o[:, 1] + t * d[:, 1]
        good = nz & (t >= 0) & (x * x + y * y <= r * r)
        best = np.where(good & (t < best), t, best)
    return best


def _box_t(o, d, half):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    # rays parallel to a slab: inside -> unbounded, outside -> miss
    par = d == 0
    inside = np.abs(o) <= half
    lo = np.where(par, np.where(inside, -INF, INF), lo)
    hi = np.where(par, np.where(inside, INF, -INF), hi)
    tmin = lo.max(axis=1)
    tmax = hi.min(axis=1)
    hit = (tmax >= tmin) & (tmax >= 0)
    return np.where(hit, np.where(tmin >= 0, tmin, tmax), INF)


def shape_ray_t(shape: Shape, T: np.ndarray, O: np.ndarray, D: np.ndarray) -> np.ndarray:
    o, d = _to_local(np.atleast_2d(O), np.atleast_2d(D), T)
    if shape.kind == "sphere":
        return _sphere_t(o, d, np.zeros(3), shape.radius)
    if shape.kind == "box":
        return _box_t(o, d, np.asarray(shape.dims))
    r, h = shape.dims
    if shape.kind == "cylinder":
        return np.minimum(_lateral_t(o, d, r, h), _caps_t(o, d, r, h))
    t = _lateral_t(o, d, r, h)
    for zc in (-h, h):
        t = np.minimum(t, _sphere_t(o, d, np.array([0.0, 0.0, zc]), r))
    return t


def ground_ray_t(O: np.ndarray, D: np.ndarray) -> np.ndarray:
    O = np.atleast_2d(O)
    D = np.atleast_2d(D)
    dz = D[:, 2]
    down = dz < 0
    t = np.where(down, -O[:, 2] / np.where(down, dz, -1.0), INF)
    return np.where(down & (t >= 0), t, INF)


def aabb_ray_mask(lo: np.ndarray, hi: np.ndarray, O: np.ndarray, D: np.ndarray, max_range: float) -> np.ndarray:
    """Rays whose segment [0, max_range] can touch the box [lo, hi] (conservative)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / D
        t1 = (lo - O) * inv
        t2 = (hi - O) * inv
    a = np.minimum(t1, t2)
    b = np.maximum(t1, t2)
    par = D == 0
    inside = (O >= lo) & (O <= hi)
    a = np.where(par, np.where(inside, -INF, INF), a)
    b = np.where(par, np.where(inside, INF, -INF), b)
    tmin = a.max(axis=1)
    tmax = b.min(axis=1)
    slack = 1e-9 * (1.0 + max_range)
    return (tmax + slack >= tmin) & (tmax >= -slack) & (tmin <= max_range + slack)
