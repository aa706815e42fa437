"""Convex primitive shapes.

Capsules and cylinders are aligned with their local z axis. Every shape is
treated as a *core* swept by a ball of radius :attr:`Shape.margin`: a sphere
is a point core, a capsule a segment core. Boxes and cylinders have no margin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("sphere", "capsule", "box", "cylinder")


@dataclass(frozen=True)
class Shape:
    kind: str
    dims: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        expected = {"sphere": 1, "capsule": 2, "box": 3, "cylinder": 2}[self.kind]
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != expected:
            raise ValueError(f"{self.kind} needs {expected} dimensions, got {len(dims)}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def sphere(cls, radius):
        return cls("sphere", (radius,))

    @classmethod
    def capsule(cls, radius, half_length):
        return cls("capsule", (radius, half_length))

    @classmethod
    def box(cls, hx, hy, hz):
        return cls("box", (hx, hy, hz))

    @classmethod
    def cylinder(cls, radius, half_length):
        return cls("cylinder", (radius, half_length))

    @property
    def valid(self) -> bool:
        return all(d > 0 for d in self.dims)

    @property
    def radius(self) -> float:
        return self.dims[0]

    @property
    def half_length(self) -> float:
        return self.dims[1]

    @property
    def margin(self) -> float:
        return self.dims[0] if self.kind in ("sphere", "capsule") else 0.0

    @property
    def is_swept(self) -> bool:
        return self.kind in ("sphere", "capsule")

    def core_segment(self) -> tuple[np.ndarray, np.ndarray]:
        """Local endpoints of the swept core (coincident for a sphere)."""
        h = self.dims[1] if self.kind == "capsule" else 0.0
        return np.array([0.0, 0.0, -h]), np.array([0.0, 0.0, h])

    def core_support(self, d: np.ndarray) -> np.ndarray:
        """Support point of the core in local direction ``d``."""
        if self.kind == "sphere":
            return np.zeros(3)
        if self.kind == "capsule":
            return np.array([0.0, 0.0, self.dims[1] if d[2] >= 0 else -self.dims[1]])
        if self.kind == "box":
            hx, hy, hz = self.dims
            return np.array(
                [hx if d[0] >= 0 else -hx, hy if d[1] >= 0 else -hy, hz if d[2] >= 0 else -hz]
            )
        r, h = self.dims
        radial = np.hypot(d[0], d[1])
        z = h if d[2] >= 0 else -h
        if radial < 1e-15:
            return np.array([0.0, 0.0, z])
        return np.array([r * d[0] / radial, r * d[1] / radial, z])

    def local_extents(self) -> np.ndarray:
        """Half extents of the local-frame bounding box."""
        if self.kind == "sphere":
            r = self.dims[0]
            return np.array([r, r, r])
        if self.kind == "box":
            return np.array(self.dims)
        r, h = self.dims
        return np.array([r, r, h + (r if self.kind == "capsule" else 0.0)])

    def aabb(self, T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World AABB for a shape placed by homogeneous transform ``T``."""
        if self.kind == "sphere":
            r = self.dims[0]
            c = T[:3, 3]
            return c - r, c + r
        if self.kind == "capsule":
            r, h = self.dims
            a = T[:3, 3] - h * T[:3, 2]
            b = T[:3, 3] + h * T[:3, 2]
            return np.minimum(a, b) - r, np.maximum(a, b) + r
        half = np.abs(T[:3, :3]) @ self.local_extents()
        c = T[:3, 3]
        return c - half, c + half

    def aabb_batch(self, T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World AABBs for a batch of transforms (B, 4, 4)."""
        c = T[:, :3, 3]
        if self.kind == "sphere":
            r = self.dims[0]
            return c - r, c + r
        if self.kind == "capsule":
            r, h = self.dims
            half = h * np.abs(T[:, :3, 2]) + r
            return c - half, c + half
        half = np.abs(T[:, :3, :3]) @ self.local_extents()
        return c - half, c + half

    def contains_local(self, p: np.ndarray) -> np.ndarray:
        """Membership test for local points with shape (..., 3). Closed set."""
        p = np.asarray(p, dtype=float)
        if self.kind == "sphere":
            return np.einsum("...i,...i->...", p, p) <= self.dims[0] ** 2
        if self.kind == "capsule":
            r, h = self.dims
            z = np.clip(p[..., 2], -h, h)
            d2 = p[..., 0] ** 2 + p[..., 1] ** 2 + (p[..., 2] - z) ** 2
            return d2 <= r * r
        if self.kind == "box":
            return np.all(np.abs(p) <= np.array(self.dims), axis=-1)
        r, h = self.dims
        return (p[..., 0] ** 2 + p[..., 1] ** 2 <= r * r) & (np.abs(p[..., 2]) <= h)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dims": list(self.dims)}

    @classmethod
    def from_dict(cls, data: dict) -> "Shape":
        return cls(data["kind"], tuple(data["dims"]))
