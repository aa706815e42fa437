"""Convex primitives, narrow phase (closed form + GJK/EPA), ray casts and world queries."""

from .narrowphase import ContactResult, pair_distance, segment_distance
from .shapes import Shape
from .world import (
    Body,
    RayHit,
    SelfCollisionChecker,
    World,
    WorldContact,
    contacts_against,
    ray_cast,
    self_collision,
    world_contacts,
)


def world_collision(instance, robot_id: int, links) -> list:
    """Penetrating contacts of ``links`` of one robot against everything else in ``instance``."""
    return instance.world_collision(robot_id, links)


__all__ = [
    "Body", "ContactResult", "RayHit", "SelfCollisionChecker", "Shape", "World", "WorldContact",
    "contacts_against", "pair_distance", "ray_cast", "segment_distance", "self_collision",
    "world_collision", "world_contacts",
]
