"""Splat payload policy and screen-space projection.

Splats are stored in a packed little-endian structured array (the same
layout travels over the wire and into the hierarchy file): center, two
tangent vectors spanning the disk, and an RGB color.

Everything here is pure; worker threads call these freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPLAT_DTYPE = np.dtype(
    [("center", "<f4", 3), ("u", "<f4", 3), ("v", "<f4", 3), ("color", "u1", 3)]
)
SPLAT_BYTES = SPLAT_DTYPE.itemsize  # 39

EMPTY_SPLATS = np.empty(0, dtype=SPLAT_DTYPE)
EMPTY_SPLATS.setflags(write=False)


def default_splat_radius(l_max: int) -> float:
    """Half a deepest-level cell edge, in normalized model units."""
    return 0.5 / (1 << l_max)


def tangents_from_normals(normals: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangent pair per unit normal, scaled by radius.

    The seed axis is the coordinate axis least aligned with the normal, so
    the result is stable under any evaluation order.
    """
    n = np.asarray(normals, dtype=np.float64)
    axis_idx = np.argmin(np.abs(n), axis=1)
    seed = np.zeros_like(n)
    seed[np.arange(len(n)), axis_idx] = 1.0
    u = np.cross(n, seed)
    u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-30)
    v = np.cross(n, u)
    v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-30)
    return (u * radius).astype(np.float32), (v * radius).astype(np.float32)


def make_splats(
    positions: np.ndarray,
    normals: np.ndarray | None,
    colors: np.ndarray | None,
    radius: float,
) -> np.ndarray:
    """Pack raw point attributes into the splat layout.

    Without normals, tangents default to an axis-aligned pair of length
    `radius`; without colors, splats are mid-grey.
    """
    n = len(positions)
    out = np.zeros(n, dtype=SPLAT_DTYPE)
    out["center"] = positions
    if normals is not None:
        out["u"], out["v"] = tangents_from_normals(normals, radius)
    else:
        out["u"] = np.array([radius, 0.0, 0.0], dtype=np.float32)
        out["v"] = np.array([0.0, radius, 0.0], dtype=np.float32)
    out["color"] = colors if colors is not None else 128
    return out


def subsample_for_parent(children_splats: np.ndarray, ratio: float) -> np.ndarray:
    """Pick max(1, round(ratio*n)) splats by deterministic stride sampling.

    Input must be the children's splats concatenated in Morton order.
    Tangents are scaled by ratio**(-1/3) so expected disk-area coverage is
    approximately preserved (area factor ratio**(-2/3) per kept splat).
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio {ratio} outside (0, 1]")
    n = len(children_splats)
    if n == 0:
        raise ValueError("cannot subsample an empty splat set")
    m = max(1, round(ratio * n))
    if m >= n:
        return children_splats.copy()
    idx = (np.arange(m, dtype=np.int64) * n) // m
    out = children_splats[idx].copy()
    scale = np.float32(ratio ** (-1.0 / 3.0))
    out["u"] *= scale
    out["v"] *= scale
    return out


@dataclass
class Camera:
    """Pinhole camera pose and viewport used for projection decisions."""

    position: np.ndarray
    forward: np.ndarray
    up: np.ndarray
    fov_y_deg: float = 60.0
    viewport_w: int = 1280
    viewport_h: int = 720
    near: float = 0.001
    far: float = 100.0
    right: np.ndarray = field(init=False)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.forward, dtype=np.float64)
        self.forward = fwd / np.linalg.norm(fwd)
        up = np.asarray(self.up, dtype=np.float64)
        up = up - np.dot(up, self.forward) * self.forward
        self.up = up / np.linalg.norm(up)
        self.right = np.cross(self.forward, self.up)
        if self.near <= 0 or self.far <= self.near:
            raise ValueError("camera clip range must satisfy 0 < near < far")
        if self.viewport_w < 1 or self.viewport_h < 1:
            raise ValueError("viewport must be at least 1x1 pixels")

    @classmethod
    def looking_at(cls, position, target, up=(0.0, 1.0, 0.0), **kw) -> "Camera":
        pos = np.asarray(position, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - pos
        return cls(position=pos, forward=fwd, up=np.asarray(up, dtype=np.float64), **kw)

    def tan_half_fov(self) -> float:
        return math.tan(math.radians(self.fov_y_deg) / 2.0)


def node_sphere(code: int) -> tuple[np.ndarray, float]:
    """Sphere enclosing the node's Morton cell in the unit cube."""
    from . import morton

    x0, y0, z0, size = morton.cell_bounds(code)
    half = size / 2.0
    center = np.array([x0 + half, y0 + half, z0 + half])
    return center, half * math.sqrt(3.0)


def projected_extent(code: int, cam: Camera) -> float:
    """Screen diameter in pixels of the node's enclosing sphere.

    +inf when the camera is inside the sphere; 0 when the sphere is
    entirely behind the camera. Using Euclidean distance (not view depth)
    keeps the extent non-increasing from parent to child, because a child's
    sphere is geometrically contained in its parent's.
    """
    center, radius = node_sphere(code)
    offset = center - cam.position
    d = float(np.linalg.norm(offset))
    if d <= radius:
        return math.inf
    z = float(np.dot(offset, cam.forward))
    if z <= -radius:
        return 0.0
    return radius * cam.viewport_h / (d * cam.tan_half_fov())


def sphere_in_frustum(center: np.ndarray, radius: float, cam: Camera) -> bool:
    """Conservative sphere-vs-frustum test (false only when fully outside)."""
    offset = np.asarray(center, dtype=np.float64) - cam.position
    z = float(np.dot(offset, cam.forward))
    if z < cam.near - radius or z > cam.far + radius:
        return False
    ty = cam.tan_half_fov()
    tx = ty * cam.viewport_w / cam.viewport_h
    # side-plane distances, scaled by the plane normal's length
    for axis, t in ((cam.right, tx), (cam.up, ty)):
        a = float(np.dot(offset, axis))
        inv_len = 1.0 / math.sqrt(1.0 + t * t)
        if (t * z - a) * inv_len < -radius or (t * z + a) * inv_len < -radius:
            return False
    return True


def node_in_frustum(code: int, cam: Camera) -> bool:
    center, radius = node_sphere(code)
    return sphere_in_frustum(center, radius, cam)
