"""Independent reference implementations used to generate expected test values.

Everything here is deliberately naive: per-bit loops instead of bit tricks,
top-down recursion instead of the streaming bottom-up path, closed-form
projection math instead of the library's camera helpers. Tests freeze values
produced by these oracles or compare structures against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def naive_interleave(x: int, y: int, z: int, level: int) -> int:
    """Bit-interleave grid coordinates one bit at a time, MSB first.

    x is the least-significant bit of each triple, then y, then z. A single
    prefix bit precedes the triples so the code length encodes the level.
    """
    assert 0 <= x < 2**level and 0 <= y < 2**level and 0 <= z < 2**level
    code = 1
    for bit in range(level - 1, -1, -1):
        triple = ((x >> bit) & 1) | (((y >> bit) & 1) << 1) | (((z >> bit) & 1) << 2)
        code = (code << 3) | triple
    return code


def naive_deinterleave(code: int) -> tuple[int, int, int, int]:
    """Inverse of naive_interleave; returns (x, y, z, level)."""
    assert code >= 1
    n_bits = code.bit_length() - 1
    assert n_bits % 3 == 0
    level = n_bits // 3
    x = y = z = 0
    for bit in range(level):
        triple = (code >> (3 * bit)) & 0b111
        x |= (triple & 1) << bit
        y |= ((triple >> 1) & 1) << bit
        z |= ((triple >> 2) & 1) << bit
    return x, y, z, level


def all_codes_at_level(level: int) -> list[int]:
    """Every valid code at a level, in ascending integer order."""
    codes = [
        naive_interleave(x, y, z, level)
        for x in range(2**level)
        for y in range(2**level)
        for z in range(2**level)
    ]
    return sorted(codes)


def descendant_codes(code: int, target_level: int) -> list[int]:
    """All descendants of `code` at `target_level`, by explicit recursion."""
    level = (code.bit_length() - 1) // 3
    if level == target_level:
        return [code]
    out: list[int] = []
    for i in range(8):
        out.extend(descendant_codes((code << 3) | i, target_level))
    return sorted(out)


def naive_ancestors(code: int) -> list[int]:
    """All strict ancestors of a code up to the root, shallowest last."""
    out = []
    while code > 1:
        code >>= 3
        out.append(code)
    return out


def pinhole_extent(
    center: np.ndarray,
    radius: float,
    cam_pos: np.ndarray,
    fov_y_deg: float,
    viewport_h: int,
) -> float:
    """Screen diameter, in pixels, of a sphere under an ideal pinhole camera.

    Derivation: the viewport height maps to a world-space height of
    2*d*tan(fov/2) at distance d, so a sphere of diameter 2r occupies
    2r / (2*d*tan(fov/2)) of the viewport.
    """
    d = float(np.linalg.norm(np.asarray(center, float) - np.asarray(cam_pos, float)))
    if d <= radius:
        return math.inf
    return 2.0 * radius * viewport_h / (2.0 * d * math.tan(math.radians(fov_y_deg) / 2.0))


@dataclass
class RefNode:
    """Node of the top-down reference octree."""

    code: int
    splats: np.ndarray
    children: list["RefNode"] = field(default_factory=list)


def canonical_cell_splats(splats: np.ndarray) -> np.ndarray:
    """Sort splats inside one cell by their full payload.

    Priority: center x, y, z, then tangent u, tangent v, then color r, g, b.
    Keeps leaf payloads independent of the (unstable) input ordering of
    points that share a cell. np.lexsort treats the LAST key as primary.
    """
    keys = (
        splats["color"][:, 2], splats["color"][:, 1], splats["color"][:, 0],
        splats["v"][:, 2], splats["v"][:, 1], splats["v"][:, 0],
        splats["u"][:, 2], splats["u"][:, 1], splats["u"][:, 0],
        splats["center"][:, 2], splats["center"][:, 1], splats["center"][:, 0],
    )
    return splats[np.lexsort(keys)]


def reference_octree(
    cells: dict[int, np.ndarray],
    l_max: int,
    ratio: float,
    subsample,
    leaf_collapse: bool = False,
) -> RefNode | None:
    """Build the expected octree top-down from (deepest-level code -> splats).

    `subsample` is the shared parent payload policy (children splats, ratio)
    -> parent splats. The construction path (recursive partition of the code
    set) is independent of the streaming builder.
    """
    if not cells:
        return None
    ordered = dict(sorted(cells.items()))

    def build(code: int, level: int, sub: dict[int, np.ndarray]) -> RefNode:
        if level == l_max:
            return RefNode(code, canonical_cell_splats(sub[code]))
        by_child: dict[int, dict[int, np.ndarray]] = {}
        shift = 3 * (l_max - level - 1)
        for c, s in sub.items():
            by_child.setdefault(c >> shift, {})[c] = s
        if leaf_collapse and level == l_max - 1 and len(by_child) == 1:
            (only_cell,) = sub
            return RefNode(code, canonical_cell_splats(sub[only_cell]))
        children = [build(cc, level + 1, grp) for cc, grp in sorted(by_child.items())]
        merged = np.concatenate([c.splats for c in children])
        return RefNode(code, subsample(merged, ratio), children)

    # walk down from the root: every cell shares the root ancestor
    return build(1, 0, ordered)


def count_ref_nodes(node: RefNode | None) -> int:
    if node is None:
        return 0
    return 1 + sum(count_ref_nodes(c) for c in node.children)
