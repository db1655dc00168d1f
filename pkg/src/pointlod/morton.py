"""Level-tagged Morton codes for an octree.

A code is a plain int: one prefix bit followed by one 3-bit triple per
level, so the bit length itself encodes the depth. The root is ``0b1``.
Within a triple, x occupies bit 0, y bit 1 and z bit 2; this convention is
shared by :func:`encode`, :func:`decode` and the vectorized encoder in
:mod:`pointlod.sorter` and must never diverge between them.

All functions are pure and safe to call from any thread.
"""

from __future__ import annotations

from typing import NamedTuple

MAX_LEVEL = 21  # 3 * 21 + 1 = 64 bits
ROOT = 1


class GridCoords(NamedTuple):
    x: int
    y: int
    z: int
    level: int


def level_of(code: int) -> int:
    """Depth encoded in the code's bit length. Raises on malformed codes."""
    if code < 1:
        raise ValueError(f"malformed Morton code {code!r}: no prefix bit")
    n = code.bit_length() - 1
    if n % 3:
        raise ValueError(f"malformed Morton code {bin(code)}: prefix bit misplaced")
    level = n // 3
    if level > MAX_LEVEL:
        raise ValueError(f"Morton code deeper than {MAX_LEVEL}: {bin(code)}")
    return level


def encode(x: int, y: int, z: int, level: int) -> int:
    """Interleave grid coordinates into a prefixed code."""
    if not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"level {level} outside [0, {MAX_LEVEL}]")
    top = 1 << level
    if not (0 <= x < top and 0 <= y < top and 0 <= z < top):
        raise ValueError(f"coordinates ({x}, {y}, {z}) out of range for level {level}")
    code = 1
    for bit in range(level - 1, -1, -1):
        code = (code << 3) | ((x >> bit) & 1) | (((y >> bit) & 1) << 1) | (((z >> bit) & 1) << 2)
    return code


def decode(code: int) -> GridCoords:
    """Exact inverse of :func:`encode`."""
    level = level_of(code)
    x = y = z = 0
    for bit in range(level):
        triple = code & 0b111
        x |= (triple & 1) << bit
        y |= ((triple >> 1) & 1) << bit
        z |= ((triple >> 2) & 1) << bit
        code >>= 3
    return GridCoords(x, y, z, level)


def span(code: int, l_max: int) -> int:
    """Code of the rightmost deepest-level descendant: all-ones suffix.

    Maps any node onto the deepest-level curve, so `span(n) <= cut_code`
    answers "is n entirely inside the cut" at every level.
    """
    d = l_max - level_of(code)
    if d < 0:
        raise ValueError(f"node at level {level_of(code)} is below l_max={l_max}")
    return (code << (3 * d)) | ((1 << (3 * d)) - 1)


def placeholder(code: int, target_level: int) -> int:
    """Code of the stand-in node for `code` at a strictly deeper level."""
    if target_level <= level_of(code):
        raise ValueError(
            f"placeholder target level {target_level} not below node level {level_of(code)}"
        )
    return span(code, target_level)


def parent_of(code: int) -> int:
    if code == ROOT:
        raise ValueError("root code has no parent")
    level_of(code)  # validate
    return code >> 3


def child_of(code: int, i: int) -> int:
    if not 0 <= i <= 7:
        raise ValueError(f"child index {i} outside 0..7")
    if level_of(code) >= MAX_LEVEL:
        raise ValueError(f"cannot descend below level {MAX_LEVEL}")
    return (code << 3) | i


def child_index(code: int) -> int:
    """Which of its parent's eight slots this code occupies."""
    if code == ROOT:
        raise ValueError("root code has no child index")
    return code & 0b111


def is_ancestor_or_equal(a: int, b: int) -> bool:
    """True iff `a` is `b` or an ancestor of `b` (pure shift comparison)."""
    d = level_of(b) - level_of(a)
    return d >= 0 and (b >> (3 * d)) == a


def max_code(level: int) -> int:
    """Largest code at a level; equals span(root) at that level."""
    return (1 << (3 * level + 1)) - 1


def cell_bounds(code: int) -> tuple[float, float, float, float]:
    """(x0, y0, z0, size) of the node's cell in the normalized unit cube."""
    x, y, z, level = decode(code)
    size = 1.0 / (1 << level)
    return (x * size, y * size, z * size, size)
