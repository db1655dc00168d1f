"""Morton-code assignment and (chunked) sorting of raw point records.

The chunked variant partitions the code domain into quantile ranges taken
from a sample, then sorts and emits one range at a time, so downstream
consumption can begin after the first chunk instead of after the full sort.
Equal codes always land in the same chunk, and chunks concatenate into a
globally sorted stream.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import lod, morton
from .errors import DataError

# fixed seed: chunk boundaries must not vary between runs
_SAMPLE_SEED = 0x5EED
_SAMPLE_FRACTION = 0.01
_MIN_SAMPLE = 256


def record_dtype(has_normal: bool, has_color: bool) -> np.dtype:
    fields = [("code", "<u8"), ("position", "<f4", 3)]
    if has_normal:
        fields.append(("normal", "<f4", 3))
    if has_color:
        fields.append(("color", "u1", 3))
    return np.dtype(fields)


def _spread_bits(v: np.ndarray) -> np.ndarray:
    """Space the low 21 bits of each value three positions apart."""
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def quantize(positions: np.ndarray, level: int) -> np.ndarray:
    """Map [0,1] coordinates to integer cells, clamping onto the last cell."""
    cells = np.floor(positions * (1 << level)).astype(np.int64)
    return np.clip(cells, 0, (1 << level) - 1).astype(np.uint64)


def encode_cells(cells: np.ndarray, level: int) -> np.ndarray:
    """Vectorized counterpart of morton.encode over an (n, 3) cell array."""
    x = _spread_bits(cells[:, 0])
    y = _spread_bits(cells[:, 1])
    z = _spread_bits(cells[:, 2])
    prefix = np.uint64(1) << np.uint64(3 * level)
    return prefix | x | (y << np.uint64(1)) | (z << np.uint64(2))


def assign_codes(
    positions: np.ndarray,
    sort_level: int,
    normals: Optional[np.ndarray] = None,
    colors: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Build unsorted records carrying the code of each point's cell."""
    positions = np.asarray(positions, dtype=np.float32)
    bad = ~np.isfinite(positions).all(axis=1)
    if bad.any():
        idx = int(np.argmax(bad))
        raise DataError(f"non-finite coordinate in point record {idx}")
    records = np.zeros(len(positions), dtype=record_dtype(normals is not None, colors is not None))
    records["position"] = positions
    if normals is not None:
        records["normal"] = normals
    if colors is not None:
        records["color"] = colors
    records["code"] = encode_cells(quantize(positions, sort_level), sort_level)
    return records


def sort_records(records: np.ndarray) -> np.ndarray:
    order = np.argsort(records["code"], kind="stable")
    return records[order]


def chunked_sort(records: np.ndarray, num_chunks: int) -> Iterator[np.ndarray]:
    """Emit `num_chunks` sorted chunks covering ascending code ranges.

    Chunk boundaries are quantiles of a 1% sample, chosen on code values so
    equal codes are never split. The concatenation of all chunks equals one
    stable full sort of the input.
    """
    if num_chunks < 1:
        raise ValueError("num_chunks must be at least 1")
    n = len(records)
    if num_chunks == 1 or n == 0:
        for _ in range(max(1, num_chunks) - 1):
            yield records[:0]
        yield sort_records(records)
        return
    codes = records["code"]
    rng = np.random.default_rng(_SAMPLE_SEED)
    k = min(n, max(_MIN_SAMPLE, int(n * _SAMPLE_FRACTION)))
    sample = np.sort(codes[rng.integers(0, n, size=k)])
    bounds = sample[[(len(sample) * i) // num_chunks for i in range(1, num_chunks)]]
    bucket = np.searchsorted(bounds, codes, side="left")
    for b in range(num_chunks):
        yield sort_records(records[bucket == b])


def truncate_codes(codes: np.ndarray, from_level: int, to_level: int) -> np.ndarray:
    """Re-tag deep codes onto a shallower curve; preserves order.

    A stream sorted at a deep level is thereby valid input for any build
    whose maximum depth does not exceed the sorting level.
    """
    if to_level > from_level:
        raise ValueError(f"cannot deepen codes from level {from_level} to {to_level}")
    return codes >> np.uint64(3 * (from_level - to_level))


def level_of_records(records: np.ndarray) -> int:
    if len(records) == 0:
        raise ValueError("cannot infer level of an empty record array")
    return morton.level_of(int(records["code"][0]))


def to_build_inputs(records: np.ndarray, l_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Convert sorted records into (codes, splats) for the builder."""
    if len(records) == 0:
        return np.empty(0, np.uint64), lod.EMPTY_SPLATS
    sort_level = level_of_records(records)
    codes = truncate_codes(records["code"], sort_level, l_max)
    names = records.dtype.names or ()
    normals = records["normal"] if "normal" in names else None
    colors = records["color"] if "color" in names else None
    splats = lod.make_splats(
        records["position"], normals, colors, lod.default_splat_radius(l_max)
    )
    return codes, splats


def stream_build_batches(
    record_batches, l_max: int
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Turn sorted record batches into builder pushes at depth l_max.

    Truncating deep codes can make records at a batch boundary fall into one
    cell; the trailing equal-code run is carried into the next push so every
    push starts strictly beyond the previous one.
    """
    carry: Optional[tuple[np.ndarray, np.ndarray]] = None
    for records in record_batches:
        codes, splats = to_build_inputs(records, l_max)
        if len(codes) == 0:
            continue
        if carry is not None:
            codes = np.concatenate([carry[0], codes])
            splats = np.concatenate([carry[1], splats])
        r = len(codes) - 1
        while r > 0 and codes[r - 1] == codes[-1]:
            r -= 1
        if r == 0:
            carry = (codes, splats)
            continue
        carry = (codes[r:], splats[r:])
        yield codes[:r], splats[:r]
    if carry is not None:
        yield carry
