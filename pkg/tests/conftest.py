import numpy as np
import pytest

from pointlod import lod, sorter
from pointlod.cut import Node

from oracles import canonical_cell_splats


def make_build_inputs(rng: np.random.Generator, n: int, l_max: int, with_attrs: bool = True):
    """Random cloud through the real ingestion path: sorted (codes, splats)."""
    positions = rng.random((n, 3))
    normals = None
    colors = None
    if with_attrs:
        normals = rng.normal(size=(n, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        colors = rng.integers(0, 256, size=(n, 3), dtype=np.uint8)
    records = sorter.sort_records(sorter.assign_codes(positions, l_max, normals, colors))
    return sorter.to_build_inputs(records, l_max)


def cells_of(codes: np.ndarray, splats: np.ndarray) -> dict[int, np.ndarray]:
    """Group aligned (codes, splats) into per-cell canonical payloads."""
    cells: dict[int, np.ndarray] = {}
    for code in np.unique(codes):
        cells[int(code)] = canonical_cell_splats(splats[codes == code])
    return cells


def leaves_from_cells(cells: dict[int, np.ndarray]) -> list[Node]:
    """Ascending leaf nodes ready for ObliqueCut.concatenate."""
    return [Node(code, splats=cells[code]) for code in sorted(cells)]


def aligned_chunks(codes: np.ndarray, splats: np.ndarray, n_chunks: int):
    """Split into ~equal pushes without splitting a run of equal codes."""
    step = max(1, len(codes) // n_chunks)
    pos = 0
    while pos < len(codes):
        end = min(pos + step, len(codes))
        while end < len(codes) and codes[end] == codes[end - 1]:
            end += 1
        yield codes[pos:end], splats[pos:end]
        pos = end


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def splat_cloud(rng: np.random.Generator, n: int) -> np.ndarray:
    """Standalone random splats (not tied to any octree cell)."""
    out = np.zeros(n, dtype=lod.SPLAT_DTYPE)
    out["center"] = rng.random((n, 3))
    out["u"] = rng.normal(scale=0.01, size=(n, 3))
    out["v"] = rng.normal(scale=0.01, size=(n, 3))
    out["color"] = rng.integers(0, 256, size=(n, 3))
    return out
