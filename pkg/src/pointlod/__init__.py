"""Streaming point-cloud level-of-detail engine.

Builds an octree hierarchy incrementally from a Morton-ordered point stream
while concurrently serving renderable node sets to navigating clients.
"""

from .builder import Broadcast, BuildConfig, Builder, HandoffQueues, SafeWatermark, build_hierarchy
from .cut import InvariantReport, Node, ObliqueCut, trees_equal, validate_tree
from .front import Front, RenderSet
from .lod import SPLAT_DTYPE, Camera, make_splats, projected_extent, subsample_for_parent
from .sorter import assign_codes, chunked_sort, to_build_inputs, truncate_codes

__all__ = [
    "Broadcast",
    "BuildConfig",
    "Builder",
    "Camera",
    "Front",
    "HandoffQueues",
    "InvariantReport",
    "Node",
    "ObliqueCut",
    "RenderSet",
    "SPLAT_DTYPE",
    "SafeWatermark",
    "assign_codes",
    "build_hierarchy",
    "chunked_sort",
    "make_splats",
    "projected_extent",
    "subsample_for_parent",
    "to_build_inputs",
    "trees_equal",
    "truncate_codes",
    "validate_tree",
]

__version__ = "0.1.0"
