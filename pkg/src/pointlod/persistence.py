"""Binary containers and raw-cloud ingestion.

Two little-endian formats, frozen by golden tests:

sorted stream (.omss)
    header: magic "OMSS" | version u8 | sortLevel u8 | recordCount u64 |
            flags u8 (bit0 color, bit1 normal) | bbox 6*f32 (original bounds)
    records: code u64 | position 3*f32 | [normal 3*f32] | [color 3*u8],
    ascending by code (duplicates allowed).

hierarchy file (.omhf)
    header: magic "OMHF" | version u8 | lMax u8 | nodeCount u64 |
            flags u8 (bit0 leaf collapse) | ratioNum u16 | ratioDen u16 |
            bbox 6*f32
    nodes in breadth-first order: code u64 | splatCount u32 |
            splats (39 bytes each) | childMask u8.
    Any prefix of the records is a valid coarse hierarchy.
"""

from __future__ import annotations

import io
import struct
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import BinaryIO, Iterator, Optional, Union

import numpy as np

from . import sorter
from .cut import Node
from .errors import DataError, FormatError, OrderViolationError
from .lod import SPLAT_DTYPE

SORTED_MAGIC = b"OMSS"
HIERARCHY_MAGIC = b"OMHF"
FORMAT_VERSION = 1

_SS_HEADER = struct.Struct("<4sBBQB6f")
_HF_HEADER = struct.Struct("<4sBBQBHH6f")
_NODE_HEAD = struct.Struct("<QI")

FLAG_COLOR = 1
FLAG_NORMAL = 2
FLAG_LEAF_COLLAPSE = 1

PathOrFile = Union[str, Path, BinaryIO]


def _open(path: PathOrFile, mode: str):
    if isinstance(path, (str, Path)):
        return open(path, mode), True
    return path, False


@dataclass
class RawCloud:
    positions: np.ndarray  # normalized into the unit cube
    normals: Optional[np.ndarray]
    colors: Optional[np.ndarray]
    bbox: np.ndarray  # original (min xyz, max xyz) before normalization


@dataclass
class SortedStream:
    sort_level: int
    bbox: np.ndarray
    records: np.ndarray


@dataclass
class HierarchyFile:
    l_max: int
    bbox: np.ndarray
    ratio: float
    leaf_collapse: bool
    node_count: int
    root: Optional[Node]
    complete: bool = True


UNIT_BBOX = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], dtype=np.float32)


# -- raw clouds ---------------------------------------------------------------


def normalize_positions(positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Uniformly scale the tight bounding box into the unit cube."""
    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        extent = 1.0  # degenerate cloud: keep it at the origin
    normalized = np.clip((positions - lo) / extent, 0.0, 1.0).astype(np.float32)
    bbox = np.concatenate([lo, hi]).astype(np.float32)
    return normalized, bbox


def _read_xyz_text(path: PathOrFile) -> RawCloud:
    f, close = _open(path, "rb")
    try:
        rows: list[list[float]] = []
        width = None
        for lineno, raw in enumerate(f, start=1):
            line = raw.decode("utf-8", errors="replace").strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (3, 6, 9):
                raise DataError(f"line {lineno}: expected 3, 6 or 9 columns, got {len(parts)}")
            try:
                row = [float(p) for p in parts]
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            if width is None:
                width = len(row)
            elif width != len(row):
                raise DataError(f"line {lineno}: inconsistent column count")
            rows.append(row)
    finally:
        if close:
            f.close()
    if not rows:
        raise DataError("no points in input")
    data = np.asarray(rows, dtype=np.float64)
    positions, bbox = normalize_positions(data[:, :3])
    normals = data[:, 3:6].astype(np.float32) if data.shape[1] >= 6 else None
    colors = None
    if data.shape[1] == 9:
        colors = np.clip(data[:, 6:9], 0, 255).astype(np.uint8)
    return RawCloud(positions, normals, colors, bbox)


_PLY_PROPS = {"x", "y", "z", "nx", "ny", "nz", "red", "green", "blue"}


def _read_ply(path: PathOrFile) -> RawCloud:
    f, close = _open(path, "rb")
    try:
        if f.readline().strip() != b"ply":
            raise FormatError("not a PLY file")
        fmt = None
        count = None
        props: list[tuple[str, str]] = []
        in_vertex = False
        while True:
            line = f.readline()
            if not line:
                raise FormatError("PLY header not terminated")
            tokens = line.decode("ascii", errors="replace").split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    count = int(tokens[2])
                elif count is None:
                    raise FormatError("PLY vertex element must come first")
            elif tokens[0] == "property" and in_vertex:
                props.append((tokens[1], tokens[-1]))
            elif tokens[0] == "end_header":
                break
        if fmt != "binary_little_endian":
            raise FormatError(f"unsupported PLY format {fmt!r}; need binary_little_endian")
        if count is None:
            raise FormatError("PLY file has no vertex element")
        fields = []
        for typ, name in props:
            if name not in _PLY_PROPS:
                raise FormatError(f"unsupported vertex property {name!r}")
            expect = "uchar" if name in ("red", "green", "blue") else "float"
            if typ != expect:
                raise FormatError(f"vertex property {name!r} must be {expect}, got {typ}")
            fields.append((name, "u1" if typ == "uchar" else "<f4"))
        dtype = np.dtype(fields)
        names = {n for n, _ in fields}
        if not {"x", "y", "z"} <= names:
            raise FormatError("PLY vertex element lacks float x, y, z")
        buf = f.read(dtype.itemsize * count)
        if len(buf) < dtype.itemsize * count:
            raise FormatError(
                f"PLY payload truncated: expected {count} vertices, "
                f"found {len(buf) // dtype.itemsize}"
            )
        data = np.frombuffer(buf, dtype=dtype, count=count)
    finally:
        if close:
            f.close()
    if count == 0:
        raise DataError("no points in input")
    raw_pos = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    positions, bbox = normalize_positions(raw_pos)
    normals = None
    if {"nx", "ny", "nz"} <= names:
        normals = np.stack([data["nx"], data["ny"], data["nz"]], axis=1).astype(np.float32)
    colors = None
    if {"red", "green", "blue"} <= names:
        colors = np.stack([data["red"], data["green"], data["blue"]], axis=1)
    return RawCloud(positions, normals, colors, bbox)


def read_raw_points(path: PathOrFile) -> RawCloud:
    """Read an ASCII XYZ file or a binary little-endian PLY subset."""
    if isinstance(path, (str, Path)) and str(path).lower().endswith(".ply"):
        return _read_ply(path)
    if not isinstance(path, (str, Path)):
        head = path.peek(4)[:4] if hasattr(path, "peek") else b""
        if head.startswith(b"ply"):
            return _read_ply(path)
    return _read_xyz_text(path)


# -- sorted stream ------------------------------------------------------------


def _stream_flags(records: np.ndarray) -> int:
    names = records.dtype.names or ()
    return (FLAG_COLOR if "color" in names else 0) | (FLAG_NORMAL if "normal" in names else 0)


def write_sorted_stream(
    path: PathOrFile,
    records: np.ndarray,
    sort_level: int,
    bbox: np.ndarray = UNIT_BBOX,
) -> None:
    f, close = _open(path, "wb")
    try:
        f.write(
            _SS_HEADER.pack(
                SORTED_MAGIC, FORMAT_VERSION, sort_level, len(records),
                _stream_flags(records), *np.asarray(bbox, dtype=np.float32),
            )
        )
        f.write(records.tobytes())
    finally:
        if close:
            f.close()


class SortedStreamWriter:
    """Incremental writer used when chunks are produced one at a time."""

    def __init__(self, path: PathOrFile, sort_level: int, record_count: int,
                 has_normal: bool, has_color: bool, bbox: np.ndarray = UNIT_BBOX):
        self._f, self._close = _open(path, "wb")
        flags = (FLAG_COLOR if has_color else 0) | (FLAG_NORMAL if has_normal else 0)
        self._f.write(
            _SS_HEADER.pack(
                SORTED_MAGIC, FORMAT_VERSION, sort_level, record_count, flags,
                *np.asarray(bbox, dtype=np.float32),
            )
        )
        self._remaining = record_count

    def write_chunk(self, records: np.ndarray) -> None:
        if len(records) > self._remaining:
            raise FormatError("more records written than declared in the header")
        self._remaining -= len(records)
        self._f.write(records.tobytes())

    def close(self) -> None:
        if self._remaining:
            raise FormatError(f"{self._remaining} declared records never written")
        if self._close:
            self._f.close()


def _read_stream_header(f: BinaryIO) -> tuple[int, int, int, np.ndarray]:
    head = f.read(_SS_HEADER.size)
    if len(head) < _SS_HEADER.size:
        raise FormatError("sorted stream header truncated")
    magic, version, sort_level, count, flags, *bbox = _SS_HEADER.unpack(head)
    if magic != SORTED_MAGIC:
        raise FormatError(f"bad magic {magic!r}; not a sorted stream file")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported sorted stream version {version}")
    return sort_level, count, flags, np.asarray(bbox, dtype=np.float32)


def read_sorted_stream(path: PathOrFile) -> SortedStream:
    f, close = _open(path, "rb")
    try:
        sort_level, count, flags, bbox = _read_stream_header(f)
        dtype = sorter.record_dtype(bool(flags & FLAG_NORMAL), bool(flags & FLAG_COLOR))
        payload = f.read(dtype.itemsize * count)
        got = len(payload) // dtype.itemsize
        if got != count:
            raise FormatError(f"expected {count} records, found {got}")
        records = np.frombuffer(payload, dtype=dtype, count=count)
    finally:
        if close:
            f.close()
    codes = records["code"]
    if len(codes):
        diffs = np.diff(codes.astype(np.int64))
        if np.any(diffs < 0):
            i = int(np.argmax(diffs < 0)) + 1
            raise OrderViolationError(f"sorted stream out of order at record {i}")
    return SortedStream(sort_level, bbox, records)


def iter_sorted_stream(
    path: PathOrFile, batch_records: int = 65536
) -> tuple[int, int, np.ndarray, Iterator[np.ndarray]]:
    """Streaming reader: returns (sort_level, count, bbox, batch iterator).

    Batches never split a run of equal codes, so each one can be pushed to
    the builder directly. Order violations raise at the offending batch.
    """
    f, close = _open(path, "rb")
    sort_level, count, flags, bbox = _read_stream_header(f)
    dtype = sorter.record_dtype(bool(flags & FLAG_NORMAL), bool(flags & FLAG_COLOR))

    def gen() -> Iterator[np.ndarray]:
        try:
            carry = np.empty(0, dtype=dtype)
            remaining = count
            last = -1
            while remaining > 0:
                take = min(batch_records, remaining)
                buf = f.read(dtype.itemsize * take)
                if len(buf) < dtype.itemsize * take:
                    raise FormatError(
                        f"expected {count} records, found "
                        f"{count - remaining + len(buf) // dtype.itemsize}"
                    )
                remaining -= take
                batch = np.concatenate([carry, np.frombuffer(buf, dtype=dtype, count=take)])
                codes = batch["code"]
                if np.any(np.diff(codes.astype(np.int64)) < 0) or int(codes[0]) < last:
                    raise OrderViolationError("sorted stream out of order")
                if remaining > 0:
                    # hold back the trailing equal-code run: it may continue
                    # into the next read and must not split across pushes
                    r = len(codes) - 1
                    while r > 0 and codes[r - 1] == codes[-1]:
                        r -= 1
                    carry = batch[r:].copy()
                    batch = batch[:r]
                if len(batch):
                    last = int(batch["code"][-1])
                    yield batch
        finally:
            if close:
                f.close()

    return sort_level, count, bbox, gen()


# -- hierarchy file -----------------------------------------------------------


def write_hierarchy(
    path: PathOrFile,
    root: Optional[Node],
    l_max: int,
    ratio: float,
    leaf_collapse: bool,
    bbox: np.ndarray = UNIT_BBOX,
) -> int:
    """Serialize a finished tree breadth-first; returns the node count."""
    nodes: list[Node] = []
    if root is not None:
        q = deque([root])
        while q:
            n = q.popleft()
            nodes.append(n)
            q.extend(n.children)
    frac = Fraction(ratio).limit_denominator(10000)
    flags = FLAG_LEAF_COLLAPSE if leaf_collapse else 0
    f, close = _open(path, "wb")
    try:
        f.write(
            _HF_HEADER.pack(
                HIERARCHY_MAGIC, FORMAT_VERSION, l_max, len(nodes), flags,
                frac.numerator, frac.denominator, *np.asarray(bbox, dtype=np.float32),
            )
        )
        for n in nodes:
            mask = 0
            for c in n.children:
                mask |= 1 << (c.code & 0b111)
            f.write(_NODE_HEAD.pack(n.code, len(n.splats)))
            f.write(n.splats.tobytes())
            f.write(bytes([mask]))
    finally:
        if close:
            f.close()
    return len(nodes)


def read_hierarchy(path: PathOrFile, allow_partial: bool = False) -> HierarchyFile:
    """Rebuild the tree from breadth-first records.

    With allow_partial, a truncated file yields the valid coarse prefix that
    was fully read (children promised by a mask but missing are dropped).
    """
    f, close = _open(path, "rb")
    try:
        head = f.read(_HF_HEADER.size)
        if len(head) < _HF_HEADER.size:
            raise FormatError("hierarchy header truncated")
        magic, version, l_max, node_count, flags, num, den, *bbox = _HF_HEADER.unpack(head)
        if magic != HIERARCHY_MAGIC:
            raise FormatError(f"bad magic {magic!r}; not a hierarchy file")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported hierarchy version {version}")
        root: Optional[Node] = None
        expecting: deque[tuple[Node, int]] = deque()  # (parent, child slots left)
        read_count = 0
        for _ in range(node_count):
            nh = f.read(_NODE_HEAD.size)
            if len(nh) < _NODE_HEAD.size:
                if allow_partial:
                    break
                raise FormatError(f"expected {node_count} nodes, found {read_count}")
            code, splat_count = _NODE_HEAD.unpack(nh)
            payload = f.read(SPLAT_DTYPE.itemsize * splat_count + 1)
            if len(payload) < SPLAT_DTYPE.itemsize * splat_count + 1:
                if allow_partial:
                    break
                raise FormatError(f"node {bin(code)} payload truncated")
            splats = np.frombuffer(payload[:-1], dtype=SPLAT_DTYPE, count=splat_count)
            mask = payload[-1]
            node = Node(code, splats=splats)
            node.published = True
            if root is None:
                root = node
            else:
                if not expecting:
                    raise FormatError(f"unexpected extra node {bin(code)}")
                parent, slots = expecting[0]
                if (code >> 3) != parent.code:
                    raise FormatError(
                        f"node {bin(code)} does not match pending parent {bin(parent.code)}"
                    )
                parent.children.append(node)
                node.parent = parent
                if slots == 1:
                    expecting.popleft()
                else:
                    expecting[0] = (parent, slots - 1)
            nchildren = bin(mask).count("1")
            if nchildren:
                expecting.append((node, nchildren))
            read_count += 1
        complete = read_count == node_count
        if expecting and not allow_partial:
            raise FormatError(
                f"dangling child mask: {bin(expecting[0][0].code)} promises "
                "children that never appear"
            )
    finally:
        if close:
            f.close()
    return HierarchyFile(
        l_max=l_max,
        bbox=np.asarray(bbox, dtype=np.float32),
        ratio=num / den if den else 0.0,
        leaf_collapse=bool(flags & FLAG_LEAF_COLLAPSE),
        node_count=node_count,
        root=root,
        complete=complete,
    )


def hierarchy_bytes(root: Optional[Node], l_max: int, ratio: float, leaf_collapse: bool,
                    bbox: np.ndarray = UNIT_BBOX) -> bytes:
    buf = io.BytesIO()
    write_hierarchy(buf, root, l_max, ratio, leaf_collapse, bbox)
    return buf.getvalue()
