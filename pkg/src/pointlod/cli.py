"""Command-line entry points wiring the pipelines.

Subcommands: sort (raw -> sorted stream), build (sorted stream -> hierarchy
file), serve (raw or sorted -> live service), bench (chunk-count sweep as
CSV), validate (invariant suite over a hierarchy file). Every flag default
can be overridden by an environment variable prefixed ``OMICRON_`` (e.g.
``OMICRON_LMAX``, ``OMICRON_THREADS``).
"""

from __future__ import annotations

import argparse
import os
import sys
import threading
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import persistence, sorter
from .builder import BuildConfig, Builder
from .cut import validate_tree
from .errors import DataError, FormatError, IncompleteStreamError, OrderViolationError
from .front import Front
from .lod import Camera


def _env(name: str, default, cast=str):
    raw = os.environ.get(f"OMICRON_{name}")
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError:
        raise SystemExit(f"bad OMICRON_{name}={raw!r}")


def _flag_env(name: str, default: bool) -> bool:
    raw = os.environ.get(f"OMICRON_{name}")
    if raw is None:
        return default
    return raw.lower() in ("1", "true", "yes", "on")


def _build_config(args) -> BuildConfig:
    return BuildConfig(
        l_max=args.lmax,
        worklist_size=args.worklist,
        parent_point_ratio=args.ratio,
        leaf_collapse=args.leaf_collapse,
        worker_threads=args.threads,
        projection_threshold_px=getattr(args, "threshold", 32.0),
    )


def _add_build_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lmax", type=int, default=_env("LMAX", 7, int),
                   help="maximum hierarchy depth (default 7)")
    p.add_argument("--worklist", type=int, default=_env("WORKLIST", 32, int),
                   help="fixed worklist size (default 32)")
    p.add_argument("--ratio", type=float, default=_env("RATIO", 0.25, float),
                   help="parent-to-children point ratio (default 0.25)")
    p.add_argument("--leaf-collapse", action="store_true",
                   default=_flag_env("LEAF_COLLAPSE", False),
                   help="drop deepest-level leaves that have no siblings")
    p.add_argument("--threads", type=int, default=_env("THREADS", 1, int),
                   help="construction threads, master included (default 1)")


def _read_source_records(path: str, sort_level: int):
    """Raw cloud (.xyz/.ply) or sorted stream (.omss) -> (records, bbox, sorted?)."""
    if path.lower().endswith(".omss"):
        stream = persistence.read_sorted_stream(path)
        return stream.records, stream.bbox, True
    cloud = persistence.read_raw_points(path)
    records = sorter.assign_codes(cloud.positions, sort_level, cloud.normals, cloud.colors)
    return records, cloud.bbox, False


def cmd_sort(args) -> int:
    cloud = persistence.read_raw_points(args.input)
    records = sorter.assign_codes(cloud.positions, args.level, cloud.normals, cloud.colors)
    writer = persistence.SortedStreamWriter(
        args.output, args.level, len(records),
        has_normal=cloud.normals is not None, has_color=cloud.colors is not None,
        bbox=cloud.bbox,
    )
    for chunk in sorter.chunked_sort(records, args.chunks):
        writer.write_chunk(chunk)
    writer.close()
    print(f"wrote {len(records)} records at level {args.level} to {args.output}",
          file=sys.stderr)
    return 0


def cmd_build(args) -> int:
    t0 = time.perf_counter()

    def progress(fraction: float, _counts) -> None:
        elapsed_ms = int((time.perf_counter() - t0) * 1000)
        print(f"progress {fraction:.4f} {elapsed_ms}", file=sys.stderr)

    sort_level, count, bbox, batches = persistence.iter_sorted_stream(args.input)
    if sort_level < args.lmax:
        print(f"error: stream sorted at level {sort_level} cannot feed a "
              f"depth-{args.lmax} build", file=sys.stderr)
        return 1
    config = _build_config(args)
    b = Builder(config, progress=progress, expected_points=count).start()
    for codes, splats in sorter.stream_build_batches(batches, config.l_max):
        b.push_chunk(codes, splats)
    root = b.finish()
    n = persistence.write_hierarchy(
        args.output, root, config.l_max, config.parent_point_ratio,
        config.leaf_collapse, bbox,
    )
    print(f"wrote {n} nodes to {args.output}", file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    h = persistence.read_hierarchy(args.input)
    if h.root is None:
        print("empty hierarchy", file=sys.stderr)
        return 0
    report = validate_tree(h.root)
    print(report.describe())
    return 0 if report.ok else 1


def cmd_serve(args) -> int:
    from .service import ServiceState, serve

    config = _build_config(args)
    state = ServiceState(config, tick_hz=args.tick)
    if args.input.lower().endswith(".omss"):
        sort_level, count, bbox, batches = persistence.iter_sorted_stream(args.input)
        if sort_level < config.l_max:
            print("error: stream is shallower than the requested depth", file=sys.stderr)
            return 1
        state.feed_record_batches(batches, count)
    else:
        cloud = persistence.read_raw_points(args.input)
        state.feed_raw(cloud.positions, cloud.normals, cloud.colors, chunks=args.chunks)
    print(f"serving on ws://{args.host}:{args.port}/ws", file=sys.stderr)
    serve(state, host=args.host, port=args.port)
    return 0


@dataclass
class BenchResult:
    chunks: int
    first_render_ms: float
    complete_ms: float
    peak_nodes: int


def bench_streaming_build(
    records: np.ndarray,
    chunks: int,
    config: BuildConfig,
    eval_interval: float = 0.005,
) -> BenchResult:
    """Measure time-to-first-nonempty-render-set and total build time.

    Mirrors the live pipeline: chunked sort feeding the threaded builder,
    with a headless front evaluating continuously.
    """
    peak = {"nodes": 0}

    def progress(_f, counts):
        peak["nodes"] = max(peak["nodes"], sum(counts.values()))

    builder = Builder(config, progress=progress, expected_points=len(records)).start()
    hub = builder.broadcast.subscribe()
    front = Front(config.l_max, safety=builder.watermark.safe)
    front.hub = hub
    camera = Camera.looking_at([0.5, 0.5, 2.5], [0.5, 0.5, 0.5])
    t0 = time.perf_counter()
    first_render: dict[str, float] = {}
    done = threading.Event()

    def feed():
        for chunk in sorter.chunked_sort(records, chunks):
            if len(chunk):
                codes, splats = sorter.to_build_inputs(chunk, config.l_max)
                builder.push_chunk(codes, splats)
        builder.finish()
        done.set()

    feeder = threading.Thread(target=feed, daemon=True)
    feeder.start()
    while not done.is_set() or "t" not in first_render:
        rs = front.evaluate(camera, config.projection_threshold_px, cull=False)
        if rs.nodes and "t" not in first_render:
            first_render["t"] = time.perf_counter() - t0
        if done.is_set():
            break
        time.sleep(eval_interval)
    complete = time.perf_counter() - t0
    feeder.join()
    return BenchResult(chunks, first_render.get("t", complete) * 1000,
                       complete * 1000, peak["nodes"])


def cmd_bench(args) -> int:
    records, _bbox, pre_sorted = _read_source_records(args.input, args.lmax)
    if pre_sorted:
        level = sorter.level_of_records(records)
        if level != args.lmax:
            # bench re-sorts per run; re-tag codes at build depth
            records = records.copy()
            records["code"] = sorter.truncate_codes(records["code"], level, args.lmax)
    config = _build_config(args)
    print("chunks,first_render_ms,complete_ms,peak_nodes")
    for chunks in args.chunks:
        r = bench_streaming_build(records, chunks, config)
        print(f"{r.chunks},{r.first_render_ms:.1f},{r.complete_ms:.1f},{r.peak_nodes}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointlod",
        description="Streaming point-cloud level-of-detail engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sort", help="raw cloud -> sorted stream file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--level", type=int, default=_env("SORT_LEVEL", 10, int),
                   help="sorting depth; builds accept any lmax <= this (default 10)")
    p.add_argument("--chunks", type=int, default=_env("CHUNKS", 1, int))
    p.set_defaults(func=cmd_sort)

    p = sub.add_parser("build", help="sorted stream -> hierarchy file")
    p.add_argument("input")
    p.add_argument("output")
    _add_build_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("serve", help="serve a live building session over websockets")
    p.add_argument("input", help="raw cloud or sorted stream")
    p.add_argument("--host", default=_env("HOST", "127.0.0.1"))
    p.add_argument("--port", type=int, default=_env("PORT", 8765, int))
    p.add_argument("--tick", type=float, default=_env("TICK", 30.0, float),
                   help="front evaluations per second per client")
    p.add_argument("--threshold", type=float, default=_env("THRESHOLD", 32.0, float),
                   help="projection threshold in pixels")
    p.add_argument("--chunks", type=int, default=_env("CHUNKS", 8, int))
    _add_build_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="chunk-count sweep; CSV on stdout")
    p.add_argument("input")
    p.add_argument("--chunks", type=lambda s: [int(x) for x in s.split(",")],
                   default=[1, 4, 16])
    _add_build_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate", help="run the invariant suite over a hierarchy file")
    p.add_argument("input")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (FormatError, DataError, OrderViolationError, IncompleteStreamError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
