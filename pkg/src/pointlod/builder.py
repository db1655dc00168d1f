"""Multi-threaded streaming construction pipeline.

One master thread owns the cut. Each bottom-up pass slices the current
level's root list into fixed-size worklists; workers scan their slices into
sibling groups, the master re-joins groups split at slice boundaries (the
duplicate-parent elimination: the earlier slice's group wins and absorbs the
children, so no child is lost), applies the level step, and publishes the
nodes that just became immutable to the fronts through per-level hand-off
queues. Safety for front consumption is tracked by a per-level watermark:
a node is safe once its grandparent exists, i.e. it is neither a subtree
root nor the child of one.
"""

from __future__ import annotations

import queue
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import lod, morton
from .cut import LevelFixReport, Node, ObliqueCut, SiblingGroup, group_siblings, merge_adjacent_groups
from .errors import IncompleteStreamError, OrderViolationError


@dataclass
class BuildConfig:
    l_max: int = 7
    worklist_size: int = 32
    parent_point_ratio: float = 0.25
    leaf_collapse: bool = False
    worker_threads: int = 1
    projection_threshold_px: float = 32.0
    segment_budget: int = 2000

    def __post_init__(self):
        if not 1 <= self.l_max <= morton.MAX_LEVEL:
            raise ValueError(f"l_max {self.l_max} outside [1, {morton.MAX_LEVEL}]")
        if self.worklist_size < 1:
            raise ValueError("worklist_size must be at least 1")
        if not 0.0 < self.parent_point_ratio <= 1.0:
            raise ValueError("parent_point_ratio must be in (0, 1]")
        if self.worker_threads < 1:
            raise ValueError("worker_threads must be at least 1")


@dataclass
class Worklist:
    """Fixed-size batch of same-level subtree roots handed to one thread."""

    level: int
    roots: list[Node]


@dataclass
class PassReport:
    level: int
    worklists: int = 0
    duplicate_merges: int = 0
    fix: LevelFixReport = field(default_factory=lambda: LevelFixReport(0))


class SafeWatermark:
    """Per-level code below which every node is immutable and front-eligible.

    Written only by the master thread; read by front threads. CPython's GIL
    makes the int store/load atomic, and publication into the hand-off
    queues happens after the corresponding advance.
    """

    def __init__(self, l_max: int):
        self.levels = [-1] * (l_max + 1)

    def advance(self, level: int, code: int) -> None:
        if code < self.levels[level]:
            raise AssertionError("watermark must be monotone per level")
        self.levels[level] = code

    def open_all(self) -> None:
        for level in range(len(self.levels)):
            self.levels[level] = morton.max_code(level)

    def safe(self, node: Node) -> bool:
        return node.code <= self.levels[morton.level_of(node.code)]


class HandoffQueues:
    """One consumer's view of the builder's publications.

    A single placeholder queue plus one leaf queue per hierarchy level, each
    behind its own lock, drained by the owning front at evaluation start.
    """

    def __init__(self, l_max: int):
        self.l_max = l_max
        self._ph_lock = threading.Lock()
        self._placeholders: deque[int] = deque()
        self._leaf_locks = [threading.Lock() for _ in range(l_max + 1)]
        self._leaves: list[deque[Node]] = [deque() for _ in range(l_max + 1)]
        self.complete = threading.Event()

    def put_placeholders(self, codes: Iterable[int]) -> None:
        with self._ph_lock:
            self._placeholders.extend(codes)

    def take_placeholders(self) -> list[int]:
        with self._ph_lock:
            out = list(self._placeholders)
            self._placeholders.clear()
        return out

    def put_leaves(self, level: int, nodes: Iterable[Node]) -> None:
        with self._leaf_locks[level]:
            self._leaves[level].extend(nodes)

    def take_leaves(self, level: int) -> list[Node]:
        with self._leaf_locks[level]:
            out = list(self._leaves[level])
            self._leaves[level].clear()
        return out


class Broadcast:
    """Fan-out of builder publications to any number of client fronts.

    Keeps a replay log so a client subscribing mid-build receives everything
    published so far, in original order, before live traffic.
    """

    def __init__(self, l_max: int):
        self.l_max = l_max
        self._lock = threading.Lock()
        self._clients: list[HandoffQueues] = []
        self._replay_placeholders: list[int] = []
        self._replay_leaves: list[list[Node]] = [[] for _ in range(l_max + 1)]
        self._complete = False

    def subscribe(self) -> HandoffQueues:
        q = HandoffQueues(self.l_max)
        with self._lock:
            q.put_placeholders(self._replay_placeholders)
            for level, leaves in enumerate(self._replay_leaves):
                q.put_leaves(level, leaves)
            if self._complete:
                q.complete.set()
            self._clients.append(q)
        return q

    def unsubscribe(self, q: HandoffQueues) -> None:
        with self._lock:
            if q in self._clients:
                self._clients.remove(q)

    def publish_placeholders(self, codes: list[int]) -> None:
        with self._lock:
            self._replay_placeholders.extend(codes)
            for q in self._clients:
                q.put_placeholders(codes)

    def publish_leaves(self, level: int, nodes: list[Node]) -> None:
        with self._lock:
            self._replay_leaves[level].extend(nodes)
            for q in self._clients:
                q.put_leaves(level, nodes)

    def mark_complete(self) -> None:
        with self._lock:
            self._complete = True
            for q in self._clients:
                q.complete.set()


ProgressCallback = Callable[[float, dict[int, int]], None]

_FINISH = object()

UP = "up"
RESTART = "restart"


def splats_sort_keys(splats: np.ndarray) -> tuple:
    """Lexsort keys covering the full payload; least-significant first."""
    return tuple(splats["color"][:, i] for i in (2, 1, 0)) + tuple(
        splats[f][:, i] for f in ("v", "u", "center") for i in (2, 1, 0)
    )


class Builder:
    """Streams sorted deepest-level records into a finished hierarchy.

    `start()` runs the master loop on its own thread, with `push_chunk`
    feeding it through a bounded queue; without `start()` the same handlers
    run inline on the caller's thread (handy for tests and one-shot builds).
    """

    def __init__(
        self,
        config: BuildConfig,
        broadcast: Optional[Broadcast] = None,
        progress: Optional[ProgressCallback] = None,
        expected_points: Optional[int] = None,
    ):
        self.config = config
        self.cut = ObliqueCut(config.l_max)
        self.watermark = SafeWatermark(config.l_max)
        self.broadcast = broadcast or Broadcast(config.l_max)
        self.progress = progress
        self.expected_points = expected_points
        self.node_counts: dict[int, int] = {l: 0 for l in range(config.l_max + 1)}
        self.consumed_points = 0
        self._high_water = 0
        self._queued_leaves = 0
        self._queue_lock = threading.Lock()
        self._inq: queue.Queue = queue.Queue(maxsize=8)
        self._thread: Optional[threading.Thread] = None
        self._pool: Optional[ThreadPoolExecutor] = None
        self._finishing = False
        self._finish_called = False
        self._root: Optional[Node] = None
        self._done = threading.Event()
        self._error: Optional[BaseException] = None

    # -- producer side -------------------------------------------------------

    def start(self) -> "Builder":
        self._thread = threading.Thread(target=self._run, name="hierarchy-master", daemon=True)
        self._thread.start()
        return self

    def push_chunk(self, codes: np.ndarray, splats: np.ndarray) -> None:
        """Feed one ascending batch of deepest-level records.

        Codes may repeat within the batch (same cell); such records merge
        into one leaf. Every code must exceed everything pushed before.
        """
        if self._finish_called:
            raise IncompleteStreamError("push_chunk after finish()")
        if len(codes) == 0:
            return
        codes = np.asarray(codes, dtype=np.uint64)
        if np.any(np.diff(codes.astype(np.int64)) < 0):
            raise OrderViolationError("chunk codes are not ascending; upstream sort is broken")
        if int(codes[0]) <= self._high_water:
            raise OrderViolationError(
                f"chunk starts at {bin(int(codes[0]))}, not beyond {bin(self._high_water)}"
            )
        if np.any(codes >> np.uint64(3 * self.config.l_max) != 1):
            raise OrderViolationError(f"chunk codes are not at level {self.config.l_max}")
        self._high_water = int(codes[-1])

        # canonical order inside each cell, so equal-code records can arrive
        # in any order and still produce identical leaves
        order = np.lexsort(splats_sort_keys(splats) + (codes,))
        codes = codes[order]
        splats = splats[order]
        cell_codes, starts = np.unique(codes, return_index=True)
        bounds = np.append(starts, len(codes))
        leaves = [
            Node(int(cell_codes[i]), splats=splats[bounds[i] : bounds[i + 1]])
            for i in range(len(cell_codes))
        ]
        self.broadcast.publish_placeholders([leaf.code for leaf in leaves])
        with self._queue_lock:
            self._queued_leaves += len(leaves)
        if self._thread is None:
            self._handle_leaves(leaves)
        else:
            self._inq.put(leaves)

    def finish(self) -> Optional[Node]:
        """Drain all remaining passes to the root and return it (None if the
        stream was empty)."""
        self._finish_called = True
        if self._thread is None:
            self._drain_to_root()
        else:
            while not self._done.is_set():
                try:
                    self._inq.put(_FINISH, timeout=0.5)
                    break
                except queue.Full:
                    continue  # master died or is slow; re-check _done
            self._done.wait()
            self._thread.join()
        if self._error is not None:
            raise self._error
        return self._root

    # -- master loop ----------------------------------------------------------

    def _run(self) -> None:
        try:
            while True:
                item = self._inq.get()
                if item is _FINISH:
                    break
                batch = [item]
                while True:
                    try:
                        nxt = self._inq.get_nowait()
                    except queue.Empty:
                        break
                    if nxt is _FINISH:
                        self._finishing = True
                        break
                    batch.append(nxt)
                for leaves in batch:
                    self._handle_leaves(leaves)
                if self._finishing:
                    break
            self._drain_to_root()
        except BaseException as exc:  # surfaced by finish()
            self._error = exc
        finally:
            self._done.set()

    def _handle_leaves(self, leaves: list[Node]) -> None:
        self.cut.concatenate(leaves)
        with self._queue_lock:
            self._queued_leaves -= len(leaves)
        self.consumed_points += sum(len(n.splats) for n in leaves)
        self.node_counts[self.config.l_max] += len(leaves)
        level = self.config.l_max
        while level >= 1:
            if self.cut.lists[level]:
                self.run_fix_pass(level)
            if level > 1 and self.should_start_new_pass(level) == RESTART:
                break
            level -= 1

    def _drain_to_root(self) -> None:
        self._finishing = True
        self.cut.advance_to_end()
        for level in range(self.config.l_max, 0, -1):
            if self.cut.lists[level]:
                self.run_fix_pass(level)
        roots = self.cut.roots()
        if len(roots) > 1:
            raise IncompleteStreamError(f"{len(roots)} roots remain after the final drain")
        self._root = roots[0] if roots else None
        self.watermark.open_all()
        if self._root is not None:
            self._register_remaining_leaves(self._root)
        self._emit_progress(final=True)
        self.broadcast.mark_complete()
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    # -- one bottom-up step ----------------------------------------------------

    def run_fix_pass(self, level: int) -> PassReport:
        roots = self.cut.lists[level]
        w = self.config.worklist_size
        worklists = [Worklist(level, roots[i : i + w]) for i in range(0, len(roots), w)]
        per_slice = self._group_worklists(worklists)
        merged = merge_adjacent_groups(per_slice)
        report = PassReport(
            level=level,
            worklists=len(worklists),
            duplicate_merges=sum(len(g) for g in per_slice) - len(merged),
        )
        report.fix = self.cut.apply_groups(
            level,
            merged,
            ratio=self.config.parent_point_ratio,
            leaf_collapse=self.config.leaf_collapse,
        )
        self._account_fix(level, report.fix)
        self._publish_created(level, report.fix.created)
        self._emit_progress()
        return report

    def _group_worklists(self, worklists: list[Worklist]) -> list[list[SiblingGroup]]:
        if len(worklists) <= 1 or self.config.worker_threads == 1:
            return [group_siblings(wl.roots) for wl in worklists]
        if self._pool is None:
            self._pool = ThreadPoolExecutor(
                max_workers=self.config.worker_threads - 1, thread_name_prefix="hierarchy-worker"
            )
        results: list[Optional[list[SiblingGroup]]] = [None] * len(worklists)
        stride = self.config.worker_threads
        for base in range(0, len(worklists), stride):
            wave = worklists[base : base + stride]
            futures = [self._pool.submit(group_siblings, wl.roots) for wl in wave[1:]]
            results[base] = group_siblings(wave[0].roots)  # master takes a slice too
            for j, fut in enumerate(futures):
                results[base + 1 + j] = fut.result()
        return results  # type: ignore[return-value]

    def should_start_new_pass(self, level: int) -> str:
        """After a pass at `level`: keep climbing, or go back for new input."""
        if self._finishing:
            return UP
        if len(self.cut.lists[level - 1]) >= self.config.worklist_size:
            return UP
        with self._queue_lock:
            queued = self._queued_leaves
        if queued >= self.config.worklist_size:
            return RESTART
        return UP

    # -- publication -----------------------------------------------------------

    def _account_fix(self, level: int, fix: LevelFixReport) -> None:
        real_created = sum(1 for n in fix.created if not n.is_placeholder)
        self.node_counts[level - 1] += real_created
        self.node_counts[self.config.l_max] -= fix.leaves_collapsed

    def _publish_created(self, level: int, created: list[Node]) -> None:
        """Nodes two levels below a new parent just became immutable."""
        if level + 1 > self.config.l_max:
            newly_safe_level = None
        else:
            newly_safe_level = level + 1
        safe_nodes: list[Node] = []
        for parent in created:
            for child in parent.children:
                safe_nodes.extend(child.children)
        if not safe_nodes or newly_safe_level is None:
            return
        leaves = []
        for n in safe_nodes:
            n.published = True
            if n.is_leaf():
                leaves.append(n)
        self.watermark.advance(newly_safe_level, safe_nodes[-1].code)
        if leaves:
            self.broadcast.publish_leaves(newly_safe_level, leaves)

    def _register_remaining_leaves(self, root: Node) -> None:
        per_level: dict[int, list[Node]] = {}
        for n in root.walk():
            if not n.published:
                n.published = True
                if n.is_leaf():
                    per_level.setdefault(n.level, []).append(n)
        for level, leaves in sorted(per_level.items()):
            leaves.sort(key=lambda n: n.code)
            self.broadcast.publish_leaves(level, leaves)

    def _emit_progress(self, final: bool = False) -> None:
        if self.progress is None:
            return
        if final:
            fraction = 1.0
        elif self.expected_points:
            fraction = min(1.0, self.consumed_points / self.expected_points)
        else:
            fraction = 0.0
        self.progress(fraction, dict(self.node_counts))


def make_leaf_splats(
    positions: np.ndarray,
    normals: Optional[np.ndarray],
    colors: Optional[np.ndarray],
    l_max: int,
) -> np.ndarray:
    """Raw attributes to splat payloads with the default radius for l_max."""
    return lod.make_splats(positions, normals, colors, lod.default_splat_radius(l_max))


def build_hierarchy(
    codes: np.ndarray,
    splats: np.ndarray,
    config: BuildConfig,
    chunks: int = 1,
    progress: Optional[ProgressCallback] = None,
) -> Optional[Node]:
    """One-shot build of fully sorted records, optionally in several pushes."""
    b = Builder(config, progress=progress, expected_points=len(codes))
    if len(codes):
        splits = np.array_split(np.arange(len(codes)), max(1, chunks))
        pos = 0
        for idx in splits:
            if len(idx) == 0:
                continue
            end = pos + len(idx)
            # never split a run of equal codes across pushes
            while end < len(codes) and codes[end] == codes[end - 1]:
                end += 1
            if end > pos:
                b.push_chunk(codes[pos:end], splats[pos:end])
            pos = end
        if pos < len(codes):
            b.push_chunk(codes[pos:], splats[pos:])
    return b.finish()
