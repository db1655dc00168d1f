"""Renderable front over the hierarchy while it is under construction.

The front is an ordered sequence of entries (real nodes or empty
placeholders standing in for leaves that are not yet safe to expose), plus
per-level lists of pending leaves awaiting O(1) placeholder substitution.
Per evaluation it drains hand-off queues, picks one substitution level,
and walks (a segment of) the entries substituting, pruning, branching or
rendering each one.

A front instance is owned by exactly one thread; producers talk to it only
through :class:`pointlod.builder.HandoffQueues`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import lod, morton
from .cut import Node
from .errors import OrderViolationError

SafetyCheck = Callable[[Node], bool]


def _always_safe(_: Node) -> bool:
    return True


@dataclass
class EvalStats:
    chosen_level: Optional[int] = None
    examined: int = 0
    substitutions: int = 0
    prunes: int = 0
    branches: int = 0


@dataclass
class RenderSet:
    """Nodes to draw after one evaluation (placeholders contribute nothing)."""

    nodes: list[Node] = field(default_factory=list)
    stats: EvalStats = field(default_factory=EvalStats)


class Front:
    def __init__(self, l_max: int, safety: Optional[SafetyCheck] = None):
        self.l_max = l_max
        self.safety: SafetyCheck = safety or _always_safe
        self.entries: list[Node] = []
        self.pending: list[deque[Node]] = [deque() for _ in range(l_max + 1)]
        self.cursor = 0
        self.full_evals = 0
        # consecutive evaluations a level sat non-empty without being chosen
        self._starve = [0] * (l_max + 1)
        self.hub = None  # optional HandoffQueues drained at evaluation start

    # -- producer-facing ----------------------------------------------------

    def insert_placeholder(self, code: int) -> None:
        if morton.level_of(code) != self.l_max:
            raise OrderViolationError("placeholders live at the deepest level")
        if self.entries:
            last = self.entries[-1]
            if code <= morton.span(last.code, self.l_max):
                raise OrderViolationError(
                    f"placeholder {bin(code)} not beyond front tail "
                    f"{bin(last.code)}"
                )
        self.entries.append(Node(code, is_placeholder=True))

    def register_leaf(self, leaf: Node) -> None:
        level = leaf.level
        lst = self.pending[level]
        if lst and lst[-1].code >= leaf.code:
            raise OrderViolationError(
                f"pending leaf {bin(leaf.code)} arrived out of Morton order"
            )
        lst.append(leaf)

    def drain(self) -> None:
        if self.hub is None:
            return
        for code in self.hub.take_placeholders():
            self.insert_placeholder(code)
        for level in range(self.l_max + 1):
            for leaf in self.hub.take_leaves(level):
                self.register_leaf(leaf)

    # -- evaluation ---------------------------------------------------------

    def choose_substitution_level(self) -> Optional[int]:
        """Level with the most pending insertions; deeper wins ties.

        A level left waiting close to the latency bound overrides the count
        heuristic, so every registered leaf is substituted within at most
        l_max - 1 full evaluations.
        """
        nonempty = [l for l in range(self.l_max + 1) if self.pending[l]]
        if not nonempty:
            return None
        starving = [l for l in nonempty if self._starve[l] >= self.l_max - 2]
        if starving:
            return max(starving, key=lambda l: (self._starve[l], len(self.pending[l]), l))
        return max(nonempty, key=lambda l: (len(self.pending[l]), l))

    def evaluate(
        self,
        cam: lod.Camera,
        threshold_px: float,
        segment_budget: int = 0,
        cull: bool = True,
    ) -> RenderSet:
        """One front evaluation; segment_budget 0 walks the whole front."""
        self.drain()
        stats = EvalStats()
        sub_level = self.choose_substitution_level()
        stats.chosen_level = sub_level
        for l in range(self.l_max + 1):
            if not self.pending[l]:
                self._starve[l] = 0
            elif l == sub_level:
                self._starve[l] = 0
            else:
                self._starve[l] += 1
        pending = self.pending[sub_level] if sub_level is not None else None

        entries = self.entries
        if segment_budget <= 0:
            start, budget = 0, len(entries)
            self.full_evals += 1
        else:
            start = self.cursor if self.cursor < len(entries) else 0
            budget = segment_budget

        out: list[Node] = entries[:start]
        i = start
        consumed = 0
        while i < len(entries) and consumed < budget:
            node = entries[i]
            if node.is_placeholder:
                if pending and morton.is_ancestor_or_equal(pending[0].code, node.code):
                    out.append(pending.popleft())
                    stats.substitutions += 1
                else:
                    out.append(node)
                i += 1
                consumed += 1
                continue
            parent = node.parent
            if parent is not None and parent.children[0] is node and self.safety(parent):
                k = len(parent.children)
                if (
                    i + k <= len(entries)
                    and consumed + k <= budget
                    and all(entries[i + j] is parent.children[j] for j in range(k))
                    and lod.projected_extent(parent.code, cam) < threshold_px
                ):
                    out.append(parent)
                    stats.prunes += 1
                    i += k
                    consumed += k
                    continue
            if (
                node.children
                and lod.projected_extent(node.code, cam) > threshold_px
                and all(self.safety(c) for c in node.children)
            ):
                out.extend(node.children)
                stats.branches += 1
            else:
                out.append(node)
            i += 1
            consumed += 1
        stats.examined = consumed
        window_end = len(out)
        out.extend(entries[i:])
        self.entries = out
        self.cursor = 0 if segment_budget <= 0 or window_end >= len(out) else window_end

        render = [n for n in out if not n.is_placeholder]
        if cull:
            render = [n for n in render if lod.node_in_frustum(n.code, cam)]
        return RenderSet(nodes=render, stats=stats)

    # -- validation ---------------------------------------------------------

    def check_order_invariant(self) -> Optional[str]:
        """Spans strictly ascending along the front; None when satisfied."""
        prev = -1
        for n in self.entries:
            s = morton.span(n.code, self.l_max)
            if s <= prev:
                return f"span({bin(n.code)}) not above its left neighbour"
            prev = s
        for lst in self.pending:
            for a, b in zip(lst, list(lst)[1:]):
                if a.code >= b.code:
                    return f"pending leaves out of order at {bin(b.code)}"
        return None
