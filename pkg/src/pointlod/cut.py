"""Under-construction octree represented as per-level lists of subtree roots.

The structure is delimited by a deepest-level code ``m_c``: everything whose
rightmost deepest-level descendant is at or left of ``m_c`` is final and
materialized, everything right of it does not exist yet. New deepest-level
leaves are appended with :meth:`ObliqueCut.concatenate`; their missing
ancestors are then created bottom-up by :meth:`ObliqueCut.fix`, which stops
at parents that could still receive children from future input.

A cut instance is confined to one coordinating thread between passes; it
provides no internal synchronization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import lod, morton
from .errors import IncompleteStreamError, OrderViolationError


class Node:
    """Octree node. Placeholders are empty stand-ins for not-yet-safe leaves."""

    __slots__ = ("code", "splats", "children", "parent", "is_placeholder", "published")

    def __init__(
        self,
        code: int,
        splats: np.ndarray = lod.EMPTY_SPLATS,
        children: Optional[list["Node"]] = None,
        is_placeholder: bool = False,
    ):
        self.code = code
        self.splats = splats
        self.children: list[Node] = children if children is not None else []
        self.parent: Optional[Node] = None
        self.is_placeholder = is_placeholder
        self.published = False

    @property
    def level(self) -> int:
        return morton.level_of(self.code)

    def is_leaf(self) -> bool:
        return not self.children and not self.is_placeholder

    def walk(self) -> Iterable["Node"]:
        stack = [self]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(n.children))

    def __repr__(self):
        kind = "placeholder" if self.is_placeholder else f"{len(self.splats)} splats"
        return f"<Node {bin(self.code)} level={self.level} {kind} {len(self.children)} children>"


@dataclass
class SiblingGroup:
    """Consecutive same-parent roots taken from one level list."""

    parent_code: int
    members: list[Node]


@dataclass
class LevelFixReport:
    """What one bottom-up step at a single level did."""

    level: int
    created: list[Node] = field(default_factory=list)
    survivors: int = 0
    placeholders_consumed: int = 0
    leaves_materialized: int = 0
    leaves_collapsed: int = 0


@dataclass
class InvariantReport:
    """Pass/fail per cut invariant, with the first witness on failure."""

    results: dict[str, tuple[bool, Optional[str]]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(passed for passed, _ in self.results.values())

    def failing(self) -> list[str]:
        return [k for k, (passed, _) in self.results.items() if not passed]

    def describe(self) -> str:
        lines = []
        for key, (passed, witness) in sorted(self.results.items()):
            status = "ok" if passed else f"FAIL ({witness})"
            lines.append(f"invariant {key}: {status}")
        return "\n".join(lines)


ParentSplatPolicy = Callable[[np.ndarray, float], np.ndarray]


def group_siblings(roots: list[Node]) -> list[SiblingGroup]:
    """Split an ascending root list into runs sharing a parent code."""
    groups: list[SiblingGroup] = []
    for node in roots:
        pc = node.code >> 3
        if groups and groups[-1].parent_code == pc:
            groups[-1].members.append(node)
        else:
            groups.append(SiblingGroup(pc, [node]))
    return groups


def merge_adjacent_groups(per_slice: list[list[SiblingGroup]]) -> list[SiblingGroup]:
    """Re-join sibling groups that a fixed-size worklist split apart.

    Only the last group of one slice and the first of the next can belong
    together; earlier slices win, so results do not depend on which thread
    produced which slice.
    """
    merged: list[SiblingGroup] = []
    for groups in per_slice:
        for g in groups:
            if merged and merged[-1].parent_code == g.parent_code:
                merged[-1].members.extend(g.members)
            else:
                merged.append(g)
    return merged


class ObliqueCut:
    def __init__(self, l_max: int):
        if not 1 <= l_max <= morton.MAX_LEVEL:
            raise ValueError(f"l_max {l_max} outside [1, {morton.MAX_LEVEL}]")
        self.l_max = l_max
        self.m_c: Optional[int] = None
        self.lists: list[list[Node]] = [[] for _ in range(l_max + 1)]
        # leaves shallower than l_max, keyed by code, awaiting materialization
        # when fix consumes their placeholder chain
        self.shallow_leaves: dict[int, Node] = {}

    # -- stream side -------------------------------------------------------

    def concatenate(self, leaves: list[Node]) -> None:
        """Append new deepest-level roots; advances m_c to the last code."""
        if not leaves:
            return
        prev = self.m_c if self.m_c is not None else 0
        for n in leaves:
            if morton.level_of(n.code) != self.l_max:
                raise OrderViolationError(
                    f"leaf {bin(n.code)} is not at the deepest level {self.l_max}"
                )
            if n.code <= prev:
                raise OrderViolationError(
                    f"leaf {bin(n.code)} not strictly beyond cut code {bin(prev)}"
                )
            prev = n.code
        self.lists[self.l_max].extend(leaves)
        self.m_c = leaves[-1].code

    def register_shallow_leaf(self, node: Node) -> None:
        """Out-of-band record for a streamed leaf above the deepest level."""
        if morton.level_of(node.code) >= self.l_max:
            raise ValueError("shallow leaf must be above the deepest level")
        self.shallow_leaves[node.code] = node

    def advance_to_end(self) -> None:
        """Declare the stream exhausted: no future input can arrive, so every
        remaining parent is creatable. Subsequent fixes sweep to the root."""
        self.m_c = morton.max_code(self.l_max)

    # -- fix operator ------------------------------------------------------

    def apply_groups(
        self,
        level: int,
        groups: list[SiblingGroup],
        *,
        ratio: float = 0.25,
        leaf_collapse: bool = False,
        parent_splats: ParentSplatPolicy = lod.subsample_for_parent,
    ) -> LevelFixReport:
        """Create parents for the groups whose span lies inside the cut.

        Groups must cover lists[level] in order. Parents outside the cut
        (span > m_c) form the untouchable boundary: their groups stay in
        place, because future input may still add siblings beneath them.
        """
        report = LevelFixReport(level)
        assert self.m_c is not None
        created = report.created
        survivors: list[Node] = []
        boundary_reached = False
        for gi, group in enumerate(groups):
            if not boundary_reached and morton.span(group.parent_code, self.l_max) > self.m_c:
                # span(parent) is non-decreasing along the list, so every
                # later group is outside the cut too
                boundary_reached = True
            if boundary_reached:
                survivors.extend(group.members)
                continue
            members = group.members
            if any(m.is_placeholder for m in members):
                if len(members) > 1:
                    raise OrderViolationError(
                        f"placeholder at {bin(members[0].code)} has siblings; "
                        "a placeholder chain can never share a parent"
                    )
                report.placeholders_consumed += 1
                shallow = self.shallow_leaves.pop(group.parent_code, None)
                if shallow is not None:
                    report.leaves_materialized += 1
                    created.append(shallow)
                else:
                    created.append(Node(group.parent_code, is_placeholder=True))
                continue
            if leaf_collapse and level == self.l_max and len(members) == 1:
                # deepest-level leaf without siblings: drop it, its points
                # move up to the parent, which becomes the finest node here
                only = members[0]
                parent = Node(group.parent_code, splats=only.splats)
                report.leaves_collapsed += 1
                created.append(parent)
                continue
            merged = members[0].splats if len(members) == 1 else np.concatenate(
                [m.splats for m in members]
            )
            payload = parent_splats(merged, ratio) if len(merged) else merged
            parent = Node(group.parent_code, splats=payload, children=members)
            for m in members:
                m.parent = parent
            created.append(parent)
        self.lists[level] = survivors
        self.lists[level - 1].extend(created)
        report.survivors = len(survivors)
        return report

    def fix_level(self, level: int, **policy) -> LevelFixReport:
        return self.apply_groups(level, group_siblings(self.lists[level]), **policy)

    def fix(self, **policy) -> list[LevelFixReport]:
        """One full bottom-up sweep; idempotent until new leaves arrive."""
        if self.m_c is None:
            return []
        return [self.fix_level(level, **policy) for level in range(self.l_max, 0, -1)]

    # -- inspection --------------------------------------------------------

    def roots(self) -> list[Node]:
        return [n for lst in self.lists for n in lst]

    def all_nodes(self) -> Iterable[Node]:
        for root in self.roots():
            yield from root.walk()

    def extract_tree(self) -> Node:
        roots = self.roots()
        if len(roots) != 1:
            raise IncompleteStreamError(
                f"{len(roots)} subtree roots remain; the stream is incomplete "
                "or fix has not run to the top"
            )
        root = roots[0]
        if root.is_placeholder:
            raise IncompleteStreamError(
                "only a placeholder chain remains; a registered shallow leaf "
                "was never materialized"
            )
        return root

    def validate(self, expected_leaf_codes: Optional[set[int]] = None) -> InvariantReport:
        """Check the five structural invariants; pure inspection."""
        rep = InvariantReport()
        res = rep.results

        if self.m_c is None:
            ok11 = (True, None)
        else:
            lvl = morton.level_of(self.m_c)
            ok11 = (lvl == self.l_max, None if lvl == self.l_max else f"m_c level {lvl}")
        res["1.1"] = ok11

        res["1.2"] = (True, None)
        for level, lst in enumerate(self.lists):
            for n in lst:
                if morton.level_of(n.code) != level:
                    res["1.2"] = (False, f"{bin(n.code)} in list {level}")
                    break

        res["1.3"] = (True, None)
        seen: set[int] = set()
        for n in self.all_nodes():
            if n.code in seen:
                res["1.3"] = (False, f"node {bin(n.code)} appears twice")
                break
            seen.add(n.code)

        res["1.4"] = (True, None)
        for level, lst in enumerate(self.lists):
            for a, b in zip(lst, lst[1:]):
                if a.code >= b.code:
                    res["1.4"] = (False, f"list {level}: {bin(a.code)} >= {bin(b.code)}")
                    break

        res["1.5"] = (True, None)
        if self.m_c is not None:
            if expected_leaf_codes is not None:
                required: set[int] = set()
                for leaf in expected_leaf_codes:
                    node = leaf
                    while True:
                        if morton.span(node, self.l_max) <= self.m_c:
                            required.add(node)
                        if node == morton.ROOT:
                            break
                        node >>= 3
                missing = required - seen
                if missing:
                    res["1.5"] = (False, f"missing ancestor {bin(min(missing))}")
            else:
                # equivalent boundary form: every remaining root's parent
                # must lie outside the cut
                for level, lst in enumerate(self.lists):
                    for n in lst:
                        if n.code == morton.ROOT:
                            continue
                        if morton.span(n.code >> 3, self.l_max) <= self.m_c:
                            res["1.5"] = (False, f"creatable parent of {bin(n.code)} missing")
                            break
        return rep


def validate_tree(root: Node) -> InvariantReport:
    """Structural checks for a finished (extracted or loaded) hierarchy."""
    rep = InvariantReport()
    order_ok: tuple[bool, Optional[str]] = (True, None)
    link_ok: tuple[bool, Optional[str]] = (True, None)
    payload_ok: tuple[bool, Optional[str]] = (True, None)
    unique_ok: tuple[bool, Optional[str]] = (True, None)
    seen: set[int] = set()
    for n in root.walk():
        if n.code in seen:
            unique_ok = (False, f"duplicate code {bin(n.code)}")
        seen.add(n.code)
        if n.is_placeholder:
            payload_ok = (False, f"placeholder {bin(n.code)} survived")
        elif len(n.splats) == 0:
            payload_ok = (False, f"node {bin(n.code)} has no splats")
        for a, b in zip(n.children, n.children[1:]):
            if a.code >= b.code:
                order_ok = (False, f"children of {bin(n.code)} out of order")
        for c in n.children:
            if c.code >> 3 != n.code:
                link_ok = (False, f"{bin(c.code)} filed under {bin(n.code)}")
    rep.results["children-order"] = order_ok
    rep.results["parent-links"] = link_ok
    rep.results["payloads"] = payload_ok
    rep.results["uniqueness"] = unique_ok
    return rep


def trees_equal(a: Optional[Node], b: Optional[Node]) -> bool:
    """Structural equality: codes, children and exact splat payload bytes."""
    if a is None or b is None:
        return a is b
    if a.code != b.code or len(a.children) != len(b.children):
        return False
    if a.splats.tobytes() != b.splats.tobytes():
        return False
    return all(trees_equal(ca, cb) for ca, cb in zip(a.children, b.children))
