import numpy as np
import pytest

from pointlod import lod, morton
from pointlod.cut import Node, ObliqueCut, validate_tree
from pointlod.errors import IncompleteStreamError, OrderViolationError

from conftest import cells_of, leaves_from_cells, make_build_inputs
from oracles import naive_ancestors, reference_octree


def full_build(cells: dict[int, np.ndarray], l_max: int, ratio: float = 0.25,
               leaf_collapse: bool = False) -> Node:
    cut = ObliqueCut(l_max)
    cut.concatenate(leaves_from_cells(cells))
    cut.advance_to_end()
    cut.fix(ratio=ratio, leaf_collapse=leaf_collapse)
    return cut.extract_tree()


def same_as_reference(node, ref) -> bool:
    if node.code != ref.code or len(node.children) != len(ref.children):
        return False
    if node.splats.tobytes() != ref.splats.tobytes():
        return False
    return all(same_as_reference(n, r) for n, r in zip(node.children, ref.children))


class TestConstruction:
    def test_new_cut_is_empty_and_valid(self):
        cut = ObliqueCut(7)
        assert cut.m_c is None
        assert len(cut.lists) == 8
        assert cut.validate().ok

    def test_new_cut_depth_one(self):
        cut = ObliqueCut(1)
        assert len(cut.lists) == 2

    def test_new_cut_range(self):
        with pytest.raises(ValueError):
            ObliqueCut(0)
        with pytest.raises(ValueError):
            ObliqueCut(morton.MAX_LEVEL + 1)

    def test_concatenate_single_leaf(self, rng):
        cut = ObliqueCut(7)
        code = morton.encode(0, 0, 0, 7)
        cut.concatenate([Node(code, splats=lod.make_splats(np.zeros((1, 3)), None, None, 0.01))])
        assert cut.m_c == code
        assert [n.code for n in cut.lists[7]] == [code]
        # the all-zeros leaf has no creatable ancestors yet, so even 1.5 holds
        assert cut.validate().ok

    def test_concatenate_extends_and_advances_cut_code(self):
        cut = ObliqueCut(3)
        a, b = morton.encode(0, 0, 0, 3), morton.encode(1, 0, 0, 3)
        cut.concatenate([Node(a)])
        cut.concatenate([Node(b)])
        assert cut.m_c == b
        assert [n.code for n in cut.lists[3]] == [a, b]

    def test_concatenate_rejects_disorder(self):
        cut = ObliqueCut(3)
        a, b = morton.encode(0, 0, 0, 3), morton.encode(1, 0, 0, 3)
        with pytest.raises(OrderViolationError):
            cut.concatenate([Node(b), Node(a)])
        cut.concatenate([Node(b)])
        with pytest.raises(OrderViolationError):
            cut.concatenate([Node(a)])  # not beyond m_c
        with pytest.raises(OrderViolationError):
            cut.concatenate([Node(b)])  # equal to m_c

    def test_concatenate_rejects_wrong_level(self):
        cut = ObliqueCut(3)
        with pytest.raises(OrderViolationError):
            cut.concatenate([Node(morton.encode(0, 0, 0, 2))])

    def test_empty_batch_is_noop(self):
        cut = ObliqueCut(3)
        cut.concatenate([])
        assert cut.m_c is None

    def test_batch_invariance(self, rng):
        codes, splats = make_build_inputs(rng, 300, 3)
        cells = cells_of(codes, splats)
        leaves = leaves_from_cells(cells)
        one = ObliqueCut(3)
        one.concatenate(leaves_from_cells(cells))
        per = ObliqueCut(3)
        for leaf in leaves:
            per.concatenate([leaf.__class__(leaf.code, splats=leaf.splats)])
        assert [n.code for n in one.lists[3]] == [n.code for n in per.lists[3]]
        for cut in (one, per):
            cut.advance_to_end()
            cut.fix()
        assert same_codes(one.extract_tree(), per.extract_tree())


def same_codes(a, b):
    if a.code != b.code or len(a.children) != len(b.children):
        return False
    return all(same_codes(x, y) for x, y in zip(a.children, b.children))


class TestFix:
    def test_mid_stream_fix_restores_invariants(self, rng):
        codes, splats = make_build_inputs(rng, 200, 4)
        cells = cells_of(codes, splats)
        leaves = leaves_from_cells(cells)
        cut = ObliqueCut(4)
        half = len(leaves) // 2
        cut.concatenate(leaves[:half])
        pre = cut.validate(expected_leaf_codes={n.code for n in leaves[:half]})
        assert pre.failing() in ([], ["1.5"])
        cut.fix()
        post = cut.validate(expected_leaf_codes={n.code for n in leaves[:half]})
        assert post.ok, post.describe()

    def test_fix_is_idempotent(self, rng):
        codes, splats = make_build_inputs(rng, 150, 3)
        cut = ObliqueCut(3)
        cut.concatenate(leaves_from_cells(cells_of(codes, splats)))
        cut.fix()
        snapshot = [[n.code for n in lst] for lst in cut.lists]
        cut.fix()
        assert [[n.code for n in lst] for lst in cut.lists] == snapshot

    def test_boundary_parents_stay_outside(self, rng):
        codes, splats = make_build_inputs(rng, 100, 4)
        cells = cells_of(codes, splats)
        leaves = leaves_from_cells(cells)
        cut = ObliqueCut(4)
        cut.concatenate(leaves[: len(leaves) // 2])
        cut.fix()
        for lst in cut.lists:
            for root in lst:
                if root.code != morton.ROOT:
                    assert morton.span(root.code >> 3, 4) > cut.m_c

    def test_full_build_matches_reference(self, rng):
        for n, l_max in [(50, 2), (400, 3), (1000, 4)]:
            codes, splats = make_build_inputs(rng, n, l_max)
            cells = cells_of(codes, splats)
            tree = full_build(cells, l_max)
            ref = reference_octree(cells, l_max, 0.25, lod.subsample_for_parent)
            assert same_as_reference(tree, ref)

    def test_oblique_sweep_exact_node_set(self, rng):
        # after every prefix + fix, the materialized codes are exactly the
        # ancestors-of-streamed-leaves whose span is inside the cut
        codes, splats = make_build_inputs(rng, 120, 4)
        cells = cells_of(codes, splats)
        leaves = leaves_from_cells(cells)
        cut = ObliqueCut(4)
        for step in range(0, len(leaves), 7):
            batch = leaves[step : step + 7]
            cut.concatenate(batch)
            cut.fix()
            streamed = {n.code for lst in [leaves[: step + 7]] for n in lst}
            expected = set()
            for leaf in streamed:
                for cand in [leaf] + naive_ancestors(leaf):
                    if morton.span(cand, 4) <= cut.m_c:
                        expected.add(cand)
            materialized = {n.code for n in cut.all_nodes() if not n.is_placeholder}
            assert materialized == expected

    def test_validator_catches_duplicate_across_lists(self):
        cut = ObliqueCut(2)
        shared = Node(morton.encode(0, 0, 0, 2))
        cut.lists[2] = [shared]
        cut.lists[1] = [Node(morton.encode(0, 0, 0, 1), children=[shared])]
        cut.m_c = shared.code
        report = cut.validate()
        assert "1.3" in report.failing()

    def test_validator_flags_missing_ancestor_before_fix(self):
        # ending the batch on an all-ones child completes its parent's span,
        # so that parent becomes a creatable-but-missing ancestor
        cut = ObliqueCut(2)
        group = [Node(morton.encode(0, 0, 0, 2)), Node(morton.encode(1, 1, 1, 2))]
        cut.concatenate(group)
        report = cut.validate(expected_leaf_codes={n.code for n in group})
        assert report.failing() == ["1.5"]
        witness = report.results["1.5"][1]
        assert witness is not None
        # the boundary form (no expected leaves supplied) agrees
        assert cut.validate().failing() == ["1.5"]
        cut.fix()
        assert cut.validate(expected_leaf_codes={n.code for n in group}).ok


class TestExtract:
    def test_single_point_chain(self):
        code = morton.encode(1, 1, 0, 2)
        splats = lod.make_splats(np.array([[0.9, 0.9, 0.1]]), None, None, 0.01)
        tree = full_build({code: splats}, 2, ratio=1.0)
        assert tree.code == morton.ROOT
        assert len(tree.children) == 1
        assert tree.children[0].code == code >> 3
        assert tree.children[0].children[0].code == code
        assert validate_tree(tree).ok

    def test_full_sibling_group(self):
        parent = morton.encode(0, 0, 0, 1)
        cells = {}
        for i in range(8):
            code = morton.child_of(parent, i)
            x, y, z, _ = morton.decode(code)
            pos = np.array([[x / 4 + 0.01, y / 4 + 0.01, z / 4 + 0.01]])
            cells[code] = lod.make_splats(pos, None, None, 0.01)
        tree = full_build(cells, 2, ratio=1.0)
        assert [c.code for c in tree.children] == [parent]
        assert [c.code for c in tree.children[0].children] == sorted(cells)

    def test_extract_requires_single_root(self, rng):
        codes, splats = make_build_inputs(rng, 50, 3)
        cut = ObliqueCut(3)
        cut.concatenate(leaves_from_cells(cells_of(codes, splats)))
        cut.fix()
        if len(cut.roots()) > 1:
            with pytest.raises(IncompleteStreamError):
                cut.extract_tree()

    def test_random_cloud_matches_reference(self, rng):
        codes, splats = make_build_inputs(rng, 1000, 4)
        cells = cells_of(codes, splats)
        tree = full_build(cells, 4)
        ref = reference_octree(cells, 4, 0.25, lod.subsample_for_parent)
        assert same_as_reference(tree, ref)
        assert validate_tree(tree).ok


class TestPlaceholders:
    def test_shallow_leaf_streams_as_placeholder_and_materializes(self):
        # leaf at level 1 enters as its deepest placeholder plus an
        # out-of-band record; fix consumes the chain and swaps in the leaf
        l_max = 3
        leaf_code = morton.encode(0, 0, 0, 1)
        leaf = Node(leaf_code, splats=lod.make_splats(np.zeros((1, 3)), None, None, 0.1))
        cut = ObliqueCut(l_max)
        cut.register_shallow_leaf(leaf)
        cut.concatenate([Node(morton.placeholder(leaf_code, l_max), is_placeholder=True)])
        cut.advance_to_end()
        cut.fix()
        tree = cut.extract_tree()
        codes = {n.code for n in tree.walk()}
        assert codes == {morton.ROOT, leaf_code}
        assert not any(n.is_placeholder for n in tree.walk())

    def test_placeholder_chain_consumed_level_by_level(self):
        l_max = 3
        leaf = Node(morton.encode(1, 0, 0, 1), splats=lod.make_splats(np.zeros((1, 3)), None, None, 0.1))
        cut = ObliqueCut(l_max)
        cut.register_shallow_leaf(leaf)
        cut.concatenate([Node(morton.placeholder(leaf.code, l_max), is_placeholder=True)])
        r3 = cut.fix_level(3)
        assert r3.placeholders_consumed == 1
        assert cut.lists[2][0].is_placeholder
        r2 = cut.fix_level(2)
        assert r2.leaves_materialized == 1
        assert cut.lists[1][0] is leaf

    def test_mixed_placeholder_group_rejected(self):
        cut = ObliqueCut(2)
        a = Node(morton.encode(0, 0, 0, 2))
        ph = Node(morton.placeholder(morton.encode(0, 0, 0, 1), 2), is_placeholder=True)
        cut.concatenate(sorted([a, ph], key=lambda n: n.code))
        with pytest.raises(OrderViolationError):
            cut.fix()

    def test_no_placeholder_survives_full_build(self, rng):
        codes, splats = make_build_inputs(rng, 64, 3)
        tree = full_build(cells_of(codes, splats), 3)
        assert all(not n.is_placeholder for n in tree.walk())


class TestLeafCollapse:
    def test_singleton_leaf_absorbed_by_parent(self):
        code = morton.encode(3, 2, 1, 3)
        splats = lod.make_splats(np.array([[0.8, 0.6, 0.3]]), None, None, 0.01)
        tree = full_build({code: splats}, 3, leaf_collapse=True)
        codes = {n.code for n in tree.walk()}
        assert code not in codes
        assert code >> 3 in codes
        leafish = [n for n in tree.walk() if not n.children]
        assert len(leafish) == 1 and leafish[0].code == code >> 3
        assert leafish[0].splats.tobytes() == splats.tobytes()

    def test_two_siblings_do_not_collapse(self):
        a = morton.encode(0, 0, 0, 2)
        b = morton.encode(1, 0, 0, 2)
        cells = {
            a: lod.make_splats(np.array([[0.01, 0.01, 0.01]]), None, None, 0.01),
            b: lod.make_splats(np.array([[0.3, 0.01, 0.01]]), None, None, 0.01),
        }
        tree = full_build(cells, 2, leaf_collapse=True)
        codes = {n.code for n in tree.walk()}
        assert a in codes and b in codes

    def test_collapse_matches_reference(self, rng):
        codes, splats = make_build_inputs(rng, 300, 4)
        cells = cells_of(codes, splats)
        tree = full_build(cells, 4, leaf_collapse=True)
        ref = reference_octree(cells, 4, 0.25, lod.subsample_for_parent, leaf_collapse=True)
        assert same_as_reference(tree, ref)
