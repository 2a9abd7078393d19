"""Tree validation, the allocation rules against a brute-force oracle,
execution order, and the status lattice."""

from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from humantool.taskgraph import (
    Actor,
    Allocation,
    AllocationPolicy,
    InvocationReason,
    RequirementFlag,
    Status,
    TaskNode,
    TaskTree,
    TreeError,
    allocate,
    mark_status,
    next_executable,
    replace_subtree,
    validate_tree,
)

from conftest import leaf, make_profile, tree_of, two_leaf_tree

ALL_FLAGS = list(RequirementFlag)


# ---------------------------------------------------------------------------
# Independent oracle: re-derives the three invocation conditions from first
# principles over raw strings, so it shares no code with allocate().
# ---------------------------------------------------------------------------


def oracle_allocate(
    flags: set[str], cc: int, ei: int, delegation: int, threshold: int, cutoff: int
) -> tuple[str, list[str]]:
    authority = ("safety_critical" in flags) or (
        "requires_authorization" in flags and delegation < cutoff
    )
    information = bool(flags & {"needs_domain_expertise", "needs_private_info", "needs_preferences"})
    capability = False
    if "needs_creativity" in flags and cc >= threshold:
        capability = True
    if "needs_complex_judgment" in flags and cc >= threshold:
        capability = True
    if "needs_physical_interaction" in flags:
        capability = True
    reasons = []
    if authority:
        reasons.append("authority_control")
    if information:
        reasons.append("information_exchange")
    if capability:
        reasons.append("capability_complementarity")
    return ("Human", reasons) if reasons else ("AI", [])


def run_oracle_grid(thresholds=(1, 3, 5), cutoffs=(1, 4, 5), delegations=(3,)) -> int:
    """Compare allocate() with the oracle over the full flag/score grid.

    Returns the number of cases checked; raises on the first mismatch.
    """
    checked = 0
    flag_subsets = [
        {f.value for f in combo}
        for r in range(len(ALL_FLAGS) + 1)
        for combo in itertools.combinations(ALL_FLAGS, r)
    ]
    assert len(flag_subsets) == 2**8
    for threshold in thresholds:
        for cutoff in cutoffs:
            policy = AllocationPolicy(capability_threshold=threshold, authority_delegation_cutoff=cutoff)
            for delegation in delegations:
                for cc in range(1, 6):
                    for ei in range(1, 6):
                        profile = make_profile(cc=cc, ei=ei, delegation=delegation)
                        for flags in flag_subsets:
                            node = leaf("n", {RequirementFlag(f) for f in flags})
                            got = allocate(node, profile, policy)
                            want_actor, want_reasons = oracle_allocate(
                                flags, cc, ei, delegation, threshold, cutoff
                            )
                            assert got.actor.value == want_actor, (flags, cc, ei, delegation, threshold, cutoff)
                            assert [r.value for r in got.reasons] == want_reasons, (
                                flags,
                                cc,
                                ei,
                                delegation,
                                threshold,
                                cutoff,
                            )
                            checked += 1
    return checked


class TestValidateTree:
    def test_single_root_leaf_ok(self):
        assert validate_tree([leaf("solo")]).ok

    def test_mutual_parents_is_a_cycle(self):
        a = TaskNode(id="a", description="", children=["b"])
        b = TaskNode(id="b", description="", children=["a"])
        result = validate_tree([a, b])
        assert any("cycle" in v.message for v in result.violations)

    def test_allocation_on_non_leaf(self):
        root = TaskNode(
            id="root",
            description="",
            children=["kid"],
            allocation=Allocation(actor=Actor.AI),
        )
        result = validate_tree([root, leaf("kid")])
        assert any("allocation" in v.message for v in result.violations)

    def test_duplicate_ids(self):
        result = validate_tree([leaf("x"), leaf("x")])
        assert any("duplicate" in v.message for v in result.violations)

    def test_multi_root(self):
        result = validate_tree([leaf("a"), leaf("b")])
        assert any("exactly one root" in v.message for v in result.violations)

    def test_dangling_child_reference(self):
        result = validate_tree([TaskNode(id="r", description="", children=["ghost"])])
        assert any("does not resolve" in v.message for v in result.violations)

    def test_orphan_unreachable(self):
        nodes = [
            TaskNode(id="r", description="", children=["a"]),
            leaf("a"),
            TaskNode(id="island", description="", children=["island2"]),
            leaf("island2"),
        ]
        result = validate_tree(nodes)
        assert not result.ok


class TestAllocate:
    def test_safety_critical_always_authority(self):
        # Safety-critical nodes demand explicit human responsibility no
        # matter the profile.
        for delegation in (1, 5):
            alloc = allocate(
                leaf("n", {RequirementFlag.SAFETY_CRITICAL}),
                make_profile(delegation=delegation),
                AllocationPolicy(),
            )
            assert alloc.actor is Actor.HUMAN
            assert alloc.primary_reason is InvocationReason.AUTHORITY_CONTROL

    def test_no_flags_means_ai(self):
        alloc = allocate(leaf("n"), make_profile(), AllocationPolicy())
        assert alloc.actor is Actor.AI
        assert alloc.reasons == ()

    def test_preferences_plus_creativity_ordering(self):
        # cognitive_creativity 4 over the default threshold 3: both the
        # information and capability conditions hold, in precedence order.
        alloc = allocate(
            leaf("n", {RequirementFlag.NEEDS_PREFERENCES, RequirementFlag.NEEDS_CREATIVITY}),
            make_profile(cc=4),
            AllocationPolicy(),
        )
        assert alloc.actor is Actor.HUMAN
        assert [r.value for r in alloc.reasons] == ["information_exchange", "capability_complementarity"]

    def test_physical_interaction_ignores_score(self):
        alloc = allocate(
            leaf("n", {RequirementFlag.NEEDS_PHYSICAL_INTERACTION}),
            make_profile(ei=1),
            AllocationPolicy(capability_threshold=5),
        )
        assert alloc.actor is Actor.HUMAN
        assert alloc.primary_reason is InvocationReason.CAPABILITY_COMPLEMENTARITY

    def test_creativity_below_threshold_stays_ai(self):
        alloc = allocate(
            leaf("n", {RequirementFlag.NEEDS_CREATIVITY}),
            make_profile(cc=2),
            AllocationPolicy(capability_threshold=3),
        )
        assert alloc.actor is Actor.AI

    def test_delegation_gates_authorization(self):
        node = leaf("n", {RequirementFlag.REQUIRES_AUTHORIZATION})
        policy = AllocationPolicy(authority_delegation_cutoff=4)
        assert allocate(node, make_profile(delegation=3), policy).actor is Actor.HUMAN
        assert allocate(node, make_profile(delegation=4), policy).actor is Actor.AI

    def test_non_leaf_rejected(self):
        root = TaskNode(id="r", description="", children=["a"])
        with pytest.raises(TreeError):
            allocate(root, make_profile(), AllocationPolicy())

    def test_invalid_profile_rejected(self):
        with pytest.raises(TreeError):
            allocate(leaf("n"), make_profile(cc=9), AllocationPolicy())

    def test_oracle_spot_grid(self):
        # The full acceptance grid lives in test_acceptance; this keeps a
        # small always-on slice here.
        assert run_oracle_grid(thresholds=(3,), cutoffs=(4,), delegations=(1, 3, 5)) == 2**8 * 25 * 3

    def test_reasons_never_invented_or_dropped(self):
        rng = random.Random(7)
        for _ in range(200):
            flags = {f for f in ALL_FLAGS if rng.random() < 0.4}
            profile = make_profile(cc=rng.randint(1, 5), ei=rng.randint(1, 5), delegation=rng.randint(1, 5))
            alloc = allocate(leaf("n", flags), profile, AllocationPolicy())
            _, want = oracle_allocate(
                {f.value for f in flags},
                profile.capabilities.cognitive_creativity,
                profile.capabilities.external_interaction,
                profile.authority.delegation_level,
                3,
                4,
            )
            assert [r.value for r in alloc.reasons] == want


class TestNextExecutable:
    def test_all_done_returns_none(self):
        tree = two_leaf_tree()
        mark_status(tree, "a", Status.DONE)
        mark_status(tree, "b", Status.DONE)
        assert next_executable(tree) is None

    def test_fresh_tree_returns_first_leaf(self):
        assert next_executable(two_leaf_tree()) == "a"

    def test_dfs_order_across_subtrees(self):
        # root -> (group(a1 done, a2 pending), b pending): a2 comes first.
        tree = tree_of(
            TaskNode(id="root", description="", children=["group", "b"]),
            TaskNode(id="group", description="", children=["a1", "a2"]),
            leaf("a1"),
            leaf("a2"),
            leaf("b"),
        )
        mark_status(tree, "a1", Status.DONE)
        assert next_executable(tree) == "a2"

    def test_pending_left_sibling_blocks(self):
        tree = two_leaf_tree()
        assert next_executable(tree) == "a"
        mark_status(tree, "a", Status.FAILED)
        # A failed sibling does not clear the path; b stays blocked.
        assert next_executable(tree) is None

    def test_skipped_unblocks(self):
        tree = two_leaf_tree()
        mark_status(tree, "a", Status.SKIPPED)
        assert next_executable(tree) == "b"

    def test_result_re_walk_invariant(self):
        rng = random.Random(3)
        for _ in range(50):
            tree = _random_tree(rng)
            for node in tree.leaves():
                node.status = rng.choice(list(Status))
            found = next_executable(tree)
            if found is None:
                continue
            # Re-walk: every ancestor-path left sibling must be done/skipped.
            node_id = found
            assert tree.node(found).status is Status.PENDING
            while True:
                parent = tree.parent_of(node_id)
                if parent is None:
                    break
                siblings = tree.node(parent).children
                for left in siblings[: siblings.index(node_id)]:
                    assert tree.node(left).status in (Status.DONE, Status.SKIPPED)
                node_id = parent


class TestMarkStatus:
    def test_sole_leaf_done_completes_root(self):
        tree = tree_of(TaskNode(id="root", description="", children=["only"]), leaf("only"))
        mark_status(tree, "only", Status.DONE)
        assert tree.node("root").status is Status.DONE

    def test_done_to_pending_is_illegal(self):
        tree = two_leaf_tree()
        mark_status(tree, "a", Status.DONE)
        with pytest.raises(TreeError):
            mark_status(tree, "a", Status.PENDING)

    def test_one_of_two_done_keeps_root_in_progress(self):
        tree = two_leaf_tree()
        mark_status(tree, "a", Status.DONE)
        assert tree.node("root").status is Status.IN_PROGRESS

    def test_unknown_id(self):
        with pytest.raises(TreeError):
            mark_status(two_leaf_tree(), "nope", Status.DONE)

    def test_failed_can_retry(self):
        tree = two_leaf_tree()
        mark_status(tree, "a", Status.FAILED)
        mark_status(tree, "a", Status.IN_PROGRESS)
        mark_status(tree, "a", Status.DONE)
        assert tree.node("a").status is Status.DONE

    def test_failure_propagates_when_all_terminal(self):
        tree = two_leaf_tree()
        mark_status(tree, "a", Status.FAILED)
        mark_status(tree, "b", Status.DONE)
        assert tree.node("root").status is Status.FAILED


def _random_tree(rng: random.Random, max_children: int = 3, depth: int = 3) -> TaskTree:
    counter = itertools.count()
    nodes: list[TaskNode] = []

    def build(level: int) -> str:
        node_id = f"n{next(counter)}"
        if level >= depth or rng.random() < 0.4:
            nodes.append(leaf(node_id))
            return node_id
        children = [build(level + 1) for _ in range(rng.randint(1, max_children))]
        nodes.append(TaskNode(id=node_id, description="", children=children))
        return node_id

    build(0)
    return TaskTree.from_nodes(nodes)


_LEGAL = {
    Status.PENDING: [Status.IN_PROGRESS, Status.DONE, Status.FAILED, Status.SKIPPED],
    Status.IN_PROGRESS: [Status.DONE, Status.FAILED, Status.SKIPPED],
    Status.FAILED: [Status.IN_PROGRESS],
    Status.DONE: [],
    Status.SKIPPED: [],
}


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_tree_invariants_hold_over_legal_sequences(seed):
    rng = random.Random(seed)
    tree = _random_tree(rng)
    for _ in range(rng.randint(0, 30)):
        candidates = [n for n in tree.leaves() if _LEGAL[n.status]]
        if not candidates:
            break
        node = rng.choice(candidates)
        mark_status(tree, node.id, rng.choice(_LEGAL[node.status]))
        assert validate_tree(list(tree.nodes.values())).ok
        for parent in tree.nodes.values():
            if parent.children and parent.status is Status.DONE:
                assert all(
                    tree.node(c).status in (Status.DONE, Status.SKIPPED) for c in parent.children
                )


class TestSerialization:
    def test_roundtrip_stable(self):
        tree = tree_of(
            TaskNode(id="root", description="goal", children=["a", "b"]),
            leaf("a", {RequirementFlag.NEEDS_PREFERENCES}),
            leaf("b", {RequirementFlag.SAFETY_CRITICAL, RequirementFlag.NEEDS_CREATIVITY}),
        )
        tree.node("a").allocation = Allocation(
            actor=Actor.HUMAN, reasons=(InvocationReason.INFORMATION_EXCHANGE,)
        )
        encoded = tree.to_dict()
        again = TaskTree.from_dict(encoded)
        assert again.to_dict() == encoded

    def test_replace_subtree_keeps_root_id(self):
        tree = two_leaf_tree()
        replacement = [
            TaskNode(id="a", description="revised", children=["a1", "a2"]),
            leaf("a1"),
            leaf("a2"),
        ]
        replace_subtree(tree, "a", replacement)
        assert set(tree.nodes) == {"root", "a", "a1", "a2", "b"}
        assert next_executable(tree) == "a1"

    def test_replace_subtree_rejects_bad_root(self):
        tree = two_leaf_tree()
        with pytest.raises(TreeError):
            replace_subtree(tree, "a", [leaf("different")])

    def test_replace_subtree_rejects_id_clash(self):
        tree = two_leaf_tree()
        with pytest.raises(TreeError):
            replace_subtree(tree, "a", [TaskNode(id="a", description="", children=["b"]), leaf("b")])
        # Failed replacement leaves the tree intact.
        assert set(tree.nodes) == {"root", "a", "b"}
