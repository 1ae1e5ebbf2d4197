"""Free-flow propagation, selection, and two-step refinement."""
import random

import pytest

from situated.environment import Action
from situated.freeflow import (ACTION, INTERNAL, ActivityAssignment,
                               FreeFlowTree, SituatedCommitment, Stimulus,
                               TreeEdge, TreeError, TreeNode,
                               active_commitments, evaluate_stimuli, propagate,
                               refine_action, select_action)
from situated.worldgraph import GraphPath, OperatingSpace


def working_and_parking(working_stimuli=()):
    working = FreeFlowTree("working", [
        TreeNode(1, INTERNAL, "work"),
        TreeNode(2, ACTION, "move"),
        TreeNode(3, INTERNAL, "job"),
        TreeNode(4, ACTION, "pick"),
        TreeNode(5, ACTION, "drop"),
    ], [
        TreeEdge(1, 2), TreeEdge(1, 3), TreeEdge(3, 4), TreeEdge(3, 5),
    ], list(working_stimuli), root_weight=1.0)
    parking = FreeFlowTree("parking", [
        TreeNode(10, INTERNAL, "parked"),
        TreeNode(11, ACTION, "park"),
    ], [TreeEdge(10, 11)], root_weight=2.0)
    return working, parking


def work_commitment(active=True):
    return SituatedCommitment("work", frozenset({"parking"}), "working",
                              condition=lambda k: active and k.get("haveTask",
                                                                   active))


def test_commitment_arithmetic_from_tree_snapshot():
    # root activity 1, parking root edge weight 2, work commitment active:
    # parking top = 2 and working top = 1 + 2 = 3
    working, parking = working_and_parking()
    assignment = propagate([working, parking], [work_commitment()], 1.0,
                           {"haveTask": True})
    assert assignment.per_node[10] == pytest.approx(2.0)
    assert assignment.per_node[1] == pytest.approx(3.0)


def test_inactive_commitment_transfers_nothing():
    working, parking = working_and_parking()
    assignment = propagate([working, parking], [work_commitment()], 1.0,
                           {"haveTask": False})
    assert assignment.per_node[1] == pytest.approx(1.0)
    assert assignment.per_node[10] == pytest.approx(2.0)


def test_unit_chain_flows_root_activity_unchanged():
    chain = FreeFlowTree("chain", [
        TreeNode(1, INTERNAL, "a"),
        TreeNode(2, INTERNAL, "b"),
        TreeNode(3, ACTION, "c"),
    ], [TreeEdge(1, 2), TreeEdge(2, 3)])
    assignment = propagate([chain], [], 7.5, {})
    assert assignment.per_node == {1: 7.5, 2: 7.5, 3: 7.5}


def random_tree(rng, role, id_base):
    n = rng.randint(2, 20)
    nodes = [TreeNode(id_base, INTERNAL, f"{role}-root")]
    edges = []
    for i in range(1, n):
        nid = id_base + i
        parent = rng.choice(nodes[:i]).id
        # ensure parents stay internal: only attach to internal nodes
        nodes.append(TreeNode(nid, INTERNAL, f"{role}-{i}"))
        edges.append(TreeEdge(parent, nid, rng.choice([0.5, 1.0, 2.0])))
    # leaves (no children) become actions
    with_children = {e.parent for e in edges}
    final_nodes = [TreeNode(nd.id, INTERNAL if nd.id in with_children else ACTION,
                            nd.name) for nd in nodes]
    stimuli = []
    for nd in final_nodes:
        if rng.random() < 0.3:
            magnitude = rng.uniform(0.0, 3.0)
            stimuli.append(Stimulus(f"s{nd.id}", nd.id,
                                    lambda k, m=magnitude: m * k.get("gain", 1.0)))
    return FreeFlowTree(role, final_nodes, edges, stimuli,
                        root_weight=rng.choice([0.5, 1.0, 2.0]))


def recursive_oracle(roles, commitments, root_activity, knowledge):
    """Independent evaluation: memoized recursion over the three phases."""
    stims = {}
    for tree in roles:
        per_node = {}
        for stim in tree.stimuli:
            per_node[stim.target] = per_node.get(stim.target, 0.0) + \
                float(stim.value_fn(knowledge))
        stims[tree.role_name] = per_node
    phase1 = {t.role_name: root_activity * t.root_weight
              + stims[t.role_name].get(t.root, 0.0) for t in roles}
    tops = dict(phase1)
    for c in commitments:
        if c.condition(knowledge):
            tops[c.target_role] = tops[c.target_role] + \
                sum(phase1.get(s, 0.0) for s in sorted(c.source_roles))

    values = {}

    def value(tree, nid):
        if nid in values:
            return values[nid]
        if nid == tree.root:
            result = tops[tree.role_name]
        else:
            result = sum(value(tree, e.parent) * e.weight
                         for e in tree.parents[nid]) + \
                stims[tree.role_name].get(nid, 0.0)
        values[nid] = result
        return result

    for tree in roles:
        for nid in tree.nodes:
            value(tree, nid)
    return values


def test_random_trees_match_recursive_oracle():
    rng = random.Random(12345)
    for _ in range(100):
        roles = [random_tree(rng, "alpha", 100), random_tree(rng, "beta", 200)]
        commitments = []
        if rng.random() < 0.7:
            commitments.append(SituatedCommitment(
                "c", frozenset({"alpha"}), "beta",
                condition=lambda k: k.get("flag", False)))
        knowledge = {"gain": rng.uniform(0.0, 2.0), "flag": rng.random() < 0.5}
        root_activity = rng.uniform(0.0, 5.0)
        got = propagate(roles, commitments, root_activity, knowledge)
        oracle = recursive_oracle(roles, commitments, root_activity, knowledge)
        assert set(got.per_node) == set(oracle)
        for nid, value in oracle.items():
            assert got.per_node[nid] == pytest.approx(value, abs=1e-9)


def test_select_action_argmax_and_tie():
    working, parking = working_and_parking()
    assignment = ActivityAssignment({1: 0, 2: 12, 3: 0, 4: 33, 5: 6,
                                     10: 0, 11: 6})
    name, external = select_action(assignment, [working, parking],
                                   frozenset({"pick", "move", "drop"}))
    assert name == "pick" and external
    # tie: equal best activities on ids 4 and 5 -> smaller id wins
    tie = ActivityAssignment({1: 0, 2: 1, 3: 0, 4: 9, 5: 9, 10: 0, 11: 0})
    name, _ = select_action(tie, [working, parking], frozenset({"pick"}))
    assert name == "pick"


def test_single_leaf_selected():
    solo = FreeFlowTree("solo", [TreeNode(1, INTERNAL, "r"),
                                 TreeNode(2, ACTION, "only")],
                        [TreeEdge(1, 2)])
    name, external = select_action(propagate([solo], [], 1.0, {}), [solo],
                                   frozenset())
    assert name == "only" and not external


def test_internal_winner_not_external():
    working, parking = working_and_parking()
    assignment = ActivityAssignment({1: 0, 2: 1, 3: 0, 4: 0, 5: 0,
                                     10: 0, 11: 50})
    name, external = select_action(assignment, [working, parking],
                                   frozenset({"pick", "move", "drop"}))
    assert name == "park" and not external


def test_positive_scaling_leaves_choice_unchanged():
    rng = random.Random(5)
    for _ in range(30):
        roles = [random_tree(rng, "alpha", 100), random_tree(rng, "beta", 200)]
        knowledge = {"gain": rng.uniform(0.1, 2.0)}
        base = propagate(roles, [], 2.0, knowledge)
        scaled_knowledge = {"gain": knowledge["gain"] * 3.0}
        scaled = propagate(roles, [], 6.0, scaled_knowledge)
        pick_base, _ = select_action(base, roles, frozenset())
        pick_scaled, _ = select_action(scaled, roles, frozenset())
        assert pick_base == pick_scaled


def test_commitment_monotonicity():
    rng = random.Random(77)
    for _ in range(30):
        roles = [random_tree(rng, "alpha", 100), random_tree(rng, "beta", 200)]
        commitment = SituatedCommitment("c", frozenset({"alpha"}), "beta",
                                        condition=lambda k: k["on"])
        knowledge_off = {"on": False, "gain": 1.0}
        knowledge_on = {"on": True, "gain": 1.0}
        off = propagate(roles, [commitment], 1.0, knowledge_off)
        on = propagate(roles, [commitment], 1.0, knowledge_on)
        beta = roles[1]
        for nid in beta.nodes:
            assert on.per_node[nid] >= off.per_node[nid] - 1e-12


def test_propagation_deterministic():
    rng = random.Random(9)
    roles = [random_tree(rng, "alpha", 100)]
    knowledge = {"gain": 1.3}
    first = propagate(roles, [], 2.0, knowledge)
    second = propagate(roles, [], 2.0, knowledge)
    assert first.per_node == second.per_node


def test_tree_construction_errors():
    with pytest.raises(TreeError):  # two roots
        FreeFlowTree("r", [TreeNode(1, INTERNAL, "a"), TreeNode(2, ACTION, "b")],
                     [])
    with pytest.raises(TreeError):  # cycle
        FreeFlowTree("r", [TreeNode(1, INTERNAL, "a"), TreeNode(2, INTERNAL, "b"),
                           TreeNode(3, ACTION, "c")],
                     [TreeEdge(1, 2), TreeEdge(2, 1), TreeEdge(2, 3)])
    with pytest.raises(TreeError):  # no action leaves
        FreeFlowTree("r", [TreeNode(1, INTERNAL, "a"), TreeNode(2, INTERNAL, "b")],
                     [TreeEdge(1, 2)])
    with pytest.raises(TreeError):  # action node with children
        FreeFlowTree("r", [TreeNode(1, ACTION, "a"), TreeNode(2, ACTION, "b")],
                     [TreeEdge(1, 2)])


def test_update_helpers_reflect_knowledge():
    stim = Stimulus("nearJob", 2, lambda k: 4.0 if k.get("nearJob") else 0.0)
    tree = FreeFlowTree("r", [TreeNode(1, INTERNAL, "a"), TreeNode(2, ACTION, "b")],
                        [TreeEdge(1, 2)], [stim])
    assert evaluate_stimuli(tree, {}) == {2: 0.0}
    assert evaluate_stimuli(tree, {"nearJob": True}) == {2: 4.0}
    commitment = work_commitment()
    assert active_commitments([commitment], {"haveTask": True}) == [commitment]
    assert active_commitments([commitment], {"haveTask": False}) == []
    rng = random.Random(3)
    for _ in range(20):
        knowledge = {"haveTask": rng.random() < 0.5}
        assert (commitment in active_commitments([commitment], knowledge)) == \
            commitment.condition(knowledge)


def test_refine_move_requires_locked_next_segment():
    space = OperatingSpace()
    space.locked(GraphPath(("n1", "n2", "n3")))
    knowledge = {"operating-space": space, "position": "n1"}
    action = refine_action("move", "agv1", knowledge)
    assert action == Action("agv1", "move", {"from": "n1", "to": "n2"})


def test_refine_move_withheld_without_lock():
    space = OperatingSpace(requested_path=GraphPath(("n1", "n2")))
    knowledge = {"operating-space": space, "position": "n1"}
    assert refine_action("move", "agv1", knowledge) is None
    assert refine_action("move", "agv1", {}) is None


def test_refine_pick_drop_and_instruct():
    knowledge = {"task-pickup": "n45", "task-dropoff": "n50"}
    assert refine_action("pick", "agv1", knowledge) == \
        Action("agv1", "pick", {"node": "n45"})
    assert refine_action("drop", "agv1", knowledge) == \
        Action("agv1", "drop", {"node": "n50"})
    path = GraphPath(("a", "b"))
    assert refine_action("instructDriver", "v1", {"current-intention": path}) == \
        Action("v1", "instructDriver", {"path": path})
    assert refine_action("instructDriver", "v1", {}) is None
