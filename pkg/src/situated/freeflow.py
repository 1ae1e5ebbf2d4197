"""Behavior-based action selection with free-flow trees.

Each role is a tree (or DAG) of nodes; activity injected at the role's top
node flows down weighted edges, picking up stimulus contributions along the
way, and the action leaf that collects the most activity wins. Situated
commitments transfer activity between roles: when a commitment's condition
holds, the top-node activity of its source roles is added to the target
role's top node. Selection runs in two steps: the tree picks a high-level
action, then refinement binds it to a concrete action or withholds it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from .environment import Action
from .worldgraph import GraphPath, OperatingSpace

Knowledge = dict[str, Any]

INTERNAL = "internal"
ACTION = "action"


class TreeError(Exception):
    pass


@dataclass(frozen=True)
class TreeNode:
    id: int
    kind: str
    name: str


@dataclass(frozen=True)
class TreeEdge:
    parent: int
    child: int
    weight: float = 1.0


@dataclass(frozen=True)
class Stimulus:
    name: str
    target: int
    value_fn: Callable[[Knowledge], float]


class FreeFlowTree:
    """One role's activity-propagation network."""

    def __init__(self, role_name: str, nodes: list[TreeNode],
                 edges: list[TreeEdge], stimuli: list[Stimulus] | None = None,
                 root_weight: float = 1.0):
        self.role_name = role_name
        self.nodes = {n.id: n for n in nodes}
        self.edges = list(edges)
        self.stimuli = list(stimuli or [])
        self.root_weight = root_weight
        if len(self.nodes) != len(nodes):
            raise TreeError("node ids must be unique")
        children: dict[int, list[TreeEdge]] = {n.id: [] for n in nodes}
        self.parents: dict[int, list[TreeEdge]] = {n.id: [] for n in nodes}
        for edge in edges:
            if edge.parent not in self.nodes or edge.child not in self.nodes:
                raise TreeError("edge references unknown node")
            if edge.weight < 0:
                raise TreeError("edge weights must be non-negative")
            children[edge.parent].append(edge)
            self.parents[edge.child].append(edge)
        roots = [nid for nid, up in self.parents.items() if not up]
        if len(roots) != 1:
            raise TreeError(f"role {role_name!r} must have exactly one root")
        self.root = roots[0]
        for node in nodes:
            if node.kind == ACTION and children[node.id]:
                raise TreeError(f"action node {node.id} must be a leaf")
            if node.kind not in (INTERNAL, ACTION):
                raise TreeError(f"bad node kind {node.kind!r}")
        if not any(n.kind == ACTION for n in nodes):
            raise TreeError(f"role {role_name!r} has no action leaves")
        for stim in self.stimuli:
            if stim.target not in self.nodes:
                raise TreeError(f"stimulus {stim.name!r} targets unknown node")
        self._topo = self._topological_order(children)

    def _topological_order(self, children: dict[int, list[TreeEdge]]) -> list[int]:
        indegree = {nid: len(self.parents[nid]) for nid in self.nodes}
        frontier = sorted(nid for nid, deg in indegree.items() if deg == 0)
        order: list[int] = []
        while frontier:
            nid = frontier.pop(0)
            order.append(nid)
            for edge in children[nid]:
                indegree[edge.child] -= 1
                if indegree[edge.child] == 0:
                    frontier.append(edge.child)
            frontier.sort()
        if len(order) != len(self.nodes):
            raise TreeError(f"role {self.role_name!r} contains a cycle")
        return order

    def action_leaves(self) -> list[TreeNode]:
        return sorted((n for n in self.nodes.values() if n.kind == ACTION),
                      key=lambda n: n.id)


@dataclass(frozen=True)
class SituatedCommitment:
    """Activity-transfer connector from source roles to one target role."""

    name: str
    source_roles: frozenset[str]
    target_role: str
    condition: Callable[[Knowledge], bool]
    context_tag: str = ""

    def __post_init__(self):
        if self.target_role in self.source_roles:
            raise TreeError("commitment target cannot be one of its sources")


@dataclass
class ActivityAssignment:
    per_node: dict[int, float] = field(default_factory=dict)


def evaluate_stimuli(tree: FreeFlowTree, knowledge: Knowledge) -> dict[int, float]:
    """Refresh stimulus inputs from knowledge: summed per target node."""
    totals: dict[int, float] = {}
    for stim in tree.stimuli:
        value = float(stim.value_fn(knowledge))
        if value < 0:
            raise TreeError(f"stimulus {stim.name!r} produced a negative value")
        totals[stim.target] = totals.get(stim.target, 0.0) + value
    return totals


def active_commitments(commitments: list[SituatedCommitment],
                       knowledge: Knowledge) -> list[SituatedCommitment]:
    """Refresh commitment conditions from knowledge."""
    return [c for c in commitments if c.condition(knowledge)]


def propagate(roles: list[FreeFlowTree], commitments: list[SituatedCommitment],
              root_activity: float, knowledge: Knowledge) -> ActivityAssignment:
    """Three-phase activity propagation.

    (1) each role's top node gets root_activity x its root-edge weight plus
    its own stimuli; (2) each active commitment adds the phase-1 top activity
    of its source roles to the target role's top node; (3) activity flows
    down: child = sum over parents of parent x edge weight, plus stimuli.
    """
    if root_activity < 0:
        raise TreeError("root activity must be non-negative")
    by_name = {tree.role_name: tree for tree in roles}
    if len(by_name) != len(roles):
        raise TreeError("role names must be unique")
    seen_ids: set[int] = set()
    for tree in roles:
        overlap = seen_ids & set(tree.nodes)
        if overlap:
            raise TreeError(f"node ids shared across roles: {sorted(overlap)}")
        seen_ids |= set(tree.nodes)

    stimuli = {tree.role_name: evaluate_stimuli(tree, knowledge) for tree in roles}
    tops = {tree.role_name: root_activity * tree.root_weight
            + stimuli[tree.role_name].get(tree.root, 0.0)
            for tree in roles}
    final_tops = dict(tops)
    for commitment in active_commitments(commitments, knowledge):
        if commitment.target_role not in by_name:
            raise TreeError(f"commitment targets unknown role "
                            f"{commitment.target_role!r}")
        transfer = sum(tops[src] for src in sorted(commitment.source_roles)
                       if src in tops)
        final_tops[commitment.target_role] += transfer

    assignment = ActivityAssignment()
    for tree in roles:
        role_stimuli = stimuli[tree.role_name]
        activity = {tree.root: final_tops[tree.role_name]}
        for nid in tree._topo:
            if nid == tree.root:
                continue
            flowed = sum(activity[edge.parent] * edge.weight
                         for edge in tree.parents[nid])
            activity[nid] = flowed + role_stimuli.get(nid, 0.0)
        assignment.per_node.update(activity)
    return assignment


def select_action(assignment: ActivityAssignment, roles: list[FreeFlowTree],
                  external_actions: frozenset[str]) -> tuple[str, bool]:
    """Argmax over action leaves; ties break to the smallest node id.

    Returns (action name, is_external). An internal winner updates knowledge
    only; no action is emitted for it.
    """
    leaves = [leaf for tree in roles for leaf in tree.action_leaves()]
    if not leaves:
        raise TreeError("no action leaves")
    winner = min(leaves, key=lambda n: (-assignment.per_node[n.id], n.id))
    return winner.name, winner.name in external_actions


def refine_action(high_level: str, agent_id: str,
                  knowledge: Knowledge) -> Action | None:
    """Step-2 refinement: bind the high-level choice to a concrete action.

    A move becomes a next-segment action only when that segment is already in
    the agent's locked path; otherwise the move is withheld this cycle.
    """
    if high_level == "move":
        space: OperatingSpace | None = knowledge.get("operating-space")
        position = knowledge.get("position")
        if space is None or space.locked_path is None or position is None:
            return None
        path = space.locked_path
        if position not in path.nodes:
            return None
        index = path.nodes.index(position)
        if index + 1 >= len(path.nodes):
            return None
        return Action(agent_id, "move",
                      {"from": position, "to": path.nodes[index + 1]})
    if high_level in ("pick", "drop"):
        node = knowledge.get(f"task-{'pickup' if high_level == 'pick' else 'dropoff'}")
        if node is None:
            return None
        return Action(agent_id, high_level, {"node": node})
    if high_level == "instructDriver":
        intention: GraphPath | None = knowledge.get("current-intention")
        if intention is None:
            return None
        return Action(agent_id, "instructDriver", {"path": intention})
    return None
