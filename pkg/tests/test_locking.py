"""Mutual exclusion over projection segments: order, grants, releases."""
import random

import pytest

from situated.locking import (Claim, ClaimTable, LockCoordinator, LockError,
                              claim_order, conflicts, resolve)

from helpers import Rig


def own_table(claims, node="n1"):
    table = ClaimTable()
    for claim in claims:
        table.add(claim)
    return table


def maximal_grant_oracle(claims):
    """Brute-force oracle: greedy sweep in total order against granted set."""
    granted, taken = [], set()
    for claim in sorted(claims, key=claim_order):
        if not claim.segments & taken:
            granted.append(claim.projection_id)
            taken |= claim.segments
    return granted


def test_lone_claim_granted():
    c = Claim(1, 3, frozenset({10}), "n1", 0)
    table = own_table([c])
    assert resolve(table, ["n1"], "n1") == [1]


def test_disjoint_claims_both_granted():
    a = Claim(1, 3, frozenset({1, 2}), "n1", 0)
    b = Claim(2, 3, frozenset({5, 6}), "n1", 0)
    table = own_table([a, b])
    assert sorted(resolve(table, ["n1"], "n1")) == [1, 2]


def test_conflicting_equal_priority_lower_id_first():
    a = Claim(5, 3, frozenset({7}), "n1", 0)
    b = Claim(9, 3, frozenset({7}), "n1", 0)
    table = own_table([a, b])
    assert resolve(table, ["n1"], "n1") == [5]


def test_chain_conflict_matches_maximal_grant_oracle():
    a = Claim(1, 3, frozenset({1, 2}), "n1", 0)
    b = Claim(2, 3, frozenset({2, 3}), "n1", 0)
    c = Claim(3, 3, frozenset({3, 4}), "n1", 0)
    table = own_table([a, b, c])
    newly = resolve(table, ["n1"], "n1")
    assert newly == maximal_grant_oracle([a, b, c]) == [1, 3]


def test_priority_precedence_among_waiting_claims():
    low = Claim(1, 1, frozenset({7}), "n1", 0)
    high = Claim(9, 5, frozenset({7}), "n1", 5)
    table = own_table([low, high])
    assert resolve(table, ["n1"], "n1") == [9]


def test_empty_table_resolves_to_nothing():
    assert resolve(ClaimTable(), ["n1"], "n1") == []


def test_random_tables_match_oracle():
    rng = random.Random(41)
    for _ in range(100):
        claims = []
        for pid in range(rng.randint(1, 8)):
            segments = frozenset(rng.sample(range(10), rng.randint(1, 3)))
            claims.append(Claim(pid, rng.randint(1, 5), segments, "n1",
                                rng.randint(0, 5)))
        table = own_table(claims)
        assert resolve(table, ["n1"], "n1") == maximal_grant_oracle(claims)


def test_resolve_deterministic():
    claims = [Claim(i, (i % 5) + 1, frozenset({i % 4, (i + 1) % 4}), "n1", i)
              for i in range(6)]
    results = []
    for _ in range(3):
        results.append(resolve(own_table(claims), ["n1"], "n1"))
    assert results[0] == results[1] == results[2]


def test_duplicate_projection_id_rejected():
    table = ClaimTable()
    table.add(Claim(1, 3, frozenset({1}), "n1", 0))
    with pytest.raises(LockError):
        table.add(Claim(1, 2, frozenset({2}), "n1", 1))


def test_claim_order_is_total():
    claims = [Claim(i, p, frozenset({1}), "n", t)
              for i in range(3) for p in (1, 3) for t in (0, 2)]
    keys = [claim_order(c) for c in claims]
    assert len(set(keys)) == len(keys)
    assert conflicts(claims[0], claims[1])


# -- distributed behaviour over the rig --------------------------------------


def coordinators(rig):
    return {node: LockCoordinator(ve) for node, ve in rig.ves.items()}


def assert_global_safety(coordinators):
    taken = {}
    for node, coordinator in coordinators.items():
        for seg in coordinator.locked_segments():
            assert seg not in taken, (
                f"segment {seg} locked by both {taken[seg]} and {node}")
            taken[seg] = node


def test_two_nodes_lone_claim_granted_after_one_exchange():
    rig = Rig(["a", "b"])
    coords = coordinators(rig)
    granted = []
    coords["a"].submit_claim(Claim(1, 3, frozenset({4, 5}), "a", 0),
                             on_granted=granted.append)
    rig.settle()  # claim broadcast + ack, zero latency
    assert granted == [1]


def test_conflicting_cross_node_claims_serialize():
    rig = Rig(["a", "b"])
    coords = coordinators(rig)
    grants = {"a": [], "b": []}
    coords["a"].submit_claim(Claim(1, 3, frozenset({7, 8}), "a", 0),
                             on_granted=grants["a"].append)
    coords["b"].submit_claim(Claim(2, 3, frozenset({8, 9}), "b", 0),
                             on_granted=grants["b"].append)
    rig.settle()
    assert grants["a"] == [1] and grants["b"] == []
    assert_global_safety(coords)
    # advancing AGV clears the shared segment: follower becomes grantable
    coords["a"].clear_segments(1, frozenset({8}))
    rig.settle()
    assert grants["b"] == [2]
    assert_global_safety(coords)


def test_corridor_clear_matches_sequential_oracle():
    # oracle: sequential simulation, one claim strictly after the other
    def sequential():
        order = []
        order.append(("a", 1))   # leader locks 1,2,3
        order.append(("b", 2))   # follower locks after full clear
        return order

    rig = Rig(["a", "b"])
    coords = coordinators(rig)
    events = []
    coords["a"].submit_claim(Claim(1, 3, frozenset({1, 2, 3}), "a", 0),
                             on_granted=lambda pid: events.append(("a", pid)))
    coords["b"].submit_claim(Claim(2, 3, frozenset({1, 2, 3}), "b", 0),
                             on_granted=lambda pid: events.append(("b", pid)))
    rig.settle()
    for segment in (1, 2, 3):
        coords["a"].clear_segments(1, frozenset({segment}))
        rig.settle()
        assert_global_safety(coords)
    assert events == sequential()


def test_clear_errors():
    rig = Rig(["a"])
    coordinator = LockCoordinator(rig.ves["a"])
    with pytest.raises(LockError):
        coordinator.clear_segments(1, frozenset({1}))
    coordinator.submit_claim(Claim(1, 3, frozenset({1, 2}), "a", 0))
    rig.settle()
    with pytest.raises(LockError):
        coordinator.clear_segments(1, frozenset({99}))
    coordinator.clear_segments(1, frozenset())  # no-op
    coordinator.clear_segments(1, frozenset({1, 2}))
    rig.settle()
    assert coordinator.locked_segments() == set()


def test_randomized_claims_safety_and_liveness():
    rng = random.Random(97)
    for trial in range(10):
        nodes = ["a", "b", "c"]
        rig = Rig(nodes)
        coords = coordinators(rig)
        granted = {}
        pid = 0
        pending = []
        for node in nodes:
            for _ in range(rng.randint(1, 3)):
                pid += 1
                segments = frozenset(rng.sample(range(8), rng.randint(1, 3)))
                claim = Claim(pid, rng.randint(1, 5), segments, node,
                              rig.kernel.now)
                coords[node].submit_claim(
                    claim, on_granted=lambda p, n=node: granted.setdefault(p, n))
                pending.append((node, claim))
        for _ in range(200):
            rig.tick()
            assert_global_safety(coords)
            # clear everything granted so far, releasing waiters
            for node, claim in pending:
                record = coords[node].table.get(claim.projection_id)
                if record is not None and record.granted and record.remaining:
                    coords[node].clear_segments(claim.projection_id,
                                                record.remaining)
            if len(granted) == pid:
                break
        assert len(granted) == pid, f"trial {trial}: not all claims granted"


def test_dead_requesters_claims_are_purged():
    rig = Rig(["a", "b", "c"])
    coords = coordinators(rig)
    granted = []
    coords["a"].submit_claim(Claim(1, 5, frozenset({1}), "a", 0))
    coords["b"].submit_claim(Claim(2, 1, frozenset({1}), "b", 0),
                             on_granted=granted.append)
    rig.settle()
    assert granted == []  # blocked behind a's higher-priority claim
    rig.kernel.leave_node("a")
    for node in ("b", "c"):
        coords[node].on_membership("leave", "a")
    rig.settle()
    assert granted == [2]
