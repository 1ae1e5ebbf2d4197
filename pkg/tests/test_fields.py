"""Task-field arithmetic, gradients, and aging."""
import random

import pytest

from situated.fields import (FieldData, TaskField, age_priority, aged_priority,
                             combine, field_range, field_value, gradient_step)
from situated.worldgraph import Edge, SegmentGraph


def line_graph(n=10, length=100.0):
    nodes = [f"n{i}" for i in range(n)]
    edges = [Edge(i, f"n{i}", f"n{i + 1}", length) for i in range(n - 1)]
    return SegmentGraph(nodes, edges)


def diamond_graph():
    nodes = ["x", "a", "b", "y"]
    edges = [Edge(1, "x", "a", 50.0), Edge(2, "x", "b", 50.0),
             Edge(3, "a", "y", 50.0), Edge(4, "b", "y", 50.0)]
    return SegmentGraph(nodes, edges)


def test_field_value_at_source_is_full_range():
    g = line_graph()
    f = TaskField("t1", FieldData(120, 3, "n0"))
    assert field_value(f, "n0", g, 50.0) == field_range(3, 50.0) == 150.0


def test_field_value_zero_at_and_beyond_range():
    g = line_graph()
    f = TaskField("t1", FieldData(120, 2, "n0"))  # range 100
    assert field_value(f, "n1", g, 50.0) == 0.0   # d = 100 = range
    assert field_value(f, "n5", g, 50.0) == 0.0


def test_field_value_formula():
    g = line_graph()
    f = TaskField("t1", FieldData(120, 3, "n0"))
    # priority 3, unit 50 -> range 150; d = 100 -> 50
    assert field_value(f, "n1", g, 50.0) == 50.0


def test_range_strictly_increasing_in_priority():
    ranges = [field_range(p, 50.0) for p in range(1, 6)]
    assert all(b > a for a, b in zip(ranges, ranges[1:]))


def test_field_value_non_increasing_in_distance():
    g = line_graph()
    f = TaskField("t1", FieldData(1, 5, "n0"))
    values = [field_value(f, f"n{i}", g, 80.0) for i in range(10)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_combine_empty_single_and_sum():
    g = line_graph()
    f1 = TaskField("t1", FieldData(1, 3, "n0"))
    f2 = TaskField("t2", FieldData(2, 4, "n9"))
    assert combine([], "n4", g, 50.0) == 0.0
    assert combine([f1], "n1", g, 50.0) == field_value(f1, "n1", g, 50.0)
    rng = random.Random(3)
    fields = [TaskField(f"t{i}", FieldData(i, rng.randint(1, 5),
                                           f"n{rng.randint(0, 9)}"))
              for i in range(5)]
    for i in range(10):
        at = f"n{i}"
        oracle = sum(field_value(f, at, g, 50.0) for f in fields)
        assert combine(fields, at, g, 50.0) == pytest.approx(oracle)


def test_gradient_step_no_fields_stays():
    g = line_graph()
    assert gradient_step("n4", [], g, 50.0) == "n4"


def test_gradient_follower_reaches_source_in_nine_steps():
    g = line_graph(10)
    # field at n9 with range covering the whole line
    f = TaskField("t1", FieldData(1, 5, "n9"))
    position = "n0"
    steps = 0
    while position != "n9":
        nxt = gradient_step(position, [f], g, 200.0)
        assert nxt != position, "follower stalled"
        # BFS-distance monotonicity: every step moves strictly closer
        assert int(nxt[1:]) == int(position[1:]) + 1
        position = nxt
        steps += 1
    assert steps == 9


def test_gradient_tie_breaks_to_smallest_node_id():
    g = diamond_graph()
    # both arms improve equally toward the field at y
    f = TaskField("t1", FieldData(1, 3, "y"))
    assert gradient_step("x", [f], g, 50.0) == "a"


def test_age_priority_below_window_unchanged():
    f = TaskField("t1", FieldData(1, 2, "n0"))
    assert age_priority(f, 99, 100) is f


def test_age_priority_capped():
    f = TaskField("t1", FieldData(1, 5, "n0"))
    assert age_priority(f, 10_000, 100).data.priority == 5


def test_age_priority_two_windows():
    f = TaskField("t1", FieldData(1, 2, "n0"))
    # windows-elapsed oracle: 2 full windows -> +2
    elapsed = 2 * 100
    assert age_priority(f, elapsed, 100).data.priority == 2 + elapsed // 100 == 4


def test_aged_priority_helper():
    assert aged_priority(1, 0, 100) == 1
    assert aged_priority(1, 100, 100) == 2
    assert aged_priority(4, 250, 100) == 5  # capped


def test_gradient_step_never_decreases_combined_value():
    rng = random.Random(17)
    g = line_graph(12)
    for _ in range(50):
        fields = [TaskField(f"t{i}", FieldData(i, rng.randint(1, 5),
                                               f"n{rng.randint(0, 11)}"))
                  for i in range(rng.randint(0, 4))]
        at = f"n{rng.randint(0, 11)}"
        nxt = gradient_step(at, fields, g, 60.0)
        assert combine(fields, nxt, g, 60.0) >= combine(fields, at, g, 60.0)


def test_field_data_priority_domain():
    with pytest.raises(ValueError):
        FieldData(1, 0, "n0")
    with pytest.raises(ValueError):
        FieldData(1, 6, "n0")
