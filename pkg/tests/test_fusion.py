from __future__ import annotations

import pytest

from conftest import building, static_obj, vertex
from dynscene.fusion import (
    FusionConfig,
    FusionError,
    Fuser,
    check_snapshot,
    fuse_semantic,
    fuse_spatial,
    snapshot_counts,
    tick,
)
from dynscene.model import Box3, DynamicSubgraph, RelationEdge

SPATIAL = FusionConfig()
SEMANTIC = FusionConfig(mode="semantic", camera_region={"cam": "cafeteria", "hall": "corridor"})
TABLE_BOX = Box3.from_center((20, 6, 0.375), (1.6, 0.9, 0.75))


def sub(vertices, edges=(), cam="cam", end=10.0):
    return DynamicSubgraph(end - 10.0, end, cam, tuple(vertices), tuple(edges))


def test_spatial_exact_table_merges(base):
    snap = fuse_spatial(base, sub([vertex(0, "table", TABLE_BOX)]), SPATIAL)
    assert [(m.track_id, m.static_id) for m in snap.merges] == [(0, "table-1")]
    assert snap.anchored[0].anchors == ()


def test_spatial_cup_anchors_to_region(base):
    cup = Box3.from_center((25, 10, 0.8), (0.1, 0.1, 0.1))
    snap = fuse_spatial(base, sub([vertex(0, "cup", cup)]), SPATIAL)
    assert snap.merges == ()
    assert [(a.track_id, a.region_id) for a in snap.anchored[0].anchors] == [(0, "cafeteria")]


def test_spatial_argmax_between_two_statics():
    objs = [
        static_obj("a-1", "table", (1.15, 0.5, 0.5), (1.7, 1, 1), "cafeteria"),  # x in [0.3, 2]
        static_obj("b-1", "table", (1.05, 0.5, 0.5), (1.9, 1, 1), "cafeteria"),  # x in [0.1, 2]
    ]
    snap = fuse_spatial(building(objs), sub([vertex(0, "thing", Box3((0, 0, 0), (1, 1, 1)))]), SPATIAL)
    # overlaps 0.7 with a-1 and 0.9 with b-1
    assert snap.merges[0].static_id == "b-1"


def test_spatial_tie_prefers_larger_static_then_id():
    objs = [
        static_obj("small-1", "box", (0.5, 0.5, 0.5), (1, 1, 1), "cafeteria"),
        static_obj("big-1", "box", (0.5, 0.5, 1.0), (1, 1, 2), "cafeteria"),
        static_obj("big-0", "box", (0.5, 0.5, 1.0), (1, 1, 2), "cafeteria"),
    ]
    g = building(objs)
    inst = Box3((0.25, 0.25, 0.25), (0.75, 0.75, 0.75))  # fully inside all three
    snap = fuse_spatial(g, sub([vertex(0, "x", inst)]), SPATIAL)
    assert snap.merges[0].static_id == "big-0"


def test_spatial_requires_box(base):
    with pytest.raises(FusionError, match="posed camera"):
        fuse_spatial(base, sub([vertex(0, "cup", None)]), SPATIAL)


def test_spatial_boundary_thresholds(base):
    partial = Box3((19.2, 5.55, 0.5), (20.8, 6.45, 1.0))  # upper third sticks out of the table
    exact = sub([vertex(0, "table", TABLE_BOX), vertex(1, "table", partial)])
    strict = fuse_spatial(base, exact, FusionConfig(b_thr=1.0))
    assert [m.track_id for m in strict.merges] == [0]
    loose = fuse_spatial(base, exact, FusionConfig(b_thr=1e-9))
    assert [m.track_id for m in loose.merges] == [0, 1]
    with pytest.raises(ValueError):
        FusionConfig(b_thr=0.0)


def test_semantic_person_sitting_on_couch():
    g = building()
    s = sub([vertex(0, "person"), vertex(1, "couch")],
            [RelationEdge(0, "person", 1, "couch", "sitting on", ((1, 8),))], cam="hall")
    snap = fuse_semantic(g, s, SEMANTIC)
    assert [(m.track_id, m.static_id) for m in snap.merges] == [(1, "couch-1")]
    assert snap.anchored[0].anchors == ()
    att = snap.attachments()
    assert att[("hall", 0)] == [("component", "corridor", "corridor")]
    assert check_snapshot(snap) == []
    assert snap.anchored[0].subgraph.edges == s.edges


def test_semantic_lone_cup_and_two_components(base):
    s = sub([vertex(0, "cup"), vertex(1, "person"), vertex(2, "phone")],
            [RelationEdge(1, "person", 2, "phone", "holding", ((0, 3),))])
    snap = fuse_semantic(base, s, SEMANTIC)
    assert snap.merges == ()
    assert [(a.track_id, a.region_id) for a in snap.anchored[0].anchors] == [(0, "cafeteria"), (1, "cafeteria")]
    assert check_snapshot(snap) == []


def test_semantic_static_class_without_match_anchors(base):
    # a fridge seen in the cafeteria, but the static graph has none there
    snap = fuse_semantic(base, sub([vertex(0, "fridge")]), SEMANTIC)
    assert snap.merges == ()
    assert [(a.track_id, a.region_id) for a in snap.anchored[0].anchors] == [(0, "cafeteria")]


def test_semantic_unknown_camera(base):
    with pytest.raises(FusionError, match="unknown camera_id"):
        fuse_semantic(base, sub([vertex(0, "cup")], cam="nowhere"), SEMANTIC)


def test_tick_empty_equals_bare_base(base):
    snap = tick(base, [], SPATIAL, 5)
    assert snap.base == base and snap.anchored == () and snap.merges == () and snap.tick == 5


def test_tick_rejects_mixed_window_ends(base):
    with pytest.raises(FusionError, match="mixed window ends"):
        tick(base, [sub([], cam="a", end=10), sub([], cam="b", end=20)], SPATIAL, 1)


def test_tick_clears_previous_content(base):
    cup = Box3.from_center((25, 10, 0.8), (0.1, 0.1, 0.1))
    fuser = Fuser(base, SPATIAL)
    first = fuser.tick([sub([vertex(0, "cup", cup)])], 1)
    second = fuser.tick([sub([vertex(0, "cup", cup)])], 2, wall_time=10.0)
    assert first.anchored == second.anchored and first.merges == second.merges
    third = fuser.tick([sub([], end=10.0)], 3)
    assert snapshot_counts(third)["dynamic_vertices"] == 0
    assert base == building()  # base never mutated


def test_snapshot_counts(base):
    cup = Box3.from_center((25, 10, 0.8), (0.1, 0.1, 0.1))
    s = sub([vertex(0, "table", TABLE_BOX), vertex(1, "cup", cup)],
            [RelationEdge(1, "cup", 0, "table", "on", ((0, 5),))])
    counts = snapshot_counts(tick(base, [s], SPATIAL, 1))
    assert counts == {
        "regions": 3, "static_objects": 3, "static_edges": 5, "dynamic_vertices": 1,
        "merged_vertices": 1, "relation_edges": 1, "anchor_edges": 1,
    }
