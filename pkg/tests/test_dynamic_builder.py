from __future__ import annotations

import json
import logging

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynscene.dynamic_builder import (
    DynamicConfig,
    Track,
    TrackEntry,
    assemble_relations,
    associate_frames,
    backproject_pixel,
    build_subgraph,
    consolidate_spans,
    instance_box,
    priority_quota,
    project_point,
    propose_pairs,
    read_stream,
    run_stream,
    take_quota,
    window_ends,
)
from dynscene.files import InputError
from dynscene.model import Box3, Detection, Feature, FrameObservation, Pose, RelationCandidate

CFG = DynamicConfig()
F1 = Feature((1.0, 0.0, 0.0))
F2 = Feature((0.0, 1.0, 0.0))
F3 = Feature((0.0, 0.0, 1.0))
OVERHEAD = Pose((0, 0, 3), (0, 1, 0, 0))


def det(label, rect, feature=F1, **kw):
    return Detection(label, 1.0, feature, rect, **kw)


def frames(n, dets_at, camera="cam", hz=5.0, pose=None, t0=0.0):
    return [FrameObservation(camera, round(t0 + k / hz, 6), pose, tuple(dets_at(k))) for k in range(n)]


def test_stationary_detection_is_one_track():
    tracks = associate_frames(frames(50, lambda k: [det("cup", (10, 10, 50, 50))]), CFG)
    assert len(tracks) == 1 and len(tracks[0].entries) == 50


def test_label_swap_keeps_tracks_by_geometry_and_feature():
    def at(k):
        a, b = ("person", "chair") if k % 2 == 0 else ("chair", "person")
        return [det(a, (0, 0, 40, 40), F1), det(b, (200, 0, 240, 40), F2)]

    tracks = associate_frames(frames(10, at), CFG)
    assert len(tracks) == 2
    assert [e.rect for e in tracks[0].entries] == [(0, 0, 40, 40)] * 10
    # majority tie: earliest label wins
    assert tracks[0].class_label == "person"


def test_return_below_floor_opens_new_track():
    def at(k):
        if 3 <= k < 6:
            return []
        if k < 3:
            return [det("cup", (0, 0, 40, 40), F1)]
        return [det("cup", (300, 300, 340, 340), F1)]

    tracks = associate_frames(frames(9, at), CFG)
    assert [t.track_id for t in tracks] == [0, 1]
    assert len(tracks[0].entries) == 3 and len(tracks[1].entries) == 3


def test_feature_floor_blocks_match():
    def at(k):
        return [det("cup", (0, 0, 40, 40), F1 if k == 0 else F2)]

    assert len(associate_frames(frames(2, at), CFG)) == 2


def test_feature_dimension_mismatch():
    def at(k):
        return [det("cup", (0, 0, 4, 4), F1 if k == 0 else Feature((1.0, 0.0)))]

    with pytest.raises(ValueError, match="dimension"):
        associate_frames(frames(2, at), CFG)


def test_frames_out_of_order_rejected():
    fs = frames(3, lambda k: [])
    with pytest.raises(ValueError):
        associate_frames(list(reversed(fs)), CFG)


def _track(tid, label, times):
    return Track(tid, [TrackEntry(t, (0, 0, 1, 1), F1, label, 0) for t in times])


def test_quota_examples():
    assert priority_quota(20, 0.7) == 14
    assert priority_quota(10, 0.7) == 7
    p, o = take_quota(list(range(12)), list("abcde"), 10, 0.7)
    assert (len(p), len(o)) == (7, 3)
    p, o = take_quota([0, 1], list("abcdefghijklmnopqrst"), 10, 0.7)
    assert (len(p), len(o)) == (2, 8)
    p, o = take_quota(list(range(20)), ["a"], 10, 0.7)
    assert (len(p), len(o)) == (9, 1)


def test_two_tracks_human_and_table():
    tracks = [_track(0, "person", [0, 0.2]), _track(1, "table", [0, 0.2])]
    pairs = propose_pairs(tracks, DynamicConfig(top_k=1))
    assert [(s.track_id, o.track_id) for s, o in pairs] == [(0, 1)]
    # with room to spare the reverse orientation backfills after the prioritized pair
    pairs = propose_pairs(tracks, CFG)
    assert [(s.track_id, o.track_id) for s, o in pairs] == [(0, 1), (1, 0)]


def test_propose_pairs_less_than_two_tracks():
    assert propose_pairs([_track(0, "person", [0])], CFG) == []


def test_propose_pairs_ranks_by_covisibility():
    tracks = [_track(0, "cup", [0, 0.2]), _track(1, "bowl", [0.2]), _track(2, "plate", [0, 0.2])]
    pairs = propose_pairs(tracks, DynamicConfig(top_k=2, priority_fraction=0.0))
    assert [(s.track_id, o.track_id) for s, o in pairs] == [(0, 2), (2, 0)]


def test_consolidate_examples():
    assert consolidate_spans([(0, 5), (6, 10)], 2.0) == [(0, 10)]
    assert consolidate_spans([(0, 5)], 2.0) == [(0, 5)]
    assert consolidate_spans([(0, 2), (7, 9)], 2.0) == [(0, 2), (7, 9)]
    assert consolidate_spans([(0, 5), (7, 9)], 2.0) == [(0, 5), (7, 9)]  # gap exactly 2 s stays open
    with pytest.raises(ValueError):
        consolidate_spans([(3, 3)], 2.0)


spans_st = st.lists(
    st.tuples(st.floats(0, 100, allow_nan=False), st.floats(0.01, 10, allow_nan=False)).map(lambda p: (p[0], p[0] + p[1])),
    max_size=30,
)


def _coverage(spans):
    total, end = 0.0, -1e18
    for a, b in sorted(spans):
        if b > end:
            total += b - max(a, end)
            end = b
    return total


@given(spans_st, st.floats(0, 5, allow_nan=False), st.randoms())
def test_consolidate_properties(spans, gap, rnd):
    out = consolidate_spans(spans, gap)
    assert consolidate_spans(out, gap) == out
    shuffled = list(spans)
    rnd.shuffle(shuffled)
    assert consolidate_spans(shuffled, gap) == out
    for (_, b), (a, _) in zip(out, out[1:]):
        assert a - b >= gap
    assert _coverage(out) >= _coverage(spans) - 1e-9


def _hits(times, s=0, o=1, predicate="near", conf=0.9):
    return [RelationCandidate(t, s, o, predicate, conf) for t in times]


def _times(a, b, hz=5.0):
    return [round(k / hz, 6) for k in range(int(round(a * hz)), int(round(b * hz)) + 1)]


def test_assemble_examples():
    pair = [(_track(0, "person", [0]), _track(1, "cup", [0]))]
    e = assemble_relations(pair, _hits(_times(0, 5)), (0, 20), CFG)
    assert e[0].spans == ((0.0, 5.0),)
    e = assemble_relations(pair, _hits(_times(0, 5) + _times(6, 10)), (0, 20), CFG)
    assert e[0].spans == ((0.0, 10.0),)
    e = assemble_relations(pair, _hits(_times(0, 2) + _times(7, 9)), (0, 20), CFG)
    assert e[0].spans == ((0.0, 2.0), (7.0, 9.0))
    assert (e[0].subject_class, e[0].object_class) == ("person", "cup")


def test_assemble_gates_confidence_and_unproposed_pairs():
    pair = [(_track(0, "person", [0]), _track(1, "cup", [0]))]
    assert assemble_relations(pair, _hits(_times(0, 5), conf=0.4), (0, 20), CFG) == []
    assert assemble_relations(pair, _hits(_times(0, 5), s=1, o=0), (0, 20), CFG) == []


def test_assemble_counts_unknown_ids(caplog):
    pair = [(_track(0, "person", [0]), _track(1, "cup", [0]))]
    with caplog.at_level(logging.WARNING):
        out = assemble_relations(pair, _hits([0.0, 0.2], s=7), (0, 20), CFG)
    assert out == []
    assert "skipped 2 relation candidate(s)" in caplog.text


def test_projection_round_trip():
    p = (0.4, -0.3, 1.0)
    u, v, z = project_point(p, OVERHEAD, CFG.intrinsics)
    assert z == pytest.approx(2.0)
    assert backproject_pixel(u, v, z, OVERHEAD, CFG.intrinsics) == pytest.approx(p)
    assert project_point((0, 0, 5), OVERHEAD, CFG.intrinsics) is None


def test_instance_box_back_projects_rect_centre():
    fx, fy, cx, cy = CFG.intrinsics
    # rect centred on the pixel of world point (0.4, -0.3, 1.0) seen from 3 m up
    u, v, z = project_point((0.4, -0.3, 1.0), OVERHEAD, CFG.intrinsics)
    tr = Track(0, [TrackEntry(0.0, (u - 5, v - 5, u + 5, v + 5), F1, "cup", 0, None, z, OVERHEAD)])
    box = instance_box(tr, CFG)
    assert box.center == pytest.approx((0.4, -0.3, 1.0))
    assert box.extents == pytest.approx((0.3, 0.3, 0.3))
    assert instance_box(Track(0, [TrackEntry(0.0, (0, 0, 1, 1), F1, "cup", 0)]), CFG) is None


def _place_cup_stream():
    """Person places a cup on a counter between t=2 s and t=5 s of a 10 s window."""
    person = Box3.from_center((0.0, 0.5, 0.85), (0.5, 0.5, 1.7))
    cup = Box3.from_center((1.0, 0.0, 0.95), (0.1, 0.1, 0.1))
    counter = Box3.from_center((1.0, 0.0, 0.45), (2.0, 1.0, 0.9))

    def at(k):
        return [
            det("person", (100, 100, 160, 220), F1, box3=person),
            det("counter", (300, 100, 500, 200), F2, box3=counter),
            det("cup", (380, 120, 392, 132), F3, box3=cup),
        ]

    fs = frames(50, at, pose=OVERHEAD)
    cands = [RelationCandidate(t, 0, 2, "placing", 0.9) for t in _times(2, 5)]
    cands += [RelationCandidate(t, 2, 1, "on", 0.3) for t in _times(0, 9.8)]  # below gate
    return fs, cands


def test_build_subgraph_place_cup():
    fs, cands = _place_cup_stream()
    sub = build_subgraph(fs, cands, "cam", CFG, 10.0)
    assert {v.class_label for v in sub.vertices} == {"person", "cup", "counter"}
    assert len(sub.edges) == 1
    e = sub.edges[0]
    assert (e.subject_class, e.predicate, e.object_class) == ("person", "placing", "cup")
    assert e.spans == ((2.0, 5.0),)
    assert all(v.box3 is not None for v in sub.vertices)
    assert (sub.window_start, sub.window_end) == (0.0, 10.0)


def test_build_subgraph_empty_and_deterministic():
    assert build_subgraph([], [], "cam", CFG, 10.0).vertices == ()
    fs, cands = _place_cup_stream()
    assert build_subgraph(fs, cands, "cam", CFG, 10.0) == build_subgraph(fs, cands, "cam", CFG, 10.0)


def test_build_subgraph_ignores_data_after_window():
    fs, cands = _place_cup_stream()
    more = frames(10, lambda k: [det("dog", (0, 0, 5, 5), F1)], t0=10.0)
    later = [RelationCandidate(10.0, 0, 0, "sniffing", 0.9)]
    assert build_subgraph(fs + more, cands + later, "cam", CFG, 10.0) == build_subgraph(fs, cands, "cam", CFG, 10.0)


def test_window_ends_and_run_stream(tmp_path):
    fs, cands = _place_cup_stream()
    fs += frames(5, lambda k: [], t0=10.0)
    assert window_ends(fs, 10.0) == [10.0, 20.0]
    path = tmp_path / "stream.cam.jsonl"
    with open(path, "w") as fh:
        for rec in fs + cands:
            fh.write(json.dumps(rec.to_dict()) + "\n")
    out = run_stream(read_stream(path), CFG)
    assert [t for t, _ in out] == [1, 2]
    assert out[0][1].edges and not out[1][1].vertices


def test_read_stream_rejects_time_going_backwards(tmp_path):
    path = tmp_path / "s.jsonl"
    fs = frames(2, lambda k: [])
    path.write_text(json.dumps(fs[1].to_dict()) + "\n" + json.dumps(fs[0].to_dict()) + "\n")
    with pytest.raises(InputError) as err:
        read_stream(path)
    assert err.value.line == 2


def test_read_stream_rejects_mixed_cameras(tmp_path):
    path = tmp_path / "s.jsonl"
    a = frames(1, lambda k: [], camera="a")[0]
    b = frames(1, lambda k: [], camera="b", t0=1.0)[0]
    path.write_text(json.dumps(a.to_dict()) + "\n" + json.dumps(b.to_dict()) + "\n")
    with pytest.raises(InputError, match="mixed cameras"):
        read_stream(path)


def test_config_validation():
    with pytest.raises(ValueError):
        DynamicConfig(window_s=0)
    with pytest.raises(ValueError):
        DynamicConfig(priority_fraction=1.5)
    with pytest.raises(ValueError):
        DynamicConfig(merge_gap_s=-1)
