"""Per-camera sliding-window construction of dynamic relation subgraphs.

The pipeline for one window is: greedy detection-to-track association,
prioritized subject/object pair proposal, relation span assembly from scored
candidates, and span consolidation.
"""

from __future__ import annotations

import logging
import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .files import InputError, iter_jsonl
from .model import (
    Box3,
    DynamicSubgraph,
    Feature,
    FrameObservation,
    InstanceVertex,
    Pose,
    Rect,
    RelationCandidate,
    RelationEdge,
    Span,
    frame_or_candidate,
)

logger = logging.getLogger(__name__)

EPS_T = 1e-6

DEFAULT_HUMAN_LABELS = frozenset({"person", "adult", "child", "man", "woman", "baby", "barista", "patron"})
DEFAULT_FURNITURE_LABELS = frozenset(
    {"couch", "sofa", "fridge", "tv", "table", "counter", "shelf", "desk", "chair", "bed", "cabinet"}
)


@dataclass(frozen=True)
class DynamicConfig:
    window_s: float = 10.0
    frame_hz: float = 5.0
    top_k: int = 20
    priority_fraction: float = 0.7
    merge_gap_s: float = 2.0
    assoc_iou_min: float = 0.3
    assoc_feat_min: float = 0.5
    confidence_gate: float = 0.5
    human_labels: frozenset = DEFAULT_HUMAN_LABELS
    furniture_labels: frozenset = DEFAULT_FURNITURE_LABELS
    # pinhole intrinsics (fx, fy, cx, cy) used for back-projection
    intrinsics: tuple = (525.0, 525.0, 320.0, 240.0)
    default_extent_m: float = 0.3

    def __post_init__(self):
        if not self.window_s > 0:
            raise ValueError("window_s must be positive")
        if not self.frame_hz > 0:
            raise ValueError("frame_hz must be positive")
        if not 0.0 <= self.priority_fraction <= 1.0:
            raise ValueError("priority_fraction must lie in [0, 1]")
        if self.merge_gap_s < 0:
            raise ValueError("merge_gap_s must be non-negative")
        if self.top_k < 0:
            raise ValueError("top_k must be non-negative")
        object.__setattr__(self, "human_labels", frozenset(s.lower() for s in self.human_labels))
        object.__setattr__(self, "furniture_labels", frozenset(s.lower() for s in self.furniture_labels))
        object.__setattr__(self, "intrinsics", tuple(float(v) for v in self.intrinsics))


# -- camera geometry ---------------------------------------------------------

def project_point(p_world, pose: Pose, intrinsics) -> Optional[tuple[float, float, float]]:
    """Pixel (u, v) and z-depth of a world point, or None when behind the camera."""
    fx, fy, cx, cy = intrinsics
    x, y, z = pose.to_camera(p_world)
    if z <= 1e-9:
        return None
    return (fx * x / z + cx, fy * y / z + cy, z)


def backproject_pixel(u: float, v: float, depth: float, pose: Pose, intrinsics):
    fx, fy, cx, cy = intrinsics
    p_cam = ((u - cx) / fx * depth, (v - cy) / fy * depth, depth)
    return pose.to_world(p_cam)


# -- tracks ------------------------------------------------------------------

@dataclass(frozen=True)
class TrackEntry:
    time: float
    rect: Rect
    feature: Feature
    label: str
    det_index: int
    box3: Optional[Box3] = None
    depth_m: Optional[float] = None
    pose: Optional[Pose] = None


@dataclass
class Track:
    track_id: int
    entries: list = field(default_factory=list)

    @property
    def class_label(self) -> str:
        counts = Counter(e.label for e in self.entries)
        best = max(counts.values())
        # ties go to the label seen first
        for e in self.entries:
            if counts[e.label] == best:
                return e.label
        raise ValueError("empty track")

    @property
    def times(self) -> list[float]:
        return [e.time for e in self.entries]

    @property
    def last(self) -> TrackEntry:
        return self.entries[-1]


def rect_iou(a: Rect, b: Rect) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def associate_frames(window_frames: Sequence[FrameObservation], cfg: DynamicConfig) -> list[Track]:
    """Link detections across time-sorted frames of one camera into tracks.

    Each frame is matched greedily against the last entry of every existing
    track by the mean of rect IoU and feature cosine, subject to both floors.
    Unmatched detections open new tracks, numbered in first-seen order.
    """
    tracks: list[Track] = []
    dim = None
    prev_time = None
    for frame in window_frames:
        if prev_time is not None and frame.time <= prev_time:
            raise ValueError(f"frames out of order at t={frame.time}")
        prev_time = frame.time
        for det in frame.detections:
            if dim is None:
                dim = det.feature.dim
            elif det.feature.dim != dim:
                raise ValueError(f"feature dimension mismatch: expected {dim}, got {det.feature.dim}")
        scored = []
        for ti, tr in enumerate(tracks):
            last = tr.last
            for di, det in enumerate(frame.detections):
                iou = rect_iou(last.rect, det.rect)
                sim = last.feature.cosine(det.feature)
                if iou >= cfg.assoc_iou_min and sim >= cfg.assoc_feat_min:
                    scored.append((-(iou + sim) / 2.0, tr.track_id, di, ti))
        scored.sort()
        used_tracks, used_dets = set(), set()
        assignment = {}
        for _, tid, di, ti in scored:
            if tid in used_tracks or di in used_dets:
                continue
            used_tracks.add(tid)
            used_dets.add(di)
            assignment[di] = ti
        for di, det in enumerate(frame.detections):
            entry = TrackEntry(frame.time, det.rect, det.feature, det.label, di, det.box3, det.depth_m, frame.pose)
            if di in assignment:
                tracks[assignment[di]].entries.append(entry)
            else:
                tracks.append(Track(len(tracks), [entry]))
    return tracks


# -- pair proposal -----------------------------------------------------------

def co_visibility(a: Track, b: Track) -> int:
    return len(set(a.times) & set(b.times))


def is_prioritized(subject: Track, obj: Track, cfg: DynamicConfig) -> bool:
    return (
        subject.class_label.lower() in cfg.human_labels
        or obj.class_label.lower() in cfg.furniture_labels
    )


def priority_quota(top_k: int, fraction: float) -> int:
    return math.ceil(round(fraction * top_k, 9))


def take_quota(prioritized: Sequence, others: Sequence, top_k: int, fraction: float) -> tuple[list, list]:
    """Split ``top_k`` slots between two ranked pools, backfilling any shortfall."""
    q = min(priority_quota(top_k, fraction), top_k)
    n = min(top_k, len(prioritized) + len(others))
    p_take = min(q, len(prioritized))
    o_take = min(top_k - q, len(others))
    short = n - p_take - o_take
    extra = min(short, len(prioritized) - p_take)
    p_take += extra
    o_take += short - extra
    return list(prioritized[:p_take]), list(others[:o_take])


def propose_pairs(tracks: Sequence[Track], cfg: DynamicConfig) -> list[tuple[Track, Track]]:
    """Top-k ordered (subject, object) pairs, prioritized pairs first.

    Pairs with a human subject or a furniture object fill
    ``ceil(priority_fraction * top_k)`` slots; the rest come from the other
    pool. Each pool is ranked by co-visibility, ties by (subject, object) id.
    """
    if len(tracks) < 2:
        return []
    pri, oth = [], []
    for s in tracks:
        for o in tracks:
            if s.track_id == o.track_id:
                continue
            key = (-co_visibility(s, o), s.track_id, o.track_id)
            (pri if is_prioritized(s, o, cfg) else oth).append((key, (s, o)))
    pri.sort(key=lambda x: x[0])
    oth.sort(key=lambda x: x[0])
    p, o = take_quota([x[1] for x in pri], [x[1] for x in oth], cfg.top_k, cfg.priority_fraction)
    return p + o


# -- spans and relations -----------------------------------------------------

def consolidate_spans(spans: Iterable[Span], merge_gap_s: float) -> list[Span]:
    """Merge spans whose separation is below ``merge_gap_s``; output sorted and disjoint."""
    items = []
    for ta, tb in spans:
        if not ta < tb:
            raise ValueError(f"malformed span ({ta}, {tb})")
        items.append((float(ta), float(tb)))
    items.sort()
    out: list[list[float]] = []
    for ta, tb in items:
        if out and ta - out[-1][1] < merge_gap_s:
            out[-1][1] = max(out[-1][1], tb)
        else:
            out.append([ta, tb])
    return [(a, b) for a, b in out]


def _runs(times: Sequence[float], max_step: float) -> list[list[float]]:
    runs: list[list[float]] = []
    for t in times:
        if runs and t - runs[-1][-1] <= max_step:
            runs[-1].append(t)
        else:
            runs.append([t])
    return runs


def assemble_relations(
    pairs: Sequence[tuple[Track, Track]],
    candidates: Iterable[RelationCandidate],
    window: Span,
    cfg: DynamicConfig,
    *,
    known_ids: Optional[Iterable[int]] = None,
) -> list[RelationEdge]:
    """Turn gated candidate hits on proposed pairs into time-spanned relation edges.

    Hits on consecutive frames form a raw span from first to last hit; runs of
    a single hit carry no duration and are dropped. Raw spans are then
    consolidated. Candidates naming an unknown track are skipped and counted.
    """
    start, end = window
    proposed = {(s.track_id, o.track_id): (s, o) for s, o in pairs}
    known = set(known_ids) if known_ids is not None else {t.track_id for p in pairs for t in p}
    hits: dict[tuple[int, int, str], dict[float, float]] = defaultdict(dict)
    unknown = 0
    for c in candidates:
        if c.subject_track not in known or c.object_track not in known:
            unknown += 1
            continue
        if c.confidence < cfg.confidence_gate or not (start - EPS_T <= c.time < end - EPS_T):
            continue
        if (c.subject_track, c.object_track) not in proposed:
            continue
        key = (c.subject_track, c.object_track, c.predicate)
        hits[key][c.time] = max(c.confidence, hits[key].get(c.time, 0.0))
    if unknown:
        logger.warning("skipped %d relation candidate(s) with unknown track ids", unknown)

    max_step = 1.0 / cfg.frame_hz + 1e-3
    edges = []
    for key in sorted(hits):
        s_id, o_id, predicate = key
        times = sorted(hits[key])
        raw = [(r[0], r[-1]) for r in _runs(times, max_step) if len(r) >= 2]
        if not raw:
            continue
        spans = consolidate_spans(raw, cfg.merge_gap_s)
        confs = [hits[key][t] for t in times if any(a <= t <= b for a, b in spans)]
        s, o = proposed[(s_id, o_id)]
        edges.append(
            RelationEdge(
                s_id, s.class_label, o_id, o.class_label, predicate, tuple(spans),
                round(statistics.fmean(confs), 6),
            )
        )
    return edges


# -- subgraph ----------------------------------------------------------------

def instance_box(track: Track, cfg: DynamicConfig) -> Optional[Box3]:
    """3D box for a track: the latest supplied box, else a back-projected default cube."""
    for e in reversed(track.entries):
        if e.box3 is not None:
            return e.box3
    depths = [e.depth_m for e in track.entries if e.depth_m is not None and e.pose is not None]
    if not depths:
        return None
    depth = statistics.median(depths)
    for e in reversed(track.entries):
        if e.pose is not None:
            u = (e.rect[0] + e.rect[2]) / 2.0
            v = (e.rect[1] + e.rect[3]) / 2.0
            center = backproject_pixel(u, v, depth, e.pose, cfg.intrinsics)
            ext = cfg.default_extent_m
            return Box3.from_center(center, (ext, ext, ext))
    return None


def in_window(t: float, start: float, end: float) -> bool:
    return start - EPS_T <= t < end - EPS_T


def build_subgraph(
    window_frames: Iterable[FrameObservation],
    candidates: Iterable[RelationCandidate],
    camera_id: str,
    cfg: DynamicConfig,
    window_end: float,
) -> DynamicSubgraph:
    """Dynamic subgraph of one camera for the window ``[window_end - window_s, window_end)``.

    Candidate ids index detections of the frame at the candidate's time; they
    are mapped onto track ids produced by association.
    """
    start = window_end - cfg.window_s
    frames = sorted(
        (f for f in window_frames if f.camera_id == camera_id and in_window(f.time, start, window_end)),
        key=lambda f: f.time,
    )
    tracks = associate_frames(frames, cfg)
    if not tracks:
        return DynamicSubgraph(start, window_end, camera_id)

    slot_to_track = {}
    for tr in tracks:
        for e in tr.entries:
            slot_to_track[(round(e.time, 6), e.det_index)] = tr.track_id
    resolved = []
    unresolved = 0
    for c in candidates:
        if not in_window(c.time, start, window_end):
            continue
        t = round(c.time, 6)
        s = slot_to_track.get((t, c.subject_track))
        o = slot_to_track.get((t, c.object_track))
        if s is None or o is None:
            unresolved += 1
            continue
        resolved.append(RelationCandidate(c.time, s, o, c.predicate, c.confidence))
    if unresolved:
        logger.warning("%s: %d relation candidate(s) reference missing detections", camera_id, unresolved)

    pairs = propose_pairs(tracks, cfg)
    edges = assemble_relations(
        pairs, resolved, (start, window_end), cfg, known_ids=[t.track_id for t in tracks]
    )
    vertices = []
    for tr in tracks:
        last = tr.last
        vertices.append(
            InstanceVertex(
                tr.track_id, tr.class_label, last.feature, last.rect,
                tr.entries[0].time, last.time, instance_box(tr, cfg),
            )
        )
    return DynamicSubgraph(start, window_end, camera_id, tuple(vertices), tuple(edges))


# -- streams -----------------------------------------------------------------

@dataclass
class Stream:
    camera_id: str
    frames: list
    candidates: list


def read_stream(path) -> Stream:
    """Parse a camera stream file of interleaved frame and relation lines."""
    frames, candidates = [], []
    last_time: dict[str, float] = {}
    camera = None

    def decode(d):
        rec = frame_or_candidate(d)
        if isinstance(rec, FrameObservation):
            prev = last_time.get(rec.camera_id)
            if prev is not None and rec.time <= prev:
                raise ValueError(f"time {rec.time} not increasing for camera {rec.camera_id}")
            last_time[rec.camera_id] = rec.time
        return rec

    for rec in iter_jsonl(path, decode):
        if isinstance(rec, FrameObservation):
            if camera is None:
                camera = rec.camera_id
            elif rec.camera_id != camera:
                raise InputError(path, f"mixed cameras {camera!r} and {rec.camera_id!r} in one stream")
            frames.append(rec)
        else:
            candidates.append(rec)
    return Stream(camera or "", frames, candidates)


def window_ends(frames: Sequence[FrameObservation], window_s: float) -> list[float]:
    """Window end times, aligned to multiples of ``window_s``, covering every frame."""
    if not frames:
        return []
    first = math.floor(frames[0].time / window_s + EPS_T)
    last = math.floor(frames[-1].time / window_s + EPS_T) + 1
    return [round(k * window_s, 9) for k in range(first + 1, last + 1)]


def run_stream(stream: Stream, cfg: DynamicConfig) -> list[tuple[int, DynamicSubgraph]]:
    out = []
    for end in window_ends(stream.frames, cfg.window_s):
        tick = int(round(end / cfg.window_s))
        out.append((tick, build_subgraph(stream.frames, stream.candidates, stream.camera_id, cfg, end)))
    return out
