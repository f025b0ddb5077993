"""Global static graph construction from a posed object scan and region annotations."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

from shapely.geometry import LineString, Point

from .files import InputError, iter_jsonl, load_decoded
from .model import (
    BELONGING,
    CONNECTIVITY,
    Box3,
    FrameObservation,
    GlobalGraph,
    RegionVertex,
    StaticEdge,
    StaticObjectVertex,
    box_overlap_ratio,
    box_volume,
)

logger = logging.getLogger(__name__)

DEFAULT_STATIC_CLASSES = frozenset({"couch", "fridge", "tv", "table", "counter", "shelf"})


def normalize_label(label: str) -> str:
    return " ".join(label.strip().lower().split())


@dataclass(frozen=True)
class StaticBuildConfig:
    v_thr: float = 2.0
    static_classes: frozenset = DEFAULT_STATIC_CLASSES
    merge_overlap: float = 0.6
    connectivity_gap_m: float = 1.5
    overlap_metric: str = "min"

    def __post_init__(self):
        if not self.v_thr > 0:
            raise ValueError("v_thr must be positive")
        if not 0.0 < self.merge_overlap <= 1.0:
            raise ValueError("merge_overlap must lie in (0, 1]")
        object.__setattr__(
            self, "static_classes", frozenset(normalize_label(c) for c in self.static_classes)
        )

    def is_static_class(self, label: str) -> bool:
        return normalize_label(label) in self.static_classes


@dataclass(frozen=True)
class StaticCandidate:
    obs_id: str
    label: str
    box: Box3


@dataclass(frozen=True)
class Doorway:
    id: str
    segment: tuple[tuple[float, float], tuple[float, float]]

    @classmethod
    def from_dict(cls, d: dict) -> Doorway:
        p, q = d["segment"]
        return cls(d["id"], ((float(p[0]), float(p[1])), (float(q[0]), float(q[1]))))

    def to_dict(self) -> dict:
        return {"id": self.id, "segment": [list(p) for p in self.segment]}


@dataclass
class _Cluster:
    label: str
    box: Box3
    sources: list = field(default_factory=list)


def filter_static(candidates: Iterable[StaticCandidate], cfg: StaticBuildConfig) -> list:
    """Keep large objects and designated classes, in input order."""
    return [c for c in candidates if box_volume(c.box) >= cfg.v_thr or cfg.is_static_class(c.label)]


def assign_region(box3: Box3, regions: Sequence[RegionVertex]) -> str:
    """Region whose footprint covers the box centre, else the nearest region centroid.

    Ties in either case go to the lexicographically smallest region id.
    """
    if not regions:
        raise ValueError("no regions")
    cx, cy, _ = box3.center
    pt = Point(cx, cy)
    containing = sorted(r.id for r in regions if r.polygon.covers(pt))
    if containing:
        return containing[0]
    scored = [(round(math.dist((cx, cy), r.centroid), 9), r.id) for r in regions]
    return min(scored)[1]


def merge_duplicate_statics(kept: Sequence[StaticCandidate], cfg: StaticBuildConfig) -> list[_Cluster]:
    """Union same-label candidates whose boxes overlap by at least ``merge_overlap``.

    Overlap is checked pairwise on the original boxes and closed transitively,
    so the result does not depend on input order beyond cluster numbering.
    """
    parent = list(range(len(kept)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in combinations(range(len(kept)), 2):
        a, b = kept[i], kept[j]
        if normalize_label(a.label) != normalize_label(b.label):
            continue
        if box_overlap_ratio(a.box, b.box, cfg.overlap_metric) >= cfg.merge_overlap:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)

    clusters: dict[int, _Cluster] = {}
    for i, c in enumerate(kept):
        root = find(i)
        if root not in clusters:
            clusters[root] = _Cluster(normalize_label(c.label), c.box, [c.obs_id])
        else:
            cl = clusters[root]
            cl.box = cl.box.envelope(c.box)
            cl.sources.append(c.obs_id)
    return [clusters[k] for k in sorted(clusters)]


def build_connectivity(
    regions: Sequence[RegionVertex], doorways: Sequence[Doorway], gap_m: float = 1.5
) -> list[StaticEdge]:
    """Connect every pair of regions a doorway segment comes within ``gap_m`` of."""
    edges = set()
    for door in doorways:
        seg = LineString(door.segment)
        touched = sorted(r.id for r in regions if r.polygon.distance(seg) <= gap_m)
        if len(touched) < 2:
            logger.warning("doorway %s touches %d region(s); skipped", door.id, len(touched))
            continue
        for a, b in combinations(touched, 2):
            edges.add(StaticEdge(CONNECTIVITY, a, b))
    return sorted(edges, key=lambda e: (e.a, e.b))


_SLUG = re.compile(r"[^a-z0-9]+")


def _slug(label: str) -> str:
    return _SLUG.sub("_", label.lower()).strip("_") or "object"


def candidates_from_frames(frames: Iterable[FrameObservation]) -> list[StaticCandidate]:
    out = []
    for frame in frames:
        if frame.pose is None:
            raise ValueError(f"frame {frame.camera_id}@{frame.time} is not posed")
        for i, det in enumerate(frame.detections):
            if det.box3 is None:
                raise ValueError(f"detection {i} of frame {frame.camera_id}@{frame.time} lacks box3")
            out.append(StaticCandidate(f"{frame.camera_id}@{frame.time:.3f}#{i}", det.label, det.box3))
    return out


def build_static_graph(
    frames: Iterable[FrameObservation],
    regions: Sequence[RegionVertex],
    doorways: Sequence[Doorway],
    cfg: StaticBuildConfig = StaticBuildConfig(),
) -> GlobalGraph:
    candidates = candidates_from_frames(frames)
    clusters = merge_duplicate_statics(filter_static(candidates, cfg), cfg)
    counters: dict[str, int] = {}
    objects, edges = [], []
    for cl in clusters:
        slug = _slug(cl.label)
        counters[slug] = counters.get(slug, 0) + 1
        oid = f"{slug}-{counters[slug]}"
        rid = assign_region(cl.box, regions)
        objects.append(StaticObjectVertex(oid, cl.label, cl.box, rid, tuple(cl.sources)))
        edges.append(StaticEdge(BELONGING, oid, rid))
    edges.extend(build_connectivity(regions, doorways, cfg.connectivity_gap_m))
    return GlobalGraph(
        tuple(sorted(regions, key=lambda r: r.id)),
        tuple(sorted(objects, key=lambda o: o.id)),
        tuple(sorted(edges, key=lambda e: (e.kind, e.a, e.b))),
        version=0,
    )


def load_regions(path) -> list[RegionVertex]:
    return load_decoded(path, lambda d: [RegionVertex.from_dict(r) for r in d])


def load_doorways(path) -> list[Doorway]:
    return load_decoded(path, lambda d: [Doorway.from_dict(x) for x in d])


def load_static_classes(path) -> frozenset:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.split("#", 1)[0].strip() for ln in fh]
    except OSError as exc:
        raise InputError(path, str(exc)) from exc
    return frozenset(normalize_label(ln) for ln in lines if ln)


def _scan_frame(d: dict) -> FrameObservation:
    frame = FrameObservation.from_dict(d)
    if frame.pose is None:
        raise ValueError("static scan frames must be posed")
    if any(det.box3 is None for det in frame.detections):
        raise ValueError("every static scan detection needs box3")
    return frame


def build_static_from_files(frames_path, regions_path, doorways_path, cfg: StaticBuildConfig) -> GlobalGraph:
    frames = list(iter_jsonl(frames_path, _scan_frame))
    return build_static_graph(frames, load_regions(regions_path), load_doorways(doorways_path), cfg)
